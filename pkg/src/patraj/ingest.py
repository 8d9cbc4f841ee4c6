"""Assemble per-admission records from MIMIC-shaped source tables."""

from __future__ import annotations

import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .codes import (
    CodeSystem,
    CodeVocabulary,
    MappingTable,
    RawCode,
    map_code,
    rollup_icd9,
)
from .errors import CodeParseError, DataIntegrityError, MappingMiss
from .stores import ChunkEmbeddingStore

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
READMISSION_THRESHOLD_DAYS = 30.0


@dataclass(frozen=True)
class Admission:
    patient_id: str
    admission_id: str
    admit_time: datetime
    discharge_time: datetime
    duration_days: Optional[float] = None
    days_since_prior: Optional[float] = None
    diag_codes: tuple[str, ...] = ()
    proc_codes: tuple[str, ...] = ()
    med_codes: tuple[str, ...] = ()
    note_chunk_ids: tuple[str, ...] = ()
    readmitted_30d: bool = False
    next_diag_multihot: Optional[np.ndarray] = field(default=None, compare=False)

    @property
    def is_first(self) -> bool:
        return self.days_since_prior is None


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    admissions: tuple[Admission, ...]

    def __post_init__(self):
        adms = tuple(self.admissions)
        object.__setattr__(self, "admissions", adms)
        for a in adms:
            if a.patient_id != self.patient_id:
                raise DataIntegrityError(
                    f"admission {a.admission_id} belongs to {a.patient_id}, not {self.patient_id}"
                )
        for prev, cur in zip(adms, adms[1:]):
            if cur.admit_time < prev.admit_time:
                raise DataIntegrityError(f"admissions of patient {self.patient_id} not time-ordered")

    def __len__(self):
        return len(self.admissions)

    @property
    def is_positive(self) -> bool:
        """At least one admission followed by a readmission within the threshold."""
        return any(a.readmitted_30d for a in self.admissions)


def make_record(patient_id, admissions: Iterable[Admission]) -> PatientRecord:
    ordered = sorted(admissions, key=lambda a: (a.admit_time, a.admission_id))
    return PatientRecord(str(patient_id), tuple(ordered))


def _days(delta) -> float:
    return delta.total_seconds() / SECONDS_PER_DAY


def compute_temporal_features(record: PatientRecord) -> PatientRecord:
    """Fill admission duration and days since the previous discharge.

    Overlapping stays give a negative gap, which is clamped to 0.
    """
    out = []
    prev = None
    for adm in record.admissions:
        if adm.discharge_time < adm.admit_time:
            raise DataIntegrityError(f"admission {adm.admission_id}: discharge before admit")
        gap = None
        if prev is not None:
            gap = max(0.0, _days(adm.admit_time - prev.discharge_time))
        out.append(replace(adm, duration_days=_days(adm.discharge_time - adm.admit_time),
                           days_since_prior=gap))
        prev = adm
    return replace(record, admissions=tuple(out))


def label_readmission(record: PatientRecord, threshold_days: float = READMISSION_THRESHOLD_DAYS) -> PatientRecord:
    adms = record.admissions
    out = []
    for i, adm in enumerate(adms):
        positive = False
        if i + 1 < len(adms):
            nxt = adms[i + 1]
            if nxt.days_since_prior is None:
                raise DataIntegrityError("label_readmission needs temporal features computed first")
            positive = nxt.days_since_prior < threshold_days
        out.append(replace(adm, readmitted_30d=positive))
    return replace(record, admissions=tuple(out))


def multihot(indices: Iterable[int], vocab: CodeVocabulary) -> np.ndarray:
    """Indicator vector over the vocabulary's real codes (padding excluded)."""
    vec = np.zeros(vocab.n_codes, dtype=np.uint8)
    for idx in indices:
        if idx != vocab.pad_index:
            vec[idx - 1] = 1
    return vec


def label_future_diagnoses(record: PatientRecord, vocab: CodeVocabulary) -> PatientRecord:
    """Attach the next admission's diagnoses as a multi-hot target.

    The final admission gets no label.  Codes outside the vocabulary are
    dropped and counted in the log.
    """
    adms = record.admissions
    out = []
    dropped = 0
    for i, adm in enumerate(adms):
        label = None
        if i + 1 < len(adms):
            idx, missed = vocab.indices(adms[i + 1].diag_codes)
            dropped += missed
            label = multihot(idx, vocab)
        out.append(replace(adm, next_diag_multihot=label))
    if dropped:
        log.warning("patient %s: %d label codes outside the target vocabulary dropped",
                    record.patient_id, dropped)
    return replace(record, admissions=tuple(out))


class TemporalScaler:
    """Min-max scaling fitted on the training split, clamped to [0, 1] elsewhere."""

    def __init__(self):
        self.bounds: dict[str, tuple[float, float]] = {}

    def fit(self, admissions: Iterable[Admission]) -> "TemporalScaler":
        durations, gaps = [], []
        for a in admissions:
            if a.duration_days is None:
                raise DataIntegrityError(f"admission {a.admission_id} has no temporal features")
            durations.append(a.duration_days)
            if a.days_since_prior is not None:
                gaps.append(a.days_since_prior)
        self.bounds = {
            "duration": _min_max(durations),
            "days_since_prior": _min_max(gaps),
        }
        return self

    def scale(self, feature: str, value: Optional[float]) -> float:
        if value is None:
            return 0.0
        lo, hi = self.bounds[feature]
        return float(rescale_value(value, lo, hi))

    def to_dict(self):
        return {k: list(v) for k, v in self.bounds.items()}

    @classmethod
    def from_dict(cls, data):
        scaler = cls()
        scaler.bounds = {k: (float(v[0]), float(v[1])) for k, v in data.items()}
        return scaler


def _min_max(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return (0.0, 0.0)
    return (float(min(values)), float(max(values)))


def rescale_value(value, lo: float, hi: float):
    """(v - lo) / (hi - lo) clamped into [0, 1]; constant features map to 0."""
    value = np.asarray(value, dtype=float)
    if hi <= lo:
        return np.zeros_like(value)
    return np.clip((value - lo) / (hi - lo), 0.0, 1.0)


def rescale_temporal(train_values: Sequence[float], values: Sequence[float]) -> np.ndarray:
    train_values = np.asarray(train_values, dtype=float)
    lo, hi = float(train_values.min()), float(train_values.max())
    if hi <= lo:
        warnings.warn("degenerate temporal feature: constant on the training split", RuntimeWarning,
                      stacklevel=2)
    return rescale_value(values, lo, hi)


def attach_note_chunks(admission: Admission, manifest: Mapping[str, Sequence[str]],
                       store: Optional[ChunkEmbeddingStore] = None) -> Admission:
    chunks = tuple(manifest.get(admission.admission_id, ()))
    if store is not None:
        for cid in chunks:
            if cid not in store:
                raise DataIntegrityError(
                    f"chunk {cid} of admission {admission.admission_id} missing from embedding store"
                )
    return replace(admission, note_chunk_ids=chunks)


def read_chunk_manifest(path) -> dict[str, list[str]]:
    manifest: dict[str, list[str]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataIntegrityError(f"{path}:{lineno}: expected 'admission_id<TAB>chunk_id'")
            manifest[parts[0]].append(parts[1])
    return dict(manifest)


def write_chunk_manifest(path, manifest: Mapping[str, Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for adm_id, chunks in manifest.items():
            for cid in chunks:
                fh.write(f"{adm_id}\t{cid}\n")


# --------------------------------------------------------------------------
# source tables

ADMISSION_COLUMNS = ("patient_id", "admission_id", "admit_time", "discharge_time")
DIAGNOSIS_COLUMNS = ("admission_id", "seq_num", "icd9_code")
PRESCRIPTION_COLUMNS = ("admission_id", "start_date", "ndc")


def read_table(path, columns: Sequence[str]) -> pd.DataFrame:
    path = Path(path)
    sep = "," if path.suffix.lower() == ".csv" else "\t"
    df = pd.read_csv(path, sep=sep, dtype=str, keep_default_na=False)
    df.columns = [c.strip().lower() for c in df.columns]
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataIntegrityError(f"{path}: missing columns {missing}")
    return df


@dataclass
class CodeSpace:
    """How raw source codes become model codes."""

    diag: str = "icd9_parent"  # or "ccs"
    proc: str = "icd9_parent"
    diag_ccs: Optional[MappingTable] = None
    proc_ccs: Optional[MappingTable] = None
    ndc_cui: Optional[MappingTable] = None

    def diag_system(self) -> CodeSystem:
        return CodeSystem.ICD9_PARENT if self.diag == "icd9_parent" else CodeSystem.CCS_DIAG

    def proc_system(self) -> CodeSystem:
        return CodeSystem.ICD9_PARENT if self.proc == "icd9_parent" else CodeSystem.CCS_PROC

    def med_system(self) -> CodeSystem:
        return CodeSystem.CUI if self.ndc_cui is not None else CodeSystem.NDC


@dataclass
class IngestStats:
    admissions: int = 0
    patients: int = 0
    dropped: dict = field(default_factory=lambda: defaultdict(int))

    def note(self, key, n=1):
        self.dropped[key] += n


def _convert(texts, system, space: CodeSpace, stats: IngestStats) -> tuple[str, ...]:
    out: list[str] = []
    for text in texts:
        text = text.strip()
        if not text:
            continue
        raw = RawCode(system, text)
        try:
            if system is CodeSystem.NDC:
                code = map_code(raw, space.ndc_cui).text if space.ndc_cui is not None else text
            else:
                mode = space.diag if system is CodeSystem.ICD9_DIAG else space.proc
                if mode == "icd9_parent":
                    code = rollup_icd9(raw).text
                else:
                    table = space.diag_ccs if system is CodeSystem.ICD9_DIAG else space.proc_ccs
                    if table is None:
                        raise MappingMiss(text, "missing CCS crosswalk")
                    code = map_code(raw, table).text
        except MappingMiss:
            stats.note(f"unmapped_{system.value}")
            continue
        except CodeParseError:
            stats.note(f"malformed_{system.value}")
            continue
        if code not in out:
            out.append(code)
    return tuple(out)


def _parse_time(value: str) -> datetime:
    return pd.Timestamp(value).to_pydatetime()


def build_records(
    admissions: pd.DataFrame,
    diagnoses: Optional[pd.DataFrame] = None,
    procedures: Optional[pd.DataFrame] = None,
    prescriptions: Optional[pd.DataFrame] = None,
    space: Optional[CodeSpace] = None,
    manifest: Optional[Mapping[str, Sequence[str]]] = None,
    chunk_store: Optional[ChunkEmbeddingStore] = None,
    threshold_days: float = READMISSION_THRESHOLD_DAYS,
) -> tuple[list[PatientRecord], IngestStats]:
    """Join the source tables into time-ordered patient records.

    Codes are mapped into ``space``; per-admission code lists keep source
    order (seq_num / start date) with duplicates removed.  Unmappable codes
    are dropped and counted in the returned stats.
    """
    space = space or CodeSpace()
    stats = IngestStats()

    def grouped(df, order_col, code_col):
        if df is None or df.empty:
            return {}
        df = df.copy()
        if order_col == "seq_num":
            df["_order"] = pd.to_numeric(df[order_col], errors="coerce")
        else:
            df["_order"] = pd.to_datetime(df[order_col], errors="coerce")
        df = df.sort_values(["admission_id", "_order"], kind="stable")
        return {k: list(g[code_col]) for k, g in df.groupby("admission_id", sort=False)}

    diag = grouped(diagnoses, "seq_num", "icd9_code")
    proc = grouped(procedures, "seq_num", "icd9_code")
    meds = grouped(prescriptions, "start_date", "ndc")

    by_patient: dict[str, list[Admission]] = defaultdict(list)
    seen_ids = set()
    for row in admissions.itertuples(index=False):
        adm_id = str(row.admission_id)
        if adm_id in seen_ids:
            raise DataIntegrityError(f"duplicate admission id {adm_id}")
        seen_ids.add(adm_id)
        adm = Admission(
            patient_id=str(row.patient_id),
            admission_id=adm_id,
            admit_time=_parse_time(row.admit_time),
            discharge_time=_parse_time(row.discharge_time),
            diag_codes=_convert(diag.get(adm_id, ()), CodeSystem.ICD9_DIAG, space, stats),
            proc_codes=_convert(proc.get(adm_id, ()), CodeSystem.ICD9_PROC, space, stats),
            med_codes=_convert(meds.get(adm_id, ()), CodeSystem.NDC, space, stats),
        )
        if manifest is not None:
            adm = attach_note_chunks(adm, manifest, chunk_store)
        by_patient[adm.patient_id].append(adm)

    records = []
    for pid in sorted(by_patient):
        rec = make_record(pid, by_patient[pid])
        rec = label_readmission(compute_temporal_features(rec), threshold_days)
        records.append(rec)
    stats.admissions = len(seen_ids)
    stats.patients = len(records)
    for key, n in sorted(stats.dropped.items()):
        log.warning("dropped %d codes: %s", n, key)
    return records, stats


def load_source_tables(admissions_path, diagnoses_path=None, procedures_path=None,
                       prescriptions_path=None):
    adm = read_table(admissions_path, ADMISSION_COLUMNS)
    diag = read_table(diagnoses_path, DIAGNOSIS_COLUMNS) if diagnoses_path else None
    proc = read_table(procedures_path, DIAGNOSIS_COLUMNS) if procedures_path else None
    rx = read_table(prescriptions_path, PRESCRIPTION_COLUMNS) if prescriptions_path else None
    return adm, diag, proc, rx


# --------------------------------------------------------------------------
# prepared-dataset serialisation (one admission per JSON line)

def _admission_to_json(a: Admission) -> dict:
    nxt = None
    if a.next_diag_multihot is not None:
        nxt = {"n": int(a.next_diag_multihot.size),
               "bits": np.flatnonzero(a.next_diag_multihot).tolist()}
    return {
        "patient_id": a.patient_id,
        "admission_id": a.admission_id,
        "admit_time": a.admit_time.isoformat(),
        "discharge_time": a.discharge_time.isoformat(),
        "duration_days": a.duration_days,
        "days_since_prior": a.days_since_prior,
        "diag": list(a.diag_codes),
        "proc": list(a.proc_codes),
        "med": list(a.med_codes),
        "chunks": list(a.note_chunk_ids),
        "readmitted_30d": a.readmitted_30d,
        "next_diag": nxt,
    }


def _admission_from_json(d: dict) -> Admission:
    label = None
    if d.get("next_diag") is not None:
        label = np.zeros(d["next_diag"]["n"], dtype=np.uint8)
        label[d["next_diag"]["bits"]] = 1
    return Admission(
        patient_id=d["patient_id"],
        admission_id=d["admission_id"],
        admit_time=datetime.fromisoformat(d["admit_time"]),
        discharge_time=datetime.fromisoformat(d["discharge_time"]),
        duration_days=d["duration_days"],
        days_since_prior=d["days_since_prior"],
        diag_codes=tuple(d["diag"]),
        proc_codes=tuple(d["proc"]),
        med_codes=tuple(d["med"]),
        note_chunk_ids=tuple(d["chunks"]),
        readmitted_30d=bool(d["readmitted_30d"]),
        next_diag_multihot=label,
    )


def save_records(path, records: Iterable[PatientRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            for adm in rec.admissions:
                fh.write(json.dumps(_admission_to_json(adm), sort_keys=True) + "\n")


def load_records(path) -> list[PatientRecord]:
    by_patient: dict[str, list[Admission]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                adm = _admission_from_json(json.loads(line))
                by_patient[adm.patient_id].append(adm)
    return [make_record(pid, adms) for pid, adms in sorted(by_patient.items())]
