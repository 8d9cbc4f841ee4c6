"""Synthetic MIMIC-shaped cohorts with planted, recoverable structure.

Diagnosis concepts are backed by real ICD-9-CM parent categories so the
rollup and CCS-mapping paths are exercised; each concept maps 1:1 to a
parent code and to a synthetic CCS category.  Code embeddings share a
cluster centroid within planted disease clusters.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .codes import CodeSystem, MappingTable, icd9_diagnosis_universe, icd9_procedure_universe
from .ingest import CodeSpace, build_records, write_chunk_manifest
from .stores import TEXT_DIM, ChunkEmbeddingStore, VectorStore

log = logging.getLogger(__name__)

EPOCH = datetime(2100, 1, 1)

# MIMIC-III adult cohort: 2,263 patients readmitted within 30 days out of 34,560
MIMIC_POSITIVE_PATIENTS = 2263
MIMIC_NEGATIVE_PATIENTS = 32297


@dataclass(frozen=True)
class ProgressionRule:
    """``a`` at visit t-1 and ``b`` at visit t put ``c`` in visit t+1 with ``prob``."""

    a: int
    b: int
    c: int
    prob: float


@dataclass
class SyntheticCohortSpec:
    n_patients: int = 1000
    # visit counts: 1 with p_single_visit, else 2 + geometric extra visits
    p_single_visit: float = 0.815
    mean_extra_visits: float = 0.46
    max_visits: int = 40
    n_diag_codes: int = 255
    n_proc_codes: int = 60
    n_med_codes: int = 80
    codes_per_visit: float = 5.0
    procs_per_visit: float = 1.5
    meds_per_visit: float = 3.0
    zipf_exponent: float = 0.5
    diag_background: Optional[Sequence[float]] = None
    persistence_prob: float = 0.0
    progression_rules: tuple = ()
    readmission_rate: float = 0.31
    # exact number of readmitted patients; None draws readmissions per gap
    n_positive_patients: Optional[int] = None
    n_clusters: int = 16
    embedding_noise: float = 0.5
    chunks_per_admission: tuple = (1, 3)
    chunk_noise: float = 0.3
    generate_codes: bool = True
    seed: int = 0

    @classmethod
    def mimic_shaped(cls, n_patients: int, **kw) -> "SyntheticCohortSpec":
        """Cohort with the MIMIC-III readmission class ratio and visit profile."""
        n_pos = round(n_patients * MIMIC_POSITIVE_PATIENTS
                      / (MIMIC_POSITIVE_PATIENTS + MIMIC_NEGATIVE_PATIENTS))
        defaults = dict(n_patients=n_patients, n_positive_patients=n_pos, p_single_visit=0.872,
                        mean_extra_visits=0.46, readmission_rate=0.75)
        defaults.update(kw)
        return cls(**defaults)


@dataclass
class SyntheticCohort:
    spec: SyntheticCohortSpec
    admissions: pd.DataFrame
    diagnoses: pd.DataFrame
    procedures: pd.DataFrame
    prescriptions: pd.DataFrame
    manifest: dict
    chunk_store: Optional[ChunkEmbeddingStore]
    diag_ccs: MappingTable
    proc_ccs: MappingTable
    ndc_cui: MappingTable
    code_embeddings: dict  # "diag"/"proc"/"med" -> VectorStore
    concept_codes: dict = field(default_factory=dict)  # concept index -> model code per space

    def code_space(self, diag="ccs", proc="ccs") -> CodeSpace:
        return CodeSpace(diag=diag, proc=proc, diag_ccs=self.diag_ccs, proc_ccs=self.proc_ccs,
                         ndc_cui=self.ndc_cui)

    def records(self, diag="ccs", proc="ccs"):
        records, _ = build_records(self.admissions, self.diagnoses, self.procedures,
                                   self.prescriptions, self.code_space(diag, proc),
                                   self.manifest if self.chunk_store is not None else None,
                                   self.chunk_store)
        return records

    def write(self, out_dir) -> dict:
        """Write every table and store; returns the written paths by role."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "admissions": out / "ADMISSIONS.tsv",
            "diagnoses": out / "DIAGNOSES_ICD.tsv",
            "procedures": out / "PROCEDURES_ICD.tsv",
            "prescriptions": out / "PRESCRIPTIONS.tsv",
            "diag_ccs": out / "crosswalk_icd9_ccs_diag.tsv",
            "proc_ccs": out / "crosswalk_icd9_ccs_proc.tsv",
            "ndc_cui": out / "crosswalk_ndc_cui.tsv",
            "diag_embeddings": out / "code_embeddings_diag.bin",
            "proc_embeddings": out / "code_embeddings_proc.bin",
            "med_embeddings": out / "code_embeddings_med.bin",
        }
        self.admissions.to_csv(paths["admissions"], sep="\t", index=False)
        self.diagnoses.to_csv(paths["diagnoses"], sep="\t", index=False)
        self.procedures.to_csv(paths["procedures"], sep="\t", index=False)
        self.prescriptions.to_csv(paths["prescriptions"], sep="\t", index=False)
        self.diag_ccs.save(paths["diag_ccs"])
        self.proc_ccs.save(paths["proc_ccs"])
        self.ndc_cui.save(paths["ndc_cui"])
        for kind in ("diag", "proc", "med"):
            self.code_embeddings[kind].save(paths[f"{kind}_embeddings"])
        if self.chunk_store is not None:
            paths["chunk_manifest"] = out / "NOTE_CHUNKS.tsv"
            paths["chunk_embeddings"] = out / "chunk_embeddings.bin"
            write_chunk_manifest(paths["chunk_manifest"], self.manifest)
            self.chunk_store.save(paths["chunk_embeddings"])
        return paths


def zipf_rates(n: int, total: float, exponent: float, rng) -> np.ndarray:
    """Per-code inclusion probabilities summing to ``total`` with Zipf-shaped ranks."""
    if n == 0:
        return np.zeros(0)
    ranks = rng.permutation(n) + 1
    w = 1.0 / ranks ** exponent
    return np.clip(w / w.sum() * total, 0.0, 0.95)


def _visit_counts(spec: SyntheticCohortSpec, rng, positive: Optional[np.ndarray]):
    p_geom = 1.0 / (1.0 + spec.mean_extra_visits)
    extra = rng.geometric(p_geom, size=spec.n_patients) - 1
    counts = np.minimum(2 + extra, spec.max_visits)
    single = rng.random(spec.n_patients) < spec.p_single_visit
    if positive is not None:
        single &= ~positive
    counts[single] = 1
    return counts


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _concept_vectors(n, n_clusters, noise, rng, dim=TEXT_DIM):
    centroids = _unit(rng.normal(size=(max(n_clusters, 1), dim)))
    cluster = rng.integers(0, max(n_clusters, 1), size=n)
    vecs = centroids[cluster] + noise * _unit(rng.normal(size=(n, dim)))
    return _unit(vecs).astype(np.float32), cluster


def generate_cohort(spec: SyntheticCohortSpec) -> SyntheticCohort:
    rng = np.random.default_rng(spec.seed)
    V, P, M = spec.n_diag_codes, spec.n_proc_codes, spec.n_med_codes

    # concept -> ICD-9 parent, full codes, CCS label
    dx_by_parent = defaultdict(list)
    for code in icd9_diagnosis_universe():
        dx_by_parent[code[:4] if code[0] == "E" else code[:3]].append(code)
    parents = sorted(dx_by_parent)
    chosen = sorted(rng.choice(len(parents), size=V, replace=False).tolist()) if V else []
    diag_parents = [parents[i] for i in chosen]
    sg_by_parent = defaultdict(list)
    for code in icd9_procedure_universe():
        sg_by_parent[code[:2]].append(code)
    proc_parent_pool = sorted(sg_by_parent)
    proc_parents = [proc_parent_pool[i] for i in
                    sorted(rng.choice(len(proc_parent_pool), size=min(P, len(proc_parent_pool)),
                                      replace=False).tolist())]
    P = len(proc_parents)

    diag_ccs = {c: f"CCS_{j + 1}" for j, p in enumerate(diag_parents) for c in dx_by_parent[p]}
    proc_ccs = {c: f"CCSP_{j + 1}" for j, p in enumerate(proc_parents) for c in sg_by_parent[p]}
    med_ndcs = [[f"{rng.integers(10000, 99999)}-{rng.integers(1000, 9999)}-{s:02d}"
                 for s in range(2)] for _ in range(M)]
    med_cui = [f"C{1000000 + j * 37:07d}" for j in range(M)]
    ndc_cui = {ndc: med_cui[j] for j in range(M) for ndc in med_ndcs[j]}

    # frozen code embeddings (stand-in for a pretrained code encoder)
    diag_vecs, diag_cluster = _concept_vectors(V, spec.n_clusters, spec.embedding_noise, rng)
    proc_vecs, _ = _concept_vectors(P, max(spec.n_clusters // 2, 1), spec.embedding_noise, rng)
    med_vecs, _ = _concept_vectors(M, max(spec.n_clusters // 2, 1), spec.embedding_noise, rng)
    risk_direction = _unit(rng.normal(size=TEXT_DIM)).astype(np.float32)
    code_embeddings = {
        "diag": VectorStore([f"D_{p}" for p in diag_parents] + [f"CCS_{j + 1}" for j in range(V)],
                            np.concatenate([diag_vecs, diag_vecs])),
        "proc": VectorStore([f"P_{p}" for p in proc_parents] + [f"CCSP_{j + 1}" for j in range(P)],
                            np.concatenate([proc_vecs, proc_vecs])),
        "med": VectorStore(med_cui, med_vecs),
    }

    if spec.diag_background is not None:
        q_diag = np.asarray(spec.diag_background, dtype=float)
        if q_diag.shape != (V,):
            raise ValueError(f"diag_background must have {V} entries")
    else:
        q_diag = zipf_rates(V, spec.codes_per_visit, spec.zipf_exponent, rng)
    risk_codes = np.flatnonzero(diag_cluster == 0) if V else np.zeros(0, int)
    q_proc = zipf_rates(P, spec.procs_per_visit, spec.zipf_exponent, rng)
    q_med = zipf_rates(M, spec.meds_per_visit, spec.zipf_exponent, rng)
    rules_by_pair = defaultdict(list)
    for rule in spec.progression_rules:
        rules_by_pair[(rule.a, rule.b)].append(rule)

    positive = None
    if spec.n_positive_patients is not None:
        positive = np.zeros(spec.n_patients, dtype=bool)
        positive[rng.choice(spec.n_patients, size=spec.n_positive_patients, replace=False)] = True
    counts = _visit_counts(spec, rng, positive)
    frailty = rng.random(spec.n_patients)

    adm_rows, dx_rows, pr_rows, rx_rows = [], [], [], []
    manifest = {}
    chunk_ids, chunk_vecs = [], []
    lo_chunks, hi_chunks = spec.chunks_per_admission
    adm_counter = 100000
    for pid in range(spec.n_patients):
        n_vis = int(counts[pid])
        f = frailty[pid]
        if positive is not None:
            short = rng.random(n_vis - 1) < (spec.readmission_rate if positive[pid] else 0.0)
            if positive[pid] and n_vis > 1 and not short.any():
                short[rng.integers(0, n_vis - 1)] = True
        else:
            short = rng.random(n_vis - 1) < min(1.0, 2.0 * f * spec.readmission_rate)
        t = EPOCH + timedelta(days=float(rng.uniform(0, 3650)))
        history: list[np.ndarray] = []
        for v in range(n_vis):
            if v > 0:
                gap = rng.uniform(0.5, 29.0) if short[v - 1] else 31.0 + rng.exponential(300.0)
                t = t + timedelta(days=float(gap))
            duration = 0.5 + rng.gamma(2.0, 3.0)
            admit = t.replace(microsecond=0)
            discharge = (t + timedelta(days=float(duration))).replace(microsecond=0)
            t = discharge
            adm_id = str(adm_counter)
            adm_counter += 1
            adm_rows.append((f"P{pid:06d}", adm_id, admit.isoformat(sep=" "),
                             discharge.isoformat(sep=" ")))
            if not spec.generate_codes:
                continue
            # diagnoses: background, persistence, progression
            q = q_diag.copy()
            if len(risk_codes):
                q[risk_codes] = np.clip(q[risk_codes] * (0.5 + 1.5 * f), 0, 0.95)
            present = rng.random(V) < q
            if history and spec.persistence_prob > 0:
                present |= history[-1] & (rng.random(V) < spec.persistence_prob)
            if len(history) >= 2 and rules_by_pair:
                a_set, b_set = np.flatnonzero(history[-2]), np.flatnonzero(history[-1])
                for a in a_set:
                    for b in b_set:
                        for rule in rules_by_pair.get((a, b), ()):
                            if rng.random() < rule.prob:
                                present[rule.c] = True
            history.append(present)
            concepts = rng.permutation(np.flatnonzero(present))
            for seq, c in enumerate(concepts, 1):
                full = dx_by_parent[diag_parents[c]]
                dx_rows.append((adm_id, seq, full[rng.integers(len(full))]))
            for seq, c in enumerate(np.flatnonzero(rng.random(P) < q_proc), 1):
                full = sg_by_parent[proc_parents[c]]
                pr_rows.append((adm_id, seq, full[rng.integers(len(full))]))
            for c in np.flatnonzero(rng.random(M) < q_med):
                start = admit + timedelta(hours=float(rng.uniform(0, 24 * duration)))
                rx_rows.append((adm_id, start.replace(microsecond=0).isoformat(sep=" "),
                                med_ndcs[c][rng.integers(2)]))
            n_chunks = int(rng.integers(lo_chunks, hi_chunks + 1)) if hi_chunks > 0 else 0
            if n_chunks:
                base = diag_vecs[concepts].mean(axis=0) if len(concepts) else np.zeros(TEXT_DIM)
                base = base + (f - 0.5) * risk_direction
                ids = [f"{adm_id}_c{j}" for j in range(n_chunks)]
                manifest[adm_id] = ids
                chunk_ids.extend(ids)
                chunk_vecs.append(base + spec.chunk_noise * rng.normal(size=(n_chunks, TEXT_DIM)))

    chunk_store = None
    if chunk_ids:
        chunk_store = ChunkEmbeddingStore(chunk_ids, np.concatenate(chunk_vecs).astype(np.float32))
    return SyntheticCohort(
        spec=spec,
        admissions=pd.DataFrame(adm_rows, columns=["patient_id", "admission_id", "admit_time",
                                                   "discharge_time"]),
        diagnoses=pd.DataFrame(dx_rows, columns=["admission_id", "seq_num", "icd9_code"]).astype(str),
        procedures=pd.DataFrame(pr_rows, columns=["admission_id", "seq_num", "icd9_code"]).astype(str),
        prescriptions=pd.DataFrame(rx_rows, columns=["admission_id", "start_date", "ndc"]).astype(str),
        manifest=manifest,
        chunk_store=chunk_store,
        diag_ccs=MappingTable(CodeSystem.ICD9_DIAG, CodeSystem.CCS_DIAG, diag_ccs, "synthetic diag CCS"),
        proc_ccs=MappingTable(CodeSystem.ICD9_PROC, CodeSystem.CCS_PROC, proc_ccs, "synthetic proc CCS"),
        ndc_cui=MappingTable(CodeSystem.NDC, CodeSystem.CUI, ndc_cui, "synthetic NDC CUI"),
        code_embeddings=code_embeddings,
        concept_codes={"icd9_parent": [f"D_{p}" for p in diag_parents],
                       "ccs": [f"CCS_{j + 1}" for j in range(V)]},
    )
