"""Patient-level stratified folds, negative subsampling and sliding windows."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .ingest import Admission, PatientRecord

log = logging.getLogger(__name__)

N_FOLDS = 10


@dataclass(frozen=True)
class FoldPlan:
    assignment: dict  # patient_id -> fold index (0-based)
    seed: int
    n_folds: int = N_FOLDS

    def fold_of(self, patient_id) -> int:
        return self.assignment[patient_id]

    def patients_in(self, fold: int) -> list:
        return [p for p, f in self.assignment.items() if f == fold]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# seed={self.seed} n_folds={self.n_folds}\n")
            for pid, fold in self.assignment.items():
                fh.write(f"{pid}\t{fold}\n")

    @classmethod
    def load(cls, path) -> "FoldPlan":
        header = {}
        assignment = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    header.update(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
                elif line:
                    pid, fold = line.split("\t")
                    assignment[pid] = int(fold)
        return cls(assignment, int(header.get("seed", 0)), int(header.get("n_folds", N_FOLDS)))


@dataclass(frozen=True)
class SplitSpec:
    train_folds: tuple[int, ...]
    val_fold: int
    test_fold: int

    def __post_init__(self):
        groups = set(self.train_folds) | {self.val_fold, self.test_fold}
        if len(groups) != len(self.train_folds) + 2:
            raise ValueError("train, validation and test folds must be disjoint")

    @classmethod
    def rotation(cls, iteration: int, n_folds: int = N_FOLDS) -> "SplitSpec":
        """Iteration ``i`` tests on fold ``i`` and validates on ``(i + 1) % n``."""
        test = iteration % n_folds
        val = (test + 1) % n_folds
        return cls(tuple(f for f in range(n_folds) if f not in (test, val)), val, test)


def stratified_patient_folds(
    patients: Sequence,
    positive_predicate: Callable[[object], bool],
    n_folds: int = N_FOLDS,
    seed: int = 0,
    key: Callable[[object], object] = lambda p: p.patient_id,
) -> FoldPlan:
    """Assign whole patients to folds, balancing positive patients.

    Positives and negatives are shuffled separately, then dealt round-robin;
    negatives continue from the fold after the last positive so totals stay
    balanced too.
    """
    if n_folds > len(patients):
        raise ValueError(f"cannot split {len(patients)} patients into {n_folds} folds")
    rng = np.random.default_rng(seed)
    ids = [key(p) for p in patients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    pos = [i for i, p in zip(ids, patients) if positive_predicate(p)]
    neg = [i for i, p in zip(ids, patients) if not positive_predicate(p)]
    pos = [pos[j] for j in rng.permutation(len(pos))]
    neg = [neg[j] for j in rng.permutation(len(neg))]
    assignment = {}
    for j, pid in enumerate(pos):
        assignment[pid] = j % n_folds
    offset = len(pos) % n_folds
    for j, pid in enumerate(neg):
        assignment[pid] = (offset + j) % n_folds
    # keep the caller's patient order for stable serialisation
    return FoldPlan({pid: assignment[pid] for pid in ids}, seed, n_folds)


def stratified_admission_folds(admissions: Sequence[Admission], n_folds: int = N_FOLDS,
                               seed: int = 0) -> list[list[Admission]]:
    """LEAKY admission-level stratification: one patient may span folds.

    Only for reproducing the independent-admission experiment design.
    """
    warnings.warn("admission-level folds leak patients across splits", UserWarning, stacklevel=2)
    rng = np.random.default_rng(seed)
    folds: list[list[Admission]] = [[] for _ in range(n_folds)]
    pos = [a for a in admissions if a.readmitted_30d]
    neg = [a for a in admissions if not a.readmitted_30d]
    offset = 0
    for group in (pos, neg):
        for j, idx in enumerate(rng.permutation(len(group))):
            folds[(offset + j) % n_folds].append(group[idx])
        offset = (offset + len(group)) % n_folds
    return folds


def expand_and_shuffle(plan: FoldPlan, records: Iterable[PatientRecord],
                       seed: int = 0) -> list[list[Admission]]:
    folds: list[list[Admission]] = [[] for _ in range(plan.n_folds)]
    for rec in records:
        folds[plan.fold_of(rec.patient_id)].extend(rec.admissions)
    rng = np.random.default_rng(seed)
    return [[fold[i] for i in rng.permutation(len(fold))] for fold in folds]


def split_admissions(folds: Sequence[Sequence], split: SplitSpec):
    train = [a for f in split.train_folds for a in folds[f]]
    return train, list(folds[split.val_fold]), list(folds[split.test_fold])


def subsample_negatives(admissions: Sequence, seed: int = 0,
                        is_positive: Callable = lambda a: a.readmitted_30d) -> list:
    """Downsample negatives to the positive count; positives are all kept.

    Selected items keep their input order.
    """
    pos_idx = [i for i, a in enumerate(admissions) if is_positive(a)]
    neg_idx = [i for i, a in enumerate(admissions) if not is_positive(a)]
    if not pos_idx:
        raise ValueError("no positive samples: subsampling would leave a degenerate task")
    if len(neg_idx) < len(pos_idx):
        warnings.warn(
            f"only {len(neg_idx)} negatives for {len(pos_idx)} positives; keeping all",
            RuntimeWarning, stacklevel=2,
        )
        return list(admissions)
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(neg_idx, size=len(pos_idx), replace=False).tolist())
    keep = set(pos_idx) | chosen
    return [a for i, a in enumerate(admissions) if i in keep]


@dataclass(frozen=True)
class WindowSample:
    """``window`` holds ``k`` admissions, ``None`` for leading dummy slots."""

    patient_id: str
    window: tuple[Optional[Admission], ...]
    label_source: Admission

    @property
    def k(self) -> int:
        return len(self.window)

    @property
    def real_count(self) -> int:
        return sum(a is not None for a in self.window)

    @property
    def last(self) -> Admission:
        return self.window[-1]

    @property
    def mask(self) -> np.ndarray:
        return np.array([a is not None for a in self.window], dtype=np.float32)

    def readmission_label(self) -> float:
        return float(self.last.readmitted_30d)

    def diagnosis_label(self) -> np.ndarray:
        if self.last.next_diag_multihot is None:
            raise ValueError(f"admission {self.last.admission_id} has no diagnosis label")
        return self.last.next_diag_multihot


def build_windows(record: PatientRecord, k: int) -> list[WindowSample]:
    """Sliding windows oldest to newest; each admission after the first labels one window."""
    if k < 1:
        raise ValueError("window size must be >= 1")
    adms = record.admissions
    out = []
    for t in range(1, len(adms)):
        real = adms[max(0, t - k):t]
        window = (None,) * (k - len(real)) + tuple(real)
        out.append(WindowSample(record.patient_id, window, adms[t]))
    return out


def save_windows(path, windows: Iterable[WindowSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, w in enumerate(windows):
            fh.write(json.dumps({
                "index": i,
                "patient_id": w.patient_id,
                "window": [a.admission_id if a is not None else None for a in w.window],
                "label_admission_id": w.label_source.admission_id,
            }) + "\n")


def load_windows(path, records: Iterable[PatientRecord]) -> list[WindowSample]:
    by_id = {a.admission_id: a for r in records for a in r.admissions}
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            window = tuple(by_id[a] if a is not None else None for a in d["window"])
            out.append(WindowSample(d["patient_id"], window, by_id[d["label_admission_id"]]))
    return out
