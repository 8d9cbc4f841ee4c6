"""Admission encoder with flexible feature sets and per-class sigmoid heads."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .codes import CodeVocabulary
from .errors import ConfigError, DataIntegrityError
from .ingest import Admission, TemporalScaler
from .metrics import evaluate_binary, evaluate_multilabel
from .nn import DenseBlock, Dropout, EmbeddingBottleneck, Module, SigmoidHead
from .stores import TEXT_DIM, RepresentationStore, VectorStore
from .training import TrainHyperparams, batches, fit

log = logging.getLogger(__name__)

FEATURE_ORDER = ("text", "duration", "days_since_prior", "diag", "proc", "med")
CODE_FEATURES = ("diag", "proc", "med")
TEMPORAL_HIDDEN = 50
BOTTLENECK_DIM = 768
CHUNK_C = 2.0

READMISSION = "readmission"
DIAGNOSIS_ICD9 = "diagnosis_icd9"
DIAGNOSIS_CCS = "diagnosis_ccs"
TASKS = (READMISSION, DIAGNOSIS_ICD9, DIAGNOSIS_CCS)


@dataclass(frozen=True)
class FeatureConfig:
    text: bool = False
    duration: bool = False
    days_since_prior: bool = False
    diag: bool = True
    proc: bool = False
    med: bool = False
    code_space: str = "ccs"
    temporal_hidden: int = TEMPORAL_HIDDEN

    def __post_init__(self):
        if not self.enabled():
            raise ConfigError("at least one input feature must be enabled")

    def enabled(self) -> tuple[str, ...]:
        return tuple(f for f in FEATURE_ORDER if getattr(self, f))

    def feature_dim(self, name) -> int:
        if name == "text":
            return TEXT_DIM
        if name in ("duration", "days_since_prior"):
            return self.temporal_hidden
        return BOTTLENECK_DIM

    def dim(self) -> int:
        return sum(self.feature_dim(f) for f in self.enabled())

    @classmethod
    def from_names(cls, names, **kw) -> "FeatureConfig":
        names = set(names)
        unknown = names - set(FEATURE_ORDER)
        if unknown:
            raise ConfigError(f"unknown features {sorted(unknown)}")
        return cls(**{f: f in names for f in FEATURE_ORDER}, **kw)


def all_feature_configs():
    """Every non-empty feature subset."""
    for r in range(1, len(FEATURE_ORDER) + 1):
        for combo in combinations(FEATURE_ORDER, r):
            yield FeatureConfig.from_names(combo)


@dataclass
class AdmissionBatch:
    text: Optional[np.ndarray]
    duration: Optional[np.ndarray]
    prior: Optional[np.ndarray]
    codes: dict
    y: Optional[np.ndarray] = None

    def __len__(self):
        for arr in (self.text, self.duration, self.prior, *self.codes.values()):
            if arr is not None:
                return arr.shape[0]
        return 0


def embedding_table(vocab: CodeVocabulary, store: VectorStore, dtype=np.float32) -> np.ndarray:
    """Rows in vocabulary order, padding row zero."""
    table = np.zeros((len(vocab), store.dim), dtype=dtype)
    missing = [c for c in vocab.entries if c not in store]
    if missing:
        raise DataIntegrityError(
            f"{len(missing)} {vocab.system.value} codes have no embedding, e.g. {missing[:3]}"
        )
    if vocab.n_codes:
        table[1:] = store.get_many(vocab.entries)
    return table


class AdmissionEncoder(Module):
    """Produces the concatenated admission representation (h_admission)."""

    def __init__(self, config: FeatureConfig, tables: dict, dropout=0.1, rng=None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = dtype
        self.text_drop = Dropout(dropout, rng) if config.text else None
        self.duration_block = (DenseBlock(1, config.temporal_hidden, dropout, rng, dtype)
                               if config.duration else None)
        # value plus an is-first-admission indicator
        self.prior_block = (DenseBlock(2, config.temporal_hidden, dropout, rng, dtype)
                            if config.days_since_prior else None)
        self.bottlenecks = {}
        for name in CODE_FEATURES:
            if getattr(config, name):
                if name not in tables:
                    raise ConfigError(f"feature {name!r} enabled but no embedding table given")
                block = EmbeddingBottleneck(tables[name], BOTTLENECK_DIM, dropout, rng, dtype)
                setattr(self, f"{name}_bottleneck", block)
                self.bottlenecks[name] = block
        self.dim = config.dim()
        self._widths = None

    def _parts(self):
        for name in self.config.enabled():
            if name == "text":
                yield name, self.text_drop
            elif name == "duration":
                yield name, self.duration_block
            elif name == "days_since_prior":
                yield name, self.prior_block
            else:
                yield name, self.bottlenecks[name]

    def forward(self, batch: AdmissionBatch) -> np.ndarray:
        outs = []
        for name, block in self._parts():
            if name == "text":
                if batch.text is None:
                    raise ConfigError("text feature enabled but batch has no chunk vectors")
                outs.append(block.forward(batch.text.astype(self.dtype, copy=False)))
            elif name == "duration":
                outs.append(block.forward(batch.duration.astype(self.dtype, copy=False)))
            elif name == "days_since_prior":
                outs.append(block.forward(batch.prior.astype(self.dtype, copy=False)))
            else:
                outs.append(block.forward(batch.codes[name]))
        self._widths = [o.shape[1] for o in outs]
        h = np.concatenate(outs, axis=1)
        if h.shape[1] != self.dim:
            raise ConfigError(f"representation has dim {h.shape[1]}, config says {self.dim}")
        return h

    def backward(self, dh):
        start = 0
        for (name, block), width in zip(self._parts(), self._widths):
            block.backward(dh[:, start:start + width])
            start += width


class AdmissionModel(Module):
    def __init__(self, config: FeatureConfig, n_classes: int, tables: dict, dropout=0.1,
                 seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.encoder = AdmissionEncoder(config, tables, dropout, rng, dtype)
        self.head = SigmoidHead(self.encoder.dim, n_classes, rng, dtype)
        self.n_classes = n_classes

    def forward(self, batch: AdmissionBatch) -> np.ndarray:
        return self.head.forward(self.encoder.forward(batch))

    def represent(self, batch: AdmissionBatch) -> np.ndarray:
        self.eval()
        return self.encoder.forward(batch)

    def predict(self, batch: AdmissionBatch) -> np.ndarray:
        self.eval()
        return self.forward(batch)

    def train_step(self, batch: AdmissionBatch) -> float:
        self.train()
        self.forward(batch)
        loss = self.head.loss(batch.y)
        self.encoder.backward(self.head.backward(batch.y))
        return loss

    def batch_loss(self, batch: AdmissionBatch) -> float:
        self.forward(batch)
        return self.head.loss(batch.y)


# --------------------------------------------------------------------------
# samples and batching

@dataclass(frozen=True)
class AdmissionSample:
    admission: Admission
    chunk_id: Optional[str]
    label: Optional[np.ndarray]


def task_label(admission: Admission, task: str) -> Optional[np.ndarray]:
    if task == READMISSION:
        return np.array([float(admission.readmitted_30d)], dtype=np.float32)
    if admission.next_diag_multihot is None:
        return None
    return admission.next_diag_multihot.astype(np.float32)


def make_samples(admissions: Sequence[Admission], config: FeatureConfig, task: str,
                 with_labels: bool = True) -> list[AdmissionSample]:
    """One sample per note chunk when text is enabled, otherwise one per admission.

    Diagnosis tasks skip admissions without a next-visit label.
    """
    out = []
    no_text = no_label = 0
    for adm in admissions:
        label = task_label(adm, task) if with_labels else None
        if with_labels and label is None:
            no_label += 1
            continue
        if config.text:
            if not adm.note_chunk_ids:
                no_text += 1
                continue
            out.extend(AdmissionSample(adm, cid, label) for cid in adm.note_chunk_ids)
        else:
            out.append(AdmissionSample(adm, None, label))
    if no_text:
        log.warning("%d admissions without note chunks skipped (text feature enabled)", no_text)
    if no_label:
        log.debug("%d admissions without a %s label skipped", no_label, task)
    return out


class Featurizer:
    """Turns samples into padded model inputs."""

    def __init__(self, config: FeatureConfig, scaler: Optional[TemporalScaler] = None,
                 vocabs: Optional[dict] = None, chunk_store: Optional[VectorStore] = None):
        self.config = config
        self.scaler = scaler
        self.vocabs = vocabs or {}
        self.chunk_store = chunk_store
        if (config.duration or config.days_since_prior) and scaler is None:
            raise ConfigError("temporal features need a fitted TemporalScaler")
        if config.text and chunk_store is None:
            raise ConfigError("text feature needs a chunk embedding store")
        for name in CODE_FEATURES:
            if getattr(config, name) and name not in self.vocabs:
                raise ConfigError(f"feature {name!r} needs a vocabulary")

    def code_indices(self, admissions: Sequence[Optional[Admission]], name: str) -> np.ndarray:
        vocab = self.vocabs[name]
        rows = []
        for adm in admissions:
            if adm is None:
                rows.append([])
                continue
            idx, _ = vocab.indices(getattr(adm, f"{name}_codes"))
            rows.append(idx)
        width = max(1, max(len(r) for r in rows))
        out = np.zeros((len(rows), width), dtype=np.int64)
        for i, r in enumerate(rows):
            out[i, :len(r)] = r
        return out

    def admissions_batch(self, admissions: Sequence[Optional[Admission]],
                         chunk_ids: Optional[Sequence] = None) -> AdmissionBatch:
        """``None`` entries stand for dummy admissions (all-zero inputs)."""
        cfg = self.config
        n = len(admissions)
        text = duration = prior = None
        if cfg.text:
            text = np.zeros((n, TEXT_DIM), dtype=np.float32)
            for i, cid in enumerate(chunk_ids or ()):
                if cid is not None:
                    text[i] = self.chunk_store[cid]
        if cfg.duration:
            duration = np.array(
                [[self.scaler.scale("duration", a.duration_days) if a else 0.0] for a in admissions],
                dtype=np.float32)
        if cfg.days_since_prior:
            prior = np.array(
                [[self.scaler.scale("days_since_prior", a.days_since_prior) if a else 0.0,
                  float(a.is_first) if a else 0.0] for a in admissions], dtype=np.float32)
        codes = {name: self.code_indices(admissions, name)
                 for name in CODE_FEATURES if getattr(cfg, name)}
        return AdmissionBatch(text, duration, prior, codes)

    def batch(self, samples: Sequence[AdmissionSample]) -> AdmissionBatch:
        b = self.admissions_batch([s.admission for s in samples], [s.chunk_id for s in samples])
        if samples and samples[0].label is not None:
            b.y = np.stack([s.label for s in samples])
        return b


# --------------------------------------------------------------------------
# chunk aggregation

@dataclass(frozen=True)
class ChunkPredictionGroup:
    admission_id: str
    probabilities: np.ndarray  # (k, n_classes)
    c: float = CHUNK_C

    @property
    def k(self) -> int:
        return self.probabilities.shape[0]


def aggregate_chunks(group, c: float = CHUNK_C) -> np.ndarray:
    """Fuse per-chunk probabilities: (p_max + p_mean * λ) / (1 + λ), λ = k / c."""
    if isinstance(group, ChunkPredictionGroup):
        probs, c = group.probabilities, group.c
    else:
        probs = group
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[:, None]
    k = probs.shape[0]
    if k == 0:
        raise ValueError("cannot aggregate an empty chunk group")
    lam = k / c
    return (probs.max(axis=0) + probs.mean(axis=0) * lam) / (1.0 + lam)


# --------------------------------------------------------------------------
# training / evaluation / export

def train_admission_model(train_samples, val_samples, featurizer: Featurizer, n_classes: int,
                          tables: dict, hp: TrainHyperparams, dtype=np.float32):
    model = AdmissionModel(featurizer.config, n_classes, tables, dropout=hp.dropout, seed=hp.seed,
                           dtype=dtype)
    result = fit(model, train_samples, val_samples, featurizer.batch, hp)
    return model, result


def predict_samples(model: AdmissionModel, featurizer: Featurizer, samples, batch_size=256):
    model.eval()
    out = [model.predict(featurizer.batch(chunk)) for chunk in batches(samples, batch_size)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.n_classes))


def admission_predictions(model, featurizer, samples, batch_size=256):
    """Per-admission probabilities and labels, chunk predictions fused by ``aggregate_chunks``."""
    probs = predict_samples(model, featurizer, samples, batch_size)
    groups: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.admission.admission_id, []).append(i)
    ids = list(groups)
    fused = np.stack([aggregate_chunks(probs[groups[a]]) for a in ids]) if ids else probs
    labels = np.stack([samples[groups[a][0]].label for a in ids]) if ids else None
    return ids, fused, labels


def evaluate_admission_model(model, featurizer, samples, task, fold=None, fingerprint=""):
    ids, probs, labels = admission_predictions(model, featurizer, samples)
    if task == READMISSION:
        return evaluate_binary(probs[:, 0], labels[:, 0], task, fold, fingerprint)
    return evaluate_multilabel(probs, labels, task, fold, fingerprint)


def export_representations(model: AdmissionModel, featurizer: Featurizer,
                           admissions: Sequence[Admission], batch_size=256) -> RepresentationStore:
    if featurizer.config.text:
        raise ConfigError(
            "text-enabled models give one representation per note chunk, not per admission; "
            "they cannot feed the sequence model"
        )
    model.eval()
    vecs = []
    for chunk in batches(list(admissions), batch_size):
        vecs.append(model.represent(featurizer.admissions_batch(chunk)))
    matrix = np.concatenate(vecs, axis=0) if vecs else np.zeros((0, model.encoder.dim), np.float32)
    return RepresentationStore([a.admission_id for a in admissions], matrix)
