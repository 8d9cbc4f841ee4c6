"""Recurrent trajectory model over sliding windows of admissions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .admission_model import READMISSION, AdmissionBatch, AdmissionEncoder, Featurizer
from .codes import CodeVocabulary
from .errors import ConfigError
from .folds import WindowSample
from .ingest import multihot
from .metrics import evaluate_binary, evaluate_multilabel
from .nn import GRU, Module, RecurrentStack, SigmoidHead
from .stores import VectorStore
from .training import TrainHyperparams, batches, fit

DENSE = "dense_representation"
MULTI_HOT = "multi_hot"
WINDOW_SIZES = (3, 6)
HIDDEN_SIZES = (255, 818)


@dataclass(frozen=True)
class SequenceModelConfig:
    input_mode: str = DENSE
    cell_type: str = GRU
    hidden_size: int = 255
    num_layers: int = 1
    bidirectional: bool = False
    window_k: int = 3
    dropout: float = 0.2
    n_classes: int = 1
    # fine-tune the admission encoder through the recurrent model (off by default)
    trainable_encoder: bool = False

    def __post_init__(self):
        if self.input_mode not in (DENSE, MULTI_HOT):
            raise ConfigError(f"input_mode must be {DENSE!r} or {MULTI_HOT!r}")
        if self.trainable_encoder and self.input_mode != DENSE:
            raise ConfigError("trainable_encoder only applies to dense_representation inputs")


@dataclass
class TrajectoryBatch:
    x: Optional[np.ndarray]  # (B, k, d); None when an encoder builds inputs
    mask: np.ndarray  # (B, k), 0 for dummy slots
    y: Optional[np.ndarray] = None
    admissions: Optional[AdmissionBatch] = None  # flattened B*k, end-to-end mode

    def __len__(self):
        return self.mask.shape[0]


def build_multihot_inputs(window: Sequence, vocab: CodeVocabulary):
    """Stacked diagnosis indicators per window step; dummy steps are zero rows."""
    k = len(window)
    x = np.zeros((k, vocab.n_codes), dtype=np.float32)
    mask = np.zeros(k, dtype=np.float32)
    for t, adm in enumerate(window):
        if adm is None:
            continue
        idx, _ = vocab.indices(adm.diag_codes)
        x[t] = multihot(idx, vocab)
        mask[t] = 1.0
    return x, mask


def window_label(w: WindowSample, task: str) -> np.ndarray:
    if task == READMISSION:
        return np.array([w.readmission_label()], dtype=np.float32)
    return w.diagnosis_label().astype(np.float32)


class MultiHotInputs:
    def __init__(self, vocab: CodeVocabulary, task: str):
        self.vocab = vocab
        self.task = task
        self.dim = vocab.n_codes

    def batch(self, windows: Sequence[WindowSample]) -> TrajectoryBatch:
        xs, masks = zip(*(build_multihot_inputs(w.window, self.vocab) for w in windows))
        y = np.stack([window_label(w, self.task) for w in windows])
        return TrajectoryBatch(np.stack(xs), np.stack(masks), y)


class RepresentationInputs:
    """Reads frozen admission representations from a store."""

    def __init__(self, store: VectorStore, task: str):
        self.store = store
        self.task = task
        self.dim = store.dim

    def batch(self, windows: Sequence[WindowSample]) -> TrajectoryBatch:
        B, k = len(windows), windows[0].k
        x = np.zeros((B, k, self.dim), dtype=np.float32)
        mask = np.zeros((B, k), dtype=np.float32)
        for i, w in enumerate(windows):
            for t, adm in enumerate(w.window):
                if adm is not None:
                    x[i, t] = self.store[adm.admission_id]
                    mask[i, t] = 1.0
        y = np.stack([window_label(w, self.task) for w in windows])
        return TrajectoryBatch(x, mask, y)


class EncoderInputs:
    """Raw admission features for end-to-end training through the encoder."""

    def __init__(self, featurizer: Featurizer, task: str):
        if featurizer.config.text:
            raise ConfigError("text features give several representations per admission")
        self.featurizer = featurizer
        self.task = task
        self.dim = featurizer.config.dim()

    def batch(self, windows: Sequence[WindowSample]) -> TrajectoryBatch:
        flat = [adm for w in windows for adm in w.window]
        mask = np.stack([w.mask for w in windows])
        y = np.stack([window_label(w, self.task) for w in windows])
        return TrajectoryBatch(None, mask, y, self.featurizer.admissions_batch(flat))


class SequenceModel(Module):
    def __init__(self, config: SequenceModelConfig, input_dim: int, encoder: AdmissionEncoder = None,
                 seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        if config.trainable_encoder and encoder is None:
            raise ConfigError("trainable_encoder needs an admission encoder")
        self.config = config
        self.encoder = encoder if config.trainable_encoder else None
        self.rnn = RecurrentStack(config.cell_type, input_dim, config.hidden_size, config.num_layers,
                                  config.bidirectional, config.dropout, rng, dtype)
        self.head = SigmoidHead(self.rnn.output_size, config.n_classes, rng, dtype)
        self.dtype = dtype
        self._shape = None

    def _inputs(self, batch: TrajectoryBatch) -> np.ndarray:
        if self.encoder is None:
            return batch.x.astype(self.dtype, copy=False)
        B, k = batch.mask.shape
        h = self.encoder.forward(batch.admissions)
        self._shape = (B, k, h.shape[1])
        return h.reshape(B, k, -1) * batch.mask[:, :, None].astype(self.dtype)

    def forward(self, batch: TrajectoryBatch) -> np.ndarray:
        x = self._inputs(batch)
        return self.head.forward(self.rnn.forward(x, batch.mask))

    def predict(self, batch: TrajectoryBatch) -> np.ndarray:
        self.eval()
        return self.forward(batch)

    def train_step(self, batch: TrajectoryBatch) -> float:
        self.train()
        self.forward(batch)
        loss = self.head.loss(batch.y)
        dx = self.rnn.backward(self.head.backward(batch.y))
        if self.encoder is not None:
            dx = dx * batch.mask[:, :, None]
            self.encoder.backward(dx.reshape(-1, dx.shape[2]))
        return loss

    def batch_loss(self, batch: TrajectoryBatch) -> float:
        self.forward(batch)
        return self.head.loss(batch.y)


def forward_trajectory(model: SequenceModel, batch: TrajectoryBatch) -> np.ndarray:
    return model.predict(batch)


def train_sequence_model(train_windows, val_windows, inputs, config: SequenceModelConfig,
                         hp: TrainHyperparams, encoder=None, dtype=np.float32):
    model = SequenceModel(config, inputs.dim, encoder=encoder, seed=hp.seed, dtype=dtype)
    result = fit(model, train_windows, val_windows, inputs.batch, hp)
    return model, result


def predict_windows(model: SequenceModel, inputs, windows, batch_size=256):
    out = [model.predict(inputs.batch(chunk)) for chunk in batches(list(windows), batch_size)]
    return np.concatenate(out, axis=0)


def evaluate_sequence_model(model, inputs, windows, task, fold=None, fingerprint=""):
    probs = predict_windows(model, inputs, windows)
    labels = np.stack([window_label(w, task) for w in windows])
    if task == READMISSION:
        return evaluate_binary(probs[:, 0], labels[:, 0], task, fold, fingerprint)
    return evaluate_multilabel(probs, labels, task, fold, fingerprint)
