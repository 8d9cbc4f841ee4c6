"""Mini-batch training loop with validation-loss early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import make_optimizer

log = logging.getLogger(__name__)


@dataclass
class TrainHyperparams:
    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 0.001
    dropout: float = 0.1
    early_stop: bool = True
    # counted in optimizer steps since the last validation improvement
    patience_steps: int = 200
    lookahead: bool = False
    seed: int = 0


@dataclass
class TrainResult:
    best_val_loss: float
    epochs_run: int
    steps: int
    history: list = field(default_factory=list)
    stopped_early: bool = False


def batches(items: Sequence, batch_size: int, rng=None):
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def mean_loss(model, items, make_batch, batch_size=256) -> float:
    model.eval()
    total, n = 0.0, 0
    for chunk in batches(items, batch_size):
        batch = make_batch(chunk)
        total += model.batch_loss(batch) * len(chunk)
        n += len(chunk)
    return total / max(n, 1)


def fit(model, train_items: Sequence, val_items: Sequence, make_batch: Callable,
        hp: TrainHyperparams, log_every: int = 0) -> TrainResult:
    """Train ``model`` in place; the best-validation parameters are restored at the end.

    ``model`` needs ``train_step(batch) -> loss`` (forward + backward) and
    ``batch_loss(batch) -> loss``.
    """
    rng = np.random.default_rng(hp.seed)
    opt = make_optimizer(model.trainable_parameters(), lr=hp.learning_rate, lookahead=hp.lookahead)
    best = np.inf
    best_state = None
    since_best = 0
    steps = 0
    history = []
    stopped = False
    epoch = 0
    for epoch in range(1, hp.epochs + 1):
        model.train()
        train_total = 0.0
        for chunk in batches(train_items, hp.batch_size, rng):
            opt.zero_grad()
            train_total += model.train_step(make_batch(chunk)) * len(chunk)
            opt.step()
            steps += 1
            since_best += 1
        train_loss = train_total / max(len(train_items), 1)
        val_loss = mean_loss(model, val_items, make_batch) if val_items else train_loss
        history.append((epoch, train_loss, val_loss))
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if val_loss < best:
            best = val_loss
            best_state = {k: p.value.copy() for k, p in model.trainable_parameters().items()}
            since_best = 0
        elif hp.early_stop and since_best >= hp.patience_steps:
            stopped = True
            break
    if best_state is not None:
        for k, p in model.trainable_parameters().items():
            p.value[...] = best_state[k]
    model.eval()
    return TrainResult(float(best), epoch, steps, history, stopped)
