"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .layers import Module

STEP_32 = 1e-3
STEP_64 = 1e-5


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)
    n_checked: int = 0

    def passed(self, tol=1e-3) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor stops 0/0 on vanishing gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    module: Module,
    loss_fn: Callable[[], float],
    backward_fn: Callable[[], Optional[dict]],
    inputs: Optional[dict] = None,
    h: Optional[float] = None,
    max_entries: int = 20,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_fn`` runs a forward pass and returns the scalar loss.
    ``backward_fn`` runs forward + backward, leaving parameter gradients in
    place, and returns gradients for any arrays named in ``inputs``.
    At most ``max_entries`` randomly chosen entries are probed per tensor.
    """
    inputs = inputs or {}
    params = module.trainable_parameters()
    dtype = next(iter(params.values())).value.dtype if params else np.float64
    if h is None:
        h = STEP_64 if dtype == np.float64 else STEP_32
    module.zero_grad()
    input_grads = backward_fn() or {}
    targets = {name: (p.value, p.grad.copy()) for name, p in params.items()}
    for name, arr in inputs.items():
        targets[f"input:{name}"] = (arr, np.asarray(input_grads[name]).copy())

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0)
    for name, (arr, analytic) in targets.items():
        flat = arr.reshape(-1)
        if flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(picks))
        for j, idx in enumerate(picks):
            orig = flat[idx]
            flat[idx] = orig + h
            plus = loss_fn()
            flat[idx] = orig - h
            minus = loss_fn()
            flat[idx] = orig
            numeric[j] = (plus - minus) / (2.0 * h)
        err = float(relative_error(analytic.reshape(-1)[picks], numeric, floor).max())
        report.per_tensor[name] = err
        report.n_checked += len(picks)
        report.max_rel_error = max(report.max_rel_error, err)
    return report
