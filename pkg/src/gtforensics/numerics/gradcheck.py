"""Reverse-mode gradients over named parameters, and a central-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import NumericError, Tensor

Objective = Callable[[Mapping[str, Tensor]], Tensor]


@dataclass
class GradientContext:
    """Tracked parameters, the objective value at them, and d(objective)/d(param)."""

    params: dict[str, np.ndarray]
    value: float = 0.0
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def value_and_grad(objective: Objective, params: Mapping[str, np.ndarray]) -> GradientContext:
    tracked = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
    out = objective(tracked)
    if out.data.size != 1:
        raise ValueError(f"objective must be scalar, got shape {out.shape}")
    if out.requires_grad:
        out.backward()
    grads = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in tracked.items()
    }
    return GradientContext(dict(params), float(out.data), grads)


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        worst = max(self.errors, key=self.errors.get) if self.errors else "-"
        return (f"gradcheck {'PASS' if self.passed else 'FAIL'}: max rel err "
                f"{self.max_error:.3e} ({worst}), tol {self.tolerance:g}")


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return float(np.linalg.norm(analytic - numeric))
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(objective: Objective, params: Mapping[str, np.ndarray], name: str,
                 step: float = 1e-5) -> np.ndarray:
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    target = base[name]
    grad = np.zeros_like(target)

    def f() -> float:
        return float(objective({k: Tensor(v) for k, v in base.items()}).data)

    flat, gflat = target.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def finite_diff_check(objective: Objective, params: Mapping[str, np.ndarray],
                      step: float = 1e-5, tolerance: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients against central differences.

    The error per parameter is ||g_rev - g_fd|| / max(||g_rev||, ||g_fd||).
    Raises NumericError if two evaluations at the same point disagree.
    """
    frozen = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in params.items()}
    first, second = float(objective(frozen).data), float(objective(frozen).data)
    if first != second:
        raise NumericError(f"objective is not deterministic: {first!r} != {second!r}")
    ctx = value_and_grad(objective, params)
    errors = {
        name: _relative_error(ctx.grads[name], numeric_grad(objective, params, name, step))
        for name in params
    }
    return GradCheckReport(errors, tolerance)
