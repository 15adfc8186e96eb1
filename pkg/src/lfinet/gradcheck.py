"""Central finite-difference gradient checks.

The error reported for a tensor is ``max|analytic - numeric| / max(max|analytic|,
max|numeric|, floor)``: the worst coordinate error relative to the gradient's
own scale, with an absolute floor so all-zero gradients compare absolutely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

FLOOR = 1e-8


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    tolerance: float
    n_coords: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<32s} max_err={self.max_error:.3e} tol={self.tolerance:.0e} coords={self.n_coords}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(
    f: Callable[[], float], x: np.ndarray, coords: Sequence[int] | None = None, h: float = 1e-6
) -> np.ndarray:
    """d f / d x at flat indices ``coords`` (all if None); ``x`` is perturbed in place and restored."""
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def check(
    f: Callable[[], Tensor],
    inputs: dict[str, Tensor],
    tolerance: float,
    name: str = "",
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    h: float = 1e-6,
) -> GradcheckResult:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    With ``max_coords`` set, a random subsample of that many coordinates (pooled
    over all inputs) is checked instead of every coordinate.
    """
    for t in inputs.values():
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 inputs")
        t.requires_grad = True
        t.grad = None
    out = f()
    if out.size != 1:
        raise ValueError("gradcheck function must return a scalar tensor")
    out.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1).copy() for k, t in inputs.items()}

    def scalar() -> float:
        return float(f().data.reshape(-1)[0])

    plan: dict[str, np.ndarray | None] = {k: None for k in inputs}
    if max_coords is not None:
        rng = rng or np.random.default_rng(0)
        sizes = np.array([t.size for t in inputs.values()])
        total = int(sizes.sum())
        picks = np.sort(rng.choice(total, size=min(max_coords, total), replace=False))
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        for j, k in enumerate(inputs):
            sel = picks[(picks >= offsets[j]) & (picks < offsets[j + 1])] - offsets[j]
            plan[k] = sel

    a_all, n_all = [], []
    for k, t in inputs.items():
        coords = plan[k]
        if coords is not None and len(coords) == 0:
            continue
        num = numeric_grad(scalar, t.data, coords, h)
        a_all.append(analytic[k] if coords is None else analytic[k][coords])
        n_all.append(num)
    a_cat, n_cat = np.concatenate(a_all), np.concatenate(n_all)
    return GradcheckResult(name, relative_error(a_cat, n_cat), tolerance, int(a_cat.size))


def projected(fn: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """Scalarize ``fn`` as sum(fn() * R); R is drawn on the first call and then held fixed."""
    held: list[np.ndarray] = []

    def f() -> Tensor:
        out = fn()
        if not held:
            held.append(rng.standard_normal(out.shape))
        return (out * held[0]).sum()

    return f
