"""Finite-difference verification of the autodiff engine.

Central differences in float64 are the independent oracle for every backward
rule: ``(f(x+h*e) - f(x-h*e)) / 2h`` per coordinate, compared against the
gradient the tape produces.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor, no_grad


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    max_abs_err: float
    tol: float
    n_coords: int
    passed: bool
    worst_coord: int = -1
    grad_scale: float = 0.0

    def summary(self) -> str:
        state = "ok" if self.passed else "FAIL"
        return (
            f"{self.name:<16} rel_err={self.max_rel_err:.3e} "
            f"(abs={self.max_abs_err:.3e}, coords={self.n_coords}, tol={self.tol:.0e}) {state}"
        )


def grad_check(
    f,
    x: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "",
    sample_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    The relative error is the largest coordinate-wise deviation normalized by
    the largest gradient magnitude seen on either side, so coordinates whose
    true gradient is zero do not produce spurious failures. Requires float64
    input; finite differencing is meaningless at float32.
    """
    if x.dtype != np.float64:
        raise NumericError(f"grad_check: requires float64 input, got {x.dtype}")
    x.requires_grad = True
    x.grad = None
    y = f(x)
    if y.size != 1:
        raise NumericError(f"grad_check: f must be scalar-valued, got shape {y.shape}")
    if not np.isfinite(y.data).all():
        raise NumericError(f"grad_check '{name}': aborted, f(x) is non-finite")
    y.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    analytic = analytic.reshape(-1)

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if sample_coords is not None and sample_coords < flat.size:
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(flat.size, size=sample_coords, replace=False))

    numeric = np.zeros(len(coords))
    with no_grad():
        for n, i in enumerate(coords):
            saved = flat[i]
            flat[i] = saved + h
            fp = f(x).item()
            flat[i] = saved - h
            fm = f(x).item()
            flat[i] = saved
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError(f"grad_check '{name}': aborted, perturbed f non-finite at coord {i}")
            numeric[n] = (fp - fm) / (2.0 * h)

    a = analytic[coords]
    diff = np.abs(a - numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    worst = int(diff.argmax()) if len(diff) else 0
    max_abs = float(diff.max(initial=0.0))
    rel = max_abs / scale
    return GradCheckReport(
        name=name,
        max_rel_err=rel,
        max_abs_err=max_abs,
        tol=tol,
        n_coords=len(coords),
        passed=rel < tol,
        worst_coord=int(coords[worst]) if len(coords) else -1,
        grad_scale=float(scale),
    )
