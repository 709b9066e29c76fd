"""Finite-difference verification of analytic gradients.

For sampled parameter coordinates the checker compares the backward-pass
gradient with a central difference of the loss, using the relative error
|analytic - numeric| / max(1, |analytic|). This is the independent oracle
for every differentiable operation in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CoordinateResult:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    checked: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures

    @property
    def max_rel_err(self):
        return max((c.rel_err for c in self.checked), default=0.0)

    def __str__(self):
        status = "PASS" if self.ok else "FAIL"
        return (f"grad check {status}: {len(self.checked)} coordinates, "
                f"max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tolerance:.1e}, {len(self.failures)} failures)")


def grad_check(loss_fn, params: dict, n_coords=50, h=1e-5, tol=1e-4,
               rng=None) -> GradCheckReport:
    """Check d loss_fn / d params against central differences.

    loss_fn must be a deterministic closure over params returning a scalar
    Tensor. n_coords coordinates are sampled across all parameters (every
    parameter gets at least one when n_coords allows).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None
                       else np.zeros_like(t.data))
                for name, t in params.items()}

    names = sorted(params)
    coords = []
    for name in names:
        size = params[name].size
        coords.append((name, int(rng.integers(size))))
    while len(coords) < n_coords:
        name = names[int(rng.integers(len(names)))]
        coords.append((name, int(rng.integers(params[name].size))))
    coords = coords[:max(n_coords, len(names))]

    report = GradCheckReport(tolerance=tol)
    for name, flat in coords:
        t = params[name]
        idx = np.unravel_index(flat, t.data.shape) if t.data.shape else ()
        orig = t.data[idx] if t.data.shape else float(t.data)
        _assign(t, idx, orig + h)
        up = float(loss_fn().data)
        _assign(t, idx, orig - h)
        down = float(loss_fn().data)
        _assign(t, idx, orig)
        numeric = (up - down) / (2.0 * h)
        ana = float(analytic[name][idx]) if t.data.shape else float(analytic[name])
        rel = abs(ana - numeric) / max(1.0, abs(ana))
        result = CoordinateResult(name, idx, ana, numeric, rel)
        report.checked.append(result)
        if rel > tol:
            report.failures.append(result)
    return report


def _assign(t, idx, value):
    if t.data.shape:
        writable = t.data.copy()
        writable[idx] = value
        t.data = writable
    else:
        t.data = np.array(value, dtype=float)
