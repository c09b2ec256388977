"""Central finite-difference gradient oracle.

The check perturbs each coordinate of each input by +-h, evaluates the
function under :func:`gsabt.tensor.no_grad`, and compares against the
analytic gradient. Coordinates whose +-h evaluations land on a different
smooth piece (a relu, abs or top-U pattern flips) are reported as kink
skips instead of failures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, no_grad, record_kinks

#: Denominator floor for relative errors; keeps ~1e-11 roundoff on tiny
#: gradients from reading as large relative errors.
REL_FLOOR = 1e-6


@dataclass
class GradCheckEntry:
    name: str
    size: int
    max_rel_err: float
    max_abs_err: float
    kink_skips: int


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.max_rel_err <= self.tol for e in self.entries)

    def to_text(self) -> str:
        lines = [f"{'parameter':<32} {'size':>7} {'max_rel_err':>12} {'max_abs_err':>12} {'kinks':>6}"]
        for e in self.entries:
            lines.append(f"{e.name:<32} {e.size:>7d} {e.max_rel_err:>12.3e} {e.max_abs_err:>12.3e} {e.kink_skips:>6d}")
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"overall max_rel_err={self.max_rel_err:.3e} tol={self.tol:.1e} {verdict}")
        return "\n".join(lines) + "\n"


def _patterns_equal(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[], Tensor], inputs: Mapping[str, Tensor], h: float = 1e-5,
               tol: float = 1e-5, names: list[str] | None = None) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar ``f()``.

    ``f`` closes over ``inputs`` and must be deterministic. Each input is
    perturbed in place and restored afterwards.
    """
    for t in inputs.values():
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.zero_grad()
    with record_kinks() as base_pattern:
        loss = f()
    loss.backward()
    base_pattern = list(base_pattern)

    report = GradCheckReport(tol=tol)
    for name in names or list(inputs):
        t = inputs[name]
        analytic = t.grad.copy()
        numeric = np.zeros_like(analytic)
        usable = np.ones(analytic.shape, dtype=bool)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for step in (h, -h):
                flat[i] = orig + step
                with no_grad(), record_kinks() as pattern:
                    vals.append(float(f().data))
                if not _patterns_equal(pattern, base_pattern):
                    usable.flat[i] = False
            flat[i] = orig
            numeric.flat[i] = (vals[0] - vals[1]) / (2 * h)
        rel = np.where(usable, relative_error(analytic, numeric), 0.0)
        abs_err = np.where(usable, np.abs(analytic - numeric), 0.0)
        report.entries.append(GradCheckEntry(
            name=name,
            size=t.size,
            max_rel_err=float(rel.max()) if rel.size else 0.0,
            max_abs_err=float(abs_err.max()) if abs_err.size else 0.0,
            kink_skips=int((~usable).sum()),
        ))
    return report


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Plain central differences of a numpy scalar function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        g.flat[i] = (fp - fm) / (2 * h)
    return g
