"""Finite-difference verification of reverse-mode gradients.

The checker temporarily promotes the supplied parameters to float64, runs
the loss once to collect analytic gradients, then compares sampled entries
against central differences. Large tensors are subsampled with a seeded RNG
(the report records how many entries were checked); small ones are checked
exhaustively. The loss callable must be deterministic and side-effect free —
batch-norm running-stat updates, for example, must be disabled by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GradientCheckError
from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    size: int
    checked: int
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float

    def line(self, rel_tol: float) -> str:
        status = "ok" if self.max_rel_err <= rel_tol else "FAIL"
        return (f"{status:4s} {self.name:50s} rel_err={self.max_rel_err:.3e} "
                f"({self.checked}/{self.size} entries)")


@dataclass
class GradCheckReport:
    rel_tol: float
    checks: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def ok(self) -> bool:
        return all(c.max_rel_err <= self.rel_tol for c in self.checks)

    def failures(self) -> list[ParamCheck]:
        return [c for c in self.checks if c.max_rel_err > self.rel_tol]

    def summary(self) -> str:
        lines = [c.line(self.rel_tol) for c in self.checks]
        verdict = "all gradients ok" if self.ok else f"{len(self.failures())} parameters FAILED"
        lines.append(f"{verdict}; max rel err {self.max_rel_err:.3e} (tol {self.rel_tol:.0e})")
        return "\n".join(lines)

    def ensure(self) -> "GradCheckReport":
        if not self.ok:
            bad = self.failures()[0]
            raise GradientCheckError(
                f"gradient of {bad.name!r} off by {bad.max_rel_err:.3e} relative "
                f"(tol {self.rel_tol:.0e}); analytic {bad.analytic:.6e} vs "
                f"numeric {bad.numeric:.6e} at flat index {bad.worst_index}")
        return self


def check_gradients(loss_fn, params, rel_tol: float = 1e-3, h: float = 1e-5,
                    max_entries: int = 16, seed: int = 0, floor: float = 1e-6,
                    raise_on_failure: bool = False) -> GradCheckReport:
    """Compare reverse-mode gradients of `loss_fn()` against central differences.

    `params` is an iterable of (name, Tensor) pairs; each tensor must require
    a gradient and be reachable from the loss. The step is scaled per entry
    as h*(1+|x|); relative error uses max(|analytic|, |numeric|, floor) as
    the denominator so negligible gradients compare as equal.
    """
    params = list(params.items()) if isinstance(params, dict) else list(params)
    originals = [p.data for _, p in params]
    for _, p in params:
        if not p.requires_grad:
            raise GradientCheckError(f"parameter does not require a gradient")
        p.data = p.data.astype(np.float64)

    report = GradCheckReport(rel_tol=rel_tol)
    try:
        for _, p in params:
            p.grad = None
        loss = loss_fn()
        if loss.size != 1:
            raise GradientCheckError(f"loss must be scalar, got shape {loss.shape}")
        loss.backward()
        analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                    for name, p in params}

        rng = np.random.default_rng(seed)
        for name, p in params:
            flat = p.data.reshape(-1)
            if flat.size <= max_entries:
                idxs = np.arange(flat.size)
            else:
                idxs = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            a_flat = analytic[name].reshape(-1)
            worst = ParamCheck(name, flat.size, len(idxs), 0.0, -1, 0.0, 0.0)
            for i in idxs:
                keep = flat[i]
                step = h * (1.0 + abs(keep))
                flat[i] = keep + step
                hi = float(loss_fn().data)
                flat[i] = keep - step
                lo = float(loss_fn().data)
                flat[i] = keep
                numeric = (hi - lo) / (2.0 * step)
                a = float(a_flat[i])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                if rel > worst.max_rel_err:
                    worst.max_rel_err = rel
                    worst.worst_index = int(i)
                    worst.analytic = a
                    worst.numeric = numeric
            report.checks.append(worst)
    finally:
        for (_, p), data in zip(params, originals):
            p.data = data
            p.grad = None

    if raise_on_failure:
        report.ensure()
    return report


def check_function(f, inputs: dict[str, np.ndarray], rel_tol: float = 1e-4,
                   **kwargs) -> GradCheckReport:
    """Convenience wrapper for checking a pure function of named arrays.

    Builds float64 leaf tensors from `inputs`, closes `f` over them, and
    checks every input exhaustively (max_entries defaults to covering the
    largest input).
    """
    leaves = {k: Tensor(v.astype(np.float64), requires_grad=True) for k, v in inputs.items()}
    kwargs.setdefault("max_entries", max(v.size for v in inputs.values()))
    return check_gradients(lambda: f(**leaves), list(leaves.items()), rel_tol=rel_tol, **kwargs)
