"""Central-difference verification of backpropagated gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1e-12, np.abs(a) + np.abs(b))


@dataclass
class ParamReport:
    name: str
    checked: int
    max_rel_err: float
    worst_index: tuple
    max_abs_err: float = 0.0
    failed: int = 0
    over_tol: int = 0


@dataclass
class GradCheckReport:
    tol: float
    step: float
    params: list = field(default_factory=list)
    atol: float = 0.0
    numeric: dict = field(default_factory=dict, repr=False)

    @property
    def max_rel_err(self):
        return max((p.max_rel_err for p in self.params), default=0.0)

    @property
    def failures(self):
        return [p for p in self.params if p.failed]

    @property
    def over_tol(self):
        """Entries whose relative error reaches ``tol``, ignoring ``atol``."""
        return sum(p.over_tol for p in self.params)

    @property
    def checked(self):
        return sum(p.checked for p in self.params)

    @property
    def passed(self):
        return not self.failures

    def summary(self):
        floor = f", atol {self.atol:g}" if self.atol else ""
        lines = [f"max rel err {self.max_rel_err:.3e} (tol {self.tol:g}{floor}, h={self.step:g})"]
        for p in self.params:
            flag = "FAIL" if p.failed else "ok"
            extra = f", {p.failed} failing" if p.failed else ""
            lines.append(f"  {flag:4} {p.name}: {p.max_rel_err:.3e} over {p.checked} entries"
                         f" (max abs {p.max_abs_err:.1e}{extra})")
        return "\n".join(lines)


def grad_check(f, params, step=1e-5, tol=1e-6, max_entries=None, seed=0, names=None, atol=0.0,
               reference=None):
    """Compare backprop gradients of ``f()`` with central differences.

    ``f`` builds a scalar :class:`Tensor` from the current values in
    ``params`` (a :class:`ParamStore`). Analytic gradients are taken in the
    store's own dtype; the finite differences are always evaluated in
    float64, so a float32 store is checked against a float64 reference.
    At most ``max_entries`` entries per parameter are sampled (all when
    ``None``); at least ``min(size, 100)`` are always checked.

    An entry fails when its relative error reaches ``tol`` and, if ``atol``
    is positive, its absolute error also exceeds ``atol``. The floor is for
    entries so small that rounding in ``f`` swamps the difference quotient;
    with the default ``atol=0`` the test is purely relative.

    ``reference`` is an earlier report taken at the same parameter values
    (for instance the float64 upcast of a float32 store); its sampled
    entries and difference quotients are reused instead of re-evaluated.
    """
    names = list(names) if names is not None else params.names()
    params.zero_grad()
    out = f()
    out.backward()
    analytic = {}
    for n in names:
        g = params[n].grad
        analytic[n] = np.zeros(params[n].shape) if g is None else np.asarray(g, dtype=np.float64)

    original_dtype = params.dtype
    saved = params.snapshot()
    params.astype(np.float64)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, step=step, atol=atol)
    try:
        for n in names:
            t = params[n]
            size = t.data.size
            if reference is not None:
                flat_idx, quotients = reference.numeric[n]
            else:
                if max_entries is None or size <= max(max_entries, 100):
                    flat_idx = np.arange(size)
                else:
                    flat_idx = rng.choice(size, size=max(max_entries, 100), replace=False)
                quotients = np.empty(len(flat_idx))
                for j, fi in enumerate(flat_idx):
                    idx = np.unravel_index(fi, t.shape)
                    keep = t.data[idx]
                    t.data[idx] = keep + step
                    up = float(f().data)
                    t.data[idx] = keep - step
                    down = float(f().data)
                    t.data[idx] = keep
                    quotients[j] = (up - down) / (2.0 * step)
            report.numeric[n] = (flat_idx, quotients)
            worst, worst_at, worst_abs, failed, over = 0.0, (), 0.0, 0, 0
            for fi, numeric in zip(flat_idx, quotients):
                idx = np.unravel_index(fi, t.shape)
                a = analytic[n][idx]
                err = float(relative_error(a, numeric))
                diff = abs(float(a) - numeric)
                worst_abs = max(worst_abs, diff)
                if err >= tol:
                    over += 1
                    failed += diff > atol
                if err > worst:
                    worst, worst_at = err, tuple(int(i) for i in idx)
            report.params.append(ParamReport(n, len(flat_idx), worst, worst_at, worst_abs, failed, over))
    finally:
        params.astype(original_dtype)
        params.restore({k: v for k, v in saved.items()})
        params.zero_grad()
    return report
