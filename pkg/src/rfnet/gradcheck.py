"""Central-difference verification of analytic gradients.

Runs the loss builder once to collect analytic gradients, then perturbs
every element of every checked parameter by +/- eps and compares. Checks
should run in float64: at single precision the finite-difference quotient
drowns in rounding noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor


class GradCheckError(RuntimeError):
    pass


def _rel_err(analytic: float, numeric: float) -> float:
    # Relative above magnitude 1, absolute below; keeps near-zero gradients
    # from inflating the ratio while still catching scale errors.
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    worst_index: tuple
    analytic_at_worst: float
    numeric_at_worst: float

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


@dataclass
class GradCheckReport:
    params: list[ParamReport] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def ok(self, tolerance: float) -> bool:
        return all(p.ok(tolerance) for p in self.params)

    def summary(self) -> str:
        lines = [f"  {p.name}: max_rel_err={p.max_rel_err:.3e} at {p.worst_index} "
                 f"(analytic={p.analytic_at_worst:.6e}, numeric={p.numeric_at_worst:.6e})"
                 for p in self.params]
        return "\n".join(lines)


def grad_check(build_loss: Callable[[], Tensor], params: dict[str, Tensor],
               eps: float = 1e-5) -> GradCheckReport:
    """Compare backward-pass gradients of a scalar loss against finite differences.

    `build_loss` must construct a fresh graph from `params` on every call and
    return a scalar Tensor. Raises GradCheckError, naming the parameter, if a
    perturbed evaluation is non-finite.
    """
    for p in params.values():
        p.grad = None
    loss = build_loss()
    if not np.isfinite(loss.data).all():
        raise GradCheckError("loss is non-finite at the unperturbed point")
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = (0.0, (0,), 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().data)
            flat[i] = orig - eps
            down = float(build_loss().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise GradCheckError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[i])
            err = _rel_err(a, numeric)
            if err >= worst[0]:
                worst = (err, np.unravel_index(i, p.data.shape), a, numeric)
        report.params.append(ParamReport(name, *worst))
    return report
