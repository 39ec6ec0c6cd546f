"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .ops import FLOAT


@dataclass
class GradReport:
    """Per-parameter maximum relative error of analytic vs numeric gradients."""

    step: float
    per_param: dict = field(default_factory=dict)

    @property
    def max_rel_error(self):
        return max(self.per_param.values(), default=0.0)

    def __str__(self):
        lines = [f"grad check (step {self.step:g})"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _rel_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(loss_fn, params, step=1e-3):
    """Compare analytic gradients against central finite differences.

    ``loss_fn()`` must return ``(loss, backward)`` where ``backward(1.0)``
    accumulates gradients into each parameter's ``grad`` buffer.  Every
    scalar entry of every parameter is perturbed by ``+-step``.
    """
    if step <= 0:
        raise DomainError("grad_check: step must be positive")
    named = []
    for i, p in enumerate(params):
        named.append((p.name or f"param{i}", p))

    for _, p in named:
        p.zero_grad()
    loss, backward = loss_fn()
    backward(np.asarray(1.0, dtype=FLOAT))
    analytic = {name: p.grad.copy() for name, p in named}
    for name, g in analytic.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"grad_check: non-finite analytic gradient in {name}")

    report = GradReport(step=step)
    for name, p in named:
        worst = 0.0
        flat = p.value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, _ = loss_fn()
            flat[idx] = orig - step
            down, _ = loss_fn()
            flat[idx] = orig
            numeric = (float(up) - float(down)) / (2.0 * step)
            if not np.isfinite(numeric):
                raise NumericError(f"grad_check: non-finite numeric gradient in {name}")
            worst = max(worst, _rel_error(float(a_flat[idx]), numeric))
        report.per_param[name] = worst
    return report
