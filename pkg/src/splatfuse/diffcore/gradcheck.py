"""Central finite-difference oracle for recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tape import Tape, Var


class CheckError(RuntimeError):
    """The function under test is not deterministic, so no check is meaningful."""


@dataclass
class ParamReport:
    name: str
    max_rel_err: float
    max_abs_err: float
    grad_scale: float
    passed: bool


@dataclass
class GradReport:
    tol: float
    eps: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def __str__(self) -> str:
        lines = [f"finite-difference check eps={self.eps:g} tol={self.tol:g}"]
        for p in self.params:
            flag = "ok" if p.passed else "FAIL"
            lines.append(f"  {p.name:<28} rel={p.max_rel_err:.3e} abs={p.max_abs_err:.3e} {flag}")
        return "\n".join(lines)


def _scalar(out) -> float:
    v = out.value if isinstance(out, Var) else np.asarray(out)
    if v.size != 1:
        raise CheckError(f"function must return a scalar, got shape {v.shape}")
    return float(v.reshape(()))


def finite_diff_check(f: Callable[[], Var], params: Sequence[Var], eps: float = 1e-5,
                      tol: float = 1e-4, atol: float = 1e-10) -> GradReport:
    """Compare the taped gradient of scalar ``f()`` against central differences.

    The relative error of a parameter is ``max|analytic - numeric|`` divided by
    ``max(max|analytic|, max|numeric|, atol)``, so entries with tiny gradients
    are judged against the scale of the whole parameter.

    Args:
        f: zero-argument callable that rebuilds the graph from current
            parameter values and returns a scalar ``Var``. It must be
            deterministic (freeze any random noise outside of it).
        params: leaves to check; each must have ``requires_grad``.
        eps: finite-difference step.
        tol: pass threshold on the relative error.
    """
    for p in params:
        p.grad = np.zeros_like(p.value)
    with Tape() as tape:
        out = f()
    base = _scalar(out)
    if _scalar(f()) != base:
        raise CheckError("f is not deterministic under fixed inputs")
    tape.backward(out)
    analytic = [p.grad.copy() for p in params]

    report = GradReport(tol=tol, eps=eps)
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        gn = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f())
            flat[i] = orig - eps
            fm = _scalar(f())
            flat[i] = orig
            gn[i] = (fp - fm) / (2.0 * eps)
        gn = gn.reshape(p.value.shape)
        abs_err = float(np.max(np.abs(ga - gn))) if gn.size else 0.0
        scale = max(float(np.max(np.abs(ga), initial=0.0)), float(np.max(np.abs(gn), initial=0.0)), atol)
        rel = abs_err / scale
        report.params.append(ParamReport(p.name or f"param{len(report.params)}", rel, abs_err,
                                         scale, rel <= tol))
    return report
