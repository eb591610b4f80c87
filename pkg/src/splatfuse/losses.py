"""Occupancy, photometric and parameter-consistency losses plus the two-phase schedule."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .diffcore import ops
from .diffcore.tape import DimensionError, Var, as_var, primitive

PHASES = ("during_iteration", "after_iteration")


class AllIgnoredWarning(UserWarning):
    """Every label was the ignore label; the loss is defined as zero."""


class ScheduleError(ValueError):
    pass


class ConsistencyError(ValueError):
    pass


# -- occupancy -------------------------------------------------------------------

def cross_entropy(logits, labels, ignore_label: int = 255) -> Var:
    """Mean negative log-likelihood over the labels that are not ``ignore_label``."""
    logits = as_var(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != ignore_label
    if np.any((labels[valid] < 0) | (labels[valid] >= k)):
        raise ValueError("labels outside [0, n_classes)")
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("all labels ignored; cross-entropy is zero", AllIgnoredWarning, stacklevel=2)
        return primitive(np.array(0.0), (logits,), lambda g: (np.zeros((n, k)),))
    z = logits.value[valid]
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n_valid)
    tgt = labels[valid]
    loss = float(np.mean(lse - shifted[rows, tgt]))

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, tgt] -= 1.0
        out = np.zeros((n, k))
        out[valid] = p * (float(g) / n_valid)
        return (out,)

    return primitive(np.array(loss), (logits,), vjp)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss along the sorted chain of error sets."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs, labels) -> Var:
    """Lovász-softmax over classes present in ``labels`` (rows already filtered)."""
    probs = as_var(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = probs.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels {labels.shape} do not match probs {probs.shape}")
    present = np.unique(labels)
    if n == 0 or len(present) == 0:
        return primitive(np.array(0.0), (probs,), lambda g: (np.zeros((n, k)),))
    P = probs.value
    total = 0.0
    dP = np.zeros((n, k))
    for c in present:
        fg = (labels == c).astype(np.float64)
        err = np.abs(fg - P[:, c])
        order = np.argsort(-err, kind="stable")
        grad = lovasz_grad(fg[order])
        total += float(np.dot(err[order], grad))
        derr = np.empty(n)
        derr[order] = grad
        # err = 1 - p on foreground, p on background
        dP[:, c] = derr * np.where(fg > 0, -1.0, 1.0)
    m = len(present)
    return primitive(np.array(total / m), (probs,), lambda g: (dP * (float(g) / m),))


def occupancy_loss(logits, labels, ignore_label: int = 255) -> tuple[Var, Var, Var]:
    """``(ce + lovasz, ce, lovasz)``, Lovász evaluated on the softmax of non-ignored rows."""
    logits = as_var(logits)
    labels = np.asarray(labels, dtype=np.int64)
    ce = cross_entropy(logits, labels, ignore_label)
    valid = np.flatnonzero(labels != ignore_label)
    lv = lovasz_softmax(ops.softmax(ops.take_rows(logits, valid)), labels[valid])
    return ops.add(ce, lv), ce, lv


# -- photometric -------------------------------------------------------------------

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    return g / g.sum()


def _filt(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Valid separable correlation over axes 0 and 1 of an (H, W, C) array."""
    K = len(g)
    H, W = x.shape[:2]
    rows = sum(g[u] * x[u:H - K + 1 + u] for u in range(K))
    return sum(g[u] * rows[:, u:W - K + 1 + u] for u in range(K))


def _filt_T(y: np.ndarray, g: np.ndarray, H: int, W: int) -> np.ndarray:
    """Adjoint of :func:`_filt`."""
    K = len(g)
    Ho = y.shape[0]
    cols = np.zeros((Ho, W) + y.shape[2:])
    for u in range(K):
        cols[:, u:W - K + 1 + u] += g[u] * y
    out = np.zeros((H, W) + y.shape[2:])
    for u in range(K):
        out[u:H - K + 1 + u] += g[u] * cols
    return out


C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _ssim_parts(a, b, g, c1, c2):
    mu_a, mu_b = _filt(a, g), _filt(b, g)
    e_aa, e_bb, e_ab = _filt(a * a, g), _filt(b * b, g), _filt(a * b, g)
    A1 = 2.0 * mu_a * mu_b + c1
    A2 = 2.0 * (e_ab - mu_a * mu_b) + c2
    B1 = mu_a * mu_a + mu_b * mu_b + c1
    B2 = (e_aa - mu_a * mu_a) + (e_bb - mu_b * mu_b) + c2
    return mu_a, mu_b, A1, A2, B1, B2


def ssim(a, b, window: int = 11, sigma: float = 1.5, c1: float = C1, c2: float = C2) -> float:
    """Mean SSIM over valid window positions and channels."""
    a, b = _as_hwc(a), _as_hwc(b)
    _check_ssim_sizes(a, b, window)
    _, _, A1, A2, B1, B2 = _ssim_parts(a, b, gaussian_window(window, sigma), c1, c2)
    return float(np.mean(A1 * A2 / (B1 * B2)))


def _as_hwc(x) -> np.ndarray:
    v = x.value if isinstance(x, Var) else getattr(x, "pixels", x)
    v = np.asarray(v, dtype=np.float64)
    return v[..., None] if v.ndim == 2 else v


def _check_ssim_sizes(a, b, window):
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise DimensionError(f"image {a.shape[:2]} smaller than the {window}x{window} window")


def d_ssim(a, b, window: int = 11, sigma: float = 1.5, c1: float = C1, c2: float = C2) -> Var:
    """``(1 - SSIM(a, b)) / 2``, differentiable wrt ``a``."""
    a_var = as_var(a if isinstance(a, Var) else _as_hwc(a))
    av, bv = _as_hwc(a_var), _as_hwc(b)
    _check_ssim_sizes(av, bv, window)
    g = gaussian_window(window, sigma)
    mu_a, mu_b, A1, A2, B1, B2 = _ssim_parts(av, bv, g, c1, c2)
    S = A1 * A2 / (B1 * B2)
    val = 0.5 * (1.0 - float(np.mean(S)))
    H, W = av.shape[:2]
    shape = a_var.shape

    def vjp(gout):
        dS = np.full(S.shape, -0.5 * float(gout) / S.size)
        d_mu = dS * (2.0 * mu_b * (A2 - A1) / (B1 * B2) - 2.0 * mu_a * S * (1.0 / B1 - 1.0 / B2))
        d_eaa = dS * (-S / B2)
        d_eab = dS * (2.0 * A1 / (B1 * B2))
        da = _filt_T(d_mu, g, H, W) + 2.0 * av * _filt_T(d_eaa, g, H, W) + bv * _filt_T(d_eab, g, H, W)
        return (da.reshape(shape),)

    return primitive(np.array(val), (a_var,), vjp)


def photometric_loss(rendered, target, lam: float = 0.2) -> tuple[Var, Var, Var]:
    """``((1 - lam) * L1 + lam * D-SSIM, L1, D-SSIM)``."""
    r = as_var(rendered)
    t = _as_hwc(target)
    if r.shape != t.shape:
        raise DimensionError(f"rendered {r.shape} and target {t.shape} differ")
    l1 = ops.mean_all(ops.abs_(ops.sub(r, t)))
    ds = d_ssim(r, t)
    return ops.add(ops.scale(l1, 1.0 - lam), ops.scale(ds, lam)), l1, ds


# -- parameter consistency -----------------------------------------------------------

def param_consistency(theta_final: Mapping[str, np.ndarray], theta_init: Mapping[str, Var]) -> Var:
    """Sum of absolute differences between converged (constant) and initial parameters."""
    if set(theta_final) != set(theta_init):
        raise ConsistencyError("parameter groups differ between snapshots")
    terms = []
    for name in sorted(theta_final):
        fin = np.asarray(theta_final[name], dtype=np.float64)
        init = as_var(theta_init[name])
        if fin.shape != init.shape:
            raise ConsistencyError(f"{name}: {fin.shape} vs {init.shape}; primitive counts must match")
        terms.append(ops.sum_all(ops.abs_(ops.sub(fin, init))))
    out = terms[0]
    for t in terms[1:]:
        out = ops.add(out, t)
    return out


# -- schedule ----------------------------------------------------------------------

@dataclass
class LossReport:
    l_rgb: float = 0.0
    l1: float = 0.0
    dssim: float = 0.0
    l_occ: float = 0.0
    l_ce: float = 0.0
    l_lovasz: float = 0.0
    l_pc: float = 0.0
    total: float = 0.0
    phase: str = "during_iteration"

    CSV_HEADER = "step,phase,l_rgb,l1,dssim,l_ce,l_lovasz,l_occ,l_pc,total"

    def csv_row(self, step: int) -> str:
        vals = [self.l_rgb, self.l1, self.dssim, self.l_ce, self.l_lovasz, self.l_occ, self.l_pc, self.total]
        return f"{step},{self.phase}," + ",".join(repr(float(v)) for v in vals)

    def check_finite(self, step: int) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise FloatingPointError(f"non-finite {f.name} at step {step} ({self.phase})")


def _val(x) -> float:
    return float(x.value) if isinstance(x, Var) else float(x)


def total_loss(phase: str, components: Mapping[str, object], lam: float = 0.2) -> tuple[LossReport, Var]:
    """Combine loss components for one phase.

    ``during_iteration`` needs ``l_rgb``; ``after_iteration`` needs ``l_occ``
    and ``l_pc``. Optional extras (``l1``, ``dssim``, ``l_ce``, ``l_lovasz``)
    are copied into the report.
    """
    if phase not in PHASES:
        raise ScheduleError(f"unknown phase {phase!r}")
    need = ("l_rgb",) if phase == "during_iteration" else ("l_occ", "l_pc")
    missing = [k for k in need if k not in components]
    if missing:
        raise ScheduleError(f"phase {phase} is missing {', '.join(missing)}")
    if phase == "during_iteration":
        total = as_var(components["l_rgb"])
    else:
        total = ops.add(ops.scale(components["l_occ"], 1.0 - lam), ops.scale(components["l_pc"], lam))
    report = LossReport(phase=phase, total=_val(total))
    for key, v in components.items():
        if hasattr(report, key) and key not in ("phase", "total"):
            setattr(report, key, _val(v))
    return report, total
