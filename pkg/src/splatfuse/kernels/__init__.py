"""Compositing kernels: the compiled core when available, numpy otherwise.

Set ``SPLATFUSE_PURE_PYTHON=1`` before import to force the fallback. Both
backends are importable explicitly as ``_fallback`` and (if built)
``_native`` for side-by-side comparison.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _native
except ImportError:  # extension not built
    _native = None

if _native is not None and os.environ.get("SPLATFUSE_PURE_PYTHON") != "1":
    BACKEND = "native"
    _impl = _native
else:
    BACKEND = "python"
    _impl = _fallback

ALPHA_MIN = _fallback.ALPHA_MIN
T_MIN = _fallback.T_MIN


def backends() -> dict:
    found = {"python": _fallback}
    if _native is not None:
        found["native"] = _native
    return found


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i(a):
    return np.ascontiguousarray(a, dtype=np.int64).reshape(-1, 4)


def forward(means, conics, colors, alphas, depths, bboxes, width, height, background, impl=None):
    """Composite sorted splats; returns ``(image, T_final, n_contrib, depth_acc)``."""
    return (impl or _impl).forward(_f(means).reshape(-1, 2), _f(conics).reshape(-1, 3),
                                   _f(colors).reshape(-1, 3), _f(alphas).reshape(-1),
                                   _f(depths).reshape(-1), _i(bboxes), int(width), int(height),
                                   _f(background).reshape(3))


def backward(means, conics, colors, alphas, bboxes, width, height, background, dimage, impl=None):
    """Gradients wrt ``(means, conics, colors, alphas)`` given ``dL/dimage``."""
    return (impl or _impl).backward(_f(means).reshape(-1, 2), _f(conics).reshape(-1, 3),
                                    _f(colors).reshape(-1, 3), _f(alphas).reshape(-1), _i(bboxes),
                                    int(width), int(height), _f(background).reshape(3),
                                    _f(dimage).reshape(int(height), int(width), 3))
