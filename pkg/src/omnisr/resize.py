"""Separable bicubic resampling with pixel-centre alignment.

Downscaling stretches the kernel by the scale factor (anti-aliasing) and
rows of the resampling matrix are normalised to sum to one.  Vertical borders
are mirrored symmetrically; horizontal borders either mirror or wrap
(``wrap=True`` respects ERP longitude periodicity).
"""

import math
from functools import lru_cache

import numpy as np
import torch

BICUBIC_A = -0.5


def cubic(t, a=BICUBIC_A):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _fold(j, n, wrap):
    if wrap:
        return j % n
    j = j % (2 * n)
    return 2 * n - 1 - j if j >= n else j


@lru_cache(maxsize=64)
def _matrix(n_in, n_out, a, wrap, antialias):
    scale = n_out / n_in
    kscale = min(scale, 1.0) if antialias else 1.0
    support = 2.0 / kscale
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        js = np.arange(math.floor(center - support), math.ceil(center + support) + 1)
        wts = kscale * cubic((center - js) * kscale, a)
        for j, wt in zip(js, wts):
            if wt != 0.0:
                m[i, _fold(int(j), n_in, wrap)] += wt
        m[i] /= m[i].sum()
    return m


def resize_matrix(n_in, n_out, a=BICUBIC_A, wrap=False, antialias=True):
    """(n_out, n_in) matrix mapping a 1-D signal to its resampled version.

    The returned array is cached and shared; do not modify it.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"sizes must be positive, got {n_in} -> {n_out}")
    return _matrix(n_in, n_out, float(a), bool(wrap), bool(antialias))


def bicubic_resize(x, size, a=BICUBIC_A, wrap=True, antialias=True):
    """Resize the last two axes of ``x`` to ``size = (h, w)``."""
    h, w = x.shape[-2:]
    out_h, out_w = size
    mh = torch.tensor(resize_matrix(h, out_h, a, False, antialias)).to(x)
    mw = torch.tensor(resize_matrix(w, out_w, a, wrap, antialias)).to(x)
    return mh @ x @ mw.t()


def bicubic_scale(x, scale, **kwargs):
    h, w = x.shape[-2:]
    out = (round(h * scale), round(w * scale))
    return bicubic_resize(x, out, **kwargs)
