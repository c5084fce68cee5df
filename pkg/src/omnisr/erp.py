"""Coordinate math for equirectangular (ERP) rasters.

Rows are latitudes (row 0 is the north pole side), columns are longitudes and
wrap around.  Everything here is a pure function of its arguments.
"""

import itertools
import math
from dataclasses import dataclass

import torch

PE_BASE = 10000.0


def sinusoidal_pe(positions, d_model, dtype=torch.float64):
    """Sinusoidal encoding of a 1-D sequence of coordinates.

    Column ``2i`` holds ``sin(pos / 10000**(2i/d_model))`` and column ``2i+1``
    the matching cosine.

    Args:
        positions: sequence or 1-D tensor of finite real coordinates.
        d_model: even, positive encoding width.

    Returns:
        Tensor of shape ``(len(positions), d_model)``.
    """
    if not isinstance(d_model, int) or d_model < 2 or d_model % 2:
        raise ValueError(f"d_model must be a positive even integer, got {d_model!r}")
    pos = torch.as_tensor(positions, dtype=torch.float64).reshape(-1)
    if not torch.isfinite(pos).all():
        raise ValueError("positions must be finite")
    i = torch.arange(d_model // 2, dtype=torch.float64)
    inv_freq = PE_BASE ** (-2.0 * i / d_model)
    angle = pos[:, None] * inv_freq[None, :]
    pe = torch.empty(pos.numel(), d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)
    return pe.to(dtype)


def erp_position_grid(h, w, d_pe, row_origin=0, col_origin=0, mode="concat", dtype=torch.float32):
    """Latitude/longitude position encoding laid out as a ``(C, h, w)`` map.

    In ``concat`` mode (default) channels ``[0, d_pe/2)`` encode the absolute
    row index and ``[d_pe/2, d_pe)`` the absolute column index, each with
    ``sinusoidal_pe(..., d_pe/2)``.  ``product`` mode returns the elementwise
    product of the two halves (``d_pe/2`` channels).

    ``row_origin``/``col_origin`` place a crop inside a larger image so that the
    crop's grid equals the full grid sliced at the same location.
    """
    if h < 1 or w < 1:
        raise ValueError(f"grid size must be positive, got {h}x{w}")
    if d_pe < 4 or d_pe % 4:
        raise ValueError(f"d_pe must be a positive multiple of 4, got {d_pe}")
    half = d_pe // 2
    lat = sinusoidal_pe(torch.arange(h, dtype=torch.float64) + row_origin, half)
    lon = sinusoidal_pe(torch.arange(w, dtype=torch.float64) + col_origin, half)
    lat = lat.t()[:, :, None].expand(half, h, w)
    lon = lon.t()[:, None, :].expand(half, h, w)
    if mode == "concat":
        grid = torch.cat([lat, lon], dim=0)
    elif mode == "product":
        grid = lat * lon
    else:
        raise ValueError(f"unknown position-encoding mode {mode!r}")
    return grid.contiguous().to(dtype)


def pe_channels(d_pe, mode="concat"):
    return d_pe if mode == "concat" else d_pe // 2


def _row_cosines(h, row_origin=0, rows=None, full_h=None):
    full_h = h if full_h is None else full_h
    rows = h if rows is None else rows
    j = torch.arange(rows, dtype=torch.float64) + row_origin
    return torch.cos((j + 0.5 - full_h / 2) * math.pi / full_h)


def distortion_map(h, w, row_origin=0, full_h=None, dtype=torch.float32):
    """Horizontal stretching ratio ``cos(latitude)`` as a ``(1, h, w)`` map.

    Pixel centres sit at ``(j + 0.5)``.  For a crop pass the crop's first row
    as ``row_origin`` and the full image height as ``full_h``.
    """
    if h < 1 or w < 1:
        raise ValueError(f"map size must be positive, got {h}x{w}")
    col = _row_cosines(h, row_origin, h, full_h)
    return col[None, :, None].expand(1, h, w).contiguous().to(dtype)


def ws_weights(h, w, dtype=torch.float64):
    """Per-pixel WS-PSNR weights of an ``h x w`` ERP raster."""
    if h < 1 or w < 1:
        raise ValueError(f"weight map size must be positive, got {h}x{w}")
    return _row_cosines(h)[:, None].expand(h, w).contiguous().to(dtype)


@dataclass(frozen=True)
class SelfEnsembleTransform:
    """One of the eight ERP test-time transforms.

    Applied in the order roll, horizontal flip, vertical flip.
    """

    flip_h: bool = False
    flip_v: bool = False
    roll_quarter: bool = False

    @classmethod
    def all(cls):
        return [cls(flip_h=fh, flip_v=fv, roll_quarter=r)
                for r, fh, fv in itertools.product((False, True), repeat=3)]

    @property
    def is_identity(self):
        return not (self.flip_h or self.flip_v or self.roll_quarter)

    def __str__(self):
        parts = [name for name, on in (("roll", self.roll_quarter), ("fh", self.flip_h),
                                       ("fv", self.flip_v)) if on]
        return "+".join(parts) or "id"


def _roll_shift(width, fraction):
    shift = width * fraction
    if shift != int(shift):
        raise ValueError(f"width {width} is not divisible for a roll of {fraction} of the width")
    return int(shift)


def apply_se(image, t, roll_fraction=0.25):
    """Apply ``t`` to a tensor whose last two axes are (H, W)."""
    if t.roll_quarter:
        image = torch.roll(image, _roll_shift(image.shape[-1], roll_fraction), dims=-1)
    if t.flip_h:
        image = torch.flip(image, dims=(-1,))
    if t.flip_v:
        image = torch.flip(image, dims=(-2,))
    return image


def invert_se(image, t, roll_fraction=0.25):
    """Undo :func:`apply_se`.

    The roll distance is recomputed from the width of ``image``, so the same
    call undoes the transform in the output frame of an upscaling model.
    """
    if t.flip_v:
        image = torch.flip(image, dims=(-2,))
    if t.flip_h:
        image = torch.flip(image, dims=(-1,))
    if t.roll_quarter:
        image = torch.roll(image, -_roll_shift(image.shape[-1], roll_fraction), dims=-1)
    return image
