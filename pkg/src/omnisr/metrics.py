"""PSNR and WS-PSNR for images in [0, 1]."""

import math
from dataclasses import dataclass

import numpy as np
import torch

from .erp import ws_weights


@dataclass(frozen=True)
class MetricResult:
    value_db: float
    n_pixels: int
    weighted: bool

    @property
    def is_inf(self):
        return math.isinf(self.value_db)

    def __float__(self):
        return self.value_db

    def __str__(self):
        return format_db(self.value_db)


def format_db(value):
    return "inf" if math.isinf(value) else f"{value:.4f}"


def _as_float64(img):
    if isinstance(img, np.ndarray):
        arr = torch.from_numpy(img)
    else:
        arr = torch.as_tensor(img)
    if arr.dtype == torch.uint8:
        return arr.to(torch.float64) / 255.0
    return arr.detach().to(torch.float64)


def weighted_mse(ref, test, weights):
    """Weighted MSE over images with trailing (H, W) axes.

    Every leading axis (channels, batch) counts towards ``C`` in
    ``sum(w * d**2) / (C * sum(w))``.
    """
    ref = _as_float64(ref)
    test = _as_float64(test)
    weights = _as_float64(weights)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {tuple(ref.shape)} vs {tuple(test.shape)}")
    if ref.ndim < 2 or weights.shape != ref.shape[-2:]:
        raise ValueError(f"weights of shape {tuple(weights.shape)} do not match image {tuple(ref.shape)}")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights must have a positive sum")
    channels = ref[..., 0, 0].numel()
    sq = (ref - test) ** 2
    # Shifted accumulation: a constant error comes back bit-exactly.
    pivot = sq.reshape(-1)[0]
    return float(pivot + ((sq - pivot) * weights).sum() / (channels * total))


def _psnr_from_mse(mse):
    # 20 log10(1 / rmse) keeps round error levels exact (rmse 0.1 -> 20 dB).
    return math.inf if mse == 0 else -20.0 * math.log10(math.sqrt(mse))


def ws_psnr(ref, test):
    ref = _as_float64(ref)
    h, w = ref.shape[-2:]
    mse = weighted_mse(ref, test, ws_weights(h, w))
    return MetricResult(_psnr_from_mse(mse), h * w, True)


def psnr(ref, test):
    ref = _as_float64(ref)
    h, w = ref.shape[-2:]
    mse = weighted_mse(ref, test, torch.ones(h, w, dtype=torch.float64))
    return MetricResult(_psnr_from_mse(mse), h * w, False)


def mean_db(values):
    """Arithmetic mean of dB values; any infinity makes the mean infinite."""
    values = list(values)
    if not values:
        raise ValueError("no values to average")
    return math.fsum(values) / len(values) if not any(math.isinf(v) for v in values) else math.inf
