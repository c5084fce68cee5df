"""HR -> LR degradation: fixed bicubic and a small learned network."""

import logging
import math
import time
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..metrics import mean_db, ws_psnr
from ..resize import bicubic_resize
from .losses import l1_loss

log = logging.getLogger(__name__)

# LR border pixels left out of the loss: random crops are not periodic
LOSS_MARGIN = 3


def degrade_bicubic(hr, scale=4, wrap=True):
    """Anti-aliased bicubic downscale (a = -0.5) by an integer factor."""
    h, w = hr.shape[-2:]
    if h % scale or w % scale:
        raise ValueError(f"size {h}x{w} not divisible by {scale}")
    return bicubic_resize(hr, (h // scale, w // scale), wrap=wrap)


def _erp_pad_reflect(x, p):
    x = torch.cat([x[..., -p:], x, x[..., :p]], dim=-1)
    return F.pad(x, (0, 0, p, p), mode="reflect")


@dataclass
class DegradationConfig:
    channels: int = 32
    scale: int = 4
    seed: int = 0
    in_channels: int = 3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown degradation config key: {unknown[0]}")
        return cls(**data)


class DegradationNet(nn.Module):
    """x1/4 learned degradation: area mean plus a 4-layer residual conv stack.

    Two 4x4 stride-2 convs keep the LR sampling grid centred on each 4x4 HR
    cell; borders wrap horizontally and mirror vertically.
    """

    checkpoint_kind = "degradation"

    def __init__(self, config=None):
        super().__init__()
        self.config = config or DegradationConfig()
        c, ch = self.config.channels, self.config.in_channels
        if self.config.scale != 4:
            raise ValueError("only x4 degradation is supported")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.config.seed)
            self.conv1 = nn.Conv2d(ch, c, 3)
            self.conv2 = nn.Conv2d(c, c, 4, stride=2)
            self.conv3 = nn.Conv2d(c, c, 4, stride=2)
            self.conv4 = nn.Conv2d(c, ch, 3)
        nn.init.zeros_(self.conv4.weight)
        nn.init.zeros_(self.conv4.bias)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, hr):
        h, w = hr.shape[-2:]
        if h % 4 or w % 4:
            raise ValueError(f"size {h}x{w} not divisible by 4")
        y = self.act(self.conv1(_erp_pad_reflect(hr, 1)))
        y = self.act(self.conv2(_erp_pad_reflect(y, 1)))
        y = self.act(self.conv3(_erp_pad_reflect(y, 1)))
        y = self.conv4(_erp_pad_reflect(y, 1))
        return F.avg_pool2d(hr, 4) + y


@dataclass
class DegradationTrainConfig:
    steps: int = 1500
    lr: float = 1e-3
    batch: int = 8
    patch: int = 64            # HR patch side, multiple of 4
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.patch % 4 or self.patch // 4 <= 2 * LOSS_MARGIN:
            raise ValueError(f"HR patch must be a multiple of 4 above {8 * LOSS_MARGIN}, got {self.patch}")
        if self.steps < 0 or self.batch < 1:
            raise ValueError("steps and batch must be positive")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown degradation train config key: {unknown[0]}")
        return cls(**data)


@dataclass
class DegradationResult:
    model: DegradationNet
    val_ws_psnr: float
    trace: list
    seconds: float


def evaluate_degradation(model, hrs, lrs):
    model.eval()
    with torch.no_grad():
        scores = [ws_psnr(lr, model(hr[None])[0].clamp(0, 1)).value_db for hr, lr in zip(hrs, lrs)]
    return mean_db(scores)


def train_degradation_model(hrs, lrs, config=None, model_config=None, val=None):
    """Fit a :class:`DegradationNet` to paired HR/LR images with an L1 loss.

    ``val`` is an optional ``(hrs, lrs)`` held-out pair list; without it the
    last ``val_fraction`` of the pairs is held out.
    """
    config = config or DegradationTrainConfig()
    hrs, lrs = list(hrs), list(lrs)
    if not hrs or len(hrs) != len(lrs):
        raise ValueError("degradation training needs a non-empty list of HR/LR pairs")
    if val is None:
        n_val = max(1, int(round(len(hrs) * config.val_fraction))) if len(hrs) > 1 else 0
        val = (hrs[len(hrs) - n_val:], lrs[len(lrs) - n_val:]) if n_val else (hrs, lrs)
        if n_val:
            hrs, lrs = hrs[:-n_val], lrs[:-n_val]

    model = DegradationNet(model_config or DegradationConfig(seed=config.seed))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(config.steps, 1), eta_min=config.lr * 0.01)
    rng = np.random.default_rng(config.seed)
    p = config.patch
    trace = []
    start = time.perf_counter()
    model.train()
    for step in range(config.steps):
        hr_b, lr_b = [], []
        for i in rng.integers(0, len(hrs), size=config.batch):
            h, w = hrs[i].shape[-2:]
            r = 4 * int(rng.integers(0, (h - p) // 4 + 1))
            c = 4 * int(rng.integers(0, (w - p) // 4 + 1))
            hr_b.append(hrs[i][:, r:r + p, c:c + p])
            lr_b.append(lrs[i][:, r // 4:(r + p) // 4, c // 4:(c + p) // 4])
        hr_b, lr_b = torch.stack(hr_b), torch.stack(lr_b)
        m = LOSS_MARGIN
        pred = model(hr_b)[..., m:-m, m:-m]
        loss = l1_loss(pred, lr_b[..., m:-m, m:-m])
        if not math.isfinite(loss.item()):
            raise FloatingPointError(f"degradation loss diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        trace.append(loss.item())
    score = evaluate_degradation(model, *val)
    seconds = time.perf_counter() - start
    log.info("degradation model: val WS-PSNR %.2f dB after %d steps (%.0fs)", score, config.steps, seconds)
    return DegradationResult(model, score, trace, seconds)
