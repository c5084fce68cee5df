"""Model A, Model B and the same-resolution stage-2 enhancer."""

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn

from .blocks import OPDB, SFF, FourierUpsample, ResidualGroup, pixel_shuffle
from .erp import distortion_map, erp_position_grid, pe_channels
from .resize import bicubic_resize

VARIANTS = ("A", "B", "stage2")
STAGE2_UNSHUFFLE = 4


@dataclass
class ModelConfig:
    variant: str = "A"
    embed_dim: int = 32
    n_groups: int = 2
    blocks_per_group: int = 2
    window: int = 8
    heads: int = 4
    d_pe: int = 16
    scale: int = None
    use_sff: bool = None
    seed: int = 0
    use_opdb: bool = True
    pe_mode: str = "concat"
    mlp_ratio: float = 2.0
    upsample_mode: str = "zeropad"
    upsample_feat: int = 16
    offset_clamp: float = 0.25
    cab_compress: int = 2
    cab_reduction: int = 4
    in_channels: int = 3
    hr_conv: bool = True

    def __post_init__(self):
        if self.scale is None:
            self.scale = 1 if self.variant == "stage2" else 4
        if self.use_sff is None:
            self.use_sff = self.variant == "B"
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.use_sff != (self.variant == "B"):
            raise ValueError(f"use_sff must be {self.variant == 'B'} for variant {self.variant}")
        expected = 1 if self.variant == "stage2" else 4
        if self.scale != expected:
            raise ValueError(f"variant {self.variant} requires scale {expected}, got {self.scale}")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.d_pe % 4 or self.d_pe < 4:
            raise ValueError(f"d_pe must be a positive multiple of 4, got {self.d_pe}")
        for name in ("embed_dim", "n_groups", "blocks_per_group", "window", "heads", "upsample_feat"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown model config key: {unknown[0]}")
        return cls(**data)


class OmniSRNet(nn.Module):
    """Attention backbone with position-aware deformable blocks after each group.

    ``forward`` accepts the location of the input inside its full ERP image
    (``origin`` in pixels, ``full_height``) so that position encodings and
    distortion maps of training crops match the full image.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config
        c = config
        dim = c.embed_dim
        self.scale = c.scale
        self.body_scale = STAGE2_UNSHUFFLE if c.variant == "stage2" else c.scale
        in_ch = c.in_channels * (STAGE2_UNSHUFFLE ** 2 if c.variant == "stage2" else 1)

        # creation order fixes the RNG stream: shared body first, optional blocks last,
        # so variants built from one seed agree on every tensor they have in common
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(c.seed)
            self.groups = nn.ModuleList(
                ResidualGroup(dim, c.blocks_per_group, c.window, c.heads, c.mlp_ratio,
                              c.cab_compress, c.cab_reduction)
                for _ in range(c.n_groups)
            )
            self.conv_after_body = nn.Conv2d(dim, dim, 3, 1, 1)
            self.conv_before_upsample = nn.Conv2d(dim, c.upsample_feat, 3, 1, 1)
            self.act = nn.LeakyReLU(0.1)
            self.upsample = FourierUpsample(self.body_scale, c.upsample_mode)
            self.conv_last = nn.Conv2d(c.upsample_feat, c.in_channels, 3, 1, 1)
            # a linear head after band-limited upsampling cannot add detail above
            # the input Nyquist rate; one nonlinear conv at full resolution can
            self.conv_hr = nn.Conv2d(c.upsample_feat, c.upsample_feat, 3, 1, 1) if c.hr_conv else None
            self.conv_first = nn.Conv2d(in_ch, dim, 3, 1, 1)
            pe_ch = pe_channels(c.d_pe, c.pe_mode)
            self.opdbs = nn.ModuleList(
                OPDB(dim, pe_ch, clamp_frac=c.offset_clamp) for _ in range(c.n_groups)
            ) if c.use_opdb else None
            self.sffs = nn.ModuleList(SFF(dim) for _ in range(c.n_groups)) if c.use_sff else None
        # untrained A/B reproduce the bicubic skip, stage2 the identity
        nn.init.zeros_(self.conv_last.weight)
        nn.init.zeros_(self.conv_last.bias)

    def set_window(self, window):
        for g in self.groups:
            g.set_window(window)
        self.config.window = window

    def position_maps(self, h, w, origin=(0, 0), full_height=None):
        """Position encoding and distortion map for a crop at ``origin``.

        ``origin`` is one (row, col) pair or a list with one pair per batch
        element; the result then gains a leading batch axis.
        """
        c = self.config
        if isinstance(origin, list):
            maps = [self.position_maps(h, w, o, full_height) for o in origin]
            return torch.stack([m[0] for m in maps]), torch.stack([m[1] for m in maps])
        pe = erp_position_grid(h, w, c.d_pe, origin[0], origin[1], mode=c.pe_mode)
        dmap = distortion_map(h, w, origin[0], full_height)
        return pe, dmap

    def features(self, x, origin=(0, 0), full_height=None, collect_offsets=False):
        """Run the body; returns (shallow, deep, OPDB offset fields or None)."""
        feat = self.conv_first(x)
        h, w = feat.shape[-2:]
        pe, dmap = self.position_maps(h, w, origin, full_height)
        y = feat
        offsets = [] if collect_offsets else None
        for i, group in enumerate(self.groups):
            y = group(y)
            if self.opdbs is not None:
                if collect_offsets:
                    offsets.append(self.opdbs[i].offsets(y, pe, dmap))
                y = self.opdbs[i](y, pe, dmap)
            if self.sffs is not None:
                y = self.sffs[i](y)
        return feat, y, offsets

    def forward(self, x, origin=(0, 0), full_height=None):
        inp = x
        if self.config.variant == "stage2":
            r = STAGE2_UNSHUFFLE
            if x.shape[-2] % r or x.shape[-1] % r:
                raise ValueError(f"stage2 input size {tuple(x.shape[-2:])} must be divisible by {r}")
            x = pixel_shuffle(x, r, "down")
            origin = ([(o[0] // r, o[1] // r) for o in origin] if isinstance(origin, list)
                      else (origin[0] // r, origin[1] // r))
            full_height = None if full_height is None else full_height // r
        feat, y, _ = self.features(x, origin, full_height)
        y = self.conv_after_body(y) + feat
        y = self.act(self.conv_before_upsample(y))
        y = self.upsample(y)
        if self.conv_hr is not None:
            y = self.act(self.conv_hr(y))
        out = self.conv_last(y)
        if self.config.variant == "stage2":
            return out + inp
        h, w = inp.shape[-2:]
        return out + bicubic_resize(inp, (h * self.scale, w * self.scale))


def build_model(config):
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    config.validate()
    return OmniSRNet(config)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
