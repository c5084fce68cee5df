"""Deformable sampling with ERP-aware borders, and the position-aware deformable block."""

import torch
import torch.nn as nn
import torch.nn.functional as F

PAD_MODES = ("wrap", "zeros")


def erp_pad(x, ph, pw):
    """Pad an ERP feature map: circular along longitude, zeros beyond the poles."""
    if pw:
        if pw > x.shape[-1]:
            raise ValueError(f"horizontal pad {pw} exceeds width {x.shape[-1]}")
        x = torch.cat([x[..., -pw:], x, x[..., :pw]], dim=-1)
    if ph:
        x = F.pad(x, (0, 0, ph, ph))
    return x


def kernel_grid(kh, kw, dtype=torch.float64):
    """Regular kernel offsets (dy, dx) per tap, tap index ``ky * kw + kx``."""
    gy = torch.arange(kh, dtype=dtype) - (kh - 1) / 2
    gx = torch.arange(kw, dtype=dtype) - (kw - 1) / 2
    yy, xx = torch.meshgrid(gy, gx, indexing="ij")
    return yy.reshape(-1), xx.reshape(-1)


def deformable_sample(x, offsets, weight, bias=None, pad_mode="wrap"):
    """Deformable convolution.

    ``out(p) = sum_k W_k . bilinear(x, p + g_k + offset_k(p)) + b``

    Args:
        x: (B, C, H, W) input.
        offsets: (B, 2K, H, W); channels ``2k`` and ``2k+1`` are the (dy, dx)
            displacement of tap ``k``.
        weight: (O, C, kh, kw) kernel with ``K = kh * kw`` taps.
        bias: optional (O,) bias.
        pad_mode: ``wrap`` wraps columns modulo W (ERP longitude) and reads
            zeros above/below the image; ``zeros`` reads zeros on every side.
    """
    if pad_mode not in PAD_MODES:
        raise ValueError(f"pad_mode must be one of {PAD_MODES}, got {pad_mode!r}")
    b, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    k = kh * kw
    if cw != c:
        raise ValueError(f"kernel expects {cw} input channels, got {c}")
    if offsets.shape != (b, 2 * k, h, w):
        raise ValueError(f"offsets must have shape {(b, 2 * k, h, w)}, got {tuple(offsets.shape)}")
    if torch.isnan(offsets).any():
        raise ValueError("offsets contain NaN")

    gy, gx = kernel_grid(kh, kw, dtype=offsets.dtype)
    gy = gy.to(offsets.device).view(1, k, 1, 1)
    gx = gx.to(offsets.device).view(1, k, 1, 1)
    rows = torch.arange(h, dtype=offsets.dtype, device=offsets.device).view(1, 1, h, 1)
    cols = torch.arange(w, dtype=offsets.dtype, device=offsets.device).view(1, 1, 1, w)
    off = offsets.view(b, k, 2, h, w)
    ys = rows + gy + off[:, :, 0]
    xs = cols + gx + off[:, :, 1]

    y0 = torch.floor(ys)
    x0 = torch.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0 = y0.long()
    x0 = x0.long()

    flat = x.reshape(b, c, h * w)
    sampled = x.new_zeros(b, c, k * h * w)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        yi = y0 + dy
        valid = (yi >= 0) & (yi < h)
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi = x0 + dx
            if pad_mode == "wrap":
                xi = torch.remainder(xi, w)
                ok = valid
            else:
                ok = valid & (xi >= 0) & (xi < w)
            idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).view(b, 1, -1).expand(b, c, -1)
            coef = (wy * wx * ok).view(b, 1, -1)
            sampled = sampled + flat.gather(2, idx) * coef
    sampled = sampled.view(b, c, k, h, w)
    out = torch.einsum("bckhw,ock->bohw", sampled, weight.reshape(o, c, k))
    if bias is not None:
        out = out + bias.view(1, o, 1, 1)
    return out


class OffsetNet(nn.Module):
    """Two 3x3 convs predicting a 2K-channel offset field; the last one starts at zero."""

    def __init__(self, in_ch, hidden, taps):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, hidden, 3, 1, 1)
        self.act = nn.LeakyReLU(0.1)
        self.conv2 = nn.Conv2d(hidden, 2 * taps, 3, 1, 1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class OPDB(nn.Module):
    """Position-aware deformable block.

    Offsets are predicted from the features concatenated with the latitude /
    longitude encoding and the distortion map, clamped to
    ``clamp_frac * max(H, W)`` and used by a residual deformable conv.
    """

    def __init__(self, dim, pe_channels, kernel=3, hidden=None, clamp_frac=0.25, pad_mode="wrap"):
        super().__init__()
        self.kernel = kernel
        self.clamp_frac = clamp_frac
        self.pad_mode = pad_mode
        self.offset_net = OffsetNet(dim + pe_channels + 1, hidden or dim, kernel * kernel)
        conv = nn.Conv2d(dim, dim, kernel)
        self.weight = nn.Parameter(conv.weight.detach().clone())
        self.bias = nn.Parameter(conv.bias.detach().clone())

    def offsets(self, x, pe, dmap):
        b, _, h, w = x.shape
        if pe.shape[-2:] != (h, w) or dmap.shape[-2:] != (h, w):
            raise ValueError(
                f"position maps {tuple(pe.shape[-2:])}/{tuple(dmap.shape[-2:])} do not match features {(h, w)}")
        if pe.ndim == 3:
            pe = pe.unsqueeze(0)
        if dmap.ndim == 3:
            dmap = dmap.unsqueeze(0)
        cond = torch.cat([x, pe.to(x).expand(b, -1, -1, -1), dmap.to(x).expand(b, -1, -1, -1)], dim=1)
        off = self.offset_net(cond)
        if self.clamp_frac:
            limit = self.clamp_frac * max(h, w)
            off = off.clamp(-limit, limit)
        return off

    def forward(self, x, pe, dmap):
        off = self.offsets(x, pe, dmap)
        return x + deformable_sample(x, off, self.weight, self.bias, self.pad_mode)
