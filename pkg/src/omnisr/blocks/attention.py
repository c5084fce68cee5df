"""Windowed self-attention and channel attention in the HAT style.

All modules take and return (B, C, H, W) feature maps.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def _pad_to_multiple(x, window):
    h, w = x.shape[-2:]
    ph, pw = (-h) % window, (-w) % window
    if ph == 0 and pw == 0:
        return x
    # reflect needs pad < size
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode)


def _relative_position_index(window):
    coords = torch.stack(torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij"))
    coords = coords.flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0)
    rel += window - 1
    return rel[..., 0] * (2 * window - 1) + rel[..., 1]


def _shift_mask(hp, wp, window, shift):
    img = torch.zeros(hp, wp)
    cnt = 0
    bands = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in bands:
        for ws in bands:
            img[hs, ws] = cnt
            cnt += 1
    win = img.view(hp // window, window, wp // window, window).permute(0, 2, 1, 3).reshape(-1, window * window)
    mask = win[:, None, :] - win[:, :, None]
    return mask.masked_fill(mask != 0, -100.0).masked_fill(mask == 0, 0.0)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping (optionally shifted) windows.

    ``forward`` returns ``x + attend(norm(x))``.  Inputs whose sides are not a
    multiple of the window are reflect-padded, processed and cropped back.
    """

    def __init__(self, dim, window=8, heads=4, shift=0, qkv_bias=True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"channels {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.shift = shift
        self.scale = (dim // heads) ** -0.5
        self.norm = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, bias=qkv_bias)
        self.proj = nn.Linear(dim, dim)
        self.rpb_table = nn.Parameter(torch.zeros((2 * window - 1) ** 2, heads))
        nn.init.trunc_normal_(self.rpb_table, std=0.02)
        self.register_buffer("rp_index", _relative_position_index(window), persistent=False)

    def extra_repr(self):
        return f"dim={self.dim}, window={self.window}, heads={self.heads}, shift={self.shift}"

    @torch.no_grad()
    def set_window(self, window):
        """Change the window size, resampling the relative-position bias table."""
        if window == self.window:
            return
        old = 2 * self.window - 1
        new = 2 * window - 1
        table = self.rpb_table.data.t().reshape(1, self.heads, old, old)
        table = F.interpolate(table, size=(new, new), mode="bicubic", align_corners=True)
        self.rpb_table = nn.Parameter(table.reshape(self.heads, new * new).t().contiguous())
        self.rp_index = _relative_position_index(window).to(self.rp_index.device)
        if self.shift:
            self.shift = window // 2
        self.window = window

    def attend(self, y):
        b, c, h, w = y.shape
        win = self.window
        y = _pad_to_multiple(y, win)
        hp, wp = y.shape[-2:]
        shift = self.shift if self.shift and min(hp, wp) > win else 0
        if shift:
            y = torch.roll(y, shifts=(-shift, -shift), dims=(2, 3))
        # (B, C, Hp, Wp) -> (B*nW, win*win, C)
        t = y.view(b, c, hp // win, win, wp // win, win).permute(0, 2, 4, 3, 5, 1)
        t = t.reshape(-1, win * win, c)
        n = win * win
        qkv = self.qkv(t).reshape(-1, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.rpb_table[self.rp_index.view(-1)].view(n, n, -1).permute(2, 0, 1)
        attn = attn + bias.unsqueeze(0)
        if shift:
            mask = _shift_mask(hp, wp, win, shift).to(attn)
            nw = mask.shape[0]
            attn = attn.view(-1, nw, self.heads, n, n) + mask[None, :, None]
            attn = attn.view(-1, self.heads, n, n)
        attn = attn.softmax(dim=-1)
        t = (attn @ v).transpose(1, 2).reshape(-1, n, c)
        t = self.proj(t)
        out = t.view(b, hp // win, wp // win, win, win, c).permute(0, 5, 1, 3, 2, 4).reshape(b, c, hp, wp)
        if shift:
            out = torch.roll(out, shifts=(shift, shift), dims=(2, 3))
        return out[:, :, :h, :w]

    def normed(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)

    def forward(self, x):
        return x + self.attend(self.normed(x))


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation gate: ``x * sigmoid(up(act(down(mean(x)))))``."""

    def __init__(self, dim, reduction=4):
        super().__init__()
        if dim % reduction:
            raise ValueError(f"channels {dim} not divisible by reduction {reduction}")
        self.down = nn.Conv2d(dim, dim // reduction, 1)
        self.up = nn.Conv2d(dim // reduction, dim, 1)

    def gate(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.up(F.relu(self.down(s))))

    def forward(self, x):
        return x * self.gate(x)


class CAB(nn.Module):
    def __init__(self, dim, compress=2, reduction=4):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(dim, dim // compress, 3, 1, 1),
            nn.GELU(),
            nn.Conv2d(dim // compress, dim, 3, 1, 1),
            ChannelAttention(dim, reduction),
        )

    def forward(self, x):
        return self.body(x)


class Mlp(nn.Module):
    def __init__(self, dim, ratio=2.0):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class HAB(nn.Module):
    """Hybrid attention block: window attention plus a scaled conv/channel-attention branch."""

    def __init__(self, dim, window, heads, shift=0, mlp_ratio=2.0, conv_scale=0.01,
                 compress=2, reduction=4):
        super().__init__()
        self.attn = WindowAttention(dim, window, heads, shift)
        self.cab = CAB(dim, compress, reduction)
        self.conv_scale = conv_scale
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

    def forward(self, x):
        y = self.attn.normed(x)
        x = x + self.attn.attend(y) + self.conv_scale * self.cab(y)
        t = x.permute(0, 2, 3, 1)
        t = t + self.mlp(self.norm2(t))
        return t.permute(0, 3, 1, 2)


class ResidualGroup(nn.Module):
    """Stack of hybrid attention blocks with alternating window shifts.

    A final shifted-window attention stands in for overlapping cross-attention.
    """

    def __init__(self, dim, depth, window, heads, mlp_ratio=2.0, compress=2, reduction=4):
        super().__init__()
        self.blocks = nn.ModuleList(
            HAB(dim, window, heads, shift=0 if i % 2 == 0 else window // 2, mlp_ratio=mlp_ratio,
                compress=compress, reduction=reduction)
            for i in range(depth)
        )
        self.cross = WindowAttention(dim, window, heads, shift=window // 2)
        self.conv = nn.Conv2d(dim, dim, 3, 1, 1)

    def set_window(self, window):
        for blk in self.blocks:
            blk.attn.set_window(window)
        self.cross.set_window(window)

    def forward(self, x):
        y = x
        for blk in self.blocks:
            y = blk(y)
        y = self.cross(y)
        return x + self.conv(y)
