"""Frequency-domain blocks: spatial-frequency fusion and spectral upsampling."""

import torch
import torch.nn as nn


def _spectral_resize(spec, n_new, dim):
    """Embed a length-``n`` spectrum along ``dim`` into ``n_new`` bins.

    The Nyquist bin of an even-length input is split in half between the
    positive and negative frequency slots so real signals stay real.
    """
    n = spec.shape[dim]
    if n_new == n:
        return spec
    lo = (n + 1) // 2          # bins 0 .. lo-1 are non-negative frequencies
    hi = n - lo                # count of strictly negative bins (incl. Nyquist when even)
    parts = [spec.narrow(dim, 0, lo)]
    gap_shape = list(spec.shape)
    if n % 2 == 0:
        nyq = spec.narrow(dim, n // 2, 1) * 0.5
        neg = spec.narrow(dim, n // 2 + 1, hi - 1)
        gap_shape[dim] = n_new - n - 1
        parts += [nyq, spec.new_zeros(gap_shape), nyq, neg]
    else:
        gap_shape[dim] = n_new - n
        parts += [spec.new_zeros(gap_shape), spec.narrow(dim, lo, hi)]
    return torch.cat(parts, dim=dim)


def fourier_upsample(x, scale, mode="zeropad"):
    """Upsample the last two axes by an integer factor in the Fourier domain.

    ``zeropad`` is band-limited (sinc) interpolation: the spectrum is embedded
    in a larger zero spectrum and rescaled by ``scale**2`` so sample values are
    preserved.  ``periodic`` tiles the spectrum instead, which is the same as
    inserting zeros between samples.
    """
    if not isinstance(scale, int) or scale < 1:
        raise ValueError(f"scale must be an integer >= 1, got {scale!r}")
    h, w = x.shape[-2:]
    spec = torch.fft.fft2(x)
    if mode == "zeropad":
        spec = _spectral_resize(spec, h * scale, -2)
        spec = _spectral_resize(spec, w * scale, -1)
        return torch.fft.ifft2(spec).real * (scale * scale)
    if mode == "periodic":
        spec = spec.repeat(*([1] * (spec.ndim - 2)), scale, scale)
        return torch.fft.ifft2(spec).real
    raise ValueError(f"unknown Fourier upsampling mode {mode!r}")


class FourierUpsample(nn.Module):
    def __init__(self, scale, mode="zeropad"):
        super().__init__()
        self.scale = scale
        self.mode = mode

    def forward(self, x):
        return fourier_upsample(x, self.scale, self.mode)

    def extra_repr(self):
        return f"scale={self.scale}, mode={self.mode}"


def _pointwise_branch(dim):
    branch = nn.Sequential(nn.Conv2d(dim, dim, 1), nn.LeakyReLU(0.1), nn.Conv2d(dim, dim, 1))
    nn.init.zeros_(branch[2].weight)
    nn.init.zeros_(branch[2].bias)
    return branch


class SFF(nn.Module):
    """Spatial-frequency fusion.

    Amplitude and phase of the per-channel 2-D DFT are refined by separate
    residual 1x1 conv stacks, recombined and transformed back; the real part
    is fused with the spatial input by a 1x1 conv over the concatenation.
    """

    def __init__(self, dim):
        super().__init__()
        self.amp = _pointwise_branch(dim)
        self.pha = _pointwise_branch(dim)
        self.fuse = nn.Conv2d(2 * dim, dim, 1)

    def frequency_path(self, x):
        spec = torch.fft.fft2(x)
        amp = spec.abs()
        pha = torch.angle(spec)
        amp = amp + self.amp(amp)
        pha = pha + self.pha(pha)
        spec = torch.complex(amp * torch.cos(pha), amp * torch.sin(pha))
        return torch.fft.ifft2(spec).real

    def forward(self, x):
        return self.fuse(torch.cat([x, self.frequency_path(x)], dim=1))

    @torch.no_grad()
    def reset_passthrough(self):
        """Make the block an identity map (up to FFT round-off)."""
        for branch in (self.amp, self.pha):
            branch[2].weight.zero_()
            branch[2].bias.zero_()
        dim = self.fuse.out_channels
        self.fuse.weight.zero_()
        self.fuse.bias.zero_()
        self.fuse.weight[:, dim:, 0, 0].copy_(torch.eye(dim))
