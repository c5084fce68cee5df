"""Synthetic ERP images, paired datasets and their on-disk layout.

Dataset directory::

    root/hr/<name>.png
    root/lr/<name>.png
    root/manifest.json     {"train": [names...], "val": [names...], ...}
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..imageio import quantize, read_png, write_png
from .degradation import degrade_bicubic


def synthesize_erp_sample(seed, h, w):
    """Procedural HR image in [0, 1], shape (3, h, w), seamless across longitude.

    Mixes a smooth colour gradient, oriented stripes, a checkerboard and
    Gaussian blobs.  Every horizontal frequency is an integer number of cycles
    per image width and blob distances wrap, so column 0 continues column w-1.
    """
    rng = np.random.default_rng(seed)
    y = (np.arange(h) + 0.5)[:, None] / h
    x = (np.arange(w) + 0.5)[None, :] / w
    two_pi = 2 * np.pi

    def colour():
        return rng.uniform(0.0, 1.0, size=(3, 1, 1))

    top, bottom = colour(), colour()
    img = top + (bottom - top) * y[None]
    img = img + 0.1 * rng.uniform(-1, 1, (3, 1, 1)) * np.cos(two_pi * rng.integers(1, 3) * x + rng.uniform(0, two_pi))[None]

    layers = []
    for _ in range(rng.integers(1, 4)):
        kx = rng.integers(1, 17)
        ky = rng.uniform(-8, 8)
        phase = rng.uniform(0, two_pi)
        sharp = rng.uniform(0.5, 6.0)
        wave = np.tanh(sharp * np.cos(two_pi * (kx * x + ky * y) + phase)) / np.tanh(sharp)
        layers.append(0.5 + 0.5 * wave)
    kx, ky = rng.integers(2, 13), rng.integers(1, 7)
    checker = np.sign(np.sin(two_pi * kx * x + rng.uniform(0, two_pi))) * np.sign(
        np.sin(np.pi * ky * y + rng.uniform(0, two_pi)))
    layers.append(0.5 + 0.5 * checker)
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, 1), rng.uniform(0, 1)
        sy, sx = rng.uniform(0.03, 0.15), rng.uniform(0.02, 0.1)
        dx = np.abs(x - cx)
        dx = np.minimum(dx, 1 - dx)
        layers.append(np.exp(-0.5 * (((y - cy) / sy) ** 2 + (dx / sx) ** 2)))

    for layer in layers:
        alpha = rng.uniform(0.15, 0.6)
        img = (1 - alpha * layer[None]) * img + alpha * layer[None] * colour()
    return torch.from_numpy(np.clip(img, 0.0, 1.0).astype(np.float32))


@dataclass
class PairedSample:
    """A crop pair; ``row_origin``/``col_origin`` locate the input crop in its full image."""

    hr: torch.Tensor
    lr: torch.Tensor
    row_origin: int
    col_origin: int = 0


@dataclass
class Batch:
    inputs: torch.Tensor
    targets: torch.Tensor
    origins: list


class PairDataset:
    """In-memory image pairs where ``target`` is ``scale`` times larger than ``input``."""

    def __init__(self, inputs, targets, names=None, scale=4):
        if not inputs:
            raise ValueError("dataset is empty")
        if len(inputs) != len(targets):
            raise ValueError("inputs and targets differ in length")
        for a, b in zip(inputs, targets):
            if tuple(b.shape[-2:]) != (a.shape[-2] * scale, a.shape[-1] * scale):
                raise ValueError(f"pair sizes {tuple(a.shape)} / {tuple(b.shape)} break the x{scale} law")
        self.inputs = list(inputs)
        self.targets = list(targets)
        self.names = list(names) if names is not None else [f"{i:04d}" for i in range(len(inputs))]
        self.scale = scale

    def __len__(self):
        return len(self.inputs)

    @property
    def input_height(self):
        return self.inputs[0].shape[-2]

    def crop(self, index, row, col, patch):
        s = self.scale
        lr = self.inputs[index][:, row:row + patch, col:col + patch]
        hr = self.targets[index][:, s * row:s * (row + patch), s * col:s * (col + patch)]
        return PairedSample(hr, lr, row, col)

    def _rows(self, h, patch, n, rng, sampling):
        top = h - patch
        if sampling == "uniform" or top == 0:
            return rng.integers(0, top + 1, size=n)
        centres = np.arange(top + 1) + patch / 2
        p = np.cos((centres - h / 2) * math.pi / h)
        return rng.choice(top + 1, size=n, p=p / p.sum())

    def sample_batch(self, batch, patch, rng, sampling="uniform"):
        idx = rng.integers(0, len(self), size=batch)
        samples = []
        for i in idx:
            h, w = self.inputs[i].shape[-2:]
            if patch > h or patch > w:
                raise ValueError(f"patch {patch} larger than image {h}x{w}")
            row = int(self._rows(h, patch, 1, rng, sampling)[0])
            col = int(rng.integers(0, w - patch + 1))
            samples.append(self.crop(int(i), row, col, patch))
        return Batch(torch.stack([s.lr for s in samples]), torch.stack([s.hr for s in samples]),
                     [(s.row_origin, s.col_origin) for s in samples])


def make_toy_pairs(count, seed, h=128, w=256, scale=4, quantized=True):
    """Synthesize ``count`` HR images and their bicubic LR counterparts."""
    hrs, lrs = [], []
    for i in range(count):
        hr = synthesize_erp_sample(seed * 100003 + i, h, w)
        lr = degrade_bicubic(hr, scale)
        if quantized:
            hr, lr = quantize(hr), quantize(lr)
        hrs.append(hr)
        lrs.append(lr)
    return PairDataset(lrs, hrs, scale=scale)


def write_dataset(root, dataset, val_names=(), extra=None):
    """Write ``dataset`` as hr/ and lr/ PNG trees with a manifest."""
    root = Path(root)
    for name, lr, hr in zip(dataset.names, dataset.inputs, dataset.targets):
        write_png(root / "hr" / f"{name}.png", hr)
        write_png(root / "lr" / f"{name}.png", lr)
    val = sorted(val_names)
    manifest = {"train": sorted(n for n in dataset.names if n not in set(val)), "val": val,
                "scale": dataset.scale}
    manifest.update(extra or {})
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_manifest(root):
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return json.loads(path.read_text())


def load_dataset(root, split="train"):
    """Load one split of a dataset directory; stems must match across hr/ and lr/."""
    root = Path(root)
    manifest = read_manifest(root)
    if split not in manifest:
        raise ValueError(f"manifest has no split {split!r}")
    names = list(manifest[split])
    if not names:
        raise ValueError(f"split {split!r} is empty")
    hrs, lrs = [], []
    for name in names:
        hr_path, lr_path = root / "hr" / f"{name}.png", root / "lr" / f"{name}.png"
        for p in (hr_path, lr_path):
            if not p.exists():
                raise FileNotFoundError(f"missing {p}")
        hrs.append(read_png(hr_path))
        lrs.append(read_png(lr_path))
    return PairDataset(lrs, hrs, names, scale=int(manifest.get("scale", 4)))
