"""8-bit RGB PNG I/O.  Internally images are float (3, H, W) in [0, 1]."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def to_uint8(img):
    arr = img.detach().cpu().to(torch.float64).clamp(0, 1).numpy() * 255.0
    # np.rint rounds half to even
    return np.rint(arr).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr):
    return torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1) / 255.0)


def quantize(img):
    """Round-trip through 8 bits without touching the disk."""
    return from_uint8(to_uint8(img))


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return from_uint8(arr)


def write_png(path, img):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format="PNG")
    return path


def list_pngs(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
