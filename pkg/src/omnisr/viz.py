"""Plots of the deformable offsets predicted by each position-aware block."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import torch  # noqa: E402

from .blocks.deform import kernel_grid  # noqa: E402


def collect_offsets(model, lr):
    """Offset fields (2K, h, w) of every OPDB for one (C, H, W) input."""
    if model.opdbs is None:
        raise ValueError("model has no position-aware deformable blocks")
    x = lr[None]
    if model.config.variant == "stage2":
        from .blocks import pixel_shuffle
        x = pixel_shuffle(x, 4, "down")
    with torch.no_grad():
        _, _, offsets = model.features(x, collect_offsets=True)
    return [o[0] for o in offsets]


def render_offsets(model, lr, out_dir, stride=4, dpi=100):
    """Write a sampling-point plot and a magnitude heat map per block.

    Reference sampling points are drawn in green and the deformed ones in red
    on top of the (feature-resolution) input image.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = model.opdbs[0].kernel
    gy, gx = kernel_grid(k, k)
    paths = []
    for i, off in enumerate(collect_offsets(model, lr)):
        taps, h, w = off.shape[0] // 2, off.shape[1], off.shape[2]
        dy, dx = off[0::2].double(), off[1::2].double()
        background = torch.nn.functional.interpolate(lr[None], size=(h, w), mode="area")[0]

        fig, ax = plt.subplots(figsize=(max(4, w / 8), max(2, h / 8)), dpi=dpi)
        ax.imshow(background.permute(1, 2, 0).clamp(0, 1).numpy(), extent=(-0.5, w - 0.5, h - 0.5, -0.5))
        for r in range(stride // 2, h, stride):
            for c in range(stride // 2, w, stride):
                ry, rx = r + gy, c + gx
                ax.scatter(rx, ry, s=4, c="lime", linewidths=0)
                ax.scatter(rx + dx[:, r, c], ry + dy[:, r, c], s=4, c="red", linewidths=0)
        ax.set_xlim(-0.5, w - 0.5)
        ax.set_ylim(h - 0.5, -0.5)
        ax.set_axis_off()
        ax.set_title(f"block {i}: reference (green) / deformed (red)", fontsize=8)
        path = out_dir / f"offsets_block{i}_points.png"
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)

        mag = torch.sqrt(dy ** 2 + dx ** 2).mean(dim=0)
        fig, ax = plt.subplots(figsize=(max(4, w / 8), max(2, h / 8)), dpi=dpi)
        im = ax.imshow(mag.numpy(), cmap="magma")
        fig.colorbar(im, ax=ax, fraction=0.025)
        ax.set_axis_off()
        ax.set_title(f"block {i}: mean |offset| over {taps} taps (px)", fontsize=8)
        path = out_dir / f"offsets_block{i}_magnitude.png"
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
