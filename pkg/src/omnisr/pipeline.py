"""Inference: ERP self-ensemble, model averaging and stage-2 refinement."""

from dataclasses import dataclass

import torch

from .erp import SelfEnsembleTransform, apply_se, invert_se


@dataclass
class InferenceOptions:
    self_ensemble: str = "none"     # "none" or "x8"
    use_model_b: bool = True
    use_stage2: bool = True
    tile: int = None                # LR tile side; None runs whole images
    tile_overlap: int = 8
    roll_fraction: float = 0.25

    def __post_init__(self):
        if self.self_ensemble not in ("none", "x8"):
            raise ValueError(f"self_ensemble must be 'none' or 'x8', got {self.self_ensemble!r}")
        if self.tile is not None:
            if self.tile < 4 or self.tile % 4:
                raise ValueError(f"tile must be a positive multiple of 4, got {self.tile}")
            if not 0 <= self.tile_overlap < self.tile:
                raise ValueError(f"tile_overlap {self.tile_overlap} must be in [0, tile)")


def _accepts_origin(model):
    return getattr(model, "config", None) is not None and hasattr(model, "position_maps")


def _ramp(length, overlap, at_start, at_end, dtype):
    w = torch.ones(length, dtype=dtype)
    if overlap > 0:
        ramp = torch.arange(1, overlap + 1, dtype=dtype) / (overlap + 1)
        n = min(overlap, length)
        if not at_start:
            w[:n] = torch.minimum(w[:n], ramp[:n])
        if not at_end:
            w[length - n:] = torch.minimum(w[length - n:], ramp[:n].flip(0))
    return w


def _starts(size, tile, step):
    if size <= tile:
        return [0]
    starts = list(range(0, size - tile, step))
    starts.append(size - tile)
    return sorted(set(starts))


def tiled_forward(model, x, tile, overlap):
    """Run ``model`` over overlapping tiles and blend them with linear ramps.

    Tile origins are kept on multiples of 4 so pixel-unshuffling models and
    position encodings see consistent grids.
    """
    b, c, h, w = x.shape
    step = max(4, (tile - overlap) // 4 * 4)
    out = weight = None
    scale = None
    rows, cols = _starts(h, tile, step), _starts(w, tile, step)
    for r in rows:
        for cl in cols:
            r0 = r - r % 4 if h > tile else 0
            c0 = cl - cl % 4 if w > tile else 0
            patch = x[:, :, r0:r0 + tile, c0:c0 + tile]
            if _accepts_origin(model):
                y = model(patch, origin=(r0, c0), full_height=h)
            else:
                y = model(patch)
            if out is None:
                scale = y.shape[-1] // patch.shape[-1]
                out = x.new_zeros(b, y.shape[1], h * scale, w * scale)
                weight = x.new_zeros(1, 1, h * scale, w * scale)
            ph, pw = patch.shape[-2:]
            wy = _ramp(ph * scale, overlap * scale, r0 == 0, r0 + ph >= h, x.dtype)
            wx = _ramp(pw * scale, overlap * scale, c0 == 0, c0 + pw >= w, x.dtype)
            wt = (wy[:, None] * wx[None, :]).to(x.device)
            sl = (slice(None), slice(None), slice(r0 * scale, (r0 + ph) * scale),
                  slice(c0 * scale, (c0 + pw) * scale))
            out[sl] += y * wt
            weight[sl] += wt
    return out / weight


def _forward(model, x, opts):
    if opts is not None and opts.tile is not None:
        return tiled_forward(model, x, opts.tile, opts.tile_overlap)
    return model(x)


def self_ensemble_infer(model, lr, opts=None, roll_fraction=None):
    """Average the model over the eight ERP transforms.

    Each branch transforms the input, runs the model, and undoes the transform
    on the output; the roll distance is re-derived from the output width, so
    for x4 models it is four times the input roll.  Branches are summed in a
    fixed order.
    """
    squeeze = lr.ndim == 3
    x = lr[None] if squeeze else lr
    frac = roll_fraction if roll_fraction is not None else (opts.roll_fraction if opts else 0.25)
    if (x.shape[-1] * frac) % 1:
        raise ValueError(f"width {x.shape[-1]} is not divisible for a {frac} roll")
    total = None
    transforms = SelfEnsembleTransform.all()
    for t in transforms:
        y = invert_se(_forward(model, apply_se(x, t, frac), opts), t, frac)
        total = y if total is None else total + y
    out = total / len(transforms)
    return out[0] if squeeze else out


def ensemble_average(outputs):
    outputs = list(outputs)
    if not outputs:
        raise ValueError("nothing to average")
    shape = outputs[0].shape
    for o in outputs[1:]:
        if o.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(o.shape)}")
    total = outputs[0]
    for o in outputs[1:]:
        total = total + o
    return total / len(outputs)


def _run_model(model, x, opts):
    if opts.self_ensemble == "x8":
        return self_ensemble_infer(model, x, opts)
    return _forward(model, x, opts)


def infer_two_stage(lr, model_a, model_b=None, stage2=None, opts=None):
    """Stage 1 averages Model A (and B), stage 2 refines at the same resolution."""
    opts = opts or InferenceOptions()
    if model_a is None:
        raise ValueError("a stage-1 model is required")
    for m, scale, name in ((model_a, 4, "model_a"), (model_b, 4, "model_b"), (stage2, 1, "stage2")):
        if m is not None and getattr(m, "scale", scale) != scale:
            raise ValueError(f"{name} must have scale {scale}, has {m.scale}")
    squeeze = lr.ndim == 3
    x = lr[None] if squeeze else lr
    with torch.no_grad():
        stage1 = [_run_model(model_a, x, opts)]
        if model_b is not None and opts.use_model_b:
            stage1.append(_run_model(model_b, x, opts))
        out = ensemble_average(stage1)
        if stage2 is not None and opts.use_stage2:
            out = _forward(stage2, out, opts)
    return out[0] if squeeze else out
