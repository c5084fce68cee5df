import numpy as np
import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from omnisr.erp import SelfEnsembleTransform, apply_se
from omnisr.models import build_model
from omnisr.pipeline import (InferenceOptions, ensemble_average, infer_two_stage,
                             self_ensemble_infer, tiled_forward)
from omnisr.resize import bicubic_resize

TINY = dict(embed_dim=8, n_groups=1, blocks_per_group=1, window=4, heads=2, d_pe=8, upsample_feat=8)
ALL = SelfEnsembleTransform.all()


class Bicubic4(nn.Module):
    scale = 4

    def forward(self, x):
        return bicubic_resize(x, (x.shape[-2] * 4, x.shape[-1] * 4))


class Identity(nn.Module):
    scale = 1

    def forward(self, x):
        return x


class CircularNet(nn.Module):
    """Commutes with horizontal rolls, but has no flip symmetry."""

    scale = 4

    def __init__(self, seed=0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        self.w1 = nn.Parameter(torch.randn(6, 3, 3, 3, generator=g, dtype=torch.float64) * 0.3)
        self.w2 = nn.Parameter(torch.randn(3, 6, 3, 3, generator=g, dtype=torch.float64) * 0.3)

    def forward(self, x):
        y = F.conv2d(F.pad(x, (1, 1, 1, 1), mode="circular"), self.w1)
        y = F.conv2d(F.pad(torch.tanh(y), (1, 1, 1, 1), mode="circular"), self.w2)
        return bicubic_resize(x + y, (x.shape[-2] * 4, x.shape[-1] * 4))


class NearestPixelwise(nn.Module):
    scale = 4

    def forward(self, x):
        return torch.repeat_interleave(torch.repeat_interleave(torch.sigmoid(3 * x - 1), 4, -1), 4, -2)


def _tiny(variant, seed=0, perturb=True):
    m = build_model(dict(TINY, variant=variant, seed=seed)).double().eval()
    if perturb:
        g = torch.Generator().manual_seed(seed + 100)
        with torch.no_grad():
            for p in m.parameters():
                p.add_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.02)
    return m


def _index_transform(x, t, shift):
    h, w = x.shape[-2:]
    rows, cols = np.arange(h), np.arange(w)
    src_i = h - 1 - rows if t.flip_v else rows
    src_j = w - 1 - cols if t.flip_h else cols
    if t.roll_quarter:
        src_j = (src_j - shift) % w
    return x[..., src_i[:, None], src_j[None, :]]


def _index_inverse(y, t, shift):
    # scatter back: out[src] = y[dst]
    h, w = y.shape[-2:]
    probe = torch.arange(h * w).reshape(h, w)
    fwd = _index_transform(probe, t, shift).reshape(-1)
    out = torch.empty_like(y).reshape(*y.shape[:-2], h * w)
    out[..., fwd] = y.reshape(*y.shape[:-2], h * w)
    return out.reshape(y.shape)


def test_bicubic_model_ensemble_equals_single_pass():
    x = torch.rand(1, 3, 8, 16, dtype=torch.float64)
    m = Bicubic4()
    assert (self_ensemble_infer(m, x) - m(x)).abs().max() <= 1e-6


def test_identity_model_ensemble_is_input():
    x = torch.rand(2, 3, 8, 16)
    # eight equal float32 terms summed in sequence are not exactly 8x
    assert (self_ensemble_infer(Identity(), x) - x).abs().max() <= 1e-6


def test_ensemble_matches_enumerated_branches():
    m = _tiny("A")
    x = torch.rand(1, 3, 8, 16, dtype=torch.float64)
    with torch.no_grad():
        branches = [_index_inverse(m(_index_transform(x, t, 4)), t, 16) for t in ALL]
        oracle = sum(branches) / 8
        got = self_ensemble_infer(m, x)
    assert (got - oracle).abs().max() <= 1e-7
    # the branches genuinely differ, so the average is not trivial
    assert (branches[0] - branches[5]).abs().max() > 1e-4


@pytest.mark.parametrize("t", ALL, ids=str)
def test_group_average_symmetry_for_roll_equivariant_model(t):
    m = CircularNet()
    x = torch.rand(1, 3, 8, 16, dtype=torch.float64)
    with torch.no_grad():
        lhs = self_ensemble_infer(m, apply_se(x, t))
        rhs = apply_se(self_ensemble_infer(m, x), t)
    assert (lhs - rhs).abs().max() <= 1e-5


def test_vertical_flip_symmetry_for_general_model():
    m = _tiny("A", seed=1)
    x = torch.rand(1, 3, 8, 16, dtype=torch.float64)
    t = SelfEnsembleTransform(flip_v=True)
    with torch.no_grad():
        lhs = self_ensemble_infer(m, apply_se(x, t))
        rhs = apply_se(self_ensemble_infer(m, x), t)
    assert (lhs - rhs).abs().max() <= 1e-5


def test_quarter_roll_set_is_not_closed():
    # roll(W/4) twice is roll(W/2), which is none of the eight transforms
    x = torch.arange(8).reshape(1, 8)
    r = SelfEnsembleTransform(roll_quarter=True)
    twice = apply_se(apply_se(x, r), r)
    assert all(not torch.equal(twice, apply_se(x, t)) for t in ALL)


def test_ensemble_average():
    a, b = torch.ones(2, 3), torch.full((2, 3), 3.0)
    assert torch.equal(ensemble_average([a, b]), torch.full((2, 3), 2.0))
    with pytest.raises(ValueError):
        ensemble_average([])
    with pytest.raises(ValueError):
        ensemble_average([a, torch.ones(3, 2)])


def test_two_stage_compositions():
    a = _tiny("A", seed=2)
    b = _tiny("B", seed=3)
    x = torch.rand(3, 8, 16, dtype=torch.float64)
    with torch.no_grad():
        ya = a(x[None])[0]
        yb = b(x[None])[0]
    only_a = infer_two_stage(x, a, opts=InferenceOptions())
    assert only_a.shape == (3, 32, 64) and torch.equal(only_a, ya)
    assert (infer_two_stage(x, a, a) - ya).abs().max() <= 1e-7
    assert torch.allclose(infer_two_stage(x, a, b), (ya + yb) / 2, atol=1e-12)
    fresh_stage2 = build_model(dict(TINY, variant="stage2")).double().eval()
    assert torch.allclose(infer_two_stage(x, a, b, fresh_stage2), (ya + yb) / 2, atol=1e-12)
    s2 = _tiny("stage2", seed=4)
    full = infer_two_stage(x, a, b, s2, InferenceOptions(self_ensemble="x8"))
    again = infer_two_stage(x, a, b, s2, InferenceOptions(self_ensemble="x8"))
    assert full.shape == (3, 32, 64) and torch.isfinite(full).all() and torch.equal(full, again)
    skip_b = infer_two_stage(x, a, b, opts=InferenceOptions(use_model_b=False, use_stage2=False))
    assert torch.equal(skip_b, ya)


def test_two_stage_rejects_wrong_models():
    x = torch.rand(3, 8, 16)
    with pytest.raises(ValueError):
        infer_two_stage(x, None)
    with pytest.raises(ValueError):
        infer_two_stage(x, Identity())
    with pytest.raises(ValueError):
        infer_two_stage(x, Bicubic4(), stage2=Bicubic4())


def test_tiled_pixelwise_model_matches_whole_image():
    m = NearestPixelwise()
    x = torch.rand(1, 3, 20, 44, dtype=torch.float64)
    for tile, overlap in [(8, 4), (12, 0), (16, 8)]:
        assert (tiled_forward(m, x, tile, overlap) - m(x)).abs().max() <= 1e-12


def test_tiled_model_runs_with_origins():
    m = _tiny("A", seed=5)
    x = torch.rand(1, 3, 16, 32, dtype=torch.float64)
    with torch.no_grad():
        whole = m(x)
        same = tiled_forward(m, x, 32, 4)
        tiled = tiled_forward(m, x, 8, 4)
    assert torch.equal(same, whole)
    assert tiled.shape == whole.shape and torch.isfinite(tiled).all()


@pytest.mark.parametrize("bad", [dict(self_ensemble="x4"), dict(tile=6), dict(tile=8, tile_overlap=8)])
def test_options_validation(bad):
    with pytest.raises(ValueError):
        InferenceOptions(**bad)
