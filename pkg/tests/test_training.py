import math
import statistics

import numpy as np
import pytest
import torch

from omnisr.models import build_model
from omnisr.training.data import (PairDataset, load_dataset, make_toy_pairs, read_manifest,
                                  synthesize_erp_sample, write_dataset)
from omnisr.training.degradation import (DegradationNet, DegradationTrainConfig, degrade_bicubic,
                                         evaluate_degradation, train_degradation_model)
from omnisr.training.loop import (Phase, TrainingDiverged, make_stage2_dataset, run_phases,
                                  train_sr_model)
from omnisr.training.losses import charbonnier_loss, get_loss, l1_loss, l2_loss
from omnisr.training.schedule import TrainConfig, lr_at_step

TINY = dict(embed_dim=8, n_groups=1, blocks_per_group=1, window=4, heads=2, d_pe=8, upsample_feat=8)


# -------------------------------------------------------------------- losses

def test_charbonnier_at_zero_residual_is_eps():
    x = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    assert charbonnier_loss(x, x, eps=1e-3).item() == pytest.approx(1e-3, rel=1e-15)


def test_charbonnier_tends_to_l1():
    p = torch.full((1, 1, 2, 2), 3.0, dtype=torch.float64)
    t = torch.zeros_like(p)
    assert charbonnier_loss(p, t, eps=1e-6).item() == pytest.approx(3.0, abs=1e-9)
    g = torch.Generator().manual_seed(0)
    a = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64)
    b = torch.rand(1, 3, 8, 8, generator=g, dtype=torch.float64)
    c = charbonnier_loss(a, b, eps=1e-3).item()
    assert l1_loss(a, b).item() <= c <= l1_loss(a, b).item() + 1e-3


def test_l2_matches_loop():
    a = np.random.default_rng(1).random((2, 3, 4))
    b = np.random.default_rng(2).random((2, 3, 4))
    expect = sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert l2_loss(torch.from_numpy(a), torch.from_numpy(b)).item() == pytest.approx(expect, rel=1e-14)


def test_loss_errors():
    with pytest.raises(ValueError):
        charbonnier_loss(torch.zeros(2), torch.zeros(3))
    with pytest.raises(ValueError):
        charbonnier_loss(torch.zeros(2), torch.zeros(2), eps=0)
    with pytest.raises(ValueError):
        get_loss("huber")


# ----------------------------------------------------------------- schedule

def test_lr_schedule_values():
    cfg = TrainConfig(lr0=2e-4, milestones=[250, 400, 450, 475], gamma=0.5, min_lr=0)
    table = {0: 2e-4, 249: 2e-4, 250: 1e-4, 399: 1e-4, 400: 5e-5, 450: 2.5e-5, 475: 1.25e-5, 10**6: 1.25e-5}
    for step, lr in table.items():
        assert lr_at_step(cfg, step) == pytest.approx(lr, rel=1e-15)


def test_lr_schedule_monotone_and_floored():
    cfg = TrainConfig(lr0=1e-3, milestones=list(range(10, 200, 10)), gamma=0.5, min_lr=1e-6)
    lrs = [lr_at_step(cfg, s) for s in range(300)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert min(lrs) == 1e-6
    zero = TrainConfig(lr0=0.0, milestones=[5])
    assert lr_at_step(zero, 10) == 0.0


@pytest.mark.parametrize("bad", [dict(milestones=[5, 5]), dict(gamma=1.0), dict(lr0=-1e-4),
                                 dict(loss="huber"), dict(sampling="poles"), dict(batch=0)])
def test_train_config_rejects(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_train_config_round_trip():
    cfg = TrainConfig(lr0=1e-4, milestones=[3, 7], sampling="area")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="nope"):
        TrainConfig.from_dict({"nope": 1})


# --------------------------------------------------------------------- data

def test_synthetic_sample_properties():
    a = synthesize_erp_sample(7, 32, 64)
    assert a.shape == (3, 32, 64) and a.dtype == torch.float32
    assert torch.equal(a, synthesize_erp_sample(7, 32, 64))
    assert not torch.equal(a, synthesize_erp_sample(8, 32, 64))
    assert a.min() >= 0 and a.max() <= 1


def test_synthetic_sample_is_seamless():
    for seed in range(5):
        img = synthesize_erp_sample(seed, 64, 128).double()
        seam = (img[..., 0] - img[..., -1]).abs().max()
        interior = (img[..., 1:] - img[..., :-1]).abs().max()
        assert seam <= interior + 1e-6


def test_degrade_bicubic():
    c = torch.full((3, 16, 32), 0.4)
    assert degrade_bicubic(c).shape == (3, 4, 8)
    assert (degrade_bicubic(c) - 0.4).abs().max() < 1e-6
    with pytest.raises(ValueError):
        degrade_bicubic(torch.zeros(3, 10, 16))


def test_crop_alignment():
    ds = make_toy_pairs(2, seed=3, h=32, w=64)
    s = ds.crop(1, 2, 5, 4)
    assert s.lr.shape == (3, 4, 4) and s.hr.shape == (3, 16, 16)
    assert torch.equal(s.hr, ds.targets[1][:, 8:24, 20:36])
    assert (s.row_origin, s.col_origin) == (2, 5)


def test_sample_batch_reproducible_and_located():
    ds = make_toy_pairs(3, seed=4, h=32, w=64)
    b1 = ds.sample_batch(5, 4, np.random.default_rng(0))
    b2 = ds.sample_batch(5, 4, np.random.default_rng(0))
    assert torch.equal(b1.inputs, b2.inputs) and b1.origins == b2.origins
    assert b1.inputs.shape == (5, 3, 4, 4) and b1.targets.shape == (5, 3, 16, 16)
    with pytest.raises(ValueError):
        ds.sample_batch(1, 9, np.random.default_rng(0))


def test_area_sampling_prefers_equator():
    ds = make_toy_pairs(1, seed=5, h=128, w=32, quantized=False)
    rng = np.random.default_rng(0)
    uni = [o[0] for o in ds.sample_batch(400, 4, rng).origins]
    area = [o[0] for o in ds.sample_batch(400, 4, rng, sampling="area").origins]
    dist = lambda rows: np.mean(np.abs(np.array(rows) + 2 - 16))  # noqa: E731
    assert dist(area) < dist(uni)


def test_pair_size_law_enforced():
    with pytest.raises(ValueError):
        PairDataset([torch.zeros(3, 4, 4)], [torch.zeros(3, 8, 8)], scale=4)
    with pytest.raises(ValueError):
        PairDataset([], [])


def test_dataset_disk_round_trip(tmp_path):
    ds = make_toy_pairs(3, seed=6, h=16, w=32)
    ds.names = ["a", "b", "c"]
    write_dataset(tmp_path, ds, val_names=["b"])
    assert read_manifest(tmp_path) == {"train": ["a", "c"], "val": ["b"], "scale": 4}
    train = load_dataset(tmp_path, "train")
    assert train.names == ["a", "c"]
    assert torch.equal(train.targets[1], ds.targets[2]) and torch.equal(train.inputs[0], ds.inputs[0])
    (tmp_path / "lr" / "a.png").unlink()
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path, "train")
    with pytest.raises(ValueError):
        load_dataset(tmp_path, "test")


# -------------------------------------------------------------- degradation

def test_degradation_net_starts_at_area_mean():
    hr = torch.rand(2, 3, 16, 32)
    assert torch.equal(DegradationNet()(hr), torch.nn.functional.avg_pool2d(hr, 4))
    with pytest.raises(ValueError):
        DegradationNet()(torch.rand(1, 3, 10, 16))


def test_degradation_learns_bicubic():
    ds = make_toy_pairs(24, seed=7, h=64, w=128)
    hrs, lrs = ds.targets, ds.inputs
    start = evaluate_degradation(DegradationNet(), hrs[-4:], lrs[-4:])
    res = train_degradation_model(hrs[:-4], lrs[:-4], DegradationTrainConfig(steps=300, batch=8, patch=32),
                                  val=(hrs[-4:], lrs[-4:]))
    assert res.val_ws_psnr >= 40.0
    assert res.val_ws_psnr > start
    assert res.trace[-1] < res.trace[0]


# ----------------------------------------------------------------- SR loop

def _single_crop_dataset(seed):
    hr = synthesize_erp_sample(seed, 64, 64)
    return PairDataset([degrade_bicubic(hr)], [hr])


def _tiny_model(seed=0, **kw):
    m = build_model(dict(TINY, variant="A", seed=seed, **kw))
    return m


def test_zero_learning_rate_freezes_parameters():
    m = _tiny_model()
    before = {k: v.clone() for k, v in m.state_dict().items()}
    train_sr_model(m, make_toy_pairs(2, seed=1, h=32, w=64), TrainConfig(lr0=0.0, steps=3, batch=2, patch=8))
    for k, v in m.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_loss_decreases_on_fixed_batch():
    drops = []
    for seed in range(3):
        m = _tiny_model(seed)
        cfg = TrainConfig(lr0=1e-3, steps=50, batch=2, patch=16, seed=seed)
        res = train_sr_model(m, _single_crop_dataset(seed), cfg)
        losses = [t[1] for t in res.trace]
        drops.append(losses[0] - statistics.mean(losses[-5:]))
    assert statistics.median(drops) > 0


def test_training_is_reproducible():
    runs = []
    for _ in range(2):
        m = _tiny_model(3)
        res = train_sr_model(m, make_toy_pairs(2, seed=2, h=32, w=64), TrainConfig(steps=4, batch=2, patch=8, seed=5))
        runs.append(([t[1] for t in res.trace], m.state_dict()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert torch.equal(runs[0][1][k], runs[1][1][k])


def test_divergence_dumps_state(tmp_path):
    ds = make_toy_pairs(1, seed=3, h=32, w=64)
    ds.targets[0] = ds.targets[0].clone()
    ds.targets[0][:] = float("nan")
    with pytest.raises(TrainingDiverged) as err:
        train_sr_model(_tiny_model(), ds, TrainConfig(steps=2, batch=1, patch=8), dump_dir=tmp_path)
    assert err.value.dump_path is not None and err.value.dump_path.exists()


def test_validation_keeps_best_and_writes_checkpoint(tmp_path):
    m = _tiny_model()
    train = make_toy_pairs(2, seed=4, h=32, w=64)
    val = make_toy_pairs(1, seed=5, h=32, w=64)
    res = train_sr_model(m, train, TrainConfig(steps=4, batch=2, patch=8, val_every=2), val,
                         checkpoint_path=tmp_path / "m.ckpt")
    assert [s for s, _ in res.val_trace] == [2, 4]
    assert res.best_val == max(v for _, v in res.val_trace)
    assert res.checkpoint.exists()


def test_stage2_data_and_phases(tmp_path):
    a = _tiny_model()
    real = make_toy_pairs(2, seed=6, h=32, w=64)
    s2 = make_stage2_dataset(a, real)
    assert s2.scale == 1 and s2.inputs[0].shape == s2.targets[0].shape == (3, 32, 64)

    pseudo = make_toy_pairs(2, seed=8, h=32, w=64)
    phases = [Phase.from_dict({"name": "pseudo", "data": "pseudo", "train": {"steps": 2, "batch": 1, "patch": 8}}),
              Phase.from_dict({"name": "real", "data": "real", "window": 8,
                               "train": {"steps": 2, "batch": 1, "patch": 8}})]
    results = run_phases(a, {"real": real, "pseudo": pseudo}, phases, checkpoint_dir=tmp_path)
    assert len(results) == 2 and a.config.window == 8
    assert sorted(p.name for p in tmp_path.iterdir()) == ["00_pseudo.ckpt", "01_real.ckpt"]
    with pytest.raises(ValueError):
        run_phases(a, {"real": real}, [Phase("x", data="youtube")])
    with pytest.raises(ValueError):
        Phase.from_dict({"name": "x", "epochs": 3})


def test_area_weighted_training_runs():
    m = _tiny_model()
    res = train_sr_model(m, make_toy_pairs(2, seed=9, h=32, w=64),
                         TrainConfig(steps=2, batch=2, patch=8, sampling="area"))
    assert all(math.isfinite(t[1]) for t in res.trace)
