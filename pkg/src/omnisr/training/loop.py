"""SR training loop and the multi-phase fine-tuning schedule."""

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..checkpoint import save_checkpoint
from ..metrics import mean_db, ws_psnr
from .data import PairDataset
from .losses import get_loss
from .schedule import TrainConfig, lr_at_step

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


@dataclass
class TrainResult:
    best_state: dict
    best_val: float
    trace: list = field(default_factory=list)        # (step, loss, lr)
    val_trace: list = field(default_factory=list)    # (step, ws_psnr)
    seconds: float = 0.0
    checkpoint: Path = None


def predict(model, lr):
    """Full-image inference for one (C, H, W) image, clamped to [0, 1]."""
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(lr[None])[0].clamp(0, 1)
    model.train(was_training)
    return out


def evaluate(model, dataset):
    """Mean WS-PSNR of full-image predictions over a :class:`PairDataset`."""
    return mean_db(ws_psnr(hr, predict(model, lr)).value_db
                   for lr, hr in zip(dataset.inputs, dataset.targets))


def _dump_state(model, step, loss, dump_dir):
    if dump_dir is None:
        return None
    path = Path(dump_dir) / f"diverged_step{step}.pt"
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"step": step, "loss": loss, "state": model.state_dict()}, path)
    return path


def train_sr_model(model, dataset, config=None, val_set=None, checkpoint_path=None,
                   dump_dir=None, restore_best=True):
    """Train ``model`` on random crops of ``dataset``.

    Adam with the multi-step schedule from ``config``; every
    ``config.val_every`` steps (and at the end) the full validation images
    are scored with WS-PSNR and the best weights are kept.  Batches are drawn
    from a generator seeded by ``config.seed`` so a run is reproducible.
    """
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    loss_fn = get_loss(config.loss, config.eps)
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr_at_step(config, 0), betas=config.betas)
    full_height = dataset.input_height
    result = TrainResult(copy.deepcopy(model.state_dict()), -math.inf)
    start = time.perf_counter()
    model.train()

    def validate(step):
        score = evaluate(model, val_set)
        result.val_trace.append((step, score))
        if score > result.best_val:
            result.best_val = score
            result.best_state = copy.deepcopy(model.state_dict())
        log.info("step %d: val WS-PSNR %.3f dB", step, score)

    for step in range(config.steps):
        lr = lr_at_step(config, step)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = dataset.sample_batch(config.batch, config.patch, rng, config.sampling)
        pred = model(batch.inputs, origin=batch.origins, full_height=full_height)
        loss = loss_fn(pred, batch.targets)
        value = loss.item()
        if not math.isfinite(value):
            path = _dump_state(model, step, value, dump_dir)
            raise TrainingDiverged(f"loss became {value} at step {step}", path)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        result.trace.append((step, value, lr))
        if val_set is not None and config.val_every and (step + 1) % config.val_every == 0:
            validate(step + 1)
    if val_set is not None and (not result.val_trace or result.val_trace[-1][0] != config.steps):
        validate(config.steps)
    if val_set is None:
        result.best_state = copy.deepcopy(model.state_dict())
    elif restore_best:
        model.load_state_dict(result.best_state)
    result.seconds = time.perf_counter() - start
    if checkpoint_path is not None:
        result.checkpoint = save_checkpoint(model, checkpoint_path,
                                            meta={"best_val_ws_psnr": result.best_val, "steps": config.steps})
    return result


def make_stage2_dataset(model_a, dataset):
    """Stage-2 pairs: Model A's plain x4 output (no self-ensemble) against the HR target."""
    inputs = [predict(model_a, lr) for lr in dataset.inputs]
    return PairDataset(inputs, list(dataset.targets), dataset.names, scale=1)


@dataclass
class Phase:
    """One fine-tuning phase: which data, how long, which loss, optional new window."""

    name: str
    data: str = "real"
    train: TrainConfig = field(default_factory=TrainConfig)
    window: int = None

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        allowed = {"name", "data", "train", "window"}
        unknown = sorted(set(data) - allowed)
        if unknown:
            raise ValueError(f"unknown phase key: {unknown[0]}")
        train = TrainConfig.from_dict(data.pop("train", {}))
        return cls(train=train, **data)


def run_phases(model, datasets, phases, val_set=None, checkpoint_dir=None):
    """Run fine-tuning phases in order on one model.

    ``datasets`` maps a phase's ``data`` key (e.g. ``real``, ``pseudo``) to a
    :class:`PairDataset`.  A phase with ``window`` set resizes the attention
    windows before training.
    """
    results = []
    for i, phase in enumerate(phases):
        if phase.data not in datasets:
            raise ValueError(f"phase {phase.name!r} needs dataset {phase.data!r}")
        if phase.window is not None:
            model.set_window(phase.window)
        ckpt = None if checkpoint_dir is None else Path(checkpoint_dir) / f"{i:02d}_{phase.name}.ckpt"
        log.info("phase %s: %d steps on %s data", phase.name, phase.train.steps, phase.data)
        results.append(train_sr_model(model, datasets[phase.data], phase.train, val_set, ckpt))
    return results
