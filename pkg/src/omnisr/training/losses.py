import torch


def _check(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


def charbonnier_loss(pred, target, eps=1e-3):
    """Mean of ``sqrt((pred - target)**2 + eps**2)``."""
    _check(pred, target)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return torch.sqrt((pred - target) ** 2 + eps * eps).mean()


def l2_loss(pred, target):
    _check(pred, target)
    return ((pred - target) ** 2).mean()


def l1_loss(pred, target):
    _check(pred, target)
    return (pred - target).abs().mean()


LOSSES = {"charbonnier": charbonnier_loss, "l2": l2_loss, "l1": l1_loss}


def get_loss(name, eps=1e-3):
    if name not in LOSSES:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}")
    if name == "charbonnier":
        return lambda p, t: charbonnier_loss(p, t, eps)
    return LOSSES[name]
