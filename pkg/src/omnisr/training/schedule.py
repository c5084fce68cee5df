from bisect import bisect_right
from dataclasses import asdict, dataclass, field, fields


@dataclass
class TrainConfig:
    loss: str = "charbonnier"
    lr0: float = 2e-4
    milestones: list = field(default_factory=list)
    gamma: float = 0.5
    steps: int = 1000
    batch: int = 8
    patch: int = 16            # LR patch side in pixels
    seed: int = 0
    eps: float = 1e-3          # Charbonnier epsilon
    min_lr: float = 1e-6
    betas: tuple = (0.9, 0.99)
    val_every: int = 250
    sampling: str = "uniform"  # or "area": rows drawn proportional to cos(latitude)

    def __post_init__(self):
        self.milestones = list(self.milestones)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self):
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        # lr0 == 0 freezes the parameters; useful for dry runs
        if self.lr0 < 0:
            raise ValueError(f"lr0 must be non-negative, got {self.lr0}")
        if self.loss not in ("charbonnier", "l2", "l1"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.sampling not in ("uniform", "area"):
            raise ValueError(f"unknown sampling policy {self.sampling!r}")
        if self.steps < 0 or self.batch < 1 or self.patch < 1:
            raise ValueError("steps, batch and patch must be positive")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown train config key: {unknown[0]}")
        return cls(**data)


def lr_at_step(config, step):
    """Multi-step decay: ``lr0 * gamma**(milestones passed)``, floored at ``min_lr``."""
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    lr = config.lr0 * config.gamma ** bisect_right(config.milestones, step)
    return max(lr, min(config.min_lr, config.lr0))
