import torch.nn.functional as F


def pixel_shuffle(x, r, direction="up"):
    """Sub-pixel rearrangement.

    ``up``:   (B, C*r*r, H, W) -> (B, C, H*r, W*r)
    ``down``: (B, C, H, W) -> (B, C*r*r, H/r, W/r)
    """
    if r < 1:
        raise ValueError(f"shuffle factor must be >= 1, got {r}")
    if direction == "up":
        if x.shape[1] % (r * r):
            raise ValueError(f"channels {x.shape[1]} not divisible by r^2={r * r}")
        return F.pixel_shuffle(x, r)
    if direction == "down":
        if x.shape[-2] % r or x.shape[-1] % r:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by {r}")
        return F.pixel_unshuffle(x, r)
    raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
