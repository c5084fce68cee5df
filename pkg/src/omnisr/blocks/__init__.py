from .attention import CAB, HAB, ChannelAttention, ResidualGroup, WindowAttention
from .deform import OPDB, OffsetNet, deformable_sample, erp_pad
from .frequency import SFF, FourierUpsample, fourier_upsample
from .shuffle import pixel_shuffle

__all__ = [
    "CAB", "HAB", "ChannelAttention", "ResidualGroup", "WindowAttention",
    "OPDB", "OffsetNet", "deformable_sample", "erp_pad",
    "SFF", "FourierUpsample", "fourier_upsample", "pixel_shuffle",
]
