"""partforge: part-aware generative voxel shape modeling."""

__version__ = "0.1.0"

from .voxgrid import LabeledGrid, PartTransform, VoxelGrid  # noqa: F401
