"""Camera-centric parameter interpolation for grid-based radiance fields.

A 2D grid laid over the camera origins holds one parameter set per grid
vertex. Each cell's field is the layer-wise bilinear mix of its four corner
sets, and training visits one cell at a time so only four sets are resident.
"""

from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateDistributionError,
    ParseError,
    StoreError,
)
from .featgrid import GridConfig, grid_encode, hash_index, level_resolutions
from .interp import ParamGrid, blend, build_param_grid, mix_weights, mixed_grid_encode, mixed_linear
from .networks import Field, ModelSpec, NetworkSpec, mixed_forward
from .optim import AdamState, adam_step, lr_at
from .render import Camera, RayBundle, camera_rays, render_rays, volume_render
from .trainer import TrainConfig, build_schedule, load_checkpoint, sample_batch, train

__version__ = "0.1.0"
