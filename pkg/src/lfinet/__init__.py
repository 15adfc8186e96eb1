"""Road-network segmentation from rasterized trajectories with a small numpy autodiff engine."""

from .config import RunConfig
from .lms import laplacian_decompose, laplacian_reconstruct
from .net import LFINet, ModelConfig, build_model, dice_bce_loss, load_checkpoint, save_checkpoint
from .tensor import Tensor, no_grad

__all__ = [
    "LFINet",
    "ModelConfig",
    "RunConfig",
    "Tensor",
    "build_model",
    "dice_bce_loss",
    "laplacian_decompose",
    "laplacian_reconstruct",
    "load_checkpoint",
    "no_grad",
    "save_checkpoint",
]

__version__ = "0.1.0"
