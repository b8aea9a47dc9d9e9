"""Two-stage far-field speech enhancement: an attention filter-and-sum
beamformer followed by a single-channel residual-gain enhancer."""

from .beamformer import AFaSNet, BeamformerConfig
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .enhancer import CLSTM, EnhancerConfig
from .pipeline import Pipeline

__all__ = [
    "AFaSNet",
    "BeamformerConfig",
    "CLSTM",
    "Checkpoint",
    "EnhancerConfig",
    "Pipeline",
    "load_checkpoint",
    "save_checkpoint",
]
__version__ = "0.1.0"
