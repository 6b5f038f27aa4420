"""Two-stream RGB/frequency deepfake-clip detector with region-guided attention.

Submodules: ``tensor`` (kernels and tensor I/O), ``frequency`` (DCT band
decomposition), ``fslr`` (facial region boxes and pooling), ``fgfe``,
``fusion``, ``model``, ``training``, ``datagen``, ``gradcheck`` and ``cli``.
"""

__version__ = "0.1.0"

from .errors import ConfigError, ShapeError, TrainingError, XdlfError  # noqa: E402
from .model import ModelConfig, XdlfModel, ablate, load_model, predict_prob, save_model  # noqa: E402

__all__ = [
    "ConfigError", "ShapeError", "TrainingError", "XdlfError",
    "ModelConfig", "XdlfModel", "ablate", "load_model", "predict_prob", "save_model",
]
