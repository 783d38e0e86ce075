"""Left/right arm motion-intention decoding from EEG covariance features."""
from .config import PipelineConfig, load_config
from .modelfile import Decoder, load_model, save_model

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "load_config", "Decoder", "load_model", "save_model", "__version__"]
