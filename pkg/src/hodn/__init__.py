"""Human/object-disentangling HOI set prediction on a small numpy autodiff engine."""
from .config import RunConfig, load_config
from .data import GroundTruthTriplet, SceneSample, generate_dataset, generate_scene
from .model import hodn_forward, init_params
from .train import train_loop

__all__ = ["RunConfig", "load_config", "GroundTruthTriplet", "SceneSample", "generate_dataset",
           "generate_scene", "hodn_forward", "init_params", "train_loop"]
__version__ = "0.1.0"
