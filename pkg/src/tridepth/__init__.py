"""Single-view triplane fitting with depth-aware gradient regularisation."""
from .autodiff import Tape, set_grad_scale
from .config import FitConfig, load_config
from .fit import evaluate, fit_scene, load_fit

__all__ = ["Tape", "set_grad_scale", "FitConfig", "load_config", "fit_scene", "evaluate", "load_fit"]
__version__ = "0.1.0"
