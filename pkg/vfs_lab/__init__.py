"""
VFS Lab Package

Desk-scale frame-level similarity learning on synthetic video, with label
propagation and siamese tracking readouts.
"""

__version__ = "1.0.0"
__author__ = "VFS Lab contributors"

from .config import ConfigManager, RunConfig
from .errors import VFSError
from .experiment import RunReport, run_experiment
from .ablation import run_ablation
from .callbacks import ConsoleCallback, RunCallback

__all__ = [
    "ConfigManager",
    "RunConfig",
    "VFSError",
    "RunReport",
    "run_experiment",
    "run_ablation",
    "RunCallback",
    "ConsoleCallback",
]
