"""
Configuration management for the VFS laboratory.

Handles loading and validation of configuration files with support for
local overrides, environment overrides and automatic CPU core detection.
Unknown keys are errors so a typo never silently falls back to a default.
"""

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Union

from dotenv import load_dotenv

from .errors import ConfigError
from .log import get_logger

logger = get_logger("config")

# Keys whose default is None accept these types besides None.
_NULLABLE = {
    "sampler.start": (int,),
    "optim.max_steps": (int,),
    "eval.propagation.readout_block": (int,),
    "eval.tracker.readout_block": (int,),
}


@dataclass
class DataConfig:
    seed: int = 7
    train_clips: int = 200
    eval_clips: int = 8
    height: int = 48
    width: int = 48
    num_frames: int = 40
    num_objects: int = 2
    object_size: List[int] = field(default_factory=lambda: [10, 16])
    max_speed: float = 2.0
    max_angular_velocity: float = 0.0
    max_scale_rate: float = 0.0
    background_contrast: float = 0.15
    illumination_drift: float = 0.0
    workers: Union[str, int] = "auto"


@dataclass
class SamplerConfig:
    mode: str = "distant"
    n_frames: int = 2
    delta: int = 8
    start: Optional[int] = None
    different_frame: bool = True
    split: str = "first_half"


@dataclass
class AugmentConfig:
    color: bool = True
    spatial: bool = True
    crop_scale: List[float] = field(default_factory=lambda: [0.2, 1.0])
    crop_ratio: List[float] = field(default_factory=lambda: [0.75, 4.0 / 3.0])
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_sigma: List[float] = field(default_factory=lambda: [0.1, 2.0])
    blur_prob: float = 0.5


@dataclass
class ModelConfig:
    regime: str = "without_neg"
    input_size: int = 32
    channels: List[int] = field(default_factory=lambda: [8, 16, 32, 64])
    strides: List[int] = field(default_factory=lambda: [2, 2, 2, 2])
    intermediate_block: int = 3
    final_block: int = 4
    proj_hidden: int = 128
    proj_dim: int = 64
    pred_hidden: int = 32
    predictor_head: bool = True
    stop_gradient: bool = True
    bn_momentum: float = 0.1
    precision: str = "float32"


@dataclass
class ObjectiveConfig:
    tau: float = 0.2
    momentum: float = 0.999
    bank_size: int = 256
    symmetric: bool = False


@dataclass
class OptimConfig:
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 32
    epochs: int = 100
    max_steps: Optional[int] = None
    num_workers: Union[str, int] = "auto"
    prefetch: int = 2


@dataclass
class PropagationSettings:
    topk: int = 10
    m_frames: int = 20
    radius: int = 12
    temperature: float = 0.07
    topk_scope: str = "global"
    scale_radius: bool = True
    reference_extent: int = 60
    readout_block: Optional[int] = None


@dataclass
class TrackerSettings:
    exemplar_size: int = 16
    search_size: int = 32
    context: float = 0.5
    window_influence: float = 0.3
    scales: List[float] = field(default_factory=lambda: [0.96, 1.0, 1.04])
    scale_penalty: float = 0.97
    scale_lr: float = 0.59
    response_upsample: int = 4
    normalized: bool = True
    precision_threshold: float = 5.0
    readout_block: Optional[int] = None


@dataclass
class EvalConfig:
    propagation: PropagationSettings = field(default_factory=PropagationSettings)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    eval_every: int = 0
    probe_clips: int = 16


@dataclass
class RunSettings:
    seeds: List[int] = field(default_factory=lambda: [1])
    log_every: int = 10
    checkpoint_every: int = 100
    verbose: bool = True
    resume: bool = True


_SECTIONS = {
    "data": DataConfig,
    "sampler": SamplerConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
    "objective": ObjectiveConfig,
    "optim": OptimConfig,
    "eval": EvalConfig,
    "run": RunSettings,
}


@dataclass
class RunConfig:
    """Complete experiment description; every field has a default."""

    data: DataConfig = field(default_factory=DataConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "RunConfig":
        """Build from a (possibly partial) nested dict, validating keys and types."""
        merged = copy.deepcopy(ConfigManager.DEFAULT_CONFIG)
        _merge_strict(merged, values, "")
        _check_types(ConfigManager.DEFAULT_CONFIG, merged, "")
        sections = {}
        for name, section_cls in _SECTIONS.items():
            section = dict(merged[name])
            if name == "eval":
                section["propagation"] = PropagationSettings(**section["propagation"])
                section["tracker"] = TrackerSettings(**section["tracker"])
            sections[name] = section_cls(**section)
        config = cls(**sections)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical JSON text; the run snapshot and hash are taken from it."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        """Copy with dotted-path overrides such as {"sampler.mode": "continuous"}."""
        values = self.to_dict()
        for dotted, value in overrides.items():
            node = values
            parts = dotted.split(".")
            for part in parts[:-1]:
                if part not in node or not isinstance(node[part], dict):
                    raise ConfigError(f"unknown configuration key '{dotted}'")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown configuration key '{dotted}'")
            node[parts[-1]] = copy.deepcopy(value)
        return RunConfig.from_dict(values)

    def validate(self) -> None:
        """Cross-field checks that key/type validation cannot express."""
        if self.model.regime not in ("with_neg", "without_neg"):
            raise ConfigError(f"model.regime must be with_neg or without_neg, got '{self.model.regime}'")
        if self.sampler.mode not in ("continuous", "distant"):
            raise ConfigError(f"sampler.mode must be continuous or distant, got '{self.sampler.mode}'")
        if self.sampler.n_frames < 2 or self.sampler.n_frames % 2:
            raise ConfigError("sampler.n_frames must be an even number >= 2")
        if self.sampler.split not in ("first_half", "interleaved"):
            raise ConfigError(f"sampler.split must be first_half or interleaved, got '{self.sampler.split}'")
        if len(self.model.channels) != len(self.model.strides) or not self.model.channels:
            raise ConfigError("model.channels and model.strides must have the same non-zero length")
        depth = len(self.model.channels)
        if not 1 <= self.model.intermediate_block <= depth or not 1 <= self.model.final_block <= depth:
            raise ConfigError(f"readout blocks must lie in 1..{depth}")
        if self.model.precision not in ("float32", "float64"):
            raise ConfigError("model.precision must be float32 or float64")
        if self.objective.tau <= 0:
            raise ConfigError("objective.tau must be positive")
        if not 0.0 <= self.objective.momentum < 1.0:
            raise ConfigError("objective.momentum must lie in [0, 1)")
        if self.objective.bank_size < 0:
            raise ConfigError("objective.bank_size must be non-negative")
        if self.optim.batch_size < 1 or self.optim.epochs < 0:
            raise ConfigError("optim.batch_size must be positive and optim.epochs non-negative")
        if self.optim.max_steps is not None and self.optim.max_steps < 0:
            raise ConfigError("optim.max_steps must be non-negative")
        if self.data.train_clips < 1 or self.data.eval_clips < 0:
            raise ConfigError("data.train_clips must be positive")
        prop = self.eval.propagation
        if prop.topk < 1 or prop.m_frames < 0 or prop.radius < 0 or prop.temperature <= 0:
            raise ConfigError("propagation needs topk >= 1, m_frames >= 0, radius >= 0, temperature > 0")
        if prop.topk_scope not in ("global", "per_reference"):
            raise ConfigError("eval.propagation.topk_scope must be global or per_reference")
        if self.eval.tracker.search_size < self.eval.tracker.exemplar_size:
            raise ConfigError("eval.tracker.search_size must not be smaller than exemplar_size")
        if not self.run.seeds:
            raise ConfigError("run.seeds must list at least one seed")

    def total_steps(self) -> int:
        """Training steps for this run: epochs over the corpus, capped by max_steps."""
        batch = min(self.optim.batch_size, self.data.train_clips)
        steps = self.optim.epochs * max(1, self.data.train_clips // batch)
        if self.optim.max_steps is not None:
            steps = min(steps, self.optim.max_steps) if self.optim.epochs else self.optim.max_steps
        return steps


def _merge_strict(base: Dict[str, Any], override: Dict[str, Any], path: str) -> None:
    """Recursively merge `override` into `base`, rejecting keys `base` lacks."""
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key.startswith("_"):
            continue
        if key not in base:
            raise ConfigError(f"unknown configuration key '{dotted}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{dotted}' must be a section (object)")
            _merge_strict(base[key], value, dotted + ".")
        else:
            base[key] = copy.deepcopy(value)


def _check_types(default: Dict[str, Any], values: Dict[str, Any], path: str) -> None:
    for key, reference in default.items():
        dotted = f"{path}{key}"
        value = values[key]
        if isinstance(reference, dict):
            _check_types(reference, value, dotted + ".")
            continue
        if reference is None:
            allowed = _NULLABLE.get(dotted, (int, float))
            ok = value is None or (isinstance(value, allowed) and not isinstance(value, bool))
        elif reference == "auto":
            ok = value == "auto" or (isinstance(value, int) and not isinstance(value, bool))
        elif isinstance(reference, bool):
            ok = isinstance(value, bool)
        elif isinstance(reference, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(reference, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif isinstance(reference, list):
            ok = isinstance(value, list)
        else:
            ok = isinstance(value, type(reference))
        if not ok:
            raise ConfigError(f"'{dotted}' has invalid value {value!r}")


class ConfigManager:
    """Handles configuration loading and validation."""

    DEFAULT_CONFIG: Dict[str, Any] = {name: asdict(section_cls()) for name, section_cls in _SECTIONS.items()}

    def __init__(self, config_file: str = "config.json", local_config_file: str = "config.local.json",
                 overrides: Optional[Dict[str, Any]] = None):
        """Initialize configuration manager.

        Args:
            config_file: Main configuration file path
            local_config_file: Local overrides configuration file path
            overrides: Extra nested values applied last (e.g. from the CLI)
        """
        self.config_file = config_file
        self.local_config_file = local_config_file
        self.config = self._load_config(overrides or {})
        self.run_config = RunConfig.from_dict(self.config)

    def _load_config(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        """Load configuration from files with fallback to defaults."""
        config = copy.deepcopy(self.DEFAULT_CONFIG)

        user_config = self._read_json(self.config_file)
        if user_config is None:
            logger.info(f"{self.config_file} not found, using default configuration")
        else:
            self._merge_config(config, user_config)

        local_config = self._read_json(self.local_config_file)
        if local_config is not None:
            self._merge_config(config, local_config)
            logger.info(f"Loaded local configuration overrides from {self.local_config_file}")

        self._merge_config(config, overrides)
        self._apply_env_overrides(config)
        return config

    @staticmethod
    def _read_json(path: Optional[str]) -> Optional[Dict[str, Any]]:
        if not path:
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError as e:
            raise ConfigError(f"Error parsing {path}: {e}") from e

    def _merge_config(self, base: Dict[str, Any], override: Dict[str, Any]) -> None:
        """Recursively merge configuration dictionaries, rejecting unknown keys.

        Args:
            base: Base configuration dictionary to merge into
            override: Override configuration dictionary to merge from
        """
        _merge_strict(base, override, "")

    def _apply_env_overrides(self, config: Dict[str, Any]) -> None:
        """Apply VFS_* environment variables (a .env file is honoured)."""
        load_dotenv()
        workers = os.getenv("VFS_NUM_WORKERS")
        if workers:
            value = workers if workers == "auto" else self._env_int("VFS_NUM_WORKERS", workers)
            config["optim"]["num_workers"] = value
            config["data"]["workers"] = value
        data_seed = os.getenv("VFS_DATA_SEED")
        if data_seed:
            config["data"]["seed"] = self._env_int("VFS_DATA_SEED", data_seed)

    @staticmethod
    def _env_int(name: str, value: str) -> int:
        try:
            return int(value)
        except ValueError as e:
            raise ConfigError(f"{name} must be an integer or 'auto', got '{value}'") from e

    @staticmethod
    def get_optimal_workers(config_value: Union[str, int],
                            default_ratio: float = 0.5,
                            min_workers: int = 1,
                            max_workers: int = 16) -> int:
        """Calculate optimal number of workers based on CPU cores.

        Args:
            config_value: Either "auto" or specific number of workers
            default_ratio: Ratio of CPU cores to use when "auto"
            min_workers: Minimum number of workers
            max_workers: Maximum number of workers

        Returns:
            Optimal number of worker threads
        """
        if isinstance(config_value, int) and config_value > 0:
            return min(max(config_value, min_workers), max_workers)

        cpu_count = os.cpu_count() or 4
        optimal = max(int(cpu_count * default_ratio), min_workers)
        return min(optimal, max_workers)

    @staticmethod
    def load_snapshot(path: str) -> RunConfig:
        """Read a `config.snapshot` written into a run directory."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                return RunConfig.from_dict(json.load(f))
        except FileNotFoundError as e:
            raise ConfigError(f"{path} not found") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Error parsing {path}: {e}") from e


