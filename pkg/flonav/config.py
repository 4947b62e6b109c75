"""Typed configuration sections and the plain-text run configuration.

A run configuration is an INI file with the sections ``[run]``, ``[generator]``, ``[sim]``, ``[policy]``,
``[train]`` and ``[benchmark]``. Every field of every section also gets a command line flag named after the
field (``agent_radius`` becomes ``--agent-radius``); flags win over the file, the file wins over the defaults.

"""

import configparser
import dataclasses
import hashlib
import math
from argparse import ArgumentParser, ArgumentTypeError, Namespace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Type, Union

from .errors import FlonavError


class ConfigError(FlonavError):
    pass


CollisionLimit = Optional[int]
"""A collision threshold; ``None`` is the unbounded (∞) marker."""


def format_limit(limit: CollisionLimit) -> str:
    return "inf" if limit is None else str(limit)


def parse_limit(text: str) -> CollisionLimit:
    lowered = text.strip().lower()
    if lowered in ("inf", "infinity", "none", "∞"):
        return None
    try:
        value = int(lowered)
    except ValueError:
        raise ConfigError(f"invalid collision limit {text!r}; expected an integer or 'inf'")
    if value < 0:
        raise ConfigError(f"collision limit must be non-negative, got {value}")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    elif lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"invalid boolean {text!r}")


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"invalid integer {text!r}")


def _parse_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"invalid number {text!r}")
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {text!r}")
    return value


PARSERS: Dict[Any, Callable[[str], Any]] = {
    int: _parse_int,
    float: _parse_float,
    bool: _parse_bool,
    str: str,
    CollisionLimit: parse_limit,
}


def _format_value(value: Any) -> str:
    if value is None:
        return "inf"
    elif isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


@dataclasses.dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic scene and episode generation."""

    num_scenes: int = 20
    resolution: float = 0.1
    furniture_density: float = 0.15
    size_classes: str = "small,medium,large"
    scale_factor: int = 10
    min_pair_distance: float = 3.0
    test_fraction: float = 0.3
    max_sampling_attempts: int = 2000

    def __post_init__(self):
        if self.num_scenes < 0:
            raise ConfigError("num_scenes must be non-negative")
        if self.resolution <= 0:
            raise ConfigError("resolution must be positive")
        if not 0 <= self.furniture_density < 1:
            raise ConfigError("furniture_density must lie in [0, 1)")
        if self.scale_factor < 1:
            raise ConfigError("scale_factor must be at least 1")
        if not 0 <= self.test_fraction <= 1:
            raise ConfigError("test_fraction must lie in [0, 1]")


@dataclasses.dataclass(frozen=True)
class SimConfig:
    """Kinematic simulator and success criteria."""

    agent_radius: float = 0.18
    tau_d: float = 0.30
    tau_c: CollisionLimit = None
    max_travel: float = 100.0
    fov: float = 45.0
    num_rays: int = 32
    substeps: int = 8
    max_range: float = 10.0

    def __post_init__(self):
        for name in ("agent_radius", "tau_d", "max_travel", "fov", "num_rays", "substeps", "max_range"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")

    def planning_radius(self, resolution: float) -> float:
        """Inflation radius for planning grids.

        One extra cell of clearance keeps the agent disk off every obstacle cell while it moves along straight
        segments between the centres of free planning cells.

        """
        return self.agent_radius + resolution


@dataclasses.dataclass(frozen=True)
class PolicyConfig:
    """Network shape of the diffusion policy."""

    context_length: int = 3
    plan_size: int = 32
    context_dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    feedforward_dim: int = 128
    encoder_hidden: int = 128
    head_hidden: int = 64
    horizon: int = 32
    action_horizon: int = 16
    diffusion_steps: int = 10
    trunk: str = "dense"
    trunk_hidden: int = 256
    trunk_blocks: int = 3
    step_embed_dim: int = 32
    positional_encoding: bool = False

    def __post_init__(self):
        if self.context_length < 0:
            raise ConfigError("context_length must be non-negative")
        if self.action_horizon > self.horizon:
            raise ConfigError(f"action_horizon ({self.action_horizon}) exceeds horizon ({self.horizon})")
        if self.context_dim % self.n_heads != 0:
            raise ConfigError(f"context_dim ({self.context_dim}) must be divisible by n_heads ({self.n_heads})")
        if self.trunk not in ("dense", "conv1d"):
            raise ConfigError(f"unknown trunk {self.trunk!r}; expected 'dense' or 'conv1d'")
        if self.diffusion_steps < 1:
            raise ConfigError("diffusion_steps must be at least 1")
        if self.step_embed_dim < 4 or self.step_embed_dim % 2:
            raise ConfigError("step_embed_dim must be an even number of at least 4")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings."""

    variant: str = "loc"
    lr: float = 1e-4
    weight_decay: float = 1e-2
    epochs: int = 5
    batch_size: int = 64
    segments_per_episode: int = 8
    distance_weight: float = 0.001
    pose_weight: float = 0.005
    loc_distance_weight: float = 0.001
    mask_floorplan: bool = False

    def __post_init__(self):
        if self.variant not in ("loc", "naive"):
            raise ConfigError(f"unknown variant {self.variant!r}; expected 'loc' or 'naive'")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.segments_per_episode < 1:
            raise ConfigError("segments_per_episode must be at least 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")


@dataclasses.dataclass(frozen=True)
class BenchmarkConfig:
    """Benchmark runner settings."""

    pairs_per_scene: int = 10
    replan_budget: int = 200
    noise_variance: float = 0.3
    snap_radius: float = 1.0
    eval_split: str = "test"
    methods: str = "loc-astar-gt,loc-astar-noisy,flodiff-loc-gt,flodiff-loc-noisy,flodiff-naive,random-walk"

    def __post_init__(self):
        if self.pairs_per_scene < 1:
            raise ConfigError("pairs_per_scene must be at least 1")
        if self.replan_budget < 1:
            raise ConfigError("replan_budget must be at least 1")
        if self.noise_variance < 0:
            raise ConfigError("noise_variance must be non-negative")
        if self.eval_split not in ("train", "test", "all"):
            raise ConfigError(f"unknown eval_split {self.eval_split!r}; expected train, test or all")


SECTIONS: Dict[str, Type] = {
    "generator": GeneratorConfig,
    "sim": SimConfig,
    "policy": PolicyConfig,
    "train": TrainConfig,
    "benchmark": BenchmarkConfig,
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    generator: GeneratorConfig = dataclasses.field(default_factory=GeneratorConfig)
    sim: SimConfig = dataclasses.field(default_factory=SimConfig)
    policy: PolicyConfig = dataclasses.field(default_factory=PolicyConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    benchmark: BenchmarkConfig = dataclasses.field(default_factory=BenchmarkConfig)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def dump(self, path: Union[str, Path]):
        """Writes the configuration in the format :func:`load_config` reads."""
        parser = configparser.ConfigParser(interpolation=None)
        parser["run"] = {"seed": str(self.seed), "workers": str(self.workers)}
        for section in SECTIONS:
            values = getattr(self, section)
            parser[section] = {f.name: _format_value(getattr(values, f.name)) for f in dataclasses.fields(values)}
        with open(path, "w", encoding="utf-8") as f:
            parser.write(f)

    def with_overrides(self, overrides: Dict[Tuple[str, str], Any]) -> "RunConfig":
        """Returns a copy with ``(section, field) -> value`` replacements applied."""
        run_values: Dict[str, Any] = {}
        sections: Dict[str, Dict[str, Any]] = {}
        for (section, key), value in overrides.items():
            if section == "run":
                run_values[key] = value
            else:
                sections.setdefault(section, {})[key] = value
        replaced = {name: dataclasses.replace(getattr(self, name), **values) for name, values in sections.items()}
        return dataclasses.replace(self, **run_values, **replaced)


def _field_types(section_type: Type) -> Dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(section_type)}


def load_config(path: Union[str, Path]) -> RunConfig:
    """Loads a run configuration, rejecting unknown sections and keys.

    Raises:
        ConfigError: If the file is missing, malformed, or names an unknown section, key, or value.

    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}")
    overrides: Dict[Tuple[str, str], Any] = {}
    for section in parser.sections():
        if section == "run":
            types: Dict[str, Any] = {"seed": int, "workers": int}
        elif section in SECTIONS:
            types = _field_types(SECTIONS[section])
        else:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in types:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            overrides[(section, key)] = PARSERS[types[key]](text)
    return RunConfig().with_overrides(overrides)


UNSET = object()
"""Default of every override flag; distinguishes an absent flag from an explicit `inf`."""


def _flag_type(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    """Reports parse failures as usage errors."""

    def convert(text: str) -> Any:
        try:
            return parse(text)
        except ConfigError as e:
            raise ArgumentTypeError(str(e))

    return convert


def _flag_name(field_name: str) -> str:
    return "--" + field_name.replace("_", "-")


def _dest(section: str, field_name: str) -> str:
    return f"config__{section}__{field_name}"


def add_config_arguments(parser: ArgumentParser):
    """Adds one override flag per configuration field, grouped by section."""
    seen: Dict[str, str] = {}
    for section, section_type in SECTIONS.items():
        group = parser.add_argument_group(f"[{section}] configuration")
        for name, field_type in _field_types(section_type).items():
            if name in seen:
                raise ValueError(f"configuration field {name!r} appears in both [{seen[name]}] and [{section}]")
            seen[name] = section
            default = getattr(section_type(), name)
            group.add_argument(
                _flag_name(name),
                dest=_dest(section, name),
                type=_flag_type(PARSERS[field_type]),
                default=UNSET,
                metavar=name.upper(),
                help=f"override {section}.{name} (default: {_format_value(default)})",
            )


def config_from_args(args: Namespace) -> RunConfig:
    """Combines ``--config``, ``--seed``, ``--workers`` and the per-field flags into a :class:`RunConfig`."""
    config_path = getattr(args, "config", None)
    config = load_config(config_path) if config_path is not None else RunConfig()
    overrides: Dict[Tuple[str, str], Any] = {}
    for section, section_type in SECTIONS.items():
        for name in _field_types(section_type):
            value = getattr(args, _dest(section, name), UNSET)
            if value is not UNSET:
                overrides[(section, name)] = value
    for key in ("seed", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[("run", key)] = value
    try:
        return config.with_overrides(overrides)
    except TypeError as e:
        raise ConfigError(str(e))


def derive_seed(seed: int, *purpose: Any) -> int:
    """Derives a named 63-bit sub-seed from the master seed and a purpose path."""
    text = "\x1f".join(str(part) for part in (seed, *purpose))
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)
