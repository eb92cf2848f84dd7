"""Run configuration: one structured YAML file mirrors the training,
generator, backbone, discriminator, and metric options, plus dataset paths.

Unknown keys are rejected; every field has a documented default (the
dataclasses below are the source of truth); the fully resolved config is
echoed into the run directory so runs are self-describing. Scriptable
overrides use dotted keys: --set train.lr=0.0002.
"""

import colorsys
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass

import yaml

from .backbone import BackboneConfig
from .data import ClassPalette
from .discriminators import DiscriminatorConfig
from .generator import GeneratorConfig
from .toy import toy_palette
from .training import TrainConfig


class ConfigError(Exception):
    """Invalid config file, key, or value (CLI exit code 2)."""


@dataclass
class DataConfig:
    synthetic_root: str = ""
    real_root: str = ""
    num_classes: int = 5
    image_height: int = 64
    image_width: int = 128
    test_count: int = 40
    palette: str = "toy"  # "toy" or "generic" (evenly spaced reference colors)


@dataclass
class GeneratorSection:
    base_width: int = 32
    num_stages: int = 4
    noise_dim: int = 16


@dataclass
class MetricsConfig:
    embedder: str = "random_conv"  # or a path to inception weights
    embedder_seed: int = 0
    embedder_dim: int = 64
    segmenter: str = "toy_oracle"  # "toy_oracle", "none", or a TorchScript path
    kid_subset_size: int = 0       # 0 = min(100, N)
    kid_subsets: int = 100
    eval_batch_size: int = 8


@dataclass
class RunConfig:
    profile: str = "toy"
    run_root: str = ""
    ablation_preset: str = ""
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)


# profile presets applied before the config file's own values
_PROFILES = {
    "toy": {},
    "benchmark": {
        "data": {"num_classes": 34, "image_height": 256, "image_width": 512,
                 "test_count": 5000},
        "generator": {"base_width": 64, "num_stages": 6},
    },
}


def _coerce(value, template, path):
    if isinstance(template, bool):
        if isinstance(value, bool):
            return value
        text = str(value).lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    if isinstance(template, int) and not isinstance(template, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if isinstance(template, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
    if isinstance(template, (tuple, list)):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v != ""]
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        elem = template[0] if len(template) else ""
        return tuple(_coerce(v, elem, path) for v in value)
    if isinstance(value, (dict, list, tuple)):
        raise ConfigError(f"{path}: expected a scalar, got {value!r}")
    return str(value)


def _rebuild_section(section, values: dict, prefix: str):
    """Merge values into a fresh instance so dataclass validation reruns."""
    names = {f.name for f in fields(section)}
    merged = {name: getattr(section, name) for name in names}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {prefix}{key}")
        merged[key] = _coerce(value, merged[key], f"{prefix}{key}")
    try:
        return type(section)(**merged)
    except ValueError as e:
        raise ConfigError(f"{prefix.rstrip('.')}: {e}")


def _apply_tree(cfg: RunConfig, tree: dict):
    if not isinstance(tree, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    top = {f.name: f for f in fields(cfg)}
    for key, value in tree.items():
        if key not in top:
            raise ConfigError(f"unknown key {key}")
        current = getattr(cfg, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping of options")
            setattr(cfg, key, _rebuild_section(current, value, f"{key}."))
        else:
            setattr(cfg, key, _coerce(value, current, key))


def apply_overrides(cfg: RunConfig, overrides) -> None:
    """Apply --set key=value pairs with dotted paths."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.strip().split(".")
        if len(parts) == 1:
            _apply_tree(cfg, {parts[0]: value})
        elif len(parts) == 2:
            _apply_tree(cfg, {parts[0]: {parts[1]: value}})
        else:
            raise ConfigError(f"override key {dotted!r} has too many components")


def load_config(path=None, overrides=None) -> RunConfig:
    """Profile defaults, then the file's values, then --set overrides."""
    tree = {}
    if path is not None:
        try:
            with open(path) as f:
                tree = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"config file {path} is not valid YAML: {e}")
    profile = tree.get("profile", "toy")
    for item in overrides or ():
        if item.startswith("profile="):
            profile = item.split("=", 1)[1]
    if profile not in _PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(_PROFILES)}")
    cfg = RunConfig(profile=profile)
    _apply_tree(cfg, _PROFILES[profile])
    _apply_tree(cfg, tree)
    apply_overrides(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    d = cfg.data
    if d.num_classes < 2:
        raise ConfigError("data.num_classes must be >= 2")
    if d.image_height % 16 or d.image_width % 16:
        raise ConfigError("data.image_height/width must be divisible by 16")
    try:
        generator_config(cfg)
    except ValueError as e:
        raise ConfigError(str(e))


def config_dict(cfg: RunConfig) -> dict:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, tuple):
            return [clean(v) for v in obj]
        return obj

    return clean(asdict(cfg))


def echo_config(cfg: RunConfig, run_dir) -> str:
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, "config.yaml")
    with open(path, "w") as f:
        yaml.safe_dump(config_dict(cfg), f, sort_keys=True)
    return path


def run_root(cfg: RunConfig) -> str:
    return cfg.run_root or os.environ.get("SYNSIS_RUN_ROOT", "runs")


def generic_palette(num_classes: int) -> ClassPalette:
    colors = []
    for i in range(num_classes):
        r, g, b = colorsys.hsv_to_rgb(i / num_classes, 0.65, 0.9)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    return ClassPalette(
        num_classes=num_classes,
        id_to_name=tuple(f"class{i}" for i in range(num_classes)),
        id_to_color=tuple(colors),
    )


def build_palette(cfg: RunConfig) -> ClassPalette:
    if cfg.data.palette == "toy":
        return toy_palette(cfg.data.num_classes)
    if cfg.data.palette == "generic":
        return generic_palette(cfg.data.num_classes)
    raise ConfigError(f"unknown palette {cfg.data.palette!r}")


def generator_config(cfg: RunConfig) -> GeneratorConfig:
    return GeneratorConfig(
        num_classes=cfg.data.num_classes,
        base_width=cfg.generator.base_width,
        num_stages=cfg.generator.num_stages,
        noise_dim=cfg.generator.noise_dim,
        output_hw=(cfg.data.image_height, cfg.data.image_width),
    )
