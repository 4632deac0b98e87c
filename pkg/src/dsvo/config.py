"""Dataclass configs and the flat ``key = value`` config-file parser."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class SelectConfig:
    cell_size: int = 16
    g_min_init: float = 64.0  # squared-gradient units (8^2)
    delta_g: float = 4.0  # 2^2
    dilation_radius: int = 2
    min_points: int | None = None  # default: half the cell count
    max_points: int | None = None  # default: the cell count


@dataclass
class StereoMatchConfig:
    max_disparity: int | None = None  # default: image_width / 4
    search_radius: int = 2
    zncc_min: float = 0.5


@dataclass
class AlignConfig:
    c: float = 4.0
    nu: float = 5.0
    max_iters: int = 4
    plateau_tol: float = 0.005
    levels: int | None = None  # None: use all pyramid levels
    stereo: bool = True


@dataclass
class PbaConfig:
    max_iters: int = 4
    levels: int | None = None  # None: levels P-2 .. 0
    plateau_tol: float = 0.005
    rho_min: float = 1e-4
    rho_max: float = 10.0
    damping_init: float = 1e-4
    damping_max: float = 1e5


@dataclass
class WindowConfig:
    N: int = 4
    Q_min: float = 0.6
    min_points: int = 50


@dataclass
class OdometryConfig:
    num_levels: int = 5
    select: SelectConfig = field(default_factory=SelectConfig)
    stereo: StereoMatchConfig = field(default_factory=StereoMatchConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    pba: PbaConfig = field(default_factory=PbaConfig)
    window: WindowConfig = field(default_factory=WindowConfig)


# keys without a dot prefix belong to the point selector / stereo matcher,
# matching the names each module documents
_FLAT_KEYS = {
    "cell_size": ("select", "cell_size"),
    "g_min_init": ("select", "g_min_init"),
    "delta_g": ("select", "delta_g"),
    "dilation_radius": ("select", "dilation_radius"),
    "min_points": ("select", "min_points"),
    "max_points": ("select", "max_points"),
    "max_disparity": ("stereo", "max_disparity"),
    "search_radius": ("stereo", "search_radius"),
    "zncc_min": ("stereo", "zncc_min"),
    "num_levels": (None, "num_levels"),
}


def _coerce(text: str, target_type):
    text = text.strip()
    if target_type is bool or text.lower() in ("true", "false"):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    try:
        if target_type is int:
            return int(text)
        return float(text) if "." in text or "e" in text.lower() else int(text)
    except ValueError as e:
        raise ConfigError(f"cannot parse value {text!r}") from e


def _set_key(cfg: OdometryConfig, section: str | None, name: str, raw: str):
    target = cfg if section is None else getattr(cfg, section)
    try:
        f = next(f for f in fields(target) if f.name == name)
    except StopIteration:
        raise ConfigError(f"unknown config key {name!r}")
    t = f.type
    base = int if "int" in str(t) else bool if "bool" in str(t) else float
    setattr(target, name, _coerce(raw, base))


def apply_config_line(cfg: OdometryConfig, line: str, lineno: int = 0):
    key, _, raw = line.partition("=")
    if not _:
        raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in ("align", "pba", "window", "select", "stereo"):
            raise ConfigError(f"line {lineno}: unknown config section {section!r}")
        _set_key(cfg, section, name, raw)
    elif key in _FLAT_KEYS:
        section, name = _FLAT_KEYS[key]
        _set_key(cfg, section, name, raw)
    else:
        raise ConfigError(f"line {lineno}: unknown config key {key!r}")


def load_config(path: str, base: OdometryConfig | None = None) -> OdometryConfig:
    """Parse a flat ``key = value`` config file; unknown keys are errors."""
    cfg = base if base is not None else OdometryConfig()
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            apply_config_line(cfg, line, lineno)
    return cfg
