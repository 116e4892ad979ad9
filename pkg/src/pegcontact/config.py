"""Run configuration: a flat ``section.key = value`` text file.

Format rules
------------
* One ``key = value`` per line; ``#`` or ``;`` starts a comment line.
* Keys are ``section.field``. A ``_mm`` suffix means the value is in
  millimetres, ``_deg`` means degrees; both are converted to SI on load.
* Vector values are comma separated (``control.k_p = 4000, 4000, ...``).
* Unknown keys are an error, so typos never pass silently.

Sections: ``geometry``, ``alt`` (cross-size geometry), ``sim``, ``control``,
``traj``, ``data``, ``train``, ``assemble`` and the top-level ``seed`` and
``output_dir`` keys.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .classifier import TrainConfig
from .control import AdmittanceParams, check_stability
from .errors import ConfigError
from .geometry import OffsetRanges, PegHoleGeometry, make_geometry
from .pipeline import TrajectoryParams
from .sim import SimParams


@dataclass(frozen=True)
class GeometrySpec:
    shape: str = "square"
    hole_side: float = 0.050
    clearance: float = 0.001
    hole_depth: float = 0.040
    peg_length: float = 0.060

    def build(self) -> PegHoleGeometry:
        return make_geometry(self.shape, self.hole_side, self.clearance, self.hole_depth,
                             self.peg_length)


@dataclass(frozen=True)
class DataSpec:
    num_episodes: int = 2000
    offsets: OffsetRanges = OffsetRanges()
    max_failure_fraction: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometrySpec = GeometrySpec()
    alt: GeometrySpec = GeometrySpec(hole_side=0.032, hole_depth=0.030)
    alt_episodes: int = 500
    sim: SimParams = SimParams()
    control: AdmittanceParams = AdmittanceParams()
    control_noise: float = 0.05
    traj: TrajectoryParams = TrajectoryParams()
    data: DataSpec = DataSpec()
    train: TrainConfig = TrainConfig()
    trials: int = 50
    seed: int = 0
    output_dir: str = "out"

    def validate(self) -> "RunConfig":
        """Build every derived object once so invalid values fail before any work starts."""
        try:
            self.geometry.build()
            self.alt.build()
            check_stability(self.control)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0 <= self.control_noise < 1:
            raise ConfigError("control.noise must lie in [0, 1)")
        if self.data.num_episodes < 1 or self.alt_episodes < 1 or self.trials < 1:
            raise ConfigError("episode and trial counts must be positive")
        if not 0 <= self.data.max_failure_fraction <= 1:
            raise ConfigError("data.max_failure_fraction must lie in [0, 1]")
        for lo, hi in (self.data.offsets.dx, self.data.offsets.dy, self.data.offsets.dyaw):
            if not lo <= hi:
                raise ConfigError("offset ranges must satisfy low <= high")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        return self


# --- parsing ---------------------------------------------------------------

_SECTIONS = {
    "geometry": "geometry",
    "alt": "alt",
    "sim": "sim",
    "control": "control",
    "traj": "traj",
    "train": "train",
}


def _convert(key: str, raw: str):
    """Return (field name, value) with unit suffixes applied."""
    scale = None
    name = key
    if key.endswith("_mm"):
        name, scale = key[:-3], 1e-3
    elif key.endswith("_deg"):
        name, scale = key[:-4], math.pi / 180.0
    parts = [p.strip() for p in raw.split(",")]
    values = []
    for p in parts:
        try:
            v = int(p)
        except ValueError:
            try:
                v = float(p)
            except ValueError:
                if scale is not None:
                    raise ConfigError(f"{key}: '{p}' is not a number") from None
                v = p
        if scale is not None:
            v = float(v) * scale
        values.append(v)
    return name, values[0] if len(values) == 1 else tuple(values)


def _coerce(cls, name: str, value, key: str):
    names = {f.name: f for f in fields(cls)}
    if name not in names:
        raise ConfigError(f"unknown key '{key}'")
    default = getattr(cls(), name) if dataclasses.is_dataclass(cls) else None
    if isinstance(default, bool):
        if str(value).lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"{key}: expected a boolean")
        return str(value).lower() in ("true", "1")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key}: expected an integer")
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected an integer")
        return int(value)
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, tuple) or len(value) != len(default):
            raise ConfigError(f"{key}: expected {len(default)} comma separated values")
        return tuple(float(v) for v in value)
    return value


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    updates: dict[str, dict] = {}
    top: dict = {}
    data: dict = {}
    offsets: dict = {}
    for key, raw in parser["run"].items():
        section, _, rest = key.partition(".")
        name, value = _convert(rest or section, raw)
        if not rest:
            if name == "seed":
                top["seed"] = _coerce(RunConfig, "seed", value, key)
            elif name == "output_dir":
                top["output_dir"] = str(value)
            else:
                raise ConfigError(f"unknown key '{key}'")
        elif section == "alt" and name == "num_episodes":
            top["alt_episodes"] = _coerce(RunConfig, "alt_episodes", value, key)
        elif section == "control" and name == "noise":
            top["control_noise"] = _coerce(RunConfig, "control_noise", value, key)
        elif section in _SECTIONS:
            cls = type(getattr(RunConfig(), _SECTIONS[section]))
            updates.setdefault(section, {})[name] = _coerce(cls, name, value, key)
        elif section == "data":
            if name in ("dx", "dy", "dyaw"):
                if not isinstance(value, tuple) or len(value) != 2:
                    raise ConfigError(f"{key}: expected 'low, high'")
                offsets[name] = (float(value[0]), float(value[1]))
            elif name in ("num_episodes", "max_failure_fraction"):
                data[name] = _coerce(DataSpec, name, value, key)
            else:
                raise ConfigError(f"unknown key '{key}'")
        elif section == "assemble" and name == "trials":
            top["trials"] = _coerce(RunConfig, "trials", value, key)
        else:
            raise ConfigError(f"unknown key '{key}'")
    cfg = RunConfig()
    try:
        for section, vals in updates.items():
            attr = _SECTIONS[section]
            cfg = replace(cfg, **{attr: replace(getattr(cfg, attr), **vals)})
        if offsets:
            data["offsets"] = replace(cfg.data.offsets, **offsets)
        if data:
            cfg = replace(cfg, data=replace(cfg.data, **data))
        cfg = replace(cfg, **top)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Serialize to the same format in SI units; ``parse_config(dump_config(c)) == c``."""
    lines = [f"seed = {cfg.seed}", f"output_dir = {cfg.output_dir}"]
    for section, attr in _SECTIONS.items():
        obj = getattr(cfg, attr)
        for f in fields(obj):
            lines.append(f"{section}.{f.name} = {_fmt(getattr(obj, f.name))}")
    lines.append(f"control.noise = {_fmt(cfg.control_noise)}")
    lines.append(f"alt.num_episodes = {cfg.alt_episodes}")
    lines.append(f"data.num_episodes = {cfg.data.num_episodes}")
    lines.append(f"data.max_failure_fraction = {_fmt(cfg.data.max_failure_fraction)}")
    for name in ("dx", "dy", "dyaw"):
        lines.append(f"data.{name} = {_fmt(getattr(cfg.data.offsets, name))}")
    lines.append(f"assemble.trials = {cfg.trials}")
    return "\n".join(lines) + "\n"
