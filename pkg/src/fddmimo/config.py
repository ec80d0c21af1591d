"""Flat ``section.field = value`` configuration files.

Example::

    # system
    system.M = 64
    system.K_dl = (1, 2)
    gan.epochs = 3000
    descent.lr = 0.01
    sweep.axis = p
    sweep.values = (1, 2, 4, 8, 16)

Values are Python literals (numbers, tuples, ``None``, ``True``); anything
that does not parse as a literal is kept as a string. Sections map to
dataclasses, see :data:`SECTIONS`. Unknown sections or fields are errors.
"""
import ast
import configparser
import dataclasses
from pathlib import Path
from typing import Dict

from .channel import SystemConfig
from .dataset import ScenarioSpec
from .estimators import DL_PHASE_DEFAULT, R2F2_DEFAULT, UP_GAN_DEFAULT, DescentConfig
from .experiments import SweepSpec
from .reggan import GanConfig

__all__ = ["SECTIONS", "ConfigError", "parse_config", "load_config", "dump_config", "defaults"]

SECTIONS = {
    "system": SystemConfig,
    "scenario": ScenarioSpec,
    "gan": GanConfig,
    "descent": DescentConfig,          # UP-GAN latent descent
    "dl_descent": DescentConfig,       # downlink phase descent
    "r2f2": DescentConfig,             # modified R2F2 baseline
    "sweep": SweepSpec,
}
_ROOT = "root"


class ConfigError(ValueError):
    pass


def defaults() -> Dict[str, object]:
    return {"system": SystemConfig(), "scenario": ScenarioSpec(), "gan": GanConfig(),
            "descent": UP_GAN_DEFAULT, "dl_descent": DL_PHASE_DEFAULT, "r2f2": R2F2_DEFAULT,
            "sweep": SweepSpec()}


def _value(text: str):
    try:
        v = ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
    return tuple(v) if isinstance(v, list) else v


def parse_config(text: str, source: str = "<string>") -> Dict[str, object]:
    """Parse config text into ``{section: dataclass instance}`` (defaults filled in)."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_ROOT}]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    changes: Dict[str, dict] = {name: {} for name in SECTIONS}
    for key, raw in cp[_ROOT].items():
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"{source}: unknown key {key!r}; expected one of "
                              f"{', '.join(s + '.<field>' for s in SECTIONS)}")
        fields = {f.name for f in dataclasses.fields(SECTIONS[section])}
        if name not in fields:
            raise ConfigError(f"{source}: {SECTIONS[section].__name__} has no field {name!r}")
        changes[section][name] = _value(raw.strip())
    out = {}
    for section, base in defaults().items():
        try:
            if isinstance(base, DescentConfig):
                out[section] = dataclasses.replace(base, **changes[section])
            else:
                # build afresh: SystemConfig derives index sets and noise from other fields
                out[section] = SECTIONS[section](**changes[section])
            if section == "scenario":
                out[section].validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: invalid {section} settings: {exc}") from None
    return out


def load_config(path=None) -> Dict[str, object]:
    if path is None:
        return defaults()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p))


def dump_config(cfgs: Dict[str, object] = None) -> str:
    """Every field of every section, in a form :func:`parse_config` reads back.

    Without arguments the declared defaults are written, so derived system
    fields stay ``None`` and follow edits to the fields they derive from.
    """
    use_declared = cfgs is None
    cfgs = defaults() if cfgs is None else cfgs
    lines = []
    for section in SECTIONS:
        lines.append(f"# {section}")
        obj = cfgs[section]
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if use_declared and SECTIONS[section] is SystemConfig:
                value = f.default     # keep derived fields (noise, index sets) as None
            lines.append(f"{section}.{f.name} = {value!r}")
        lines.append("")
    return "\n".join(lines)
