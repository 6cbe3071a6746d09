"""
Configuration loading
Reads the sectioned key/value config file into a validated SimConfig
"""
import configparser
import io
import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

from pydantic import BaseModel, ValidationError

from .errors import ConfigError
from .schemas import (
    FusionConfig,
    LatencyModel,
    PolicyConfig,
    SamplerConfig,
    SavGolConfig,
    SimConfig,
)

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).parent
PRESETS_DIR = PACKAGE_DIR / "presets"
DEFAULT_CONFIG_PATH = PRESETS_DIR / "default.ini"

# Environment overrides
CONFIG_PATH = os.getenv("WAM_CONFIG")
LOG_LEVEL = os.getenv("WAM_LOG_LEVEL", "WARNING")

SECTION_MODELS = {
    "sampler": SamplerConfig,
    "fusion": FusionConfig,
    "smoothing": SavGolConfig,
    "latency": LatencyModel,
    "policy": PolicyConfig,
}

NONE_VALUES = {"none", "null"}


def _section_dict(parser: configparser.ConfigParser, section: str, model: type) -> Dict[str, Optional[str]]:
    allowed = set(model.model_fields)
    allowed |= {f.alias for f in model.model_fields.values() if f.alias}
    values = {}
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section [{section}]")
        values[key] = None if raw.strip().lower() in NONE_VALUES else raw.strip()
    return values


def parse_config(text: str, source: str = "<string>") -> SimConfig:
    """Parse config text; missing keys fall back to the SimConfig defaults"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    data: Dict[str, object] = {}
    for section in parser.sections():
        if section == "sim":
            data.update(_section_dict(parser, section, SimConfig))
        elif section in SECTION_MODELS:
            data[section] = _section_dict(parser, section, SECTION_MODELS[section])
        else:
            raise ConfigError(f"{source}: unknown section [{section}]")

    for nested in SECTION_MODELS:
        if nested in data and not isinstance(data[nested], dict):
            raise ConfigError(f"{source}: '{nested}' must be a section, not a [sim] key")

    try:
        return SimConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_config(path: Optional[Union[str, Path]] = None) -> SimConfig:
    """
    Load a config file.

    Resolution order: explicit path, WAM_CONFIG, bundled default.ini.
    """
    if path is None:
        path = CONFIG_PATH or DEFAULT_CONFIG_PATH
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    logger.debug("Loading config from %s", path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


def _format_value(value) -> str:
    if value is None:
        return "none"
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_model(parser: configparser.ConfigParser, section: str, model: BaseModel):
    parser.add_section(section)
    for name, field in type(model).model_fields.items():
        key = field.alias or name
        parser.set(section, key, _format_value(getattr(model, name)))


def dump_config(cfg: SimConfig) -> str:
    """Render every setting, defaults included, as config file text"""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.add_section("sim")
    for name in SimConfig.model_fields:
        if name in SECTION_MODELS:
            continue
        parser.set("sim", name, _format_value(getattr(cfg, name)))
    for section in SECTION_MODELS:
        _write_model(parser, section, getattr(cfg, section))

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
