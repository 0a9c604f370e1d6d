"""
Run configuration files.

INI files use `[network]`, `[loss]`, `[train]` and `[data]` sections with
`key = value` lines; every field of the matching config model is addressable.
JSON files hold a dumped RunConfig (what `train` writes next to its outputs).
"""
import configparser
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ValidationError

from src.errors import ConfigError, ConfigFileError
from src.schemas import RunConfig, parse_model

logger = logging.getLogger(__name__)

SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")
NULL_VALUES = {"", "none", "null"}

PathLike = Union[str, Path]


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    lines: Dict[Tuple[str, str], int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        header = SECTION_RE.match(line)
        if header:
            section = header.group(1).strip().lower()
            lines.setdefault((section, ""), number)
            continue
        key = KEY_RE.match(line)
        if key and not line[:1].isspace():
            lines[(section, key.group(1).strip().lower())] = number
    return lines


def _section_models() -> Dict[str, type]:
    return {name: info.annotation for name, info in RunConfig.model_fields.items()}


def parse_ini(text: str, path: Optional[PathLike] = None) -> RunConfig:
    source = str(path) if path is not None else None
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as e:
        raise ConfigFileError("key = value line before any [section] header", e.lineno, source) from e
    except configparser.DuplicateOptionError as e:
        raise ConfigFileError(f"duplicate key {e.option!r} in [{e.section}]", e.lineno, source) from e
    except configparser.DuplicateSectionError as e:
        raise ConfigFileError(f"duplicate section [{e.section}]", e.lineno, source) from e
    except configparser.ParsingError as e:
        line, content = e.errors[0]
        raise ConfigFileError(f"cannot parse {content.strip()!r}", line, source) from e

    lines = _key_lines(text)
    models = _section_models()
    data: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        name = section.lower()
        if name not in models:
            raise ConfigFileError(
                f"unknown section [{section}]; expected one of {', '.join(models)}",
                lines.get((name, "")), source,
            )
        fields = models[name].model_fields
        values: Dict[str, Any] = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigFileError(f"unknown key {key!r} in [{section}]", lines.get((name, key)), source)
            values[key] = None if raw.strip().lower() in NULL_VALUES else raw.strip()
        try:
            models[name].model_validate(values)
        except ValidationError as e:
            first = e.errors()[0]
            key = str(first["loc"][0]) if first["loc"] else ""
            raise ConfigFileError(f"[{section}] {key}: {first['msg']}", lines.get((name, key)), source) from e
        data[name] = values
    return parse_model(RunConfig, data)


def load_run_config(path: PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigFileError(f"cannot read config: {e.strerror or e}", None, str(path)) from e
    if path.suffix.lower() == ".json":
        try:
            return parse_model(RunConfig, json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigFileError(e.msg, e.lineno, str(path)) from e
    config = parse_ini(text, path)
    logger.debug(f"Loaded run config from {path}")
    return config


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """Apply `section.key` → value overrides (command-line flags); None values are skipped."""
    data = config.model_dump()
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if section not in data or key not in data[section]:
            raise ConfigError(f"unknown config field {dotted!r}")
        data[section][key] = value
    return parse_model(RunConfig, data)


def dump_run_config(config: BaseModel, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.model_dump_json(indent=2), encoding="utf-8")
    return path
