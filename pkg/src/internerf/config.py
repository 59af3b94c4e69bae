"""``key = value`` training configuration files.

Training keys are the :class:`~internerf.trainer.TrainConfig` field names.
Model keys are ``<network>.<field>`` where network is ``prop1``, ``prop2``
or ``final`` and field is a grid field (``levels``, ``table_size``,
``features_per_entry``, ``base_resolution``, ``finest_resolution``,
``dense_threshold``) or a network field (``geo_hidden``, ``app_hidden``,
``dir_degree``, ``interpolated``). ``table_size`` without a prefix sets
every network. Lines starting with ``#`` are comments. Unknown keys are
errors.
"""

from __future__ import annotations

import os
from dataclasses import fields, replace
from pathlib import Path

from .errors import ConfigurationError, ParseError
from .featgrid import GridConfig
from .networks import ModelSpec, NetworkSpec
from .trainer import TrainConfig, desk_model

SEED_ENV = "INTERNERF_SEED"

_GRID_FIELDS = {f.name for f in fields(GridConfig)}
_NET_FIELDS = {"geo_hidden", "app_hidden", "dir_degree", "interpolated"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple:
    text = text.strip().strip("()[]")
    return tuple(int(t) for t in text.replace(",", " ").split()) if text else ()


def _parse_optional_int(text: str):
    return None if text.lower() in ("none", "") else int(text)


_TRAIN_PARSERS = {
    "samples": _parse_ints,
}


def _train_parser(name: str):
    if name in _TRAIN_PARSERS:
        return _TRAIN_PARSERS[name]
    default = getattr(TrainConfig(), name)
    return int if isinstance(default, int) else float


def _net_parser(name: str):
    if name == "app_hidden":
        return _parse_ints
    if name == "interpolated":
        return _parse_bool
    if name == "dense_threshold":
        return _parse_optional_int
    return int


def parse_lines(lines, source="<config>") -> dict:
    """Raw ``{key: (value, line number)}`` with duplicate and syntax checks."""
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}:{n}: empty key")
        if key in out:
            raise ParseError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = (value, n)
    return out


def build_config(entries: dict, source="<config>", base_model: ModelSpec = None, env=None):
    """TrainConfig and ModelSpec from parsed entries (desk profile for missing keys)."""
    env = os.environ if env is None else env
    model = base_model or desk_model()
    nets = {net.name: net for net in model.networks}
    train_kw, grid_kw, net_kw = {}, {n: {} for n in nets}, {n: {} for n in nets}
    train_names = {f.name for f in fields(TrainConfig)}
    for key, (value, line) in entries.items():
        where = f"{source}:{line}: {key}"
        try:
            if key in train_names:
                train_kw[key] = _train_parser(key)(value)
            elif key == "table_size":
                for name in nets:
                    grid_kw[name].setdefault("table_size", int(value))
            elif "." in key and key.split(".", 1)[0] in nets:
                name, attr = key.split(".", 1)
                if attr in _GRID_FIELDS:
                    grid_kw[name][attr] = _net_parser(attr)(value)
                elif attr in _NET_FIELDS:
                    net_kw[name][attr] = _net_parser(attr)(value)
                else:
                    raise ConfigurationError(f"{where}: unknown network field {attr!r}")
            else:
                raise ConfigurationError(f"{where}: unknown key")
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ParseError(f"{where}: {exc}") from exc
    if SEED_ENV in env:
        try:
            train_kw["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
    config = TrainConfig(**train_kw)
    new_nets = []
    for net in model.networks:
        grid = replace(net.grid, **grid_kw[net.name]) if grid_kw[net.name] else net.grid
        new_nets.append(replace(net, grid=grid, **net_kw[net.name]))
    model = ModelSpec(tuple(new_nets))
    if len(config.samples) != len(model.networks):
        raise ConfigurationError(f"samples lists {len(config.samples)} counts for {len(model.networks)} networks")
    return config, model


def load_config(path, env=None):
    """Parse a config file into ``(TrainConfig, ModelSpec)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return build_config(parse_lines(text.splitlines(), str(path)), str(path), env=env)


def dump_config(config: TrainConfig, model: ModelSpec) -> str:
    """Inverse of :func:`load_config` (every key written out)."""
    lines = []
    for f in fields(TrainConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {', '.join(map(str, value)) if isinstance(value, tuple) else value}")
    for net in model.networks:
        for f in fields(GridConfig):
            value = getattr(net.grid, f.name)
            lines.append(f"{net.name}.{f.name} = {'none' if value is None else value}")
        lines.append(f"{net.name}.geo_hidden = {net.geo_hidden}")
        lines.append(f"{net.name}.app_hidden = {', '.join(map(str, net.app_hidden))}")
        lines.append(f"{net.name}.dir_degree = {net.dir_degree}")
        lines.append(f"{net.name}.interpolated = {str(net.interpolated).lower()}")
    return "\n".join(lines) + "\n"
