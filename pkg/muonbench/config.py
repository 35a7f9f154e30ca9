"""
Strict JSON configuration for the command line.

A config document is a JSON object holding the fields of
:class:`~muonbench.harness.TrainConfig` at top level, plus optional blocks
``sweep``, ``ablation``, ``telescope`` and ``rate_check`` and an
``out_dir``. Only ``task`` is required. Any key that does not name a field
is rejected with its full key path, e.g. ``sweep.batch_grids``.

An example::

    {
        "task": "quadratic",
        "optimizer": "muon",
        "muon": {"eta0": 0.05, "weight_decay": 0.1, "coeffs": "optimized"},
        "total_steps": 400,
        "target_loss": 0.05,
        "sweep": {"batch_grid": [32, 128, 512, 2048]}
    }
"""
import dataclasses
import io
import json
import logging
import typing
from dataclasses import dataclass, field

from .errors import ConfigError
from .harness import RateCheckSpec, TrainConfig
from .msign import NsCoefficients, coefficients
from .sweeps import AblationSpec, SweepSpec, TelescopeSpec

logger = logging.getLogger(__name__)

__all__ = [
    'CliConfig',
    'config_from_dict',
    'load_config',
]


@dataclass
class CliConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    telescope: TelescopeSpec = field(default_factory=TelescopeSpec)
    rate_check: RateCheckSpec = field(default_factory=RateCheckSpec)
    out_dir: str = 'results'


BLOCKS = ('sweep', 'ablation', 'telescope', 'rate_check', 'out_dir')


def _join(path, key):
    return "{}.{}".format(path, key) if path else key


def _type_name(value):
    return type(value).__name__ if value is not None else 'null'


def _coerce(value, default, path):
    """
    Check a JSON value against the type of a field's current value and
    convert it.
    """
    if isinstance(default, NsCoefficients):
        if isinstance(value, str):
            try:
                return coefficients(value)
            except ConfigError as e:
                raise ConfigError(str(e), path)
        if isinstance(value, dict):
            return _build(NsCoefficients, value, path,
                          NsCoefficients(0.0, 0.0, 0.0, 'custom'))
        raise ConfigError("expected a preset name or {a, b, c}, got " +
                          _type_name(value), path)
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError("expected an object, got " + _type_name(value), path)
        return _build(type(default), value, path, default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("expected true or false, got " + _type_name(value), path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer, got " + _type_name(value), path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number, got " + _type_name(value), path)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError("expected a string, got " + _type_name(value), path)
        return value
    if isinstance(default, (list, tuple)):
        if not isinstance(value, list):
            raise ConfigError("expected a list, got " + _type_name(value), path)
        items = []
        for i, item in enumerate(value):
            item_path = "{}[{}]".format(path, i)
            if default:
                items.append(_coerce(item, default[0], item_path))
            elif isinstance(item, (dict, list)) or item is None:
                raise ConfigError("expected a scalar", item_path)
            else:
                items.append(item)
        return type(default)(items)
    raise ConfigError("unsupported value", path)


def _example(hint):
    """
    A value of the non-None type in ``Optional[...]``, to coerce against.
    """
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0]() if args else None


def _build(cls, data, path, default=None):
    default = default if default is not None else cls()
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        key_path = _join(path, key)
        if key not in known:
            raise ConfigError("unknown key", key_path)
        current = getattr(default, key)
        if current is None:
            example = _example(hints[key])
            if value is None or example is None:
                values[key] = value
            else:
                values[key] = _coerce(value, example, key_path)
        else:
            values[key] = _coerce(value, current, key_path)
    return dataclasses.replace(default, **values)


def config_from_dict(data):
    """
    Build a validated :class:`CliConfig` from a parsed JSON object.

    :raises ConfigError: On unknown keys, wrong types, a missing ``task``, or
        values that fail validation; the message starts with the key path.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object, got " + _type_name(data))
    if 'task' not in data:
        raise ConfigError("required key is missing", 'task')
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    train_data = {}
    blocks = {}
    for key, value in data.items():
        if key in BLOCKS:
            blocks[key] = value
        elif key in train_keys:
            train_data[key] = value
        else:
            raise ConfigError("unknown key", key)
    config = CliConfig(train=_build(TrainConfig, train_data, ''))
    for key, value in blocks.items():
        setattr(config, key, _coerce(value, getattr(config, key), key))
    config.train.validate()
    config.sweep.validate()
    config.ablation.validate()
    config.telescope.validate()
    config.rate_check.validate()
    return config


def load_config(path):
    """
    Read and validate a JSON config file.

    :raises ConfigError: If the file is unreadable, is not JSON, or fails
        :func:`config_from_dict`.
    """
    try:
        with io.open(path, encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError("cannot read config: {}".format(e.strerror or e), path)
    except ValueError as e:
        raise ConfigError("invalid JSON: {}".format(e), path)
    logger.debug("loaded config %s", path)
    return config_from_dict(data)
