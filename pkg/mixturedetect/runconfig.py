"""
Run configuration

A RunConfig is the merged view of the scene, network and pipeline configs
plus evaluation and experiment settings. Files are flat `key=value` text
(`#` starts a comment); files ending in .json hold the same keys as one
flat object. Command-line flags override the file, the file overrides
the defaults.

Keys are the config field names in lower case ('k' for the component
count, 'infer_batch_size' for the pipeline batch size). 'seed' seeds the
scene generator and the network alike. Tuples are comma separated;
conv_blocks are written as 16x3x1,32x3x2,...
"""


import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from .mderror import ConfigurationError, FormatError
from .network import NetworkConfig
from .pipeline import PipelineConfig
from .synthdata import SceneConfig


# importorator
__all__ = ['RunConfig', 'config_keys', 'read_config_file', 'build_run_config']

logger = logging.getLogger(__name__)

MATCH_METHODS = ('optimal', 'greedy')
_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    # evaluation
    radius: float = 6.0
    match_method: str = 'optimal'

    # training targets
    n_samples: int = 10
    dilation_radius: float = 6.0

    # experiments / commands
    seed: int = 0
    images: int = 4
    drop: float = 0.3
    out: str = None

    def validate(self):
        patch_size = self.network.patch_size
        self.network.validate()
        self.scene.validate(patch_size)
        self.pipeline.validate(patch_size)
        if self.radius < 0:
            raise ConfigurationError('radius', f'must be >= 0, got {self.radius}')
        if self.match_method not in MATCH_METHODS:
            raise ConfigurationError('match_method', f'must be one of {MATCH_METHODS}')
        if self.n_samples < 1:
            raise ConfigurationError('n_samples', 'must be >= 1')
        if self.dilation_radius < 0:
            raise ConfigurationError('dilation_radius', 'must be >= 0')
        if not 0.0 <= self.drop < 1.0:
            raise ConfigurationError('drop', f'fraction must lie in [0, 1), got {self.drop}')
        return self


_SECTIONS = (('scene', SceneConfig), ('network', NetworkConfig), ('pipeline', PipelineConfig))


def config_keys():
    """flat key -> (section or None, field name, field type)"""
    table = {}
    for section, cls in _SECTIONS:
        for f in fields(cls):
            if f.name == 'seed':
                continue
            key = f.name.lower()
            if section == 'pipeline' and key == 'batch_size':
                key = 'infer_batch_size'
            table[key] = (section, f.name, f.type)
    for f in fields(RunConfig):
        if f.name not in dict(_SECTIONS):
            table[f.name] = (None, f.name, f.type)
    return table


def _coerce(key, kind, value):
    if value is None:
        return None
    if not isinstance(value, str):
        # already typed (json or command line)
        return tuple(value) if kind is tuple else value

    text = value.strip()
    if text.lower() in ('', 'none'):
        return None
    try:
        if kind is tuple:
            if key == 'conv_blocks':
                return tuple(tuple(int(v) for v in block.split('x')) for block in text.split(','))
            return tuple(float(v) for v in text.split(','))
        if kind is bool:
            if text.lower() in _TRUE + _FALSE:
                return text.lower() in _TRUE
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as ex:
        raise ConfigurationError(key, f'cannot parse {value!r}') from ex


def read_config_file(path):
    """
    Reads a key=value (or flat json) config file into a dict of raw values

    :raises FormatError: on lines that are not key=value
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == '.json':
        try:
            values = json.loads(text)
        except ValueError as ex:
            raise FormatError(path, f'bad json: {ex}') from ex
        if not isinstance(values, dict):
            raise FormatError(path, 'expected a flat json object')
        return {str(k).lower(): v for k, v in values.items()}

    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise FormatError(path, f'line {n}: expected key=value')
        key, value = line.split('=', 1)
        values[key.strip().lower()] = value.strip()
    return values


def build_run_config(values=None, overrides=None):
    """
    Merges defaults, file values and overrides into a validated RunConfig

    :param values: dict from read_config_file
    :param overrides: dict of already-typed values (None entries are skipped)
    :raises ConfigurationError: on unknown keys or invalid values
    """
    config = RunConfig()
    table = config_keys()
    merged = dict(values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    for key, value in merged.items():
        if key == 'seed':
            continue
        if key not in table:
            raise ConfigurationError(key, 'unknown config key')
        section, name, kind = table[key]
        target = config if section is None else getattr(config, section)
        setattr(target, name, _coerce(key, kind, value))

    if 'seed' in merged:
        seed = _coerce('seed', int, merged['seed'])
        config.seed = seed
        config.scene.seed = seed
        config.network.seed = seed

    # re-run normalization of tuple fields after assignment
    config.scene.__post_init__()
    config.network.__post_init__()
    return config.validate()
