"""Experiment config files.

A config is a YAML mapping with two top-level keys (experiment, seed) and
one mapping per section. Every key is declared in SCHEMA; load_config()
fills in defaults and returns a dict of dicts. Errors are ConfigFileError
instances anchored at the line of the offending key.

"""
import logging
import math
import typing
from dataclasses import dataclass

import yaml

from .exceptions import ConfigFileError
from .linpde import ADVECTION_SCHEMES
from .problem import EXAMPLES
from .problem import ORACLES
from .problem import TERMINALS

log = logging.getLogger('smallpia')

EXPERIMENTS = (
    'pia',
    'gia',
    'reference_only',
    'stability_pde',
    'stability_argmax',
    'mc_crosscheck',
    'figures',
)
PDE_MODES = ('additive_noise', 'coarse_solve')
ARGMAX_MODES = ('constant_offset', 'state_noise')
ALGORITHMS = ('pia', 'gia')


@dataclass(frozen=True)
class Key:
    kind: str
    default: typing.Any = None
    choices: typing.Optional[typing.Sequence] = None
    positive: bool = False
    nonnegative: bool = False
    nullable: bool = False
    required: bool = False


SCHEMA = {
    None: {
        'experiment': Key('str', choices=EXPERIMENTS, required=True),
        'seed': Key('int', 0, nonnegative=True),
    },
    'problem': {
        'name': Key('str', 'example_s1k1', choices=tuple(sorted(EXAMPLES))),
        'T': Key('float', 1.0, positive=True),
        'oracle': Key('str', 'closed_form', choices=ORACLES),
        'terminal': Key('str', 'arctan', choices=tuple(TERMINALS)),
        'n_a': Key('int', 2001, positive=True),
        'tol_a': Key('float', 1e-10, positive=True),
        'control_set': Key('interval', None, nullable=True),
    },
    'grid': {
        'x_min': Key('float', -6.0),
        'x_max': Key('float', 6.0),
        'nx': Key('int', 599, positive=True),
        'nt': Key('int', 400, positive=True),
        'advection': Key('str', 'upwind', choices=ADVECTION_SCHEMES),
    },
    'reference': {
        'inner_tol': Key('float', 1e-12, positive=True),
        'inner_max': Key('int', 50, positive=True),
        'floor': Key('bool', True),
        'floor_space': Key('int', 2, positive=True),
        'floor_time': Key('int', 4, positive=True),
    },
    'iterate': {
        'max_iters': Key('int', 20, positive=True),
        'stop_tol': Key('float', 1e-10, positive=True),
        'a0': Key('float', 0.0),
        'policy_tol': Key('float', None, positive=True, nullable=True),
        'floor_ratio': Key('float', 0.9, positive=True),
        'monotone_tol': Key('float', 1e-8, nonnegative=True),
    },
    'perturb': {
        'algorithms': Key('str_list', ['pia', 'gia'], choices=ALGORITHMS),
        'pde_mode': Key('str', 'additive_noise', choices=PDE_MODES),
        'pde_amplitudes': Key('float_list', [1e-2, 1e-3], nonnegative=True),
        'argmax_mode': Key('str', 'constant_offset', choices=ARGMAX_MODES),
        'argmax_amplitudes': Key('float_list', [0.2, 0.1, 0.05], nonnegative=True),
        'plateau_window': Key('int', 3, positive=True),
    },
    'montecarlo': {
        'n_paths': Key('int', 200_000, positive=True),
        'n_steps': Key('int', 400, positive=True),
        'antithetic': Key('bool', True),
        'block_size': Key('int', 10_000, positive=True),
        'points': Key(
            'point_list',
            [[0.0, 0.0], [0.0, -1.5], [0.0, 1.5], [0.5, -0.5], [0.5, 2.0]],
        ),
        'iters': Key('int_list', [5], nonnegative=True),
    },
    'output': {
        'write_fields': Key('bool', False),
        'timings': Key('bool', False),
    },
}


def load_config(path):
    """Read, validate and complete the config file at path."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigFileError(f"cannot read config: {e.strerror}", path) from e
    return parse_config(text, path)


def parse_config(text, path='<config>'):
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        line = mark.line + 1 if mark is not None else 1
        raise ConfigFileError(f"invalid YAML: {getattr(e, 'problem', e)}", path, line) from e

    if data is None:
        data, root = {}, None
    if not isinstance(data, dict):
        raise ConfigFileError("config must be a mapping", path, 1)
    lines = _key_lines(root)

    def error(message, section, key=None):
        return ConfigFileError(message, path, lines.get((section, key), 1))

    config = {}
    for section, value in data.items():
        if section in SCHEMA[None]:
            continue
        if section not in SCHEMA:
            raise error(f"unknown key {section!r}", None, section)
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise error(f"section {section!r} must be a mapping", None, section)
        for key in value:
            if key not in SCHEMA[section]:
                raise error(f"unknown key {section}.{key}", section, key)

    for section, keys in SCHEMA.items():
        if section is None:
            values = data
        else:
            values = data.get(section) or {}
        out = {}
        for name, key in keys.items():
            full_name = f"{section}.{name}" if section else name
            if name not in values:
                if key.required:
                    raise error(f"missing required key {full_name!r}", section, name)
                out[name] = key.default
                continue
            try:
                out[name] = _coerce(key, values[name])
            except ValueError as e:
                raise error(f"{full_name}: {e}", section, name) from None
        if section is None:
            config.update(out)
        else:
            config[section] = out

    _check_consistency(config, error)
    log.debug("loaded config from %s: %r", path, config)
    return config


def _key_lines(root):
    """(section, key) -> 1-based line; top-level keys are (None, key)."""
    lines = {}
    if not isinstance(root, yaml.MappingNode):
        return lines
    for key_node, value_node in root.value:
        name = key_node.value
        lines[(None, name)] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                lines[(name, sub_key.value)] = sub_key.start_mark.line + 1
    return lines


def _coerce(key, value):
    if value is None:
        if key.nullable:
            return None
        raise ValueError("must not be empty")

    kind = key.kind
    if kind == 'float':
        result = _float(value)
    elif kind == 'int':
        result = _int(value)
    elif kind == 'bool':
        if not isinstance(value, bool):
            raise ValueError(f"expected true or false, got {value!r}")
        return value
    elif kind == 'str':
        result = str(value)
    elif kind == 'interval':
        pair = _list(value, _float)
        if len(pair) != 2 or pair[0] > pair[1]:
            raise ValueError(f"expected [lo, hi] with lo <= hi, got {value!r}")
        return pair
    elif kind == 'point_list':
        points = [_list(item, _float) for item in _list(value, lambda v: v)]
        if any(len(p) != 2 for p in points):
            raise ValueError(f"expected a list of [t, x] pairs, got {value!r}")
        return points
    elif kind.endswith('_list'):
        item = {'float_list': _float, 'int_list': _int, 'str_list': str}[kind]
        items = _list(value, item)
        for v in items:
            _check(key, v)
        return items
    else:
        raise AssertionError(f"unknown key kind {kind!r}")

    _check(key, result)
    return result


def _check(key, value):
    if key.choices is not None and value not in key.choices:
        raise ValueError(f"expected one of {', '.join(key.choices)}, got {value!r}")
    if key.positive and not value > 0:
        raise ValueError(f"must be positive, got {value!r}")
    if key.nonnegative and not value >= 0:
        raise ValueError(f"must not be negative, got {value!r}")


def _float(value):
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    try:
        result = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected a number, got {value!r}") from None
    if not math.isfinite(result):
        raise ValueError(f"expected a finite number, got {value!r}")
    return result


def _int(value):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ValueError(f"expected an integer, got {value!r}")
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"expected an integer, got {value!r}") from None


def _list(value, item):
    if not isinstance(value, list):
        raise ValueError(f"expected a list, got {value!r}")
    return [item(v) for v in value]


def _check_consistency(config, error):
    grid = config['grid']
    if not grid['x_min'] < grid['x_max']:
        raise error("grid.x_min must be less than grid.x_max", 'grid', 'x_max')
    if config['grid']['nx'] < 3:
        raise error("grid.nx must be at least 3", 'grid', 'nx')
    montecarlo = config['montecarlo']
    if montecarlo['antithetic'] and (
        montecarlo['n_paths'] % 2 or montecarlo['block_size'] % 2
    ):
        raise error(
            "antithetic sampling needs even n_paths and block_size",
            'montecarlo',
            'antithetic',
        )
    if config['perturb']['pde_mode'] == 'coarse_solve':
        for factor in config['perturb']['pde_amplitudes']:
            if factor != int(factor) or factor < 2:
                raise error(
                    "coarse_solve amplitudes are coarsening factors (integers >= 2)",
                    'perturb',
                    'pde_amplitudes',
                )
        nx, nt = grid['nx'], grid['nt']
        for factor in config['perturb']['pde_amplitudes']:
            if (nx + 1) % factor or nt % factor:
                raise error(
                    f"cannot coarsen nx={nx}, nt={nt} by {factor:g}: "
                    "nx + 1 and nt must both be multiples of it",
                    'perturb',
                    'pde_amplitudes',
                )
    control_set = config['problem']['control_set']
    if control_set is not None:
        lo, hi = control_set
        if not (-math.pi / 2 <= lo and hi <= math.pi / 2):
            raise error(
                f"problem.control_set must lie in [-pi/2, pi/2], got {control_set}",
                'problem',
                'control_set',
            )
