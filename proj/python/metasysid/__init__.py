"""In-context system identification: synthetic systems, Transformer meta-models, baselines."""

import json as _json

from . import _core
from ._core import ConfigError, IntegrityError

__all__ = [
    "ConfigError",
    "IntegrityError",
    "resolve_config",
    "make_batch",
    "generate_dataset",
    "train",
    "checkpoint_info",
    "parameter_count",
    "evaluate",
    "noise_sweep",
    "shift_eval",
    "baseline_eval",
    "baseline_simulate",
    "fit_arx",
    "rmse",
]


def _dump(cfg):
    if isinstance(cfg, str):
        with open(cfg) as f:
            return f.read()
    return _json.dumps(cfg)


def resolve_config(config):
    """Fully resolved run config (dict or path) with every default filled in."""
    return _json.loads(_core.resolve_config(_dump(config)))


def make_batch(stream, iteration, eval_space=False):
    """(u, y, seeds) for one iteration; u and y have shape (batch, seq_len)."""
    return _core.make_batch(_json.dumps(stream), iteration, eval_space)


def generate_dataset(stream, seed):
    """Raw (u, y) of one random system before output normalization."""
    return _core.generate_dataset(_json.dumps(stream), seed)


def train(config, out_dir="", verbose=False):
    return _json.loads(_core.train(_dump(config), str(out_dir), verbose))


def checkpoint_info(path):
    return _json.loads(_core.checkpoint_info(str(path)))


def parameter_count(model):
    return _core.parameter_count(_json.dumps(model))


def evaluate(checkpoint, config):
    """Prediction or simulation report, depending on the checkpoint's architecture."""
    return _json.loads(_core.evaluate(str(checkpoint), _dump(config)))


def noise_sweep(checkpoint, config):
    return [_json.loads(r) for r in _core.noise_sweep(str(checkpoint), _dump(config))]


def shift_eval(checkpoint, config):
    nominal, shifted = _core.shift_eval(str(checkpoint), _dump(config))
    return _json.loads(nominal), _json.loads(shifted)


def baseline_eval(config, method="subspace"):
    return _json.loads(_core.baseline_eval(_dump(config), method))


baseline_simulate = _core.baseline_simulate
fit_arx = _core.fit_arx
rmse = _core.rmse
