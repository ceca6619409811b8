"""Flat ``key = value`` configuration with ``EXSIN_`` environment overrides.

Environment variables map to keys by dropping the prefix, lower-casing and
replacing ``__`` with ``.``: ``EXSIN_LOSS__ALPHA1=5`` sets ``loss.alpha1``.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional

from .errors import InvalidParameterError

ENV_PREFIX = "EXSIN_"

DEFAULTS: Dict[str, object] = {
    "plan": "St1Se3Te3",
    "schedule.k": 2.0,
    "schedule.base_short": 32,
    "schedule.max_long": 256,
    "model.channels": 32,
    "model.conv_layers": 5,
    "model.kernel": 3,
    "model.noise_dim": 8,
    "model.pe_channels": 8,
    "model.norm": "instance",
    "loss.alpha1": 10.0,
    "loss.alpha2": 10.0,
    "loss.lambda_p": 0.1,
    "loss.gp_coef": 10.0,
    "train.seed": 0,
    "train.d_steps": 3,
    "train.g_steps": 3,
    "train.fixed_math": False,
    "train.structural.epochs": 10000,
    "train.structural.lr": 1e-4,
    "train.structural.batch": 32,
    "train.structural.d_steps": 1,
    "train.structural.g_steps": 1,
    "train.stage.epochs": 2000,
    "train.stage.lr": 5e-4,
    "train.stage.batch": 1,
    "prior.backend": "real",
    "prior.extractor": "vgg",
    "prior.stddevs": "0.1,0.2,0.3,0.4,0.5",
    "prior.per_stddev": 100,
    "prior.copies": 150,
    "prior.invert_steps": 500,
    "prior.fine_tune": True,
    "prior.seed": 0,
    "prior.mock_latent": 8,
    "prior.mock_size": 128,
    "metrics.extractor": "inception",
    "metrics.layer": 0,
    "tasks.radius": 0,
}

MOCK_OVERRIDES = {"prior.backend": "mock", "prior.extractor": "mock", "metrics.extractor": "mock"}


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if not isinstance(raw, str):
        return type(default)(raw)
    text = raw.strip()
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise InvalidParameterError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(text)
    except ValueError as exc:
        raise InvalidParameterError(f"{key}: expected {type(default).__name__}, got {raw!r}") from exc


def _check_key(key: str):
    if key not in DEFAULTS:
        raise InvalidParameterError(f"unknown config key {key!r}; valid keys:\n  " + "\n  ".join(sorted(DEFAULTS)))


def parse_lines(lines: Iterable[str]) -> Dict[str, str]:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {n}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides: Optional[Mapping[str, object]] = None,
                environ: Optional[Mapping[str, str]] = None) -> Dict[str, object]:
    """Resolve defaults <- file <- environment <- explicit overrides."""
    cfg = dict(DEFAULTS)
    layers = []
    if path is not None:
        layers.append(parse_lines(Path(path).read_text().splitlines()))
    env = os.environ if environ is None else environ
    layers.append({k[len(ENV_PREFIX):].lower().replace("__", "."): v
                   for k, v in env.items() if k.startswith(ENV_PREFIX)})
    layers.append(dict(overrides or {}))
    for layer in layers:
        for key, value in layer.items():
            _check_key(key)
            cfg[key] = _coerce(key, value)
    return cfg


def dump_config(cfg: Mapping[str, object]) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in sorted(cfg.items()))


# --- builders ---------------------------------------------------------------

def train_config(cfg):
    from .training import StageConfig, StructuralConfig, TrainConfig

    return TrainConfig(
        structural=StructuralConfig(epochs=cfg["train.structural.epochs"], lr=cfg["train.structural.lr"],
                                    batch=cfg["train.structural.batch"], d_steps=cfg["train.structural.d_steps"],
                                    g_steps=cfg["train.structural.g_steps"]),
        stage=StageConfig(epochs=cfg["train.stage.epochs"], lr=cfg["train.stage.lr"], batch=cfg["train.stage.batch"]),
        d_steps=cfg["train.d_steps"], g_steps=cfg["train.g_steps"], seed=cfg["train.seed"])


def loss_weights(cfg):
    from .losses import LossWeights

    return LossWeights(alpha1=cfg["loss.alpha1"], alpha2=cfg["loss.alpha2"], lambda_p=cfg["loss.lambda_p"],
                       gp_coef=cfg["loss.gp_coef"])


def prior_config(cfg):
    from .training import PriorConfig

    stddevs = tuple(float(s) for s in str(cfg["prior.stddevs"]).split(",") if s.strip())
    return PriorConfig(stddevs=stddevs, per_stddev=cfg["prior.per_stddev"], copies=cfg["prior.copies"],
                       invert_steps=cfg["prior.invert_steps"], fine_tune=cfg["prior.fine_tune"],
                       seed=cfg["prior.seed"])


def model_kwargs(cfg):
    return {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("model.")}


def make_backend(cfg):
    from .priors import get_backend

    if cfg["prior.backend"] == "mock":
        m, s = cfg["prior.mock_latent"], cfg["prior.mock_size"]
        return get_backend("mock", latent_shape=(3, m, m), native_size=(s, s))
    return get_backend(cfg["prior.backend"])


def make_extractor(cfg, key="prior.extractor"):
    from .priors import get_extractor

    return get_extractor(cfg[key])
