"""TOML experiment configuration with strict validation.

An empty file yields the desk-scale defaults.  Unknown sections or keys are
rejected so typos cannot silently fall back to defaults, and every constraint
violation names the offending field.  See configs/desk.toml for the full key
reference.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .learning import ObjectiveConfig, TrainConfig
from .regularizers import Regularizer


class ConfigError(ValueError):
    pass


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_POS = ("must be > 0", lambda v: _is_num(v) and v > 0)
_NONNEG = ("must be >= 0", lambda v: _is_num(v) and v >= 0)
_POS_INT = ("must be a positive integer", lambda v: isinstance(v, int) and not isinstance(v, bool) and v > 0)
_NONNEG_INT = ("must be a nonnegative integer", lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= 0)

# section -> key -> (default, (message, predicate))
_SCHEMA = {
    "data": {
        "m": (32, _POS_INT),
        "n": (128, _POS_INT),
        "train": (512, _POS_INT),
        "val": (64, _NONNEG_INT),
        "sparsity": (0.1, ("must be in (0, 1]", lambda v: _is_num(v) and 0 < v <= 1)),
        "noise_sigma": (0.01, _NONNEG),
        "seed": (7, _NONNEG_INT),
    },
    "model": {
        "T": (1.0, _POS),
        "regularizer": ({"kind": "l1", "scale": 1.0}, None),
    },
    "objective": {
        "beta1": (1e-7, _NONNEG),
        "beta2": (1e-7, _NONNEG),
        "beta3": (1e-7, _NONNEG),
        "pnorm": (2.0, ("must be >= 1", lambda v: _is_num(v) and v >= 1)),
        "psi": ("identity", ("must be 'identity' or 'scaled'",
                             lambda v: v in ("identity", "scaled"))),
        "psi_scale": (1.0, _NONNEG),
    },
    "train": {
        "epochs": (200, _NONNEG_INT),
        "batch": (256, _POS_INT),
        "r0": (1e-3, _NONNEG),
        "momentum": (0.9, ("must be in [0, 1)", lambda v: _is_num(v) and 0 <= v < 1)),
        "seed": (1234, _NONNEG_INT),
        "lr_exp_A": (1, ("must be an integer", lambda v: isinstance(v, int))),
        "lr_exp_alpha": (3, ("must be an integer", lambda v: isinstance(v, int))),
        "lr_exp_lambda": (1, ("must be an integer", lambda v: isinstance(v, int))),
        "alpha0": (2.0, _NONNEG),
        "lambda0": (0.05, _NONNEG),
        "alpha_max": (1e6, _POS),
        "lambda_max": (1e6, _POS),
    },
    "sweep": {
        "layers": ([4, 8, 16, 32],
                   ("must be a strictly increasing list of positive integers",
                    lambda v: isinstance(v, list) and len(v) > 0
                    and all(isinstance(x, int) and x > 0 for x in v)
                    and all(b > a for a, b in zip(v, v[1:])))),
    },
}


@dataclass
class RunConfig:
    """All validated configuration groups for one experiment run."""

    data: dict
    T: float
    reg: Regularizer
    ocfg: ObjectiveConfig
    tcfg: TrainConfig
    layers: list

    def as_dict(self) -> dict:
        return {
            "data": dict(self.data),
            "model": {"T": self.T, "regularizer": self.reg.to_dict()},
            "objective": {"beta1": self.ocfg.beta1, "beta2": self.ocfg.beta2,
                          "beta3": self.ocfg.beta3, "pnorm": self.ocfg.pnorm,
                          "psi": self.ocfg.psi, "psi_scale": self.ocfg.psi_scale},
            "train": {"epochs": self.tcfg.epochs, "batch": self.tcfg.batch_size,
                      "r0": self.tcfg.r0, "momentum": self.tcfg.momentum,
                      "seed": self.tcfg.seed,
                      "lr_exp_A": self.tcfg.lr_exponents[0],
                      "lr_exp_alpha": self.tcfg.lr_exponents[1],
                      "lr_exp_lambda": self.tcfg.lr_exponents[2],
                      "alpha0": self.tcfg.alpha0, "lambda0": self.tcfg.lambda0,
                      "alpha_max": self.tcfg.alpha_max,
                      "lambda_max": self.tcfg.lambda_max},
            "sweep": {"layers": list(self.layers)},
        }


def _validate_regularizer(v):
    if not isinstance(v, dict):
        raise ConfigError("model.regularizer must be a table {kind = ..., scale = ...}")
    unknown = set(v) - {"kind", "scale"}
    if unknown:
        raise ConfigError(f"unknown key(s) in model.regularizer: {sorted(unknown)}")
    kind = v.get("kind", "l1")
    if kind not in ("l1", "squared_l2", "zero"):
        raise ConfigError("model.regularizer.kind must be 'l1', 'squared_l2' or 'zero'")
    scale = v.get("scale", 1.0)
    if not (_is_num(scale) and scale > 0):
        raise ConfigError("model.regularizer.scale must be > 0")
    return Regularizer(kind=kind, scale=float(scale))


def load_config(path) -> RunConfig:
    """Parse and validate a TOML config file, filling desk-scale defaults."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: parse error: {e}") from e

    unknown = set(raw) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    resolved = {}
    for section, keys in _SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{section}] must be a table")
        bad = set(given) - set(keys)
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}")
        out = {}
        for key, (default, check) in keys.items():
            v = given.get(key, default)
            if check is not None:
                msg, pred = check
                if not pred(v):
                    raise ConfigError(f"{section}.{key} {msg} (got {v!r})")
            out[key] = v
        resolved[section] = out

    reg = _validate_regularizer(resolved["model"]["regularizer"])
    o = resolved["objective"]
    t = resolved["train"]
    return RunConfig(
        data=resolved["data"],
        T=float(resolved["model"]["T"]),
        reg=reg,
        ocfg=ObjectiveConfig(beta1=float(o["beta1"]), beta2=float(o["beta2"]),
                             beta3=float(o["beta3"]), pnorm=float(o["pnorm"]),
                             psi=o["psi"], psi_scale=float(o["psi_scale"])),
        tcfg=TrainConfig(epochs=t["epochs"], batch_size=t["batch"],
                         r0=float(t["r0"]), momentum=float(t["momentum"]),
                         lr_exponents=(t["lr_exp_A"], t["lr_exp_alpha"],
                                       t["lr_exp_lambda"]),
                         seed=t["seed"], alpha_max=float(t["alpha_max"]),
                         lambda_max=float(t["lambda_max"]),
                         alpha0=float(t["alpha0"]), lambda0=float(t["lambda0"])),
        layers=list(resolved["sweep"]["layers"]),
    )
