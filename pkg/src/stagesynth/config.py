"""Run configuration: a JSON document merged over built-in defaults.

Unknown keys are rejected at every level.  Defaults: 1000 steps,
soft-mask threshold 200, masked-content branch active on [800, 1000] and
[300, 400], learning rate 0.001, batch size 4.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .ema import EmaConfig
from .pipeline import AnalyticPriorFactory, BackgroundSpec, MaskSpec
from .sampler import GradedPlan
from .schedule import build_linear_schedule


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schedule": {"T": 1000, "beta_start": 1e-4, "beta_end": 0.02},
    "ema": {"t_s": 200},
    "intervals": [[800, 1000], [300, 400]],
    "denoiser": {"kind": "analytic", "offset": 2.0, "prior_var": 0.25},
    "mask": {"target_area_fraction": 0.1, "smoothness": 3.0},
    "background": {"kind": "random-field", "value": 0.0, "radius": 2.0},
    "grid": {"height": 32, "width": 32},
    "train": {"lr": 1e-3, "batch_size": 4, "steps": 500, "buckets": 10},
    "threshold": None,
    "seed": 0,
    "count": 500,
    "workers": 1,
    "output_dir": "stagesynth-out",
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def rescale_defaults(cfg: dict, T: int) -> dict:
    """Scale the default t_s and intervals to a different step count."""
    ref = DEFAULTS["schedule"]["T"]
    cfg = copy.deepcopy(cfg)
    cfg["schedule"]["T"] = T
    cfg["ema"]["t_s"] = max(1, round(DEFAULTS["ema"]["t_s"] * T / ref))
    cfg["intervals"] = [[round(lo * T / ref), round(hi * T / ref)]
                        for lo, hi in DEFAULTS["intervals"]]
    return cfg


def load_config(path=None, overrides: dict | None = None) -> dict:
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {p}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    try:
        build_plan(cfg)
        MaskSpec(**cfg["mask"])
        BackgroundSpec(**cfg["background"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["denoiser"]["kind"] != "analytic":
        raise ConfigError("only the 'analytic' denoiser kind can drive synthesis")
    for key in ("height", "width"):
        if int(cfg["grid"][key]) < 1:
            raise ConfigError(f"grid.{key} must be positive")
    if int(cfg["count"]) < 0 or int(cfg["workers"]) < 1:
        raise ConfigError("count must be >= 0 and workers >= 1")
    if cfg["threshold"] is not None and not float(cfg["threshold"]) > 0:
        raise ConfigError("threshold must be positive")
    if cfg["threshold"] is None and float(cfg["denoiser"]["offset"]) == 0.0:
        raise ConfigError("threshold must be given explicitly when denoiser.offset is 0")


def build_plan(cfg: dict) -> GradedPlan:
    s = cfg["schedule"]
    sched = build_linear_schedule(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))
    ema = EmaConfig(int(s["T"]), int(cfg["ema"]["t_s"]))
    return GradedPlan(sched, ema, tuple(tuple(iv) for iv in cfg["intervals"]), int(cfg["seed"]))


def build_factory(cfg: dict, plan: GradedPlan) -> AnalyticPriorFactory:
    d = cfg["denoiser"]
    return AnalyticPriorFactory(plan.schedule, float(d["offset"]), float(d["prior_var"]))


def residual_threshold(cfg: dict) -> float:
    if cfg["threshold"] is not None:
        return float(cfg["threshold"])
    return 0.5 * abs(float(cfg["denoiser"]["offset"]))


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
