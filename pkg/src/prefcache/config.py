"""Experiment configuration: YAML file merged over built-in defaults."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from .radio import RadioParams, dbm_to_watt

__all__ = ["ConfigError", "DEFAULTS", "load_config", "config_hash", "radio_params"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "out": "results",
    "layout": {"n_cells": 7, "D": 250.0},
    "radio": {
        "transmit_power_dbm": 46.0,
        "n_antennas": 4,
        "pathloss_intercept_db": 35.5,
        "pathloss_exponent": 3.76,
        "bandwidth_hz": 5e6,
        "backhaul_bps": 2e6,
        "noise_psd_dbm_per_hz": -174.0,
        "noise_figure_db": 9.0,
    },
    "demand": {
        "n_users": 20,
        "n_files": 50,
        "delta_p": 0.6,
        "delta_s": 0.4,
        "delta_a": 1.0,
        "target_sim": 0.1,
        "diverse_skew": 4.0,
        "matrices": None,
    },
    "cache": {"n_cache": None, "file_size_mb": 30.0},
    "sweep": {
        "figures": ["fig3", "fig5", "fig6"],
        "similarity": [0.1, 0.3, 0.5, 0.7, 0.9],
        "delta_a": [0.0, 0.5, 1.0, 1.5, 2.0],
        "eta": [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.5, 0.75, 1.0],
        "tau_mode": "computed",
        "mc_requests": 0,
    },
    "validate": {
        "n_requests": 1_000_000,
        "tau_samples": 100_000,
        "rate_points": 50,
        "fading_draws": 100_000,
        "rate_tol": 0.03,
        "tau_tol": 0.02,
        "delay_tol": 0.02,
    },
}

FULL_SCALE = {"demand": {"n_users": 100, "n_files": 100}}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _check(cfg: dict) -> None:
    d, c, lay = cfg["demand"], cfg["cache"], cfg["layout"]
    if lay["D"] <= 0:
        raise ConfigError("layout.D must be positive")
    for key in ("n_users", "n_files"):
        if int(d[key]) < 1:
            raise ConfigError(f"demand.{key} must be >= 1")
    for key in ("delta_p", "delta_s", "delta_a"):
        if d[key] < 0:
            raise ConfigError(f"demand.{key} must be non-negative")
    if not 0 <= d["target_sim"] <= 1:
        raise ConfigError("demand.target_sim must lie in [0, 1]")
    if c["n_cache"] is not None and not 0 <= c["n_cache"] <= d["n_files"]:
        raise ConfigError("cache.n_cache must lie in [0, n_files]")
    if c["file_size_mb"] <= 0:
        raise ConfigError("cache.file_size_mb must be positive")
    s = cfg["sweep"]
    if any(not 0 <= e <= 1 for e in s["eta"]):
        raise ConfigError("sweep.eta values must lie in [0, 1]")
    if any(not 0 <= x <= 1 for x in s["similarity"]):
        raise ConfigError("sweep.similarity values must lie in [0, 1]")
    if any(x < 0 for x in s["delta_a"]):
        raise ConfigError("sweep.delta_a values must be non-negative")
    if s["tau_mode"] not in ("computed",):
        raise ConfigError("sweep.tau_mode must be 'computed'")
    unknown = set(s["figures"]) - {"fig3", "fig5", "fig6"}
    if unknown:
        raise ConfigError(f"unknown figures {sorted(unknown)}")
    try:
        radio_params(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, overrides: dict | None = None, paper_scale: bool = False) -> dict:
    """Defaults, then full-scale sizes, then the file, then CLI overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if paper_scale:
        cfg = _merge(cfg, FULL_SCALE)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(cfg, data)
    if overrides:
        cfg = _merge(cfg, overrides)
    if cfg["cache"]["n_cache"] is None:
        cfg["cache"]["n_cache"] = max(1, round(0.1 * cfg["demand"]["n_files"]))
    _check(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def radio_params(cfg: dict) -> RadioParams:
    r = cfg["radio"]
    return RadioParams(
        transmit_power_w=dbm_to_watt(r["transmit_power_dbm"]),
        n_antennas=int(r["n_antennas"]),
        pathloss_exponent=float(r["pathloss_exponent"]),
        pathloss_intercept=10.0 ** (-float(r["pathloss_intercept_db"]) / 10.0),
        bandwidth_hz=float(r["bandwidth_hz"]),
        backhaul_bps=float(r["backhaul_bps"]),
        noise_psd_w_per_hz=dbm_to_watt(r["noise_psd_dbm_per_hz"]),
        noise_figure_db=float(r["noise_figure_db"]),
    )


def file_size_bits(cfg: dict) -> float:
    # 1 MB = 10**6 bytes
    return float(cfg["cache"]["file_size_mb"]) * 8e6
