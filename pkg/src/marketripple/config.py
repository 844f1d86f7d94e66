"""Declarative run configuration and the reproducibility manifest.

One JSON document drives every subcommand. Unknown keys are rejected so a
typo cannot silently fall back to a default. Each run writes a manifest
(command, config hash, seed, version) from which the outputs can be
regenerated exactly.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from typing import Any, Dict, Optional

from . import __version__
from .diffusion import DiffusionParams
from .errors import ConfigError
from .graph import RelationKind

DEFAULTS: Dict[str, Any] = {
    "paths": {
        "edges": None,
        "cpc": None,
        "returns": None,
        "factors": None,
        "events": None,
        "truth_impacts": None,
    },
    "model": "capm",
    "seed": None,
    "output_dir": "out",
    "graph": {
        "layer_weights": {k.value: 0.25 for k in RelationKind},
    },
    "pricing": {
        "window": 252,
        "min_obs": 60,
    },
    "reward": {
        "lambda": 0.1,
        "absolute_coverage": True,
    },
    "diffusion": {
        "decays": {k.value: 0.5 for k in RelationKind},
        "hops": 2,
        "seed_scale": 1.0,
        "seed_score": 8,
    },
    "alignment": {
        "epochs": 8,
        "sigma_explore": 0.1,
        "learning_rate": 0.05,
        "clip_epsilon": 0.2,
        "baseline_decay": 0.1,
        "holdout_months": 0,
    },
    "evaluation": {
        "controls": "ff5",
        "min_cross_section": 10,
        "timeout_seconds": 30.0,
        "edge_budget": 500,
        "null_claims": 10,
    },
    "portfolio": {
        "decile": 0.10,
        "vol_window": 30,
        "lambda_risk": 1.0,
        "risk_free": 0.0,
    },
    "synth": {
        "firms": 100,
        "events": 500,
        "months": 24,
        "event_sparsity": 12,
        "firm_sparsity": 125,
        "beta_low": 0.5,
        "beta_high": 1.5,
        "market_drift": 0.0002,
        "market_vol": 0.01,
        "risk_free": 0.0,
        "noise_vol": 0.0005,
        "impact_scale": 0.01,
        "warmup_months": 6,
        "start": "2019-01-01",
        "edges_per_layer": 0,
        "negative_edge_share": 0.15,
        "true_decay": 0.7,
        "true_hops": 2,
        "true_seed_scale": 1.0,
        "seed_score": 8,
    },
}


def default_config() -> Dict[str, Any]:
    return copy.deepcopy(DEFAULTS)


def _merge(base: Dict[str, Any], override: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict) and not path.endswith("layer_weights"):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Defaults, overlaid by the config file, overlaid by CLI overrides."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                document = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(document, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        cfg = _merge(cfg, document)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def config_hash(cfg: Dict[str, Any]) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()


def require_seed(cfg: Dict[str, Any]) -> int:
    seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("this command requires a seed (config key 'seed' or --seed)")
    return int(seed)


def require_path(cfg: Dict[str, Any], key: str) -> str:
    value = cfg["paths"].get(key)
    if not value:
        raise ConfigError(f"config paths.{key} is required for this command")
    if not os.path.exists(value):
        raise ConfigError(f"paths.{key}: no such file: {value}")
    return value


def layer_weights_from(cfg: Dict[str, Any]) -> Dict[RelationKind, float]:
    return {
        RelationKind.from_name(name): float(w)
        for name, w in cfg["graph"]["layer_weights"].items()
    }


def diffusion_params_from(cfg: Dict[str, Any]) -> DiffusionParams:
    d = cfg["diffusion"]
    return DiffusionParams(
        decays={RelationKind.from_name(n): float(g) for n, g in d["decays"].items()},
        hops=int(d["hops"]),
        seed_scale=float(d["seed_scale"]),
    )


def write_manifest(out_dir: str, command: str, cfg: Dict[str, Any]) -> str:
    """Record command, config hash, seed, version, and the resolved config
    itself, so the run can be regenerated from the manifest alone."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "seed": cfg.get("seed"),
        "version": __version__,
        "config": cfg,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
