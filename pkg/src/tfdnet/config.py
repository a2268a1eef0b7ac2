"""Run configuration: a JSON tree with every default filled in."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .blocks import ModelConfig
from .data import CATALOG
from .training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "data": {"path": "data/ETTh1.csv", "catalog": "ETTh1", "split": None},
    "model": {
        "seq_len": 336,
        "pred_len": 96,
        "scales": [8, 16, 32],
        "strides": [4, 8, 16],
        "mode": "MK",
        "individual_factor": None,
        "n_kernels": 4,
        "ma_kernel": 25,
        "revin_affine": False,
    },
    "training": {
        "lr": 5e-4,
        "batch_size": 128,
        "epochs": 50,
        "patience": 10,
        "seed": 2024,
        "loss": "mixture",
        "clip": 5.0,
    },
    "out_dir": "runs/default",
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict, where: str):
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config field {where}{key}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config field {where}{key} must be an object")
            _merge(base[key], val, f"{where}{key}.")
        else:
            base[key] = val


@dataclass
class RunConfig:
    data_path: str
    catalog: str | None
    split: tuple[float, float, float]
    model: dict
    training: TrainConfig
    out_dir: str

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        tree = default_config()
        _merge(tree, raw, "")
        d = tree["data"]
        if d["catalog"] is not None and d["catalog"] not in CATALOG:
            raise ConfigError(f"data.catalog {d['catalog']!r} is not one of {sorted(CATALOG)}")
        split = d["split"]
        if split is None:
            split = CATALOG[d["catalog"]].split_ratio if d["catalog"] else (0.7, 0.1, 0.2)
        if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"data.split must be three non-negative ratios summing to 1, got {split}")
        m = tree["model"]
        if len(m["scales"]) != len(m["strides"]):
            raise ConfigError(f"model.scales ({len(m['scales'])} entries) and model.strides "
                              f"({len(m['strides'])} entries) must have equal length")
        for S, l in zip(m["scales"], m["strides"]):
            if not 1 <= l <= S:
                raise ConfigError(f"model.strides entry {l} must satisfy 1 <= stride <= scale {S}")
            if S % 2:
                raise ConfigError(f"model.scales entry {S} must be even")
        if m["mode"] not in ("IK", "MK"):
            raise ConfigError(f"model.mode must be one of IK|MK, got {m['mode']!r}")
        if m["mode"] == "MK" and m["n_kernels"] < 1:
            raise ConfigError(f"model.n_kernels must be >= 1 for MK, got {m['n_kernels']}")
        if m["mode"] == "IK" and m["individual_factor"] is not None and m["individual_factor"] < 1:
            raise ConfigError(f"model.individual_factor must be >= 1, got {m['individual_factor']}")
        try:
            training = TrainConfig(**tree["training"]).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(d["path"], d["catalog"], tuple(split), m, training, tree["out_dir"])

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def model_config(self, n_channels: int) -> ModelConfig:
        m = self.model
        if m["mode"] == "IK":
            I = n_channels if m["individual_factor"] is None else m["individual_factor"]
            if not 1 <= I <= n_channels:
                raise ConfigError(f"model.individual_factor must satisfy 1 <= I <= D={n_channels}, got {I}")
        try:
            return ModelConfig(n_channels=n_channels, **m).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
