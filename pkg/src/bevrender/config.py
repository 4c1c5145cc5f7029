"""Experiment configuration: JSON file plus flag overrides.

A config document is a single JSON object; every CLI flag has a config
equivalent and flags win. Two scale presets exist: "desk" (default,
sized for quick runs) and "paper" (the full-size constants: 64 samples
between 3 m and 80 m, a 768x704 grid over 56.83 m x 52.096 m).
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Any

from .bevgrid import BevSpec
from .errors import ConfigurationError, DataError
from .geometry import Intrinsics
from .renderer import RenderConfig
from .trainer import FrameOffsetPolicy, TrainConfig

ENV_SEED = "RENDBEV_SEED"

_DESK_DEFAULTS: dict[str, Any] = {
    "seed": None,
    "scale": "desk",
    "scene": {"seed": 0, "difficulty": "static"},
    "sequence": {"frames": 40, "step_m": 0.5, "yaw_rate": 0.0,
                 "corruption_rate": 0.0},
    "camera": {"fx": 128.0, "fy": 128.0, "cx": 128.0, "cy": 64.0,
               "width": 256, "height": 128},
    "render": {"m": 64, "z_near": 3.0, "z_far": 40.0, "jitter": True,
               "tau": 0.2, "patch_size": 16},
    "bev": {"rows": 128, "cols": 128, "depth_extent": 25.6,
            "lateral_extent": 25.6, "origin_x": -12.8, "origin_z": 3.2},
    "train": {"lr": 0.005, "momentum": 0.9, "weight_decay": 1e-5,
              "nesterov": True, "iterations": 500, "patches_total": 192,
              "patch_size": 16},
    "policy": {"adjacent": [-1, 1],
               "future_ranges": [[5, 11], [12, 18], [19, 25], [26, 32], [33, 39]],
               "enabled_future": True},
    "field": "per_frame",
    "loss": {"epsilon": 1e-6, "class_weights": None},
    "reference": 0,
    "sigma_solid": 50.0,
    "threads": 1,
}

_PAPER_OVERRIDES: dict[str, Any] = {
    "render": {"m": 64, "z_near": 3.0, "z_far": 80.0},
    "bev": {"rows": 768, "cols": 704, "depth_extent": 56.83,
            "lateral_extent": 52.096, "origin_x": -26.048, "origin_z": 3.0},
}


def _deep_update(base: dict, extra: dict) -> dict:
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


@dataclass
class ExperimentConfig:
    doc: dict = field(default_factory=lambda: copy.deepcopy(_DESK_DEFAULTS))

    @staticmethod
    def load(path=None, overrides: dict | None = None,
             scale: str | None = None) -> "ExperimentConfig":
        """Defaults, then the scale preset, then the file, then overrides."""
        doc = copy.deepcopy(_DESK_DEFAULTS)
        file_doc: dict = {}
        if path is not None:
            try:
                with open(path, "r", encoding="ascii") as fh:
                    file_doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read config {path}: {exc}") from exc
        eff_scale = scale or file_doc.get("scale") or doc["scale"]
        if eff_scale not in ("desk", "paper"):
            raise ConfigurationError(f"unknown scale {eff_scale!r}")
        if eff_scale == "paper":
            _deep_update(doc, copy.deepcopy(_PAPER_OVERRIDES))
        _deep_update(doc, file_doc)
        if overrides:
            _deep_update(doc, overrides)
        doc["scale"] = eff_scale
        return ExperimentConfig(doc)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def resolved_seed(self, flag_seed: int | None = None) -> int:
        """Flag beats config beats the RENDBEV_SEED env var beats 0."""
        if flag_seed is not None:
            return int(flag_seed)
        if self.doc.get("seed") is not None:
            return int(self.doc["seed"])
        env = os.environ.get(ENV_SEED)
        if env is not None:
            try:
                return int(env)
            except ValueError as exc:
                raise ConfigurationError(f"{ENV_SEED} must be an integer") from exc
        return 0

    def intrinsics(self) -> Intrinsics:
        c = self.doc["camera"]
        return Intrinsics(fx=float(c["fx"]), fy=float(c["fy"]), cx=float(c["cx"]),
                          cy=float(c["cy"]), width=int(c["width"]),
                          height=int(c["height"]))

    def render_config(self) -> RenderConfig:
        r = self.doc["render"]
        return RenderConfig(m=int(r["m"]), z_near=float(r["z_near"]),
                            z_far=float(r["z_far"]), jitter=bool(r["jitter"]),
                            tau=float(r["tau"]), patch_size=int(r["patch_size"]))

    def bev_spec(self) -> BevSpec:
        b = self.doc["bev"]
        return BevSpec(rows=int(b["rows"]), cols=int(b["cols"]),
                       depth_extent=float(b["depth_extent"]),
                       lateral_extent=float(b["lateral_extent"]),
                       origin_x=float(b["origin_x"]),
                       origin_z=float(b["origin_z"]))

    def train_config(self, seed: int) -> TrainConfig:
        t = self.doc["train"]
        return TrainConfig(lr=float(t["lr"]), momentum=float(t["momentum"]),
                           weight_decay=float(t["weight_decay"]),
                           nesterov=bool(t["nesterov"]),
                           iterations=int(t["iterations"]),
                           patches_total=int(t["patches_total"]),
                           patch_size=int(t["patch_size"]), seed=seed)

    def policy(self) -> FrameOffsetPolicy:
        p = self.doc["policy"]
        return FrameOffsetPolicy(
            adjacent=tuple(int(v) for v in p["adjacent"]),
            future_ranges=tuple((int(a), int(b)) for a, b in p["future_ranges"]),
            enabled_future=bool(p["enabled_future"]))

    def field_policy(self) -> str:
        f = self.doc["field"]
        if f not in ("per_frame", "reference_shadow"):
            raise ConfigurationError(f"field policy must be per_frame or "
                                     f"reference_shadow, got {f!r}")
        return f
