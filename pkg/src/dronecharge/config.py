"""Experiment configuration files.

A config is a JSON object. Training keys use the names of the experiment
parameter table; anything not given falls back to the defaults below::

    {
      "kind": "train",
      "number_of_drones": 5,
      "learning_rate": 0.0001,
      "l2_regularization": 0.001,
      "training_set_size": 100000,
      "simulation_epoch": 100,
      "approximate_quality_k": 3,
      "weight_range_B": 0.0001,
      "bid_distribution": {"kind": "uniform", "low": 0, "high": 10},
      "seeds": [0],
      "output_dir": "runs/train"
    }

Less common training knobs (``minibatch_size``, ``train_fraction``,
``num_groups``, ``num_units``, ``eval_every``, ``loss_payment``) use their
TrainConfig names. Fleet runs read a ``"fleet"`` object whose keys are
listed in :data:`FLEET_DEFAULTS`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dronecharge.training import BidDistribution, TrainConfig

KINDS = ("train", "compare", "false-bid", "fleet", "transfer")

# config key -> TrainConfig field
TABLE_KEYS = {
    "learning_rate": "learning_rate",
    "l2_regularization": "l2_coeff",
    "training_set_size": "num_profiles",
    "simulation_epoch": "epochs",
    "approximate_quality_k": "k",
    "weight_range_B": "weight_floor",
}
PLAIN_KEYS = ("minibatch_size", "train_fraction", "num_groups", "num_units", "eval_every", "loss_payment")

FLEET_DEFAULTS: dict[str, Any] = {
    "num_drones": 15,
    "horizon": 100,
    "capacity_mAh": 1000.0,
    "amperage_draw": 65.5,
    "initial_low": 0.5,
    "initial_high": 1.0,
    "charge_rate": 1000.0,
    "slot_duration": 1.0,
    "full_recharge": True,
    "speed_multiplier": 5.5,
    "hover_power": 15.0,
    "altitude": 1.0,
    "speed": 1.0,
    "max_motor_power": 45.0,
}

TOP_LEVEL = {"kind", "number_of_drones", "bid_distribution", "seeds", "output_dir", "fleet", "checkpoint"}


@dataclass
class ExperimentSpec:
    kind: str = "train"
    num_bidders: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)
    distribution: BidDistribution = field(default_factory=BidDistribution)
    fleet: dict[str, Any] = field(default_factory=lambda: dict(FLEET_DEFAULTS))
    seeds: list[int] = field(default_factory=lambda: [0])
    output_dir: Path = Path("runs")
    checkpoint: Path | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.num_bidders < 2:
            raise ValueError("number_of_drones must be at least 2")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.kind == "transfer" and self.checkpoint is not None and not Path(self.checkpoint).exists():
            raise ValueError(f"checkpoint {self.checkpoint} does not exist")


def spec_from_dict(doc: dict[str, Any]) -> ExperimentSpec:
    unknown = set(doc) - TOP_LEVEL - set(TABLE_KEYS) - set(PLAIN_KEYS)
    if unknown:
        raise ValueError(f"unknown config key(s): {sorted(unknown)}")
    train_kwargs = {TABLE_KEYS[k]: v for k, v in doc.items() if k in TABLE_KEYS}
    train_kwargs.update({k: doc[k] for k in PLAIN_KEYS if k in doc})
    seeds = [int(s) for s in doc.get("seeds", [0])]
    train_kwargs["seed"] = seeds[0]
    fleet = dict(FLEET_DEFAULTS)
    extra = set(doc.get("fleet", {})) - set(FLEET_DEFAULTS)
    if extra:
        raise ValueError(f"unknown fleet key(s): {sorted(extra)}")
    fleet.update(doc.get("fleet", {}))
    return ExperimentSpec(
        kind=doc.get("kind", "train"),
        num_bidders=int(doc.get("number_of_drones", 5)),
        train=TrainConfig(**train_kwargs),
        distribution=BidDistribution(**doc.get("bid_distribution", {})),
        fleet=fleet,
        seeds=seeds,
        output_dir=Path(doc.get("output_dir", "runs")),
        checkpoint=Path(doc["checkpoint"]) if doc.get("checkpoint") else None,
    )


def load_spec(path: str | Path) -> ExperimentSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return spec_from_dict(doc)
