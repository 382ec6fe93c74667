"""Drone batteries, private valuations and the charging-station simulation.

Each step the station runs one auction among the drones still flying. The
winner is recharged, then every flying drone (winner included) burns one
step of flight energy. A drone whose battery reaches zero is discharged for
good and stops bidding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from dronecharge.auction import run_auction_batch, spa0_batch
from dronecharge.mononet import MonoNetParams


@dataclass
class DroneState:
    capacity_mAh: float
    residual_mAh: float
    amperage_draw: float
    discharge_coeff: float = 1.0
    discharged: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.residual_mAh <= self.capacity_mAh:
            raise ValueError(f"residual {self.residual_mAh} outside [0, {self.capacity_mAh}]")
        if not self.amperage_draw > 0:
            raise ValueError("amperage draw must be positive")


@dataclass(frozen=True)
class StationConfig:
    charge_rate: float = 1000.0
    slot_duration: float = 1.0
    full_recharge: bool = True

    def __post_init__(self) -> None:
        if not (self.charge_rate > 0 and self.slot_duration > 0):
            raise ValueError("charge rate and slot duration must be positive")

    @property
    def slot_energy(self) -> float:
        return self.charge_rate * self.slot_duration


@dataclass(frozen=True)
class EnergyModel:
    """Flight energy ``(hover_power + speed_multiplier * altitude) * t + max_motor_power * altitude / speed``."""

    speed_multiplier: float = 5.5
    hover_power: float = 15.0
    altitude: float = 1.0
    speed: float = 1.0
    max_motor_power: float = 45.0

    def __post_init__(self) -> None:
        for name in ("speed_multiplier", "hover_power", "altitude", "speed", "max_motor_power"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def flight_time(d: DroneState) -> float:
    if not d.amperage_draw > 0:
        raise ValueError("amperage draw must be positive")
    return d.residual_mAh * d.discharge_coeff / d.amperage_draw


def valuation(d: DroneState, station: StationConfig) -> float:
    """Value of one charging slot; grows as remaining flight time shrinks."""
    lt = flight_time(d)
    if not lt > 0:
        raise ValueError("a drone with no flight time left is discharged and cannot bid")
    return station.slot_energy / lt


def apply_charge(d: DroneState, station: StationConfig) -> DroneState:
    if station.full_recharge:
        return replace(d, residual_mAh=d.capacity_mAh)
    q = min(station.slot_energy, d.capacity_mAh - d.residual_mAh)
    return replace(d, residual_mAh=min(d.capacity_mAh, d.residual_mAh + q))


def energy_consumption(m: EnergyModel, t: float) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    return (m.hover_power + m.speed_multiplier * m.altitude) * t + m.max_motor_power * (m.altitude / m.speed)


# ---------------------------------------------------------------------------
# Mechanisms usable by the simulator
# ---------------------------------------------------------------------------

# (bids of flying drones, their drone ids, rng) -> (position of winner in bids or None, payment)
Mechanism = Callable[[np.ndarray, np.ndarray, np.random.Generator], "tuple[Optional[int], float]"]


def deep_mechanism(params: MonoNetParams, k: float) -> Mechanism:
    """Learned auction; drone id ``d`` is scored by per-bidder network ``d``."""

    def run(bids, ids, rng):
        if ids.max(initial=-1) >= params.shape.num_bidders:
            raise ValueError("fleet has more drones than the network has bidder slots")
        if len(bids) == 1:
            return 0, 0.0
        out = run_auction_batch(params, bids[None, :], k, ids)
        w = int(out.winner[0])
        return (None, 0.0) if w < 0 else (w, float(out.payment[0]))

    return run


def spa0_mechanism() -> Mechanism:
    def run(bids, ids, rng):
        if len(bids) == 1:
            return 0, 0.0
        out = spa0_batch(bids[None, :])
        w = int(out.winner[0])
        return (None, 0.0) if w < 0 else (w, float(out.payment[0]))

    return run


def random_mechanism() -> Mechanism:
    """Baseline: the slot goes to a uniformly random flying drone, free of charge."""

    def run(bids, ids, rng):
        return int(rng.integers(len(bids))), 0.0

    return run


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class SimulationReport:
    step_energy: float
    winners: list[int] = field(default_factory=list)
    payments: list[float] = field(default_factory=list)
    residuals: list[list[float]] = field(default_factory=list)
    discharged: list[int] = field(default_factory=list)
    charge_history: dict[int, list[int]] = field(default_factory=dict)

    @property
    def final_discharged(self) -> int:
        return self.discharged[-1]

    @property
    def revenue(self) -> float:
        return float(sum(self.payments))

    def write_csv(self, path: str | Path) -> None:
        n = len(self.residuals[0]) if self.residuals else 0
        header = ["step", "winner_id", "payment", "consumption"] + [f"residual_{i}" for i in range(n)] + [
            "cumulative_discharged"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for s in range(len(self.winners)):
                writer.writerow(
                    [s + 1, self.winners[s], repr(self.payments[s]), repr(self.step_energy)]
                    + [repr(r) for r in self.residuals[s]]
                    + [self.discharged[s]]
                )


def make_fleet(num_drones: int, rng: np.random.Generator, capacity: float = 1000.0,
               amperage_draw: float = 65.5, initial_low: float = 0.5, initial_high: float = 1.0) -> list[DroneState]:
    """Drones with residual charge drawn uniformly from ``[initial_low, initial_high] * capacity``."""
    residual = rng.uniform(initial_low * capacity, initial_high * capacity, size=num_drones)
    return [DroneState(capacity, float(r), amperage_draw) for r in residual]


def simulate(fleet: list[DroneState], station: StationConfig, model: EnergyModel, auction: Mechanism,
             horizon: int, seed: int) -> SimulationReport:
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    if len(fleet) < 2:
        raise ValueError("need at least two drones")
    rng = np.random.default_rng(seed)
    drones = [replace(d) for d in fleet]
    burn = energy_consumption(model, 1.0)
    report = SimulationReport(step_energy=burn, charge_history={i: [] for i in range(len(drones))})

    for step in range(1, horizon + 1):
        flying = np.array([i for i, d in enumerate(drones) if not d.discharged], dtype=np.intp)
        winner_id, payment = -1, 0.0
        if flying.size:
            bids = np.array([valuation(drones[i], station) for i in flying])
            pos, payment = auction(bids, flying, rng)
            if pos is not None:
                winner_id = int(flying[pos])
                drones[winner_id] = apply_charge(drones[winner_id], station)
                report.charge_history[winner_id].append(step)
        for i in flying:
            left = drones[i].residual_mAh - burn
            if left <= 0:
                drones[i] = replace(drones[i], residual_mAh=0.0, discharged=True)
            else:
                drones[i] = replace(drones[i], residual_mAh=left)
        report.winners.append(winner_id)
        report.payments.append(float(payment))
        report.residuals.append([d.residual_mAh for d in drones])
        report.discharged.append(sum(d.discharged for d in drones))
    return report
