import csv
import math

import numpy as np
import pytest
from oracles import check_conservation

from dronecharge.fleet import (
    DroneState,
    EnergyModel,
    StationConfig,
    apply_charge,
    deep_mechanism,
    energy_consumption,
    flight_time,
    make_fleet,
    random_mechanism,
    simulate,
    spa0_mechanism,
    valuation,
)
from dronecharge.mononet import MonoNetParams, NetworkShape


def drone(r, c=1000.0, e=65.5, h=1.0):
    return DroneState(c, r, e, h)


class TestDrone:
    def test_flight_time(self):
        assert flight_time(DroneState(1000, 500, 100, 1.0)) == 5
        assert flight_time(DroneState(1000, 0, 100, 1.0)) == 0

    def test_invalid_state(self):
        with pytest.raises(ValueError):
            DroneState(1000, 1200, 65.5)
        with pytest.raises(ValueError):
            DroneState(1000, 500, 0.0)

    def test_valuation(self):
        st = StationConfig(charge_rate=10, slot_duration=1)
        assert valuation(DroneState(100, 5, 1), st) == 2
        assert valuation(DroneState(100, 1, 1), st) == 10

    def test_valuation_decreasing_in_flight_time(self):
        st = StationConfig(10, 1)
        vals = [valuation(DroneState(1000, r, 65.5), st) for r in np.linspace(10, 1000, 50)]
        assert (np.diff(vals) < 0).all()

    def test_valuation_rejects_empty_battery(self):
        with pytest.raises(ValueError):
            valuation(DroneState(1000, 0, 65.5), StationConfig())


class TestCharge:
    def test_partial(self):
        st = StationConfig(1000, 1, full_recharge=False)
        assert apply_charge(drone(800), st).residual_mAh == 1000
        assert apply_charge(drone(0), StationConfig(300, 1, full_recharge=False)).residual_mAh == 300

    def test_full(self):
        assert apply_charge(drone(123.0), StationConfig(full_recharge=True)).residual_mAh == 1000

    def test_original_untouched(self):
        d = drone(100)
        apply_charge(d, StationConfig())
        assert d.residual_mAh == 100


class TestEnergy:
    def test_values(self):
        m = EnergyModel(5.5, 15, 1, 1, 45)
        assert energy_consumption(m, 1) == 65.5
        assert energy_consumption(m, 0) == 45
        assert energy_consumption(m, 2) == 86

    def test_negative_time(self):
        with pytest.raises(ValueError):
            energy_consumption(EnergyModel(), -1)

    def test_non_positive_parameter(self):
        with pytest.raises(ValueError):
            EnergyModel(speed=0)


class TestSimulate:
    def test_two_drones_persistent_loser(self):
        # the slot always goes to drone 0, so drone 1 is never charged
        always_first = lambda bids, ids, rng: (0, 0.0)  # noqa: E731
        fleet = [drone(1000.0), drone(1000.0)]
        rep = simulate(fleet, StationConfig(), EnergyModel(), always_first, horizon=20, seed=0)
        first = rep.discharged.index(1) + 1
        assert first == math.ceil(1000 / 65.5) == 16
        assert rep.residuals[first - 1][1] == 0.0
        # the winner is topped up every step before burning
        assert all(r[0] == 1000 - 65.5 for r in rep.residuals)

    def test_invariants_hold(self):
        rng = np.random.default_rng(0)
        station, model = StationConfig(), EnergyModel()
        for mech in (spa0_mechanism(), random_mechanism()):
            fleet = make_fleet(8, rng)
            rep = simulate(fleet, station, model, mech, horizon=60, seed=1)
            check_conservation(fleet, rep, station, 65.5)
            assert (np.diff(rep.discharged) >= 0).all()
            assert len(rep.winners) == 60

    def test_partial_recharge_conservation(self):
        station = StationConfig(300, 1, full_recharge=False)
        fleet = make_fleet(5, np.random.default_rng(3))
        rep = simulate(fleet, station, EnergyModel(), spa0_mechanism(), horizon=40, seed=0)
        check_conservation(fleet, rep, station, 65.5)

    def test_at_most_one_winner(self):
        fleet = make_fleet(6, np.random.default_rng(2))
        rep = simulate(fleet, StationConfig(), EnergyModel(), random_mechanism(), horizon=30, seed=0)
        charged = sorted(s for steps in rep.charge_history.values() for s in steps)
        assert charged == sorted(set(charged))
        assert len(charged) == sum(w >= 0 for w in rep.winners)

    def test_deterministic(self):
        fleet = make_fleet(6, np.random.default_rng(4))
        a = simulate(fleet, StationConfig(), EnergyModel(), random_mechanism(), horizon=30, seed=5)
        b = simulate(fleet, StationConfig(), EnergyModel(), random_mechanism(), horizon=30, seed=5)
        assert a.winners == b.winners and a.residuals == b.residuals

    def test_input_fleet_untouched(self):
        fleet = make_fleet(3, np.random.default_rng(0))
        before = [d.residual_mAh for d in fleet]
        simulate(fleet, StationConfig(), EnergyModel(), spa0_mechanism(), horizon=10, seed=0)
        assert [d.residual_mAh for d in fleet] == before

    def test_invalid(self):
        fleet = make_fleet(3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            simulate(fleet, StationConfig(), EnergyModel(), spa0_mechanism(), horizon=0, seed=0)
        with pytest.raises(ValueError):
            simulate(fleet[:1], StationConfig(), EnergyModel(), spa0_mechanism(), horizon=5, seed=0)

    def test_deep_identity_matches_spa0(self):
        fleet = make_fleet(5, np.random.default_rng(6))
        deep = deep_mechanism(MonoNetParams.identity(NetworkShape(5, 1, 1)), 3.0)
        a = simulate(fleet, StationConfig(), EnergyModel(), deep, horizon=50, seed=0)
        b = simulate(fleet, StationConfig(), EnergyModel(), spa0_mechanism(), horizon=50, seed=0)
        assert a.winners == b.winners
        np.testing.assert_allclose(a.payments, b.payments, rtol=1e-12)

    def test_deep_needs_enough_bidder_slots(self):
        fleet = make_fleet(4, np.random.default_rng(0))
        deep = deep_mechanism(MonoNetParams.identity(NetworkShape(3, 1, 1)), 3.0)
        with pytest.raises(ValueError):
            simulate(fleet, StationConfig(), EnergyModel(), deep, horizon=5, seed=0)

    def test_csv(self, tmp_path):
        fleet = make_fleet(4, np.random.default_rng(0))
        rep = simulate(fleet, StationConfig(), EnergyModel(), spa0_mechanism(), horizon=25, seed=0)
        rep.write_csv(tmp_path / "f.csv")
        with open(tmp_path / "f.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 25
        assert {float(r["consumption"]) for r in rows} == {65.5}
        assert rows[-1]["cumulative_discharged"] == str(rep.final_discharged)
        assert sum(float(r["payment"]) for r in rows) == pytest.approx(rep.revenue)
