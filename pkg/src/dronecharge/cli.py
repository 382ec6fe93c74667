"""Command-line entry point: ``dronecharge <command> [options]``.

Every command reads an optional JSON config (see :mod:`dronecharge.config`);
flags given on the command line override values from the file. Outputs are
CSV files (plus JSON checkpoints) written into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from dronecharge.auction import (
    allocate_softmax,
    myerson_batch,
    run_auction_batch,
    spa0_batch,
    write_outcomes_csv,
)
from dronecharge.config import ExperimentSpec, spec_from_dict
from dronecharge.fleet import (
    EnergyModel,
    StationConfig,
    deep_mechanism,
    make_fleet,
    random_mechanism,
    simulate,
    spa0_mechanism,
)
from dronecharge.mononet import MonoNetParams, load_checkpoint, save_checkpoint
from dronecharge.stats import RevenueStats, read_column, write_stats_csv
from dronecharge.training import (
    TrainConfig,
    generate_profiles,
    iterations_to_within,
    mechanism_revenue,
    stream_rng,
    train,
    warm_start,
    write_trace_csv,
)

log = logging.getLogger("dronecharge")

PAPER_TRUE_VALUE = 15.9835
PAPER_SECOND_BID = 8.6177
PAPER_MULTIPLIERS = (0.8, 1.2, 1.6, 2.0)


def _rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _r(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Spec assembly
# ---------------------------------------------------------------------------

OVERRIDES = {
    "drones": "number_of_drones",
    "lr": "learning_rate",
    "l2": "l2_regularization",
    "profiles": "training_set_size",
    "epochs": "simulation_epoch",
    "k": "approximate_quality_k",
    "weight_floor": "weight_range_B",
    "minibatch_size": "minibatch_size",
    "eval_every": "eval_every",
    "loss_payment": "loss_payment",
}


def build_spec(args: argparse.Namespace, kind: str) -> ExperimentSpec:
    doc: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValueError(f"config file {path} not found")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    doc["kind"] = kind
    for flag, key in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            doc[key] = value
    dist = dict(doc.get("bid_distribution", {}))
    for flag in ("dist_kind", "low", "high", "charge"):
        value = getattr(args, flag, None)
        if value is not None:
            dist["kind" if flag == "dist_kind" else flag] = value
    doc["bid_distribution"] = dist
    if args.seed:
        doc["seeds"] = args.seed
    if args.out:
        doc["output_dir"] = args.out
    fleet = dict(doc.get("fleet", {}))
    for flag in ("num_drones", "horizon"):
        value = getattr(args, flag, None)
        if value is not None:
            fleet[flag] = value
    if fleet:
        doc["fleet"] = fleet
    return spec_from_dict(doc)


def _train_config(spec: ExperimentSpec, seed: int) -> TrainConfig:
    d = spec.train.to_dict()
    d["seed"] = seed
    return TrainConfig(**d)


def _checkpoint_k(meta: dict[str, Any], fallback: float) -> float:
    return float(meta.get("train_config", {}).get("k", fallback))


def _load(path: str | Path) -> tuple[MonoNetParams, dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ValueError(f"checkpoint {path} not found")
    params, train_config = load_checkpoint(path)
    return params, {"train_config": train_config}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_train(spec: ExperimentSpec) -> Path:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    seed = spec.seeds[0]
    cfg = _train_config(spec, seed)
    data = generate_profiles(spec.distribution, spec.num_bidders, cfg.num_profiles, seed, cfg.train_fraction)
    result = train(cfg, data, spec.distribution)
    save_checkpoint(out / "checkpoint.json", result.params, cfg.to_dict())
    write_trace_csv(out / "trace.csv", result.trace)
    log.info("final test revenue %.6f (SPA-0 %.6f)", result.final_revenue, result.trace[-1]["spa0_revenue"])
    return out / "checkpoint.json"


def compare_mechanisms(checkpoints: dict[str, tuple[MonoNetParams, float]], bids: np.ndarray,
                       dist=None) -> dict[str, np.ndarray]:
    """Per-profile realised revenue of SPA-0, Myerson (if the law is known) and each checkpoint."""
    payments = {"spa0": spa0_batch(bids).payment}
    if dist is not None:
        vd = dist.value_distribution()
        if vd.contains(bids):
            payments["myerson"] = myerson_batch(vd, bids).payment
    for label, (params, k) in checkpoints.items():
        if params.shape.num_bidders != bids.shape[1]:
            raise ValueError(f"checkpoint {label!r} expects {params.shape.num_bidders} bidders, "
                             f"test data has {bids.shape[1]}")
        payments[label] = mechanism_revenue(params, bids, k)
    return payments


def cmd_compare(spec: ExperimentSpec, checkpoint_args: Sequence[str]) -> dict[str, RevenueStats]:
    if not checkpoint_args:
        raise ValueError("compare needs at least one --checkpoint")
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    loaded: dict[str, tuple[MonoNetParams, float]] = {}
    for item in checkpoint_args:
        label, _, path = item.rpartition("=")
        label = label or Path(path).stem
        params, meta = _load(path)
        loaded[label] = (params, _checkpoint_k(meta, spec.train.k))
    num_bidders = next(iter(loaded.values()))[0].shape.num_bidders
    data = generate_profiles(spec.distribution, num_bidders, spec.train.num_profiles, spec.seeds[0],
                             spec.train.train_fraction)
    bids = data.test
    payments = compare_mechanisms(loaded, bids, spec.distribution)
    stats = {name: RevenueStats.from_values(p) for name, p in payments.items()}
    header = ["profile_id"] + [f"bid_{i}" for i in range(num_bidders)] + [f"revenue_{n}" for n in payments]
    _rows(out / "compare_profiles.csv", header,
          ([t] + [_r(b) for b in bids[t]] + [_r(p[t]) for p in payments.values()] for t in range(len(bids))))
    write_stats_csv(out / "compare_stats.csv", stats.items())
    for label, (params, k) in loaded.items():
        outcome = run_auction_batch(params, bids, k)
        write_outcomes_csv(out / f"outcomes_{label}.csv", bids, outcome,
                           {n: p for n, p in payments.items() if n != label})
    return stats


FALSE_BID_HEADER = ["mechanism", "multiplier", "bid", "won", "payment", "utility", "truthful_utility",
                    "expected_payment"]


def false_bid_table(mechanisms: dict[str, tuple[MonoNetParams | None, float]], true_value: float,
                    multipliers: Sequence[float], others: Sequence[float]) -> list[dict[str, Any]]:
    """Sweep bidder 0's bid over ``multiplier * true_value`` with the other bids fixed.

    ``expected_payment`` is the soft-allocation payment ``g_0 * p_0`` the
    training objective sees; ``payment`` is what the auction charges.
    """
    rows = []
    others = np.asarray(others, dtype=np.float64)
    for name, (params, k) in mechanisms.items():
        profiles = np.array([np.concatenate(([m * true_value], others)) for m in (1.0, *multipliers)])
        if params is None:
            out = spa0_batch(profiles)
            soft = out.alloc_probs[:, 0]
        else:
            out = run_auction_batch(params, profiles, k)
            soft = allocate_softmax(out.virtual_bids, k)[:, 0]
        won = out.winner == 0
        util = np.where(won, true_value - out.payment, 0.0)
        expected = soft * np.where(won, out.payment, 0.0)
        for j, m in enumerate(multipliers, start=1):
            rows.append({
                "mechanism": name, "multiplier": m, "bid": profiles[j, 0], "won": bool(won[j]),
                "payment": float(out.payment[j]) if won[j] else 0.0, "utility": float(util[j]),
                "truthful_utility": float(util[0]), "expected_payment": float(expected[j]),
            })
    return rows


def default_others(num_bidders: int, seed: int, second: float = PAPER_SECOND_BID) -> np.ndarray:
    """Competing bids: one at ``second``, the rest uniform below it."""
    rng = stream_rng(seed, "data")
    rest = rng.uniform(0.0, second, size=num_bidders - 2)
    return np.concatenate(([second], rest))


def cmd_false_bid(spec: ExperimentSpec, checkpoint: str, true_value: float, multipliers: Sequence[float],
                  others: Sequence[float] | None) -> list[dict[str, Any]]:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    params, meta = _load(checkpoint)
    u = params.shape.num_bidders
    if others is None:
        others = default_others(u, spec.seeds[0])
    if len(others) != u - 1:
        raise ValueError(f"need {u - 1} competing bids for a {u}-bidder network, got {len(others)}")
    k = _checkpoint_k(meta, spec.train.k)
    rows = false_bid_table({"spa0": (None, k), "deep": (params, k)}, true_value, multipliers, others)
    _rows(out / "false_bid.csv", FALSE_BID_HEADER,
          ([r["mechanism"], _r(r["multiplier"]), _r(r["bid"]), int(r["won"])]
           + [_r(r[c]) for c in FALSE_BID_HEADER[4:]] for r in rows))
    return rows


def _fleet_setup(fleet: dict[str, Any]) -> tuple[StationConfig, EnergyModel]:
    station = StationConfig(fleet["charge_rate"], fleet["slot_duration"], bool(fleet["full_recharge"]))
    model = EnergyModel(fleet["speed_multiplier"], fleet["hover_power"], fleet["altitude"], fleet["speed"],
                        fleet["max_motor_power"])
    return station, model


def cmd_fleet(spec: ExperimentSpec, mechanisms: Sequence[str], checkpoint: str | None) -> dict[str, list[int]]:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    fl = spec.fleet
    station, model = _fleet_setup(fl)
    factories = {}
    for name in mechanisms:
        if name == "deep":
            if checkpoint is None:
                raise ValueError("the deep mechanism needs --checkpoint")
            params, meta = _load(checkpoint)
            factories[name] = deep_mechanism(params, _checkpoint_k(meta, spec.train.k))
        elif name == "spa0":
            factories[name] = spa0_mechanism()
        elif name == "random":
            factories[name] = random_mechanism()
        else:
            raise ValueError(f"unknown mechanism {name!r}")
    summary: dict[str, list[int]] = {name: [] for name in factories}
    rows = []
    for seed in spec.seeds:
        for name, mech in factories.items():
            fleet = make_fleet(int(fl["num_drones"]), stream_rng(seed, "sim"), fl["capacity_mAh"],
                               fl["amperage_draw"], fl["initial_low"], fl["initial_high"])
            report = simulate(fleet, station, model, mech, int(fl["horizon"]), seed)
            report.write_csv(out / f"fleet_{name}_seed{seed}.csv")
            summary[name].append(report.final_discharged)
            rows.append([name, seed, report.final_discharged, _r(report.revenue)])
    _rows(out / "fleet_summary.csv", ["mechanism", "seed", "discharged", "revenue"], rows)
    return summary


def cmd_transfer(spec: ExperimentSpec, checkpoint: str, rel_tol: float = 0.05) -> list[dict[str, Any]]:
    out = spec.output_dir
    out.mkdir(parents=True, exist_ok=True)
    base, _ = _load(checkpoint)
    rows = []
    for seed in spec.seeds:
        cfg = _train_config(spec, seed)
        data = generate_profiles(spec.distribution, base.shape.num_bidders, cfg.num_profiles, seed,
                                 cfg.train_fraction)
        warm = warm_start(base, cfg, data, spec.distribution)
        cold = train(cfg, data, spec.distribution)
        write_trace_csv(out / f"warm_trace_seed{seed}.csv", warm.trace)
        write_trace_csv(out / f"cold_trace_seed{seed}.csv", cold.trace)
        rows.append({
            "seed": seed,
            "warm_iterations": iterations_to_within(warm.trace, rel_tol),
            "cold_iterations": iterations_to_within(cold.trace, rel_tol),
            "warm_initial": warm.trace[0]["test_revenue"],
            "warm_final": warm.final_revenue,
            "cold_final": cold.final_revenue,
            "spa0": warm.trace[-1]["spa0_revenue"],
        })
    header = list(rows[0])
    _rows(out / "transfer_summary.csv", header,
          ([r["seed"], r["warm_iterations"], r["cold_iterations"]] + [_r(r[c]) for c in header[3:]] for r in rows))
    return rows


def cmd_stats(csv_path: str, columns: Sequence[str], out: str | None) -> dict[str, RevenueStats]:
    if not Path(csv_path).exists():
        raise ValueError(f"{csv_path} not found")
    stats = {c: RevenueStats.from_values(read_column(csv_path, c)) for c in columns}
    if out:
        write_stats_csv(out, stats.items())
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["column", "n", "mean", "min", "p25", "p75", "max"])
        for c, s in stats.items():
            writer.writerow([c, s.n, _r(s.mean), _r(s.min), _r(s.p25), _r(s.p75), _r(s.max)])
    return stats


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, action="append", help="seed (repeat for several)")
    p.add_argument("--drones", type=int, help="number of bidders")
    p.add_argument("--k", type=float, help="softmax sharpness")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--profiles", type=int, help="number of bid profiles before the train/test split")
    p.add_argument("--weight-floor", type=float)
    p.add_argument("--minibatch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--loss-payment", choices=("ir", "inverse"))
    p.add_argument("--dist-kind", choices=("uniform", "valuation"))
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)
    p.add_argument("--charge", type=float, help="slot energy for valuation-driven bids")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dronecharge", description="Charging-slot auction experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a mechanism, write checkpoint.json and trace.csv")
    _common(p)

    p = sub.add_parser("compare", help="revenue statistics of checkpoints vs SPA-0 on shared test data")
    _common(p)
    p.add_argument("--checkpoint", action="append", default=[], metavar="[LABEL=]PATH")

    p = sub.add_parser("false-bid", help="payment and utility when one drone misreports")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--true-value", type=float, default=PAPER_TRUE_VALUE)
    p.add_argument("--multipliers", type=_floats, default=list(PAPER_MULTIPLIERS))
    p.add_argument("--others", type=_floats, help="fixed competing bids (default: drawn from --seed)")

    p = sub.add_parser("fleet", help="charging-station simulation")
    _common(p)
    p.add_argument("--mechanism", action="append", choices=("deep", "spa0", "random"))
    p.add_argument("--checkpoint")
    p.add_argument("--num-drones", type=int)
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("transfer", help="warm-start vs cold-start training on a new bid distribution")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tolerance", type=float, default=0.05)

    p = sub.add_parser("stats", help="revenue statistics of CSV columns")
    p.add_argument("csv")
    p.add_argument("--column", action="append", required=True)
    p.add_argument("--out")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "stats":
            cmd_stats(args.csv, args.column, args.out)
            return 0
        spec = build_spec(args, args.command)
        if args.command == "train":
            cmd_train(spec)
        elif args.command == "compare":
            cmd_compare(spec, args.checkpoint)
        elif args.command == "false-bid":
            cmd_false_bid(spec, args.checkpoint, args.true_value, args.multipliers, args.others)
        elif args.command == "fleet":
            cmd_fleet(spec, args.mechanism or ["deep", "random"], args.checkpoint)
        elif args.command == "transfer":
            cmd_transfer(spec, args.checkpoint, args.tolerance)
    except (ValueError, OSError) as exc:
        print(f"dronecharge: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
