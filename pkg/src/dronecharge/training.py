"""Unsupervised revenue training of the monotonic network.

The loss for a minibatch of profiles is the negative soft revenue
``-mean_t sum_i g_i * p_i`` plus ``l2 * sum(w**2 + beta**2)``, where ``g`` is
the softmax allocation and ``p_i`` is the inverse image of bidder i's
virtual payment. By default ``p_i`` is clipped to ``[0, b_i]``: for a losing
bidder the raw inverse lies above its own bid, and with a soft allocation the
optimiser otherwise learns to flatten ``g`` and harvest those unpayable
amounts (``loss_payment="inverse"`` keeps the raw form).

Gradients are derived by hand: through min/max units only the selected unit
receives gradient, the ReLU passes nothing at inputs ``<= 0``, and the
inverse path reuses (and so accumulates into) the same weight arrays as the
forward path.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from dronecharge.auction import (
    ReciprocalUniformDistribution,
    UniformValueDistribution,
    allocate_softmax,
    max_of_others,
    myerson_batch,
    run_auction_batch,
    spa0_batch,
)
from dronecharge.mononet import (
    MonoNetParams,
    NetworkShape,
    clip_params_,
    init_xavier,
    select_unit,
    stage_forward,
    stage_inverse,
)

log = logging.getLogger(__name__)

# named seed streams; every random draw in a run comes from one of these
STREAMS = {"data": 0, "init": 1, "shuffle": 2, "sim": 3}
LOSS_PAYMENTS = ("ir", "inverse")


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[stream]])


def stream_seed(seed: int, stream: str) -> int:
    return int(np.random.SeedSequence([int(seed), STREAMS[stream]]).generate_state(1)[0])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    l2_coeff: float = 1e-3
    k: float = 3.0
    weight_floor: float = 1e-4
    epochs: int = 100
    num_profiles: int = 100_000
    train_fraction: float = 0.7
    minibatch_size: int = 128
    seed: int = 0
    num_groups: int = 5
    num_units: int = 10
    # evaluate the test revenue every this many iterations (0: once per epoch)
    eval_every: int = 0
    # "ir": payments inside the loss are clipped to [0, own bid];
    # "inverse": raw network inverse for every bidder, losers included
    loss_payment: str = "ir"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        positive = ("learning_rate", "k", "weight_floor", "epochs", "num_profiles", "minibatch_size",
                    "num_groups", "num_units", "epsilon")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be non-negative")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.eval_every < 0:
            raise ValueError("eval_every must be non-negative")
        if self.loss_payment not in LOSS_PAYMENTS:
            raise ValueError(f"loss_payment must be one of {LOSS_PAYMENTS}, got {self.loss_payment!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BidDistribution:
    """How bid profiles are drawn.

    ``kind="uniform"``: every bid ~ U[low, high].
    ``kind="valuation"``: flight time l ~ U[low, high] and bid = charge / l,
    where ``charge`` is the energy one slot delivers (charge rate x slot time).
    """

    kind: str = "uniform"
    low: float = 0.0
    high: float = 10.0
    charge: float = 10.0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "valuation"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not self.low < self.high:
            raise ValueError(f"need low < high, got [{self.low}, {self.high}]")
        if self.kind == "uniform" and self.low < 0:
            raise ValueError("uniform bids must be non-negative")
        if self.kind == "valuation" and not (self.low > 0 and self.charge > 0):
            raise ValueError("flight times and charge must be positive")

    def value_distribution(self):
        if self.kind == "uniform":
            return UniformValueDistribution(self.low, self.high)
        return ReciprocalUniformDistribution(self.low, self.high, self.charge)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class DataSplit:
    train: np.ndarray
    test: np.ndarray

    @property
    def num_bidders(self) -> int:
        return self.train.shape[1]


def generate_profiles(dist: BidDistribution, num_bidders: int, num_profiles: int, seed: int,
                      train_fraction: float = 0.7) -> DataSplit:
    """Draw ``num_profiles`` i.i.d. profiles and split them train/test."""
    if num_bidders < 2:
        raise ValueError("an auction needs at least two bidders")
    if num_profiles < 2:
        raise ValueError("need at least two profiles to split")
    rng = stream_rng(seed, "data")
    bids = dist.value_distribution().sample(rng, (num_profiles, num_bidders))
    n_train = int(round(train_fraction * num_profiles))
    n_train = min(max(n_train, 1), num_profiles - 1)
    return DataSplit(bids[:n_train], bids[n_train:])


# ---------------------------------------------------------------------------
# Loss and gradient
# ---------------------------------------------------------------------------


def _l2(params: MonoNetParams) -> float:
    return float(sum(np.sum(a * a) for a in params.arrays()))


def _scatter_bidder(idx: np.ndarray, coef: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    u, g, n = shape
    flat = np.arange(u) * (g * n) + idx
    return np.bincount(flat.ravel(), weights=coef.ravel(), minlength=u * g * n).reshape(u, g, n)


def _scatter_shared(idx: np.ndarray, coef: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    g, n = shape
    return np.bincount(idx.ravel(), weights=coef.ravel(), minlength=g * n).reshape(g, n)


def revenue_terms(params: MonoNetParams, bids: np.ndarray, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Soft allocation ``g`` and raw per-bidder inverse payments ``p``."""
    hidden, _ = stage_forward(bids, params.bidder_w, params.bidder_b)
    vb, _ = stage_forward(hidden, params.shared_w, params.shared_b)
    g = allocate_softmax(vb, k)
    others, _ = max_of_others(vb)
    pbar = np.maximum(others, 0.0)
    p_hidden, _ = stage_inverse(pbar, params.shared_w, params.shared_b)
    p, _ = stage_inverse(p_hidden, params.bidder_w, params.bidder_b)
    return g, p


def loss_and_grad(params: MonoNetParams, batch: np.ndarray, cfg: TrainConfig,
                  with_grad: bool = True) -> tuple[float, MonoNetParams | None]:
    """Loss of a minibatch (shape (T, U)) and its exact subgradient."""
    bids = np.asarray(batch, dtype=np.float64)
    if bids.ndim != 2 or bids.shape[0] == 0:
        raise ValueError("batch must be a non-empty (T, U) array")
    if bids.shape[1] != params.shape.num_bidders:
        raise ValueError(f"batch has {bids.shape[1]} bidders, network has {params.shape.num_bidders}")
    t = bids.shape[0]
    k = cfg.k
    bw, bb, sw, sb = params.arrays()

    # forward
    hidden, i1 = stage_forward(bids, bw, bb)
    vb, i2 = stage_forward(hidden, sw, sb)
    g = allocate_softmax(vb, k)
    others, arg_other = max_of_others(vb)
    pbar = np.maximum(others, 0.0)
    p_hidden, i3 = stage_inverse(pbar, sw, sb)
    p, i4 = stage_inverse(p_hidden, bw, bb)
    if cfg.loss_payment == "ir":
        # a bidder is never charged more than its bid nor less than 0; like
        # the ReLU, the clip passes no gradient on its boundary
        live = (p > 0) & (p < bids)
        p_used = np.clip(p, 0.0, bids)
    else:
        live = np.ones_like(p, dtype=bool)
        p_used = p

    revenue = np.sum(g * p_used, axis=1)
    loss = -float(revenue.mean()) + cfg.l2_coeff * _l2(params)
    if not with_grad:
        return loss, None

    d_g = -p_used / t
    d_p = np.where(live, -g / t, 0.0)

    # p = (p_hidden - beta_i) / w_i at the selected bidder unit
    w4 = select_unit(bw, i4)
    gw_b = _scatter_bidder(i4, d_p * (-p / w4), bw.shape)
    gb_b = _scatter_bidder(i4, d_p * (-1.0 / w4), bb.shape)
    d_ph = d_p / w4

    # p_hidden = (pbar - beta_s) / w_s
    w3 = select_unit(sw, i3)
    gw_s = _scatter_shared(i3, d_ph * (-p_hidden / w3), sw.shape)
    gb_s = _scatter_shared(i3, d_ph * (-1.0 / w3), sb.shape)
    d_pbar = d_ph / w3

    # pbar_i = relu(vb[arg_other_i]); gradient only for strictly positive input
    d_others = np.where(others > 0, d_pbar, 0.0)
    d_vb = np.zeros_like(vb)
    rows = np.repeat(np.arange(t), vb.shape[1])
    np.add.at(d_vb, (rows, arg_other.ravel()), d_others.ravel())

    # softmax with sharpness k
    d_vb += k * g * (d_g - np.sum(g * d_g, axis=1, keepdims=True))

    # vb = w_s * hidden + beta_s
    w2 = select_unit(sw, i2)
    gw_s += _scatter_shared(i2, d_vb * hidden, sw.shape)
    gb_s += _scatter_shared(i2, d_vb, sb.shape)
    d_hidden = d_vb * w2

    # hidden = w_i * b + beta_i
    gw_b += _scatter_bidder(i1, d_hidden * bids, bw.shape)
    gb_b += _scatter_bidder(i1, d_hidden, bb.shape)

    c = 2.0 * cfg.l2_coeff
    grads = MonoNetParams(gw_b + c * bw, gb_b + c * bb, gw_s + c * sw, gb_s + c * sb)
    return loss, grads


def loss(params: MonoNetParams, batch: np.ndarray, cfg: TrainConfig) -> float:
    return loss_and_grad(params, batch, cfg, with_grad=False)[0]


def grad(params: MonoNetParams, batch: np.ndarray, cfg: TrainConfig) -> MonoNetParams:
    return loss_and_grad(params, batch, cfg)[1]


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    first_moment: MonoNetParams
    second_moment: MonoNetParams
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: MonoNetParams) -> AdamState:
        zero = lambda: MonoNetParams(*(np.zeros_like(a) for a in params.arrays()))  # noqa: E731
        return cls(zero(), zero(), 0)


def adam_step(params: MonoNetParams, state: AdamState, grads: MonoNetParams,
              cfg: TrainConfig) -> tuple[MonoNetParams, AdamState]:
    """One bias-corrected Adam update followed by the weight/bias clip.

    Updates ``params`` and ``state`` in place and returns them.
    """
    for a, b in zip(params.arrays(), grads.arrays()):
        if a.shape != b.shape:
            raise ValueError(f"gradient shape {b.shape} does not match parameter shape {a.shape}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, gr, m, v in zip(params.arrays(), grads.arrays(), state.first_moment.arrays(),
                           state.second_moment.arrays()):
        m *= b1
        m += (1.0 - b1) * gr
        v *= b2
        v += (1.0 - b2) * gr * gr
        p -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.epsilon)
    clip_params_(params, cfg.weight_floor)
    return params, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def mechanism_revenue(params: MonoNetParams, bids: np.ndarray, k: float, chunk: int = 4096) -> np.ndarray:
    """Realised (argmax-winner) payment of the learned auction per profile."""
    out = [run_auction_batch(params, bids[s:s + chunk], k).payment for s in range(0, len(bids), chunk)]
    return np.concatenate(out)


TRACE_HEADER = ["epoch", "iteration", "train_loss", "test_revenue", "spa0_revenue", "oracle_revenue"]


@dataclass
class TrainResult:
    params: MonoNetParams
    trace: list[dict[str, float]] = field(default_factory=list)

    @property
    def final_revenue(self) -> float:
        return self.trace[-1]["test_revenue"]

    def revenues(self) -> tuple[np.ndarray, np.ndarray]:
        its = np.array([r["iteration"] for r in self.trace], dtype=np.int64)
        rev = np.array([r["test_revenue"] for r in self.trace])
        return its, rev


def baseline_revenues(data: DataSplit, dist: BidDistribution | None) -> tuple[float, float]:
    spa = float(spa0_batch(data.test).payment.mean())
    oracle = float("nan")
    if dist is not None:
        vd = dist.value_distribution()
        if vd.contains(data.test):
            oracle = float(myerson_batch(vd, data.test).payment.mean())
    return spa, oracle


def _fit(params: MonoNetParams, cfg: TrainConfig, data: DataSplit, dist: BidDistribution | None) -> TrainResult:
    if data.num_bidders != params.shape.num_bidders:
        raise ValueError(f"data has {data.num_bidders} bidders, network has {params.shape.num_bidders}")
    if not params.satisfies_floor(cfg.weight_floor):
        params = params.copy()
        clip_params_(params, cfg.weight_floor)
    spa, oracle = baseline_revenues(data, dist)
    state = AdamState.zeros_like(params)
    shuffle = stream_rng(cfg.seed, "shuffle")
    trace: list[dict[str, float]] = []

    def record(epoch: int, iteration: int, losses: list[float]) -> None:
        trace.append({
            "epoch": epoch,
            "iteration": iteration,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "test_revenue": float(mechanism_revenue(params, data.test, cfg.k).mean()),
            "spa0_revenue": spa,
            "oracle_revenue": oracle,
        })

    record(0, 0, [])
    n = len(data.train)
    bs = cfg.minibatch_size
    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(n)
        losses: list[float] = []
        for start in range(0, n, bs):
            batch = data.train[order[start:start + bs]]
            value, grads = loss_and_grad(params, batch, cfg)
            adam_step(params, state, grads, cfg)
            iteration += 1
            losses.append(value)
            if cfg.eval_every and iteration % cfg.eval_every == 0:
                record(epoch, iteration, losses)
                losses = []
        if trace[-1]["iteration"] != iteration:
            record(epoch, iteration, losses)
        log.debug("epoch %d: test revenue %.6f", epoch, trace[-1]["test_revenue"])
    return TrainResult(params, trace)


def train(cfg: TrainConfig, data: DataSplit, dist: BidDistribution | None = None) -> TrainResult:
    """Train from a Xavier initialisation. Deterministic given ``cfg.seed``."""
    shape = NetworkShape(data.num_bidders, cfg.num_groups, cfg.num_units)
    params = init_xavier(shape, stream_seed(cfg.seed, "init"), cfg.weight_floor)
    return _fit(params, cfg, data, dist)


def warm_start(pretrained: MonoNetParams, cfg: TrainConfig, data: DataSplit,
               dist: BidDistribution | None = None) -> TrainResult:
    """Same as :func:`train` but starting from ``pretrained`` (left untouched)."""
    shape = pretrained.shape
    if (shape.num_groups, shape.num_units) != (cfg.num_groups, cfg.num_units):
        raise ValueError("pretrained network shape does not match the training config")
    return _fit(pretrained.copy(), cfg, data, dist)


def iterations_to_within(trace: list[dict[str, float]], rel_tol: float = 0.05) -> int:
    """First logged iteration after which test revenue stays within ``rel_tol`` of its final value."""
    its = [int(r["iteration"]) for r in trace]
    rev = [r["test_revenue"] for r in trace]
    final = rev[-1]
    settled = its[-1]
    for it, r in zip(reversed(its), reversed(rev)):
        if abs(r - final) > rel_tol * abs(final):
            break
        settled = it
    return settled


def write_trace_csv(path: str | Path, trace: list[dict[str, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow([int(row["epoch"]), int(row["iteration"])]
                            + [repr(float(row[c])) for c in TRACE_HEADER[2:]])
