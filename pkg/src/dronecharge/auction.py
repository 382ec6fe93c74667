"""Single-item charging-slot auctions.

Three mechanisms live here:

* the learned mechanism (virtual bids from :mod:`dronecharge.mononet`,
  softmax allocation, second-highest virtual bid floored at 0, payment
  mapped back through the network inverse),
* SPA-0, the plain second-price auction with reserve 0,
* the analytic Myerson auction for a known value distribution, used only
  as a benchmark.

Every mechanism has a batched form over arrays of profiles (shape (T, U))
returning ``winner`` (``-1`` for no sale) and ``payment`` arrays, plus a
single-profile form returning an :class:`AuctionOutcome`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from dronecharge.mononet import MonoNetParams, inverse_batch, transform_batch

NO_WINNER = -1


def validate_profile(bids) -> np.ndarray:
    """Coerce a bid profile to a float vector and check it is a valid one."""
    bids = np.asarray(bids, dtype=np.float64)
    if bids.ndim != 1 or bids.size < 2:
        raise ValueError("a bid profile needs at least two bids")
    if not np.isfinite(bids).all() or (bids < 0).any():
        raise ValueError("bids must be finite and non-negative")
    return bids


@dataclass
class AuctionOutcome:
    virtual_bids: np.ndarray
    alloc_probs: np.ndarray
    winner: int | None
    virtual_payment: float
    payment: float

    def __post_init__(self) -> None:
        if self.winner is None and self.payment != 0:
            raise ValueError("an auction without a winner cannot charge a payment")


# ---------------------------------------------------------------------------
# Allocation and payment rules
# ---------------------------------------------------------------------------


def allocate_softmax(virtual_bids, k: float) -> np.ndarray:
    """Softmax of ``k * virtual_bids`` along the last axis (max-subtracted)."""
    vb = np.asarray(virtual_bids, dtype=np.float64)
    if vb.ndim == 0 or vb.shape[-1] == 0:
        raise ValueError("softmax needs a non-empty vector")
    if not k > 0:
        raise ValueError(f"k must be positive, got {k!r}")
    z = k * (vb - vb.max(axis=-1, keepdims=True))
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def top_two(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the largest and of the largest-among-the-rest, lowest index on ties."""
    values = np.asarray(values, dtype=np.float64)
    first = values.argmax(axis=-1)
    masked = values.copy()
    np.put_along_axis(masked, first[..., None], -np.inf, axis=-1)
    second = masked.argmax(axis=-1)
    return first, second


def max_of_others(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each position i, ``max_{j != i} values[j]`` and the j attaining it."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] < 2:
        raise ValueError("need at least two bidders")
    first, second = top_two(values)
    positions = np.arange(values.shape[-1])
    is_first = positions == first[..., None]
    arg = np.where(is_first, second[..., None], first[..., None])
    return np.take_along_axis(values, arg, axis=-1), arg


def payment_virtual(virtual_bids) -> np.ndarray:
    """ReLU of the highest competing virtual bid, per bidder."""
    others, _ = max_of_others(virtual_bids)
    return np.maximum(others, 0.0)


# ---------------------------------------------------------------------------
# Learned mechanism
# ---------------------------------------------------------------------------


@dataclass
class BatchOutcome:
    """Vectorised outcomes; ``winner == -1`` marks a profile without sale."""

    virtual_bids: np.ndarray
    alloc_probs: np.ndarray
    winner: np.ndarray
    virtual_payment: np.ndarray
    payment: np.ndarray

    @property
    def revenue(self) -> np.ndarray:
        return self.payment


def run_auction_batch(
    params: MonoNetParams,
    bids: np.ndarray,
    k: float,
    bidder_ids: np.ndarray | None = None,
) -> BatchOutcome:
    """Run the learned auction on every row of ``bids`` (shape (T, U)).

    The winner is the highest virtual bid (lowest index on ties) provided it
    is strictly positive. Its payment is the inverse image of the highest
    competing virtual bid floored at 0, i.e. the smallest bid with which it
    would still have won. The result is clamped into ``[0, own bid]`` so that
    floating-point round-off in the inverse can never break IR.
    """
    bids = np.atleast_2d(np.asarray(bids, dtype=np.float64))
    vb = transform_batch(params, bids, bidder_ids)
    probs = allocate_softmax(vb, k)
    pbar = payment_virtual(vb)
    first = vb.argmax(axis=-1)
    rows = np.arange(bids.shape[0])
    has_winner = vb[rows, first] > 0
    all_payments = inverse_batch(params, pbar, bidder_ids)
    raw = all_payments[rows, first]
    payment = np.where(has_winner, np.clip(raw, 0.0, bids[rows, first]), 0.0)
    winner = np.where(has_winner, first, NO_WINNER)
    vpay = np.where(has_winner, pbar[rows, first], 0.0)
    return BatchOutcome(vb, probs, winner, vpay, payment)


def _single(batch: BatchOutcome) -> AuctionOutcome:
    w = int(batch.winner[0])
    return AuctionOutcome(
        virtual_bids=batch.virtual_bids[0],
        alloc_probs=batch.alloc_probs[0],
        winner=None if w == NO_WINNER else w,
        virtual_payment=float(batch.virtual_payment[0]),
        payment=float(batch.payment[0]),
    )


def run_auction(params: MonoNetParams, bids, k: float, bidder_ids: Sequence[int] | None = None) -> AuctionOutcome:
    bids = validate_profile(bids)
    ids = None if bidder_ids is None else np.asarray(bidder_ids, dtype=np.intp)
    expected = params.shape.num_bidders if ids is None else ids.size
    if bids.size != expected:
        raise ValueError(f"profile has {bids.size} bids but the mechanism expects {expected}")
    return _single(run_auction_batch(params, bids[None, :], k, ids))


# ---------------------------------------------------------------------------
# SPA-0
# ---------------------------------------------------------------------------


def spa0_batch(bids: np.ndarray) -> BatchOutcome:
    bids = np.atleast_2d(np.asarray(bids, dtype=np.float64))
    first, second = top_two(bids)
    rows = np.arange(bids.shape[0])
    has_winner = bids[rows, first] > 0
    winner = np.where(has_winner, first, NO_WINNER)
    payment = np.where(has_winner, bids[rows, second], 0.0)
    probs = np.zeros_like(bids)
    probs[rows, first] = 1.0
    return BatchOutcome(bids.copy(), probs, winner, payment.copy(), payment)


def spa0(bids) -> AuctionOutcome:
    """Second-price auction with reserve 0; ties go to the lowest index."""
    return _single(spa0_batch(validate_profile(bids)[None, :]))


# ---------------------------------------------------------------------------
# Myerson benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UniformValueDistribution:
    low: float
    high: float

    def __post_init__(self) -> None:
        if not (0 <= self.low < self.high):
            raise ValueError(f"need 0 <= low < high, got [{self.low}, {self.high}]")

    def cdf(self, v):
        return (np.asarray(v, dtype=np.float64) - self.low) / (self.high - self.low)

    def pdf(self, v):
        return np.full_like(np.asarray(v, dtype=np.float64), 1.0 / (self.high - self.low))

    def virtual_value(self, v):
        # v - (1 - F) / f collapses to 2v - high
        return 2.0 * np.asarray(v, dtype=np.float64) - self.high

    def inverse_virtual_value(self, phi):
        return (np.asarray(phi, dtype=np.float64) + self.high) / 2.0

    def contains(self, v) -> bool:
        v = np.asarray(v, dtype=np.float64)
        return bool(((v >= self.low) & (v <= self.high)).all())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=size)


@dataclass(frozen=True)
class ReciprocalUniformDistribution:
    """Law of ``scale / l`` with ``l ~ U[l_low, l_high]`` (valuation-driven bids).

    Here F(x) = (l_high - scale/x) / (l_high - l_low) and the virtual value
    reduces to ``l_low * x**2 / scale``, which is positive and increasing, so
    the optimal reserve sits at the bottom of the support.
    """

    l_low: float
    l_high: float
    scale: float

    def __post_init__(self) -> None:
        if not (0 < self.l_low < self.l_high) or not self.scale > 0:
            raise ValueError("need 0 < l_low < l_high and scale > 0")

    @property
    def low(self) -> float:
        return self.scale / self.l_high

    @property
    def high(self) -> float:
        return self.scale / self.l_low

    def cdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return (self.l_high - self.scale / v) / (self.l_high - self.l_low)

    def pdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        return self.scale / (v * v * (self.l_high - self.l_low))

    def virtual_value(self, v):
        v = np.asarray(v, dtype=np.float64)
        return self.l_low * v * v / self.scale

    def inverse_virtual_value(self, phi):
        return np.sqrt(np.asarray(phi, dtype=np.float64) * self.scale / self.l_low)

    def contains(self, v) -> bool:
        v = np.asarray(v, dtype=np.float64)
        eps = 1e-12 * self.high
        return bool(((v >= self.low - eps) & (v <= self.high + eps)).all())

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.scale / rng.uniform(self.l_low, self.l_high, size=size)


def myerson_virtual_value(dist, v: float) -> float:
    if not dist.contains(v):
        raise ValueError(f"value {v} outside support [{dist.low}, {dist.high}]")
    return float(dist.virtual_value(v))


def myerson_batch(dist, bids: np.ndarray) -> BatchOutcome:
    bids = np.atleast_2d(np.asarray(bids, dtype=np.float64))
    if not dist.contains(bids):
        raise ValueError("bids must lie in the support of the value distribution")
    phi = dist.virtual_value(bids)
    first, second = top_two(phi)
    rows = np.arange(bids.shape[0])
    has_winner = phi[rows, first] > 0
    threshold = np.maximum(phi[rows, second], 0.0)
    # smallest winning bid, never below the bottom of the support
    price = np.maximum(dist.inverse_virtual_value(threshold), dist.low)
    price = np.minimum(price, bids[rows, first])
    payment = np.where(has_winner, price, 0.0)
    winner = np.where(has_winner, first, NO_WINNER)
    probs = np.zeros_like(bids)
    probs[rows[has_winner], first[has_winner]] = 1.0
    return BatchOutcome(phi, probs, winner, np.where(has_winner, threshold, 0.0), payment)


def myerson_oracle(dist, bids) -> AuctionOutcome:
    """Exact revenue-optimal auction when the bidders' value law is known."""
    return _single(myerson_batch(dist, validate_profile(bids)[None, :]))


def myerson_revenue_mc(dist, num_bidders: int, num_samples: int, seed: int, chunk: int = 200_000) -> float:
    """Monte-Carlo estimate of the Myerson auction's expected revenue."""
    rng = np.random.default_rng(seed)
    total = 0.0
    done = 0
    while done < num_samples:
        m = min(chunk, num_samples - done)
        total += float(myerson_batch(dist, dist.sample(rng, (m, num_bidders))).payment.sum())
        done += m
    return total / num_samples


# ---------------------------------------------------------------------------
# Utility and export
# ---------------------------------------------------------------------------


def utility(outcome: AuctionOutcome, bids, true_values) -> np.ndarray:
    """Realised utility: winner gets value minus payment, losers get 0."""
    bids = np.asarray(bids, dtype=np.float64)
    true_values = np.asarray(true_values, dtype=np.float64)
    if bids.shape != true_values.shape or bids.shape != np.shape(outcome.alloc_probs):
        raise ValueError("bids, true values and outcome must describe the same bidders")
    out = np.zeros_like(true_values)
    if outcome.winner is not None:
        out[outcome.winner] = true_values[outcome.winner] - outcome.payment
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_outcomes_csv(
    path: str | Path,
    bids: np.ndarray,
    outcome: BatchOutcome,
    baselines: dict[str, np.ndarray] | None = None,
    profile_ids: Iterable[int] | None = None,
) -> None:
    """One row per auction: id, bids, virtual bids, allocation, winner, payments."""
    bids = np.atleast_2d(bids)
    t, u = bids.shape
    baselines = baselines or {}
    ids = list(profile_ids) if profile_ids is not None else list(range(t))
    header = (
        ["profile_id"]
        + [f"bid_{i}" for i in range(u)]
        + [f"virtual_bid_{i}" for i in range(u)]
        + [f"alloc_prob_{i}" for i in range(u)]
        + ["winner", "payment"]
        + [f"payment_{name}" for name in baselines]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in range(t):
            row = [ids[r]]
            row += [_fmt(x) for x in bids[r]]
            row += [_fmt(x) for x in outcome.virtual_bids[r]]
            row += [_fmt(x) for x in outcome.alloc_probs[r]]
            row += [int(outcome.winner[r]), _fmt(outcome.payment[r])]
            row += [_fmt(pay[r]) for pay in baselines.values()]
            writer.writerow(row)
