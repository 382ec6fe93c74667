"""Two-stage min-max monotonic network and its exact inverse.

A bid ``b`` of bidder ``i`` is mapped to a virtual bid by a per-bidder
network followed by a network shared by every bidder::

    b'   = min_g max_n (w_i[g, n] * b  + beta_i[g, n])
    bbar = min_g max_n (w_s[g, n] * b' + beta_s[g, n])

With strictly positive weights every stage is strictly increasing and
piecewise linear, so the inverse is available in closed form as a
max-of-min over the same weights::

    x = max_g min_n (y - beta[g, n]) / w[g, n]

The batched helpers (``stage_forward``/``stage_inverse``) return the
selected unit of every evaluation so that training can route gradients
through exactly one affine unit. Ties resolve to the lowest (g, n) index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

CHECKPOINT_FORMAT = "dronecharge-mononet"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkShape:
    """Sizes of the monotonic network: bidders, groups and units per group."""

    num_bidders: int
    num_groups: int = 5
    num_units: int = 10

    def __post_init__(self) -> None:
        for name in ("num_bidders", "num_groups", "num_units"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


@dataclass
class MonoNetParams:
    """Weights and biases of the per-bidder and shared networks.

    ``bidder_w``/``bidder_b`` have shape (U, G, N); ``shared_w``/``shared_b``
    have shape (G, N). The inverse pass reads these same arrays, so any
    in-place update is seen by both directions.
    """

    bidder_w: np.ndarray
    bidder_b: np.ndarray
    shared_w: np.ndarray
    shared_b: np.ndarray

    def __post_init__(self) -> None:
        self.bidder_w = np.asarray(self.bidder_w, dtype=np.float64)
        self.bidder_b = np.asarray(self.bidder_b, dtype=np.float64)
        self.shared_w = np.asarray(self.shared_w, dtype=np.float64)
        self.shared_b = np.asarray(self.shared_b, dtype=np.float64)
        if self.bidder_w.ndim != 3 or self.bidder_w.shape != self.bidder_b.shape:
            raise ValueError("per-bidder weights and biases must both have shape (U, G, N)")
        if self.shared_w.shape != self.bidder_w.shape[1:] or self.shared_b.shape != self.shared_w.shape:
            raise ValueError("shared weights and biases must have shape (G, N) matching the per-bidder arrays")

    @property
    def shape(self) -> NetworkShape:
        u, g, n = self.bidder_w.shape
        return NetworkShape(u, g, n)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.bidder_w, self.bidder_b, self.shared_w, self.shared_b

    def copy(self) -> MonoNetParams:
        return MonoNetParams(*(a.copy() for a in self.arrays()))

    def satisfies_floor(self, weight_floor: float) -> bool:
        """True when every weight is >= ``weight_floor`` and every bias >= 0."""
        return bool(
            (self.bidder_w >= weight_floor).all()
            and (self.shared_w >= weight_floor).all()
            and (self.bidder_b >= 0).all()
            and (self.shared_b >= 0).all()
        )

    def equals(self, other: MonoNetParams) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    @classmethod
    def identity(cls, shape: NetworkShape) -> MonoNetParams:
        """Parameters for which every unit is ``1 * x + 0`` (both stages are the identity)."""
        u, g, n = shape.num_bidders, shape.num_groups, shape.num_units
        return cls(np.ones((u, g, n)), np.zeros((u, g, n)), np.ones((g, n)), np.zeros((g, n)))


def init_xavier(shape: NetworkShape, seed: int, weight_floor: float = 1e-4) -> MonoNetParams:
    """Glorot-uniform weights for 1-in/1-out units, clipped to the floor; zero biases."""
    rng = np.random.default_rng(seed)
    fan_in = fan_out = 1
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    u, g, n = shape.num_bidders, shape.num_groups, shape.num_units
    bidder_w = rng.uniform(-limit, limit, size=(u, g, n))
    shared_w = rng.uniform(-limit, limit, size=(g, n))
    params = MonoNetParams(bidder_w, np.zeros((u, g, n)), shared_w, np.zeros((g, n)))
    return clip_params(params, weight_floor)


def clip_params(params: MonoNetParams, weight_floor: float) -> MonoNetParams:
    """Return a copy with weights floored at ``weight_floor`` and biases at 0."""
    if not weight_floor > 0:
        raise ValueError(f"weight floor must be positive, got {weight_floor!r}")
    return MonoNetParams(
        np.maximum(params.bidder_w, weight_floor),
        np.maximum(params.bidder_b, 0.0),
        np.maximum(params.shared_w, weight_floor),
        np.maximum(params.shared_b, 0.0),
    )


def clip_params_(params: MonoNetParams, weight_floor: float) -> None:
    """In-place variant of :func:`clip_params`."""
    if not weight_floor > 0:
        raise ValueError(f"weight floor must be positive, got {weight_floor!r}")
    np.maximum(params.bidder_w, weight_floor, out=params.bidder_w)
    np.maximum(params.shared_w, weight_floor, out=params.shared_w)
    np.maximum(params.bidder_b, 0.0, out=params.bidder_b)
    np.maximum(params.shared_b, 0.0, out=params.shared_b)


# ---------------------------------------------------------------------------
# Batched stage evaluation
# ---------------------------------------------------------------------------


def _select(values: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    """Pick ``values[..., g, n]`` at ``flat_index = g * N + n`` for each leading position."""
    g, n = values.shape[-2:]
    flat = values.reshape(values.shape[:-2] + (g * n,))
    flat = np.broadcast_to(flat, flat_index.shape + (g * n,))
    return np.take_along_axis(flat, flat_index[..., None], axis=-1)[..., 0]


def stage_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``min_g max_n (w x + b)`` elementwise.

    ``x`` has shape (..., U). ``w``/``b`` are either (U, G, N) (one network
    per trailing position) or (G, N) (one network shared by all).

    Returns:
        The outputs, shape (..., U), and the flat index ``g * N + n`` of the
        unit that produced each output.
    """
    x = np.asarray(x, dtype=np.float64)
    units = x[..., None, None] * w + b
    n_best = units.argmax(axis=-1)
    group_max = np.take_along_axis(units, n_best[..., None], axis=-1)[..., 0]
    g_best = group_max.argmin(axis=-1)
    y = np.take_along_axis(group_max, g_best[..., None], axis=-1)[..., 0]
    n_sel = np.take_along_axis(n_best, g_best[..., None], axis=-1)[..., 0]
    return y, g_best * w.shape[-1] + n_sel


def stage_inverse(y: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``max_g min_n (y - b) / w``, the inverse of :func:`stage_forward`.

    Same shape conventions and return layout as :func:`stage_forward`.
    """
    y = np.asarray(y, dtype=np.float64)
    units = (y[..., None, None] - b) / w
    n_best = units.argmin(axis=-1)
    group_min = np.take_along_axis(units, n_best[..., None], axis=-1)[..., 0]
    g_best = group_min.argmax(axis=-1)
    x = np.take_along_axis(group_min, g_best[..., None], axis=-1)[..., 0]
    n_sel = np.take_along_axis(n_best, g_best[..., None], axis=-1)[..., 0]
    return x, g_best * w.shape[-1] + n_sel


def select_unit(arr: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    """Weight (or bias) of the selected unit, broadcast like ``flat_index``."""
    return _select(arr, flat_index)


def _bidder_arrays(params: MonoNetParams, bidder_ids: np.ndarray | None):
    if bidder_ids is None:
        return params.bidder_w, params.bidder_b
    return params.bidder_w[bidder_ids], params.bidder_b[bidder_ids]


def transform_batch(params: MonoNetParams, bids: np.ndarray, bidder_ids: np.ndarray | None = None) -> np.ndarray:
    """Virtual bids for an array of profiles of shape (..., U).

    ``bidder_ids`` selects which per-bidder networks score the columns of
    ``bids`` (defaults to all bidders in order).
    """
    w, b = _bidder_arrays(params, bidder_ids)
    bids = np.asarray(bids, dtype=np.float64)
    if bids.shape[-1] != w.shape[0]:
        raise ValueError(f"profile has {bids.shape[-1]} bids but the network expects {w.shape[0]}")
    hidden, _ = stage_forward(bids, w, b)
    out, _ = stage_forward(hidden, params.shared_w, params.shared_b)
    return out


def inverse_batch(params: MonoNetParams, virtual: np.ndarray, bidder_ids: np.ndarray | None = None) -> np.ndarray:
    """Map virtual values of shape (..., U) back to bid space (shared inverse first)."""
    w, b = _bidder_arrays(params, bidder_ids)
    virtual = np.asarray(virtual, dtype=np.float64)
    if virtual.shape[-1] != w.shape[0]:
        raise ValueError(f"got {virtual.shape[-1]} values but the network expects {w.shape[0]}")
    hidden, _ = stage_inverse(virtual, params.shared_w, params.shared_b)
    out, _ = stage_inverse(hidden, w, b)
    return out


# ---------------------------------------------------------------------------
# Scalar API
# ---------------------------------------------------------------------------


def _check_bidder(params: MonoNetParams, i: int) -> None:
    u = params.bidder_w.shape[0]
    if not 0 <= i < u:
        raise IndexError(f"bidder index {i} out of range for {u} bidders")


def forward_bidder(params: MonoNetParams, i: int, b: float) -> float:
    _check_bidder(params, i)
    y, _ = stage_forward(np.asarray([b]), params.bidder_w[i], params.bidder_b[i])
    return float(y[0])


def forward_shared(params: MonoNetParams, x: float) -> float:
    y, _ = stage_forward(np.asarray([x]), params.shared_w, params.shared_b)
    return float(y[0])


def inverse_bidder(params: MonoNetParams, i: int, y: float) -> float:
    _check_bidder(params, i)
    x, _ = stage_inverse(np.asarray([y]), params.bidder_w[i], params.bidder_b[i])
    return float(x[0])


def inverse_shared(params: MonoNetParams, y: float) -> float:
    x, _ = stage_inverse(np.asarray([y]), params.shared_w, params.shared_b)
    return float(x[0])


def transform(params: MonoNetParams, bids) -> np.ndarray:
    """Virtual bids of a single profile; one entry per bidder."""
    bids = np.asarray(bids, dtype=np.float64)
    if bids.ndim != 1:
        raise ValueError("a bid profile must be one-dimensional")
    return transform_batch(params, bids)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def checkpoint_document(params: MonoNetParams, train_config: dict[str, Any] | None = None) -> dict[str, Any]:
    shape = params.shape
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shape": {
            "num_bidders": shape.num_bidders,
            "num_groups": shape.num_groups,
            "num_units": shape.num_units,
        },
        "train_config": train_config or {},
        "bidder_weights": params.bidder_w.ravel().tolist(),
        "bidder_biases": params.bidder_b.ravel().tolist(),
        "shared_weights": params.shared_w.ravel().tolist(),
        "shared_biases": params.shared_b.ravel().tolist(),
    }


def save_checkpoint(path: str | Path, params: MonoNetParams, train_config: dict[str, Any] | None = None) -> None:
    """Write parameters as JSON. Floats are emitted with shortest round-trip repr."""
    doc = checkpoint_document(params, train_config)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[MonoNetParams, dict[str, Any]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a monotonic-network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    shape = NetworkShape(**doc["shape"])
    u, g, n = shape.num_bidders, shape.num_groups, shape.num_units
    params = MonoNetParams(
        np.array(doc["bidder_weights"], dtype=np.float64).reshape(u, g, n),
        np.array(doc["bidder_biases"], dtype=np.float64).reshape(u, g, n),
        np.array(doc["shared_weights"], dtype=np.float64).reshape(g, n),
        np.array(doc["shared_biases"], dtype=np.float64).reshape(g, n),
    )
    return params, doc.get("train_config", {})
