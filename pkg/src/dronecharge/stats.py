"""Summary statistics over per-auction revenues."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class RevenueStats:
    n: int
    mean: float
    min: float
    p25: float
    p75: float
    max: float

    @classmethod
    def from_values(cls, values) -> RevenueStats:
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ValueError("cannot summarise an empty sample")
        # linear interpolation between order statistics
        p25, p75 = np.percentile(v, [25, 75])
        return cls(int(v.size), float(v.mean()), float(v.min()), float(p25), float(p75), float(v.max()))


STATS_HEADER = ["mechanism"] + [f.name for f in fields(RevenueStats)]


def write_stats_csv(path: str | Path, rows: Iterable[tuple[str, RevenueStats]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATS_HEADER)
        for name, s in rows:
            n, *rest = astuple(s)
            writer.writerow([name, n] + [repr(x) for x in rest])


def read_column(path: str | Path, column: str) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: no column named {column!r}")
        return np.array([float(row[column]) for row in reader])
