"""Longitudinal trend features over irregular clinical time series.

Observations are snapped to a monthly grid anchored at baseline (t = 0).
Short gaps are carried forward, longer interior gaps are linearly
interpolated, and trailing-window descriptors are derived from the cleaned
grid.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..errors import EmptySeries

OBSERVED = "observed"
FORWARD_FILLED = "ffill"
INTERPOLATED = "interp"


@dataclass(frozen=True)
class SeriesPoint:
    time: float  # months since baseline
    value: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValueError(f"time must be finite and >= 0, got {self.time}")
        if not math.isfinite(self.value):
            raise ValueError(f"value must be finite, got {self.value}")


@dataclass(frozen=True)
class TrendParams:
    window: int = 3
    deltas: tuple[int, ...] = (1, 3, 6)
    # gaps of fewer missing months than this are forward-filled
    interpolate_from: int = 3
    eps: float = 1e-9


@dataclass
class TrendFeatures:
    aligned: list[float | None]
    fill: list[str | None]
    moving_average: list[float | None]
    slope: list[float | None]
    rate_of_change: dict[tuple[int, int], float | None] = field(default_factory=dict)

    def to_dict(self, digits: int | None = None) -> dict:
        def rr(v):
            return v if digits is None or v is None else round(v, digits)

        roc: dict[str, list] = {}
        for (t, d), v in sorted(self.rate_of_change.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            roc.setdefault(str(d), []).append([t, rr(v)])
        return {
            "aligned": [rr(v) for v in self.aligned],
            "fill": list(self.fill),
            "moving_average": [rr(v) for v in self.moving_average],
            "slope": [rr(v) for v in self.slope],
            "rate_of_change": roc,
        }


def snap_month(t: float) -> int:
    """Nearest grid month; exact halves go to the earlier month."""
    return math.ceil(t - 0.5)


def align(series: Sequence[SeriesPoint], params: TrendParams = TrendParams()) -> tuple[list[float | None], list[str | None]]:
    if not series:
        raise EmptySeries("series has no observations")
    buckets: dict[int, list[float]] = {}
    for p in series:
        buckets.setdefault(snap_month(p.time), []).append(p.value)
    last = max(buckets)
    values: list[float | None] = [None] * (last + 1)
    fill: list[str | None] = [None] * (last + 1)
    for m, vals in buckets.items():
        values[m] = math.fsum(vals) / len(vals)
        fill[m] = OBSERVED

    observed = sorted(buckets)
    for left, right in zip(observed, observed[1:]):
        missing = right - left - 1
        if missing <= 0:
            continue
        x0, x1 = values[left], values[right]
        for m in range(left + 1, right):
            if missing < params.interpolate_from:
                values[m] = x0
                fill[m] = FORWARD_FILLED
            else:
                values[m] = x0 + (x1 - x0) * (m - left) / (right - left)
                fill[m] = INTERPOLATED
    return values, fill


def ols_slope(ts: Sequence[float], xs: Sequence[float]) -> float:
    n = len(ts)
    t_mean = math.fsum(ts) / n
    x_mean = math.fsum(xs) / n
    num = math.fsum((t - t_mean) * (x - x_mean) for t, x in zip(ts, xs))
    den = math.fsum((t - t_mean) ** 2 for t in ts)
    return num / den


def rate_of_change(values: Sequence[float | None], t: int, delta: int, eps: float = 1e-9) -> float | None:
    """(x_t - x_{t-delta}) / (|x_{t-delta}| * delta), or None when undefined."""
    if delta <= 0 or t - delta < 0 or t >= len(values):
        return None
    now, then = values[t], values[t - delta]
    if now is None or then is None or abs(then) < eps:
        return None
    return (now - then) / (abs(then) * delta)


def features(series: Sequence[SeriesPoint], params: TrendParams = TrendParams()) -> TrendFeatures:
    values, fill = align(series, params)
    w = params.window
    moving: list[float | None] = []
    slopes: list[float | None] = []
    for m in range(len(values)):
        window = [(j, values[j]) for j in range(max(0, m - w + 1), m + 1) if values[j] is not None]
        if len(window) < 2:
            moving.append(None)
            slopes.append(None)
            continue
        ts = [float(j) for j, _ in window]
        xs = [v for _, v in window]
        moving.append(math.fsum(xs) / len(xs))
        slopes.append(ols_slope(ts, xs))
    roc = {
        (t, d): rate_of_change(values, t, d, params.eps)
        for d in params.deltas
        for t in range(d, len(values))
    }
    return TrendFeatures(aligned=values, fill=fill, moving_average=moving, slope=slopes, rate_of_change=roc)


def parse_csv(text: str) -> dict[str, list[SeriesPoint]]:
    """Parse ``time_months,<value columns...>`` CSV into one series per value column."""
    reader = csv.DictReader(io.StringIO(text.strip()))
    if not reader.fieldnames or reader.fieldnames[0].strip() != "time_months":
        raise ValueError("CSV header must start with time_months")
    columns = [c.strip() for c in reader.fieldnames[1:]]
    if not columns:
        raise ValueError("CSV needs at least one value column")
    out: dict[str, list[SeriesPoint]] = {c: [] for c in columns}
    for row in reader:
        row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
        t = float(row["time_months"])
        for c in columns:
            if row.get(c):
                out[c].append(SeriesPoint(t, float(row[c])))
    for c in columns:
        out[c].sort(key=lambda p: p.time)
    return out


class LongitudinalAgent:
    """Tool surface: payload is inline CSV or the name of a CSV under ``data_dir``."""

    def __init__(self, data_dir: str | Path | None = None, params: TrendParams = TrendParams(), digits: int = 4):
        self.data_dir = Path(data_dir) if data_dir else None
        self.params = params
        self.digits = digits

    def _load(self, payload: str) -> str:
        text = payload.strip()
        if text.startswith("time_months"):
            return text
        if self.data_dir is None:
            raise ValueError("payload is not CSV and no data directory is configured")
        name = text.removesuffix(".csv")
        path = (self.data_dir / f"{name}.csv").resolve()
        if self.data_dir.resolve() not in path.parents:
            raise ValueError(f"series {text!r} resolves outside the data directory")
        if not path.exists():
            raise FileNotFoundError(f"no series named {text!r}")
        return path.read_text(encoding="utf-8")

    def __call__(self, payload: str) -> str:
        series = parse_csv(self._load(payload))
        report = {name: features(points, self.params).to_dict(self.digits) for name, points in series.items()}
        return json.dumps(report, separators=(",", ":"))
