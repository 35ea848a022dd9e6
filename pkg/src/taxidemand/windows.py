"""Temporal strata: peak windows, weekday/weekend, and permutation pseudo-days."""
from __future__ import annotations

import os
from dataclasses import dataclass
from datetime import datetime
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

MORNING_PEAK = "morning_peak"
EVENING_PEAK = "evening_peak"
OFFPEAK = "offpeak"
WEEKDAY = "weekday"
WEEKEND = "weekend"
ANY = "any"


@dataclass(frozen=True)
class TimeWindow:
    label: str
    hours: frozenset[int]
    day_class: str = ANY

    def __post_init__(self):
        if not all(0 <= h <= 23 for h in self.hours):
            raise ValueError(f"{self.label}: hours must lie in 0..23")


# 6-10 a.m. and 4-8 p.m. read as half-open, i.e. four clock hours each
DEFAULT_WINDOWS = (
    TimeWindow(MORNING_PEAK, frozenset({6, 7, 8, 9})),
    TimeWindow(EVENING_PEAK, frozenset({16, 17, 18, 19})),
)
PEAK_LABELS = (MORNING_PEAK, EVENING_PEAK)


def check_disjoint(windows: Sequence[TimeWindow]) -> None:
    seen: dict[int, str] = {}
    for w in windows:
        for h in w.hours:
            if h in seen:
                raise ValueError(f"hour {h} is in both {seen[h]} and {w.label}")
            seen[h] = w.label


def parse_windows(text: Mapping[str, str]) -> tuple[TimeWindow, ...]:
    """Build windows from ``label -> "6,7,8,9"`` entries."""
    windows = []
    for label, hours in text.items():
        hs = frozenset(int(h) for h in hours.replace(" ", "").split(",") if h)
        windows.append(TimeWindow(label, hs))
    if any(w.label == OFFPEAK for w in windows):
        raise ValueError("offpeak is the complement of the other windows and cannot be set")
    check_disjoint(windows)
    return tuple(windows)


def load_windows(path: str | os.PathLike) -> tuple[TimeWindow, ...]:
    from .ingest import read_key_values

    return parse_windows(read_key_values(path))


def day_class(ts) -> str:
    return WEEKEND if pd.Timestamp(ts).dayofweek >= 5 else WEEKDAY


def classify_hour(ts: datetime, windows: Sequence[TimeWindow] = DEFAULT_WINDOWS) -> tuple[str, str]:
    """(window label, day class) for a timestamp; Saturday and Sunday are weekend."""
    ts = pd.Timestamp(ts)
    label = next((w.label for w in windows if ts.hour in w.hours), OFFPEAK)
    return label, day_class(ts)


def classify_hours(hours, windows: Sequence[TimeWindow] = DEFAULT_WINDOWS) -> pd.DataFrame:
    """Vectorised :func:`classify_hour` for epoch-second or datetime arrays.

    Returns a frame with ``hour_of_day``, ``window`` and ``day_class`` columns.
    """
    idx = pd.DatetimeIndex(_as_datetime(hours))
    hod = idx.hour.to_numpy()
    label = np.full(len(idx), OFFPEAK, dtype=object)
    for w in windows:
        label[np.isin(hod, list(w.hours))] = w.label
    dc = np.where(idx.dayofweek.to_numpy() >= 5, WEEKEND, WEEKDAY).astype(object)
    return pd.DataFrame({"hour_of_day": hod, "window": label, "day_class": dc})


def _as_datetime(values):
    arr = np.asarray(values)
    if np.issubdtype(arr.dtype, np.integer):
        return pd.to_datetime(arr, unit="s")
    return pd.to_datetime(arr)


@dataclass(frozen=True)
class PseudoDay:
    hours: tuple  # sampled hour timestamps
    rainy: tuple[bool, ...]


def permutation_days(
    hour_pool: Sequence[tuple[object, bool]],
    rng_seed: int,
    n_pseudo_days: int,
    hours_per_day: int = 4,
) -> list[PseudoDay]:
    """Draw pseudo-days of ``hours_per_day`` distinct hours from one stratum's pool.

    ``hour_pool`` holds ``(hour, rainy)`` pairs, all from a single window and
    day class.  Hours are sampled without replacement inside a pseudo-day and
    independently across pseudo-days.
    """
    pool = list(hour_pool)
    if len(pool) < hours_per_day:
        raise ValueError(f"pool too small: {len(pool)} hours, need {hours_per_day}")
    idx = sample_pseudo_days(len(pool), rng_seed, n_pseudo_days, hours_per_day)
    return [
        PseudoDay(tuple(pool[i][0] for i in row), tuple(bool(pool[i][1]) for i in row)) for row in idx
    ]


def sample_pseudo_days(pool_size: int, rng_seed: int, n_pseudo_days: int, hours_per_day: int = 4) -> np.ndarray:
    """Index matrix (n_pseudo_days x hours_per_day) into a pool, rows without repeats."""
    if pool_size < hours_per_day:
        raise ValueError(f"pool too small: {pool_size} hours, need {hours_per_day}")
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, pool_size, size=(n_pseudo_days, hours_per_day))
    while True:
        s = np.sort(idx, axis=1)
        bad = np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))
        if bad.size == 0:
            return idx
        idx[bad] = rng.integers(0, pool_size, size=(bad.size, hours_per_day))


def write_pseudo_days(days: Sequence[PseudoDay], path: str | os.PathLike) -> None:
    rows = []
    for k, d in enumerate(days):
        for h, r in zip(d.hours, d.rainy):
            rows.append((k, pd.Timestamp(h).strftime("%Y-%m-%d %H:%M:%S"), int(r)))
    pd.DataFrame(rows, columns=["pseudo_day_id", "hour", "rainy"]).to_csv(path, index=False, lineterminator="\n")
