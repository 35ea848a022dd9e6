"""In-memory end-to-end runs: trips -> shifts -> bins -> indices -> tests."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .geo import Grid
from .metrics import CITYWIDE, HOTSPOT, aggregate_bins, compare_regimes, derive_indices
from .shifts import GAP_THRESHOLD_S, ShiftResult, build_shifts
from .simulate import SimConfig, SimResult, simulate
from .stats import OBSERVED, PERMUTATION, TestResult, run_comparison
from .weather import (
    DEFAULT_STATIONS,
    RAIN_THRESHOLD_MM,
    REF_STATION,
    classify_hours,
    observations_from_frame,
    weather_frame,
)
from .windows import DEFAULT_WINDOWS, TimeWindow

PAIRING_RULE = "rainy hour vs clear mean of same hour-of-day and day class"


@dataclass
class Analysis:
    shifts: ShiftResult
    bins: pd.DataFrame  # citywide bins
    indices: pd.DataFrame
    exclusions: Counter
    comparison: pd.DataFrame
    hotspot_bins: pd.DataFrame | None = None
    weather: pd.DataFrame | None = None


def classify_weather_frame(
    station_frame: pd.DataFrame,
    ref_station: str = REF_STATION,
    rain_threshold_mm: float = RAIN_THRESHOLD_MM,
    station_coords=DEFAULT_STATIONS,
) -> pd.DataFrame:
    obs = observations_from_frame(station_frame)
    return weather_frame(classify_hours(obs, ref_station, rain_threshold_mm, station_coords))


def analyze(
    trips: pd.DataFrame,
    weather: pd.DataFrame | None,
    windows: Sequence[TimeWindow] = DEFAULT_WINDOWS,
    gap_threshold_s: int = GAP_THRESHOLD_S,
    identity: str = "hack_license",
    overlap: str = "drop",
    supply_mode: str = "overlap",
    grid: Grid | None = None,
    cells: Iterable[int] | None = None,
    min_slot_samples: int = 10,
) -> Analysis:
    """Shifts, citywide bins, indices and the slot comparison for one trip frame.

    ``weather`` is an hour table as produced by :func:`weather.weather_frame`.
    With ``grid`` and ``cells`` a second set of bins restricted to those cells
    is built as well.
    """
    sr = build_shifts(trips, gap_threshold_s, identity, overlap)
    bins = aggregate_bins(sr.trips, sr.shifts, weather, identity=identity, supply_mode=supply_mode)
    indices, exclusions = derive_indices(bins)
    comparison = compare_regimes(indices, windows, min_samples=min_slot_samples)
    hotspot = None
    if grid is not None and cells is not None:
        hotspot = aggregate_bins(sr.trips, sr.shifts, weather, grid=grid, cells=list(cells), identity=identity)
        hotspot = hotspot[hotspot["cell"] == HOTSPOT].reset_index(drop=True)
    return Analysis(sr, bins, indices, exclusions, comparison, hotspot, weather)


def index_series(indices: pd.DataFrame, name: str = "pickups_per_driver", cell: int = CITYWIDE):
    """(values by hour, rainy flag by hour) for one index of one cell."""
    df = indices[indices["cell"] == cell].set_index("hour")
    return df[name], df["rainy"]


def run_tests(
    indices: pd.DataFrame,
    index_name: str = "pickups_per_driver",
    regimes: Sequence[str] = (OBSERVED, PERMUTATION),
    windows: Sequence[TimeWindow] = DEFAULT_WINDOWS,
    seed: int = 0,
    n_pseudo_days: int = 1000,
    cell: int = CITYWIDE,
) -> list[TestResult]:
    values, rainy = index_series(indices, index_name, cell)
    out = []
    for regime in regimes:
        out.extend(
            run_comparison(
                values, rainy, regime, windows, seed=seed, n_pseudo_days=n_pseudo_days, index_name=index_name
            )
        )
    return out


@dataclass
class SimRun:
    sim: SimResult
    analysis: Analysis
    results: list[TestResult] = field(default_factory=list)


def simulate_and_analyze(
    cfg: SimConfig,
    regimes: Sequence[str] = (OBSERVED,),
    index_name: str = "pickups_per_driver",
    n_pseudo_days: int = 1000,
) -> SimRun:
    """Simulate, classify weather from the station file, analyse and test."""
    sim = simulate(cfg)
    weather = classify_weather_frame(sim.weather)
    analysis = analyze(sim.trips, weather, gap_threshold_s=int(cfg.gap_threshold_h * 3600))
    results = run_tests(analysis.indices, index_name, regimes, seed=cfg.seed, n_pseudo_days=n_pseudo_days)
    return SimRun(sim, analysis, results)


def pick(results: Sequence[TestResult], method: str, window: str, day_class: str, regime: str = OBSERVED) -> TestResult:
    for r in results:
        if (r.method, r.window, r.day_class, r.regime) == (method, window, day_class, regime):
            return r
    raise KeyError((method, window, day_class, regime))
