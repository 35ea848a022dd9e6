"""Hourly (and per-cell) bins and the demand-mismatch indices derived from them.

Bins are built from mergeable partial aggregates.  Every additive field is
kept as an integer (cents, metres, seconds) so that merging partitions in any
order reproduces single-pass totals exactly.  Supply is a count of distinct
drivers, so partials carry the set of active (bin, driver) pairs and the
count is taken only after merging.

Attribution rules:

* pickups, income, occupied time, distance and travel time go to the hour
  (and cell) of the pickup;
* an empty interval goes to the hour (and cell) of the pickup that ends it;
* citywide supply counts drivers whose shift ``[start, end]`` touches the hour;
  per-cell supply counts drivers with a pickup or dropoff in the cell that hour.
"""
from __future__ import annotations

import hashlib
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .geo import Grid, haversine_km
from .ingest import EPOCH, TripRecord
from .shifts import EmptyInterval, Shift
from .windows import DEFAULT_WINDOWS, TimeWindow, classify_hours

CITYWIDE = -1
HOTSPOT = -2
MAX_TRIPS_PER_DRIVER_HOUR = 12
MIN_SLOT_SAMPLES = 10

SUM_FIELDS = ("pickups", "income_cents", "occupied_s", "empty_s", "dist_m", "travel_s", "empty_m", "n_empty", "active_s")
BIN_COLUMNS = ["hour", "cell", "supply", "pickups", "income", "occupied_s", "empty_s", "dist_km", "travel_s", "rainy"]
EXTRA_BIN_COLUMNS = ["empty_km", "n_empty"]
INDEX_NAMES = ("pickups_per_driver", "income_per_driver", "space_mean_speed", "empty_travel_speed", "mean_empty_gap_s")


# ---------------------------------------------------------------------------
# record-level operations


@dataclass
class HourlyBin:
    hour: datetime
    cell: int | None = None
    supply: float = 0
    pickups: int = 0
    income: float = 0.0
    occupied_s: int = 0
    empty_s: int = 0
    dist_km: float = 0.0
    travel_s: int = 0
    rainy: bool | None = None


def _secs(t: datetime) -> int:
    return int((t - EPOCH).total_seconds())


def active_supply(shifts: Iterable[Shift], hour: datetime) -> int:
    """Distinct drivers whose shift ``[start, end]`` overlaps ``[hour, hour + 1h)``."""
    lo = _secs(hour)
    hi = lo + 3600
    return len({s.driver for s in shifts if _secs(s.start) < hi and _secs(s.end) >= lo})


def pickups_per_driver(b: HourlyBin) -> float | None:
    """Pickups per active driver; None (excluded) when supply is zero."""
    return b.pickups / b.supply if b.supply > 0 else None


def income_per_driver(b: HourlyBin) -> float | None:
    return b.income / b.supply if b.supply > 0 else None


def space_mean_speed(b: HourlyBin) -> float | None:
    """Total distance over total travel time, in km/h; None when no travel time."""
    return b.dist_km / (b.travel_s / 3600.0) if b.travel_s > 0 else None


def empty_travel_speed(intervals: Sequence[EmptyInterval]) -> tuple[float, float] | None:
    """(relocation km per empty hour, mean gap seconds); None for no intervals."""
    if not intervals:
        return None
    gap = sum(i.gap_seconds for i in intervals)
    km = sum(i.relocation_km for i in intervals)
    return km / (gap / 3600.0), gap / len(intervals)


def grid_density(trips, grid: Grid) -> np.ndarray:
    """Pickup counts per grid cell as a ``grid.shape`` array.  Pickups off the grid are ignored."""
    if isinstance(trips, pd.DataFrame):
        lat, lon = trips["pickup_lat"].to_numpy(), trips["pickup_lon"].to_numpy()
    else:
        trips = list(trips)
        lat = np.array([t.pickup_lat for t in trips], dtype=np.float64)
        lon = np.array([t.pickup_lon for t in trips], dtype=np.float64)
    idx = grid.cell_index(lat, lon)
    idx = idx[idx >= 0]
    counts = np.bincount(idx, minlength=grid.n_rows * grid.n_cols)
    return counts.reshape(grid.shape)


# ---------------------------------------------------------------------------
# mergeable aggregation


def driver_hash(names) -> np.ndarray:
    """Stable 64-bit hash of driver id strings; shared by all partitions."""
    return np.array(
        [int.from_bytes(hashlib.blake2b(str(n).encode(), digest_size=8).digest(), "little", signed=True) for n in names],
        dtype=np.int64,
    )


def _hash_column(col: pd.Series) -> np.ndarray:
    if not isinstance(col.dtype, pd.CategoricalDtype):
        col = col.astype("category")
    table = driver_hash(col.cat.categories)
    return table[col.cat.codes.to_numpy()] if len(table) else np.zeros(len(col), np.int64)


def _unique_pairs(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if a.size == 0:
        return a, b
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    keep = np.r_[True, (a[1:] != a[:-1]) | (b[1:] != b[:-1])]
    return a[keep], b[keep]


@dataclass
class PartialBins:
    """Additive sums per (hour, cell) plus the set of active (hour, cell, driver) triples."""

    sums: pd.DataFrame = field(default_factory=lambda: _empty_sums())
    active_key: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # hour * K + cell slot
    active_driver: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    n_cells: int = 0

    def merge(self, other: "PartialBins") -> "PartialBins":
        return merge_partials([self, other])


def _empty_sums() -> pd.DataFrame:
    idx = pd.MultiIndex.from_arrays([np.zeros(0, np.int64), np.zeros(0, np.int64)], names=["hour", "cell"])
    return pd.DataFrame({f: np.zeros(0, np.int64) for f in SUM_FIELDS}, index=idx)


def _key(hour, cell, n_cells):
    return hour * (n_cells + 2) + (cell + 2)


def _unkey(key, n_cells):
    hour, slot = np.divmod(key, n_cells + 2)
    return hour, slot - 2


def _cells(grid: Grid | None, cells, lat, lon) -> np.ndarray:
    """Cell key per point: CITYWIDE without a grid, HOTSPOT/-3 with a cell set, flat index otherwise."""
    if grid is None:
        return np.full(len(lat), CITYWIDE, dtype=np.int64)
    idx = grid.cell_index(lat, lon)
    if cells is None:
        return idx  # -1 for off-grid points; dropped by callers
    return np.where(np.isin(idx, np.asarray(list(cells), dtype=np.int64)), HOTSPOT, -3)


def aggregate_partial(
    trips: pd.DataFrame | None = None,
    shifts: pd.DataFrame | None = None,
    grid: Grid | None = None,
    cells: Iterable[int] | None = None,
    identity: str = "hack_license",
) -> PartialBins:
    """Aggregate one partition.

    ``trips`` is (a slice of) ``ShiftResult.trips``; ``shifts`` is (a slice of)
    ``ShiftResult.shifts``.  Without a grid, bins are citywide and supply comes
    from ``shifts``.  With a grid, bins are per cell (or one HOTSPOT bin for a
    cell set) and supply comes from trip endpoints.
    """
    n_cells = grid.n_rows * grid.n_cols if grid is not None else 0
    frames, keys, drivers = [], [], []
    if trips is not None and len(trips):
        pu = trips["pickup_time"].to_numpy(np.int64)
        do = trips["dropoff_time"].to_numpy(np.int64)
        dist_m = np.rint(trips["trip_distance"].to_numpy() * 1000.0).astype(np.int64)
        gap = trips["gap_before_s"].to_numpy(np.int64) if "gap_before_s" in trips else np.full(len(trips), -1)
        reloc = trips["relocation_km"].to_numpy() if "relocation_km" in trips else np.full(len(trips), np.nan)
        has_gap = gap > 0
        duration = do - pu
        hour = pu // 3600
        cell = _cells(grid, cells, trips["pickup_lat"].to_numpy(), trips["pickup_lon"].to_numpy())
        df = pd.DataFrame(
            {
                "hour": hour,
                "cell": cell,
                "pickups": np.ones(len(trips), np.int64),
                "income_cents": np.rint(trips["fare_total"].to_numpy() * 100.0).astype(np.int64),
                "occupied_s": duration,
                "empty_s": np.where(has_gap, gap, 0),
                "dist_m": np.where(dist_m > 0, dist_m, 0),
                "travel_s": np.where(dist_m > 0, duration, 0),
                "empty_m": np.where(has_gap, np.rint(np.nan_to_num(reloc) * 1000.0), 0).astype(np.int64),
                "n_empty": has_gap.astype(np.int64),
                "active_s": np.zeros(len(trips), np.int64),
            }
        )
        if grid is not None:
            df = df[df["cell"] >= HOTSPOT]
            h = _hash_column(trips[identity])
            dcell = _cells(grid, cells, trips["dropoff_lat"].to_numpy(), trips["dropoff_lon"].to_numpy())
            for hh, cc in ((hour, cell), (do // 3600, dcell)):
                m = cc >= HOTSPOT
                keys.append(_key(hh[m], cc[m], n_cells))
                drivers.append(h[m])
        frames.append(df)

    if grid is None and shifts is not None and len(shifts):
        start = shifts["start"].to_numpy(np.int64)
        end = shifts["end"].to_numpy(np.int64)
        h0, h1 = start // 3600, end // 3600
        span = h1 - h0 + 1
        rep = np.repeat(np.arange(len(shifts)), span)
        hours = h0[rep] + (np.arange(rep.size) - np.repeat(np.cumsum(span) - span, span))
        overlap = np.minimum(end[rep], (hours + 1) * 3600) - np.maximum(start[rep], hours * 3600)
        keys.append(_key(hours, np.full(hours.size, CITYWIDE), n_cells))
        drivers.append(driver_hash_series(shifts["driver"])[rep])
        z = np.zeros(hours.size, np.int64)
        frames.append(
            pd.DataFrame(
                {"hour": hours, "cell": np.full(hours.size, CITYWIDE), **{f: z for f in SUM_FIELDS[:-1]}, "active_s": overlap}
            )
        )

    sums = _empty_sums()
    if frames:
        sums = pd.concat(frames, ignore_index=True).groupby(["hour", "cell"], sort=True)[list(SUM_FIELDS)].sum()
    key = np.concatenate(keys) if keys else np.zeros(0, np.int64)
    drv = np.concatenate(drivers) if drivers else np.zeros(0, np.int64)
    key, drv = _unique_pairs(key, drv)
    return PartialBins(sums, key, drv, n_cells)


def driver_hash_series(col: pd.Series) -> np.ndarray:
    return _hash_column(col)


def merge_partials(parts: Sequence[PartialBins]) -> PartialBins:
    parts = list(parts)
    if not parts:
        return PartialBins()
    n_cells = {p.n_cells for p in parts}
    if len(n_cells) != 1:
        raise ValueError("partials come from different grids")
    non_empty = [p.sums for p in parts if len(p.sums)]
    sums = pd.concat(non_empty).groupby(level=["hour", "cell"], sort=True).sum() if non_empty else _empty_sums()
    key, drv = _unique_pairs(
        np.concatenate([p.active_key for p in parts]), np.concatenate([p.active_driver for p in parts])
    )
    return PartialBins(sums, key, drv, n_cells.pop())


def finalize_bins(
    partial: PartialBins,
    weather: pd.DataFrame | None = None,
    supply_mode: str = "overlap",
    max_trips_per_hour: int = MAX_TRIPS_PER_DRIVER_HOUR,
) -> pd.DataFrame:
    """Turn merged partials into the bin table.

    ``supply_mode="fractional"`` replaces the driver count with driver-hours
    actually covered inside each hour (citywide bins only).
    """
    if supply_mode not in ("overlap", "fractional"):
        raise ValueError("supply_mode must be 'overlap' or 'fractional'")
    ukey, counts = np.unique(partial.active_key, return_counts=True)
    sums = partial.sums
    skey = _key(
        sums.index.get_level_values("hour").to_numpy(np.int64),
        sums.index.get_level_values("cell").to_numpy(np.int64),
        partial.n_cells,
    )
    all_key = np.union1d(skey, ukey)
    hour, cell = _unkey(all_key, partial.n_cells)
    out = pd.DataFrame({"hour": hour * 3600, "cell": cell})
    pos = np.searchsorted(all_key, skey)
    for f in SUM_FIELDS:
        col = np.zeros(len(all_key), np.int64)
        col[pos] = sums[f].to_numpy(np.int64)
        out[f] = col
    supply = np.zeros(len(all_key), np.int64)
    supply[np.searchsorted(all_key, ukey)] = counts
    out["supply"] = supply
    if supply_mode == "fractional":
        out["supply"] = out["active_s"] / 3600.0
    out["income"] = out["income_cents"] / 100.0
    out["dist_km"] = out["dist_m"] / 1000.0
    out["empty_km"] = out["empty_m"] / 1000.0
    out["rainy"] = pd.array([pd.NA] * len(out), dtype="boolean")
    if weather is not None and len(out):
        w = weather.set_index("hour")["rainy"]
        out["rainy"] = pd.array(w.reindex(out["hour"]).to_numpy(), dtype="boolean")
    out["overloaded"] = out["pickups"] > out["supply"] * max_trips_per_hour
    return out


CHUNK_ROWS = 1_000_000


def aggregate_bins(
    trips: pd.DataFrame,
    shifts: pd.DataFrame,
    weather: pd.DataFrame | None = None,
    grid: Grid | None = None,
    cells: Iterable[int] | None = None,
    identity: str = "hack_license",
    supply_mode: str = "overlap",
) -> pd.DataFrame:
    """Aggregate, then finalize.

    Large inputs are cut into chunks of ``CHUNK_ROWS`` and merged, which gives
    the same table as one pass while bounding the working memory.
    """
    n_chunks = max(1, -(-max(len(trips), len(shifts)) // CHUNK_ROWS))
    if n_chunks == 1:
        return finalize_bins(aggregate_partial(trips, shifts, grid, cells, identity), weather, supply_mode)
    tb = np.linspace(0, len(trips), n_chunks + 1).astype(np.int64)
    sb = np.linspace(0, len(shifts), n_chunks + 1).astype(np.int64)
    parts = [
        aggregate_partial(trips.iloc[tb[i] : tb[i + 1]], shifts.iloc[sb[i] : sb[i + 1]], grid, cells, identity)
        for i in range(n_chunks)
    ]
    return finalize_bins(merge_partials(parts), weather, supply_mode)


def derive_indices(bins: pd.DataFrame) -> tuple[pd.DataFrame, Counter]:
    """Per-bin indices; excluded values are NaN and counted in the returned Counter."""
    out = bins[["hour", "cell", "rainy"]].copy()
    supply = bins["supply"].to_numpy(np.float64)
    travel = bins["travel_s"].to_numpy(np.float64)
    n_empty = bins["n_empty"].to_numpy(np.float64)
    empty_s = bins["empty_s"].to_numpy(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out["pickups_per_driver"] = np.where(supply > 0, bins["pickups"] / supply, np.nan)
        out["income_per_driver"] = np.where(supply > 0, bins["income"] / supply, np.nan)
        out["space_mean_speed"] = np.where(travel > 0, bins["dist_km"] / (travel / 3600.0), np.nan)
        out["empty_travel_speed"] = np.where(n_empty > 0, bins["empty_km"] / (empty_s / 3600.0), np.nan)
        out["mean_empty_gap_s"] = np.where(n_empty > 0, empty_s / n_empty, np.nan)
    exclusions = Counter(
        {
            "supply=0": int((supply <= 0).sum()),
            "travel_s=0": int((travel <= 0).sum()),
            "no empty intervals": int((n_empty <= 0).sum()),
            "overloaded": int(bins["overloaded"].sum()) if "overloaded" in bins else 0,
        }
    )
    return out, exclusions


def compare_regimes(
    indices: pd.DataFrame,
    windows: Sequence[TimeWindow] = DEFAULT_WINDOWS,
    index_names: Sequence[str] = INDEX_NAMES,
    min_samples: int = MIN_SLOT_SAMPLES,
) -> pd.DataFrame:
    """Mean of each index over rainy and clear hours per (day class, hour-of-day) slot.

    Hours without a rain classification are ignored.  A slot whose smaller
    side has fewer than ``min_samples`` values is flagged ``masked``.
    """
    cols = ["slot", "index", "clear_mean", "rainy_mean", "n_clear", "n_rainy", "masked"]
    df = indices[indices["rainy"].notna()]
    if df.empty:
        return pd.DataFrame(columns=cols)
    cls = classify_hours(df["hour"].to_numpy(np.int64), windows)
    slot = cls["day_class"].to_numpy() + "-" + np.char.zfill(cls["hour_of_day"].to_numpy().astype(str), 2).astype(object)
    rows = []
    rainy = df["rainy"].to_numpy(dtype=bool)
    for name in index_names:
        vals = df[name].to_numpy(np.float64)
        ok = ~np.isnan(vals)
        g = pd.DataFrame({"slot": slot[ok], "rainy": rainy[ok], "v": vals[ok]})
        stats = g.groupby(["slot", "rainy"])["v"].agg(["mean", "count"])
        for s in sorted(set(slot)):
            c = stats.loc[(s, False)] if (s, False) in stats.index else None
            r = stats.loc[(s, True)] if (s, True) in stats.index else None
            n_c = int(c["count"]) if c is not None else 0
            n_r = int(r["count"]) if r is not None else 0
            rows.append(
                (
                    s,
                    name,
                    float(c["mean"]) if c is not None else np.nan,
                    float(r["mean"]) if r is not None else np.nan,
                    n_c,
                    n_r,
                    min(n_c, n_r) < min_samples,
                )
            )
    return pd.DataFrame(rows, columns=cols)


# ---------------------------------------------------------------------------
# export


def cell_label(cell: int, grid: Grid | None) -> str:
    if cell == CITYWIDE:
        return ""
    if cell == HOTSPOT:
        return "hotspot"
    if grid is None:
        return str(cell)
    c = grid.cell(cell)
    return f"{c.row}:{c.col}"


def write_bins_csv(bins: pd.DataFrame, path: str | os.PathLike, grid: Grid | None = None) -> None:
    out = bins[BIN_COLUMNS + EXTRA_BIN_COLUMNS].copy()
    out["hour"] = pd.to_datetime(out["hour"], unit="s").dt.strftime("%Y-%m-%d %H:%M:%S")
    out["cell"] = [cell_label(c, grid) for c in out["cell"].tolist()]
    out["rainy"] = out["rainy"].astype("Int64")
    out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def read_bins_csv(path: str | os.PathLike) -> pd.DataFrame:
    df = pd.read_csv(path, keep_default_na=False, na_values={"rainy": [""]}, dtype={"cell": str})
    df["hour"] = (pd.to_datetime(df["hour"]) - pd.Timestamp(EPOCH)) // pd.Timedelta(seconds=1)
    df["rainy"] = df["rainy"].astype("boolean")
    return df


def write_comparison_csv(comp: pd.DataFrame, path: str | os.PathLike) -> None:
    out = comp.copy()
    out["masked"] = out["masked"].astype(int)
    out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
