"""Driver shift reconstruction.

Consecutive trips of one driver belong to the same shift while the idle gap
from a dropoff to the next pickup stays within ``gap_threshold`` (8 hours by
default; a gap exactly equal to the threshold does not split).  A shift starts
at its first pickup and ends at its last dropoff, so supply derived from
shifts ignores any cruising before the first fare.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .geo import haversine_km
from .ingest import EPOCH, TripRecord

GAP_THRESHOLD = timedelta(hours=8)
GAP_THRESHOLD_S = 8 * 3600
OVERLAP_POLICIES = ("drop", "clip")


@dataclass(frozen=True)
class Shift:
    driver: str
    trips: tuple[TripRecord, ...]

    @property
    def start(self) -> datetime:
        return self.trips[0].pickup_time

    @property
    def end(self) -> datetime:
        return self.trips[-1].dropoff_time

    @property
    def n_pickups(self) -> int:
        return len(self.trips)

    @property
    def income(self) -> float:
        return sum(t.fare_total for t in self.trips)

    @property
    def occupied_seconds(self) -> int:
        return sum(t.duration_s for t in self.trips)

    @property
    def empty_seconds(self) -> int:
        return sum(
            int((b.pickup_time - a.dropoff_time).total_seconds()) for a, b in zip(self.trips, self.trips[1:])
        )


@dataclass(frozen=True)
class EmptyInterval:
    driver: str
    from_time: datetime
    from_lat: float
    from_lon: float
    to_time: datetime
    to_lat: float
    to_lon: float
    gap_seconds: int
    relocation_km: float


@dataclass
class ShiftReport:
    policy: str = "drop"
    overlaps_dropped: int = 0
    overlaps_clipped: int = 0

    def merge(self, other: "ShiftReport") -> "ShiftReport":
        return ShiftReport(
            self.policy,
            self.overlaps_dropped + other.overlaps_dropped,
            self.overlaps_clipped + other.overlaps_clipped,
        )


def _resolve_overlaps(trips: list[TripRecord], policy: str, report: ShiftReport | None) -> list[TripRecord]:
    kept: list[TripRecord] = []
    for t in trips:
        if kept and t.pickup_time < kept[-1].dropoff_time:
            prev = kept[-1]
            if policy == "clip" and t.pickup_time > prev.pickup_time:
                kept[-1] = _replace_dropoff(prev, t.pickup_time)
                if report is not None:
                    report.overlaps_clipped += 1
            else:
                if report is not None:
                    report.overlaps_dropped += 1
                continue
        kept.append(t)
    return kept


def _replace_dropoff(t: TripRecord, dropoff: datetime) -> TripRecord:
    from dataclasses import replace

    return replace(t, dropoff_time=dropoff)


def synthesize_shifts(
    trips_of_driver: Sequence[TripRecord],
    gap_threshold: timedelta = GAP_THRESHOLD,
    overlap: str = "drop",
    report: ShiftReport | None = None,
    identity: str = "hack_license",
) -> list[Shift]:
    """Split one driver's trips into shifts at idle gaps longer than ``gap_threshold``.

    Trips are ordered by (pickup, dropoff).  A trip picked up before the previous
    kept trip dropped off is an overlap: ``overlap="drop"`` discards the later
    trip, ``"clip"`` shortens the earlier one to end at the later pickup (and
    drops instead when both start at the same second).  Counts go to ``report``.
    """
    if overlap not in OVERLAP_POLICIES:
        raise ValueError(f"overlap policy must be one of {OVERLAP_POLICIES}")
    if not trips_of_driver:
        return []
    drivers = {getattr(t, identity) for t in trips_of_driver}
    if len(drivers) != 1:
        raise ValueError(f"trips belong to {len(drivers)} drivers, expected one")
    driver = drivers.pop()
    ordered = sorted(trips_of_driver, key=lambda t: (t.pickup_time, t.dropoff_time))
    kept = _resolve_overlaps(ordered, overlap, report)

    shifts, current = [], [kept[0]]
    for prev, t in zip(kept, kept[1:]):
        if t.pickup_time - prev.dropoff_time > gap_threshold:
            shifts.append(Shift(driver, tuple(current)))
            current = []
        current.append(t)
    shifts.append(Shift(driver, tuple(current)))
    return shifts


def synthesize_all(
    trips: Iterable[TripRecord],
    gap_threshold: timedelta = GAP_THRESHOLD,
    overlap: str = "drop",
    identity: str = "hack_license",
    report: ShiftReport | None = None,
) -> list[Shift]:
    """Group trips by driver and synthesize every driver's shifts."""
    by_driver: dict[str, list[TripRecord]] = {}
    for t in trips:
        by_driver.setdefault(getattr(t, identity), []).append(t)
    out = []
    for driver in sorted(by_driver):
        out.extend(synthesize_shifts(by_driver[driver], gap_threshold, overlap, report, identity))
    return out


def empty_intervals(s: Shift) -> list[EmptyInterval]:
    """Idle periods between consecutive trips of a shift.

    Back-to-back trips (zero gap) produce no interval, so the list can be
    shorter than ``n_pickups - 1``.
    """
    out = []
    for a, b in zip(s.trips, s.trips[1:]):
        gap = int((b.pickup_time - a.dropoff_time).total_seconds())
        if gap <= 0:
            continue
        km = haversine_km(a.dropoff_lat, a.dropoff_lon, b.pickup_lat, b.pickup_lon)
        out.append(
            EmptyInterval(
                s.driver, a.dropoff_time, a.dropoff_lat, a.dropoff_lon,
                b.pickup_time, b.pickup_lat, b.pickup_lon, gap, km,
            )
        )
    return out


# ---------------------------------------------------------------------------
# frame path


@dataclass
class ShiftResult:
    """Output of :func:`build_shifts`.

    ``trips`` is the input sorted by (driver, pickup, dropoff) with overlaps
    resolved and three extra columns: ``shift_id``, ``gap_before_s`` (-1 on a
    shift's first trip) and ``relocation_km`` (NaN on a shift's first trip).
    ``shifts`` has one row per shift, indexed by shift id.
    """

    trips: pd.DataFrame
    shifts: pd.DataFrame
    report: ShiftReport = field(default_factory=ShiftReport)


SHIFT_COLUMNS = ["driver", "start", "end", "n_pickups", "income", "occupied_s", "empty_s"]


def _resolve_overlaps_frame(driver, pickup, dropoff, policy):
    """Return (keep mask, new dropoff array, n_dropped, n_clipped) for sorted arrays."""
    same = np.r_[False, driver[1:] == driver[:-1]]
    overlap = same & np.r_[False, pickup[1:] < dropoff[:-1]]
    keep = np.ones(len(driver), dtype=bool)
    if not overlap.any():
        return keep, dropoff, 0, 0
    dropoff = dropoff.copy()
    dropped = clipped = 0
    bounds = np.flatnonzero(np.r_[True, ~same[1:], True])
    starts = np.searchsorted(bounds, np.flatnonzero(overlap), side="right") - 1
    for b in np.unique(starts):
        lo, hi = bounds[b], bounds[b + 1]
        last = lo
        for i in range(lo + 1, hi):
            if pickup[i] < dropoff[last]:
                if policy == "clip" and pickup[i] > pickup[last]:
                    dropoff[last] = pickup[i]
                    clipped += 1
                else:
                    keep[i] = False
                    dropped += 1
                    continue
            last = i
    return keep, dropoff, dropped, clipped


def build_shifts(
    trips: pd.DataFrame,
    gap_threshold_s: int = GAP_THRESHOLD_S,
    identity: str = "hack_license",
    overlap: str = "drop",
) -> ShiftResult:
    """Vectorised shift synthesis over a trip frame holding many drivers.

    Drivers are ordered by id string, so the result does not depend on the
    order in which trips arrived.
    """
    if overlap not in OVERLAP_POLICIES:
        raise ValueError(f"overlap policy must be one of {OVERLAP_POLICIES}")
    ids = trips[identity]
    if not isinstance(ids.dtype, pd.CategoricalDtype):
        ids = ids.astype("category")
    cats = ids.cat.categories
    cat_rank = np.argsort(np.argsort(np.asarray(cats, dtype=str), kind="stable"), kind="stable")
    codes = ids.cat.codes.to_numpy()
    driver = cat_rank[codes] if len(cats) else codes.astype(np.int64)

    pickup = trips["pickup_time"].to_numpy(np.int64)
    dropoff = trips["dropoff_time"].to_numpy(np.int64)
    order = np.lexsort((np.arange(len(trips)), dropoff, pickup, driver))
    driver, pickup, dropoff = driver[order], pickup[order], dropoff[order]

    keep, dropoff, n_dropped, n_clipped = _resolve_overlaps_frame(driver, pickup, dropoff, overlap)
    order = order[keep]
    driver, pickup, dropoff = driver[keep], pickup[keep], dropoff[keep]
    report = ShiftReport(overlap, n_dropped, n_clipped)

    sorted_trips = trips.iloc[order].reset_index(drop=True)
    sorted_trips["dropoff_time"] = dropoff
    n = len(sorted_trips)

    same = np.r_[False, driver[1:] == driver[:-1]]
    gap = np.r_[0, pickup[1:] - dropoff[:-1]]
    new_shift = ~same | (gap > gap_threshold_s)
    shift_id = np.cumsum(new_shift) - 1
    gap_before = np.where(new_shift, -1, gap)
    reloc = np.full(n, np.nan)
    cont = np.flatnonzero(~new_shift)
    dlat, dlon = sorted_trips["dropoff_lat"].to_numpy(), sorted_trips["dropoff_lon"].to_numpy()
    plat, plon = sorted_trips["pickup_lat"].to_numpy(), sorted_trips["pickup_lon"].to_numpy()
    # chunked so the trigonometric temporaries stay small on very large inputs
    for a in range(0, cont.size, 1 << 20):
        c = cont[a : a + (1 << 20)]
        reloc[c] = haversine_km(dlat[c - 1], dlon[c - 1], plat[c], plon[c])
    sorted_trips["shift_id"] = shift_id
    sorted_trips["gap_before_s"] = gap_before
    sorted_trips["relocation_km"] = reloc

    first = np.flatnonzero(new_shift)
    last = np.r_[first[1:] - 1, n - 1] if n else first
    duration = dropoff - pickup
    shifts = pd.DataFrame(
        {
            "driver": sorted_trips[identity].to_numpy()[first] if n else np.array([], dtype=object),
            "start": pickup[first],
            "end": dropoff[last],
            "n_pickups": np.diff(np.r_[first, n]),
            "income": np.add.reduceat(sorted_trips["fare_total"].to_numpy(), first) if n else np.zeros(0),
            "occupied_s": np.add.reduceat(duration, first) if n else np.zeros(0, np.int64),
            "empty_s": np.add.reduceat(np.maximum(gap_before, 0), first) if n else np.zeros(0, np.int64),
        }
    )
    shifts["driver"] = shifts["driver"].astype(str)
    shifts.index.name = "shift_id"
    return ShiftResult(sorted_trips, shifts, report)


def shifts_to_frame(shifts: Sequence[Shift]) -> pd.DataFrame:
    """Shift objects as a frame with the :data:`SHIFT_COLUMNS` layout."""
    def secs(t):
        return int((t - EPOCH).total_seconds())

    return pd.DataFrame(
        {
            "driver": [s.driver for s in shifts],
            "start": np.array([secs(s.start) for s in shifts], dtype=np.int64),
            "end": np.array([secs(s.end) for s in shifts], dtype=np.int64),
            "n_pickups": np.array([s.n_pickups for s in shifts], dtype=np.int64),
            "income": np.array([s.income for s in shifts], dtype=np.float64),
            "occupied_s": np.array([s.occupied_seconds for s in shifts], dtype=np.int64),
            "empty_s": np.array([s.empty_seconds for s in shifts], dtype=np.int64),
        },
        columns=SHIFT_COLUMNS,
    )


def interval_frame(result: ShiftResult) -> pd.DataFrame:
    """Empty intervals of every shift (positive gaps only), one row each."""
    t = result.trips
    m = t["gap_before_s"].to_numpy() > 0
    return pd.DataFrame(
        {
            "shift_id": t["shift_id"].to_numpy()[m],
            "to_time": t["pickup_time"].to_numpy()[m],
            "gap_s": t["gap_before_s"].to_numpy()[m],
            "relocation_km": t["relocation_km"].to_numpy()[m],
            "pickup_lat": t["pickup_lat"].to_numpy()[m],
            "pickup_lon": t["pickup_lon"].to_numpy()[m],
        }
    )


# ---------------------------------------------------------------------------
# time-of-day densities


@dataclass(frozen=True)
class TimeOfDayHistogram:
    bin_width_min: int
    mass: np.ndarray

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(len(self.mass)) * self.bin_width_min

    def peak_bins(self, k: int) -> list[int]:
        """Start minutes of the ``k`` largest local maxima on the circular day."""
        m = self.mass
        left, right = np.roll(m, 1), np.roll(m, -1)
        local = np.flatnonzero((m >= left) & (m >= right) & (m > 0))
        top = local[np.argsort(-m[local], kind="stable")][:k]
        return sorted(int(i) * self.bin_width_min for i in top)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_start_minutes": self.bin_starts, "density": self.mass})

    def to_csv(self, path: str | os.PathLike) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def _seconds_of(values) -> np.ndarray:
    if isinstance(values, pd.DataFrame):
        raise TypeError("pass a column, not a frame")
    arr = list(values) if not isinstance(values, (np.ndarray, pd.Series)) else values
    if len(arr) and isinstance(arr[0], datetime):
        return np.array([int((t - EPOCH).total_seconds()) for t in arr], dtype=np.int64)
    return np.asarray(arr, dtype=np.int64)


def shift_time_densities(
    shifts: Sequence[Shift] | pd.DataFrame, bin_width: int = 30
) -> tuple[TimeOfDayHistogram, TimeOfDayHistogram]:
    """Normalised time-of-day histograms of shift starts and shift ends."""
    if 1440 % bin_width:
        raise ValueError("bin width must divide 1440 minutes")
    if isinstance(shifts, pd.DataFrame):
        starts, ends = _seconds_of(shifts["start"]), _seconds_of(shifts["end"])
    else:
        starts, ends = _seconds_of([s.start for s in shifts]), _seconds_of([s.end for s in shifts])
    if len(starts) == 0:
        raise ValueError("no shifts")
    n_bins = 1440 // bin_width

    def hist(sec):
        b = (sec % 86400) // (bin_width * 60)
        counts = np.bincount(b, minlength=n_bins).astype(np.float64)
        return TimeOfDayHistogram(bin_width, counts / counts.sum())

    return hist(starts), hist(ends)


def write_shifts_csv(shifts: pd.DataFrame, path: str | os.PathLike) -> None:
    out = shifts[SHIFT_COLUMNS].copy()
    for c in ("start", "end"):
        out[c] = pd.to_datetime(out[c], unit="s").dt.strftime("%Y-%m-%d %H:%M:%S")
    out.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
