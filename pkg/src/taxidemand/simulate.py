"""Fleet simulator with known ground truth.

Each driver works at most one shift per day.  Shift starts follow a
time-of-day mixture of Gaussians (or a uniform draw), lengths a truncated
normal.  Two demand models are available:

``poisson``
    Pickups of an on-shift driver form a Poisson process whose hourly rate is
    ``base_rate`` times the rain multiplier of that hour.  Trip durations are
    clipped so a dropoff never passes the next pickup or the planned shift end.
``renewal``
    A shift is a fixed number of trips separated by exponential idle gaps with
    mean ``idle_gap_mean_min`` (divided by the rain multiplier).

Consecutive shifts of one driver are kept more than ``gap_threshold_h``
apart, and any idle gap inside a shift longer than that splits the true shift,
so the truth always obeys the gap rule used for reconstruction.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc

from .geo import haversine_km
from .ingest import EPOCH, NYC_BBOX, TIME_FORMAT, BBox, Schema, read_key_values, write_csv
from .weather import DEFAULT_STATIONS, write_station_coords

DEFAULT_HOTSPOTS = (
    # lat, lon, sd (km), weight
    (40.7540, -73.9840, 1.2, 0.45),  # midtown
    (40.7130, -74.0070, 0.9, 0.20),  # lower manhattan
    (40.7790, -73.9560, 1.0, 0.15),  # upper east side
    (40.6450, -73.7850, 0.5, 0.05),  # jfk
    (40.7740, -73.8720, 0.4, 0.05),  # laguardia
)
KM_PER_DEG_LAT = 111.195


@dataclass(frozen=True)
class SimConfig:
    n_drivers: int = 100
    days: int = 7
    start_date: str = "2013-03-04"  # a Monday
    shift_start_mixture: tuple = ((5.5, 40.0, 0.5), (16.5, 40.0, 0.5))  # (hour, sd minutes, weight)
    shift_start_distribution: str = "mixture"  # or "uniform"
    shift_length_mean_h: float = 9.5
    shift_length_sd_h: float = 1.0
    shift_length_min_h: float = 3.0
    shift_length_max_h: float = 12.0
    day_off_prob: float = 0.0
    demand_model: str = "poisson"
    base_rate: float = 2.0  # pickups per driver-hour in clear weather
    rain_multiplier: float = 1.5
    weekend_rain_multiplier: float | None = None  # defaults to rain_multiplier
    rain_prob: float = 0.15
    idle_gap_mean_min: float = 12.0  # renewal model only
    trip_duration_mean_min: float = 13.5
    trip_duration_sd_min: float = 8.0
    speed_kmh: float = 18.0
    fare_base: float = 2.5
    fare_per_km: float = 1.55
    bbox: BBox = NYC_BBOX
    hotspots: tuple = DEFAULT_HOTSPOTS
    background_weight: float = 0.10
    pre_cruise_min: float = 0.0  # mean unobserved cruising before the first pickup
    weather_missing_prob: float = 0.0  # reference-station gaps to exercise imputation
    gap_threshold_h: float = 8.0
    seed: int = 0

    def __post_init__(self):
        w = [c[2] for c in self.shift_start_mixture]
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("shift start mixture weights must sum to 1")
        if self.n_drivers < 1 or self.days < 1:
            raise ValueError("need at least one driver and one day")
        if self.base_rate <= 0 or self.rain_multiplier < 0:
            raise ValueError("rates must be positive and multipliers non-negative")
        if self.demand_model not in ("poisson", "renewal"):
            raise ValueError("demand_model must be 'poisson' or 'renewal'")
        if self.shift_start_distribution not in ("mixture", "uniform"):
            raise ValueError("shift_start_distribution must be 'mixture' or 'uniform'")
        if not 0 < self.shift_length_min_h <= self.shift_length_max_h:
            raise ValueError("shift length bounds are inconsistent")
        if self.shift_length_min_h * 60 < 1:
            raise ValueError("infeasible config: shift shorter than one trip")
        if min(self.trip_duration_mean_min, self.trip_duration_sd_min, self.speed_kmh, self.idle_gap_mean_min) <= 0:
            raise ValueError("durations and speeds must be positive")
        if self.shift_length_max_h + self.gap_threshold_h >= 24:
            raise ValueError("infeasible config: shifts plus the gap threshold exceed a day")

    @property
    def weekend_multiplier(self) -> float:
        return self.rain_multiplier if self.weekend_rain_multiplier is None else self.weekend_rain_multiplier

    @classmethod
    def from_file(cls, path: str | os.PathLike, **overrides) -> "SimConfig":
        """Read ``key=value`` lines.

        ``shift_start_mixture`` is written ``hour:sd_min:weight`` separated by
        commas; ``bbox`` as ``south,west,north,east``; ``hotspots`` as
        ``lat:lon:sd_km:weight`` separated by commas.
        """
        raw = read_key_values(path)
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, text in raw.items():
            if key not in types:
                raise ValueError(f"unknown simulator setting {key!r}")
            if key in ("shift_start_mixture", "hotspots"):
                kwargs[key] = tuple(tuple(float(v) for v in part.split(":")) for part in text.split(",") if part.strip())
            elif key == "bbox":
                kwargs[key] = BBox.parse(text)
            elif key in ("shift_start_distribution", "demand_model", "start_date"):
                kwargs[key] = text
            elif key == "weekend_rain_multiplier":
                kwargs[key] = None if text.lower() in ("", "none") else float(text)
            elif key in ("n_drivers", "days", "seed"):
                kwargs[key] = int(text)
            else:
                kwargs[key] = float(text)
        kwargs.update(overrides)
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("shift_start_mixture", "hotspots"):
                v = ",".join(":".join(f"{x:g}" for x in part) for part in v)
            elif f.name == "bbox":
                v = f"{v.south},{v.west},{v.north},{v.east}"
            elif v is None:
                v = "none"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


@dataclass
class GroundTruth:
    """What the simulator knows and the pipeline has to infer.

    ``shifts`` has one row per true shift: driver, true_start (first pickup
    minus any unobserved cruising), start (first pickup), end (last dropoff)
    and n_pickups.  ``trip_shift`` gives the true shift of every trip row.
    ``hours`` holds, per hour, the rain flag, the true number of active
    drivers and the expected number of pickups.
    """

    shifts: pd.DataFrame
    trip_shift: np.ndarray
    hours: pd.DataFrame
    config: SimConfig


@dataclass
class SimResult:
    trips: pd.DataFrame  # canonical trip frame, in file row order
    weather: pd.DataFrame  # station, hour (epoch s), precip_mm (NaN = missing)
    truth: GroundTruth
    extras: pd.DataFrame = field(default_factory=pd.DataFrame)  # vendor_id, passenger_count


def _t0(cfg: SimConfig) -> int:
    return int((datetime.strptime(cfg.start_date, "%Y-%m-%d") - EPOCH).total_seconds())


def _multipliers(cfg: SimConfig, t0: int, rain: np.ndarray) -> np.ndarray:
    """Demand multiplier per simulated hour."""
    hours = t0 // 3600 + np.arange(rain.size)
    weekend = pd.to_datetime(hours * 3600, unit="s").dayofweek.to_numpy() >= 5
    rainy_mult = np.where(weekend, cfg.weekend_multiplier, cfg.rain_multiplier)
    return np.where(rain, rainy_mult, 1.0)


def _plan_shifts(cfg: SimConfig, rng: np.random.Generator, t0: int):
    """Planned (driver, start, end) windows, one per working driver-day."""
    n, d = cfg.n_drivers, cfg.days
    mix = np.asarray(cfg.shift_start_mixture, dtype=np.float64)
    comp = rng.choice(len(mix), size=n, p=mix[:, 2])
    if cfg.shift_start_distribution == "uniform":
        # each driver keeps a personal start hour, jittered by 15 minutes day to day
        start_h = rng.uniform(0.0, 24.0, size=(n, 1)) + rng.normal(0.0, 0.25, size=(n, d))
    else:
        start_h = mix[comp, 0][:, None] + rng.normal(0.0, 1.0, size=(n, d)) * (mix[comp, 1][:, None] / 60.0)
    length_h = np.clip(
        rng.normal(cfg.shift_length_mean_h, cfg.shift_length_sd_h, size=(n, d)),
        cfg.shift_length_min_h,
        cfg.shift_length_max_h,
    )
    off = rng.random(size=(n, d)) < cfg.day_off_prob
    start = t0 + np.arange(d)[None, :] * 86400 + np.rint(start_h * 3600).astype(np.int64)
    end = start + np.rint(length_h * 3600).astype(np.int64)
    gap = int(cfg.gap_threshold_h * 3600)
    last_end = np.full(n, np.iinfo(np.int64).min // 2)
    work = ~off
    for day in range(d):
        ok = work[:, day] & (start[:, day] - last_end > gap + 60)
        work[:, day] = ok
        last_end = np.where(ok, end[:, day], last_end)
    drv, day = np.nonzero(work)
    return drv, start[drv, day], end[drv, day]


def _poisson_trips(cfg, rng, t0, mult, drv, pstart, pend):
    """Pickup and dropoff times for the Poisson demand model."""
    h0 = pstart // 3600
    h1 = (pend - 1) // 3600
    span = h1 - h0 + 1
    rep = np.repeat(np.arange(drv.size), span)
    hours = h0[rep] + (np.arange(rep.size) - np.repeat(np.cumsum(span) - span, span))
    lo = np.maximum(pstart[rep], hours * 3600)
    hi = np.minimum(pend[rep], (hours + 1) * 3600)
    rate = cfg.base_rate * mult[hours - t0 // 3600]
    counts = rng.poisson(rate * (hi - lo) / 3600.0)
    seg = np.repeat(np.arange(counts.size), counts)
    pickup = lo[seg] + np.floor(rng.random(seg.size) * (hi - lo)[seg]).astype(np.int64)
    shift = rep[seg]
    order = np.lexsort((pickup, shift))
    pickup, shift = pickup[order], shift[order]
    dup = np.r_[False, (shift[1:] == shift[:-1]) & (pickup[1:] == pickup[:-1])]
    pickup, shift = pickup[~dup], shift[~dup]
    duration = _durations(cfg, rng, pickup.size)
    nxt = np.r_[pickup[1:], np.iinfo(np.int64).max]
    last = np.r_[shift[1:] != shift[:-1], True]
    limit = np.where(last, pend[shift], nxt) - pickup
    duration = np.clip(duration, 1, np.maximum(limit, 1))
    return shift, pickup, pickup + duration


def _durations(cfg, rng, n):
    m, s = cfg.trip_duration_mean_min * 60.0, cfg.trip_duration_sd_min * 60.0
    sigma2 = np.log1p((s / m) ** 2)
    return np.maximum(1, np.rint(rng.lognormal(np.log(m) - sigma2 / 2, np.sqrt(sigma2), n))).astype(np.int64)


def _renewal_trips(cfg, rng, t0, mult, drv, pstart, pend):
    """Pickup and dropoff times for the renewal (idle-gap) demand model."""
    cycle = cfg.trip_duration_mean_min * 60.0 + cfg.idle_gap_mean_min * 60.0
    k = np.maximum(1, np.rint((pend - pstart) / cycle)).astype(np.int64)
    total = int(k.sum())
    durations = _durations(cfg, rng, total)
    unit_gaps = rng.exponential(1.0, total)
    cap = int(cfg.gap_threshold_h * 3600) - 1
    h_base = t0 // 3600
    shift = np.repeat(np.arange(drv.size), k)
    pickup = np.empty(total, np.int64)
    dropoff = np.empty(total, np.int64)
    gap_rule = int(cfg.gap_threshold_h * 3600) + 61
    last_end: dict[int, int] = {}
    i = 0
    for s in range(drv.size):
        # a long run of idle gaps can overrun the plan; push the next shift back so the gap rule holds
        t = max(int(pstart[s]), last_end.get(int(drv[s]), -(1 << 62)) + gap_rule)
        for j in range(int(k[s])):
            pickup[i] = t
            dropoff[i] = t + int(durations[i])
            h = min(max(dropoff[i] // 3600 - h_base, 0), mult.size - 1)
            gap = int(round(unit_gaps[i] * cfg.idle_gap_mean_min * 60.0 / max(mult[h], 1e-9)))
            t = int(dropoff[i]) + min(gap, cap)
            i += 1
        last_end[int(drv[s])] = int(dropoff[i - 1])
    return shift, pickup, dropoff


def _locations(cfg, rng, n):
    hs = np.asarray(cfg.hotspots, dtype=np.float64).reshape(-1, 4)
    if len(hs) == 0 or cfg.background_weight >= 1.0:
        hs = hs[:0]
        weights = np.ones(1)
    else:
        weights = np.r_[hs[:, 3] * (1 - cfg.background_weight) / hs[:, 3].sum(), cfg.background_weight]
    comp = rng.choice(weights.size, size=n, p=weights)
    b = cfg.bbox
    lat = rng.uniform(b.south, b.north, n)
    lon = rng.uniform(b.west, b.east, n)
    hot = comp < len(hs)
    c = comp[hot]
    sd_lat = hs[c, 2] / KM_PER_DEG_LAT
    sd_lon = sd_lat / np.cos(np.radians(hs[c, 0]))
    lat[hot] = hs[c, 0] + rng.normal(size=c.size) * sd_lat
    lon[hot] = hs[c, 1] + rng.normal(size=c.size) * sd_lon
    return np.clip(lat, b.south, b.north), np.clip(lon, b.west, b.east)


def simulate(cfg: SimConfig, out_dir: str | os.PathLike | None = None) -> SimResult:
    """Run the simulator; with ``out_dir`` also write the trip, weather and truth files."""
    rng = np.random.default_rng(cfg.seed)
    t0 = _t0(cfg)
    # the hour grid starts a day early so shifts may begin before the first day proper
    base = t0 - 86400
    n_hours = (cfg.days + 2) * 24
    rain = rng.random(n_hours) < cfg.rain_prob
    mult = _multipliers(cfg, base, rain)

    drv, pstart, pend = _plan_shifts(cfg, rng, t0)
    gen = _poisson_trips if cfg.demand_model == "poisson" else _renewal_trips
    shift, pickup, dropoff = gen(cfg, rng, base, mult, drv, pstart, pend)
    n = pickup.size

    # split true shifts at any over-threshold idle gap so the truth obeys the rule
    gap_s = int(cfg.gap_threshold_h * 3600)
    same = np.r_[False, shift[1:] == shift[:-1]]
    new = ~same | (np.r_[0, pickup[1:] - dropoff[:-1]] > gap_s)
    true_id = np.cumsum(new) - 1
    first = np.flatnonzero(new)
    last = np.r_[first[1:] - 1, n - 1] if n else first

    plat, plon = _locations(cfg, rng, n)
    duration = dropoff - pickup
    speed = cfg.speed_kmh * rng.lognormal(-0.03125, 0.25, n)
    dist = np.round(np.minimum(speed * duration / 3600.0, 150.0), 3)
    bearing = rng.uniform(0, 2 * np.pi, n)
    straight = dist / 1.3
    dlat = np.clip(plat + straight * np.cos(bearing) / KM_PER_DEG_LAT, cfg.bbox.south, cfg.bbox.north)
    dlon = np.clip(
        plon + straight * np.sin(bearing) / (KM_PER_DEG_LAT * np.cos(np.radians(plat))), cfg.bbox.west, cfg.bbox.east
    )
    fare = np.round(cfg.fare_base + cfg.fare_per_km * dist, 2)
    cruise = np.zeros(first.size, np.int64)
    if cfg.pre_cruise_min > 0:
        cruise = np.rint(rng.exponential(cfg.pre_cruise_min * 60.0, first.size)).astype(np.int64)
    vendor = rng.integers(0, 2, n)
    passengers = rng.integers(1, 7, n)

    width = max(5, len(str(cfg.n_drivers)))
    driver_of_trip = drv[shift]
    hack = np.array([f"H{i:0{width}d}" for i in range(cfg.n_drivers)], dtype=object)
    med = np.array([f"M{i:0{width}d}" for i in range(cfg.n_drivers)], dtype=object)

    # file row order: by pickup time, then driver
    order = np.lexsort((driver_of_trip, pickup))
    trips = pd.DataFrame(
        {
            "medallion": pd.Categorical.from_codes(driver_of_trip[order], categories=med),
            "hack_license": pd.Categorical.from_codes(driver_of_trip[order], categories=hack),
            "pickup_time": pickup[order],
            "dropoff_time": dropoff[order],
            "pickup_lat": np.round(plat, 6)[order],
            "pickup_lon": np.round(plon, 6)[order],
            "dropoff_lat": np.round(dlat, 6)[order],
            "dropoff_lon": np.round(dlon, 6)[order],
            "trip_distance": dist[order],
            "fare_total": fare[order],
        }
    )
    extras = pd.DataFrame({"vendor_id": np.where(vendor == 0, "CMT", "VTS")[order], "passenger_count": passengers[order]})

    shifts = pd.DataFrame(
        {
            "driver": hack[driver_of_trip[first]].astype(str) if n else np.array([], dtype=str),
            "true_start": pickup[first] - cruise,
            "start": pickup[first],
            "end": dropoff[last],
            "n_pickups": np.diff(np.r_[first, n]),
        }
    )
    inverse = np.empty(n, np.int64)
    inverse[order] = np.arange(n)
    trip_shift = np.empty(n, np.int64)
    trip_shift[inverse] = true_id

    hours = _truth_hours(cfg, base, rain, mult, shifts, drv, pstart, pend)
    weather = _weather(cfg, rng, base, rain)
    result = SimResult(trips, weather, GroundTruth(shifts, trip_shift, hours, cfg), extras)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _truth_hours(cfg, t0, rain, mult, shifts, drv, pstart, pend) -> pd.DataFrame:
    h_base = t0 // 3600
    hour = h_base + np.arange(rain.size)
    supply = np.zeros(rain.size, np.int64)
    if len(shifts):
        s = shifts["true_start"].to_numpy() // 3600 - h_base
        e = shifts["end"].to_numpy() // 3600 - h_base
        # per driver-hour distinct count: expand and unique
        span = e - s + 1
        rep = np.repeat(np.arange(len(shifts)), span)
        hh = s[rep] + (np.arange(rep.size) - np.repeat(np.cumsum(span) - span, span))
        drv_code = pd.factorize(shifts["driver"])[0][rep]
        pairs = np.unique(np.stack([hh, drv_code]), axis=1)
        supply = np.bincount(pairs[0], minlength=rain.size)[: rain.size]
    # expected pickups under the Poisson model: rate x planned on-shift seconds
    h0, h1 = pstart // 3600, (pend - 1) // 3600
    span = h1 - h0 + 1
    rep = np.repeat(np.arange(drv.size), span)
    hh = h0[rep] + (np.arange(rep.size) - np.repeat(np.cumsum(span) - span, span))
    secs = np.minimum(pend[rep], (hh + 1) * 3600) - np.maximum(pstart[rep], hh * 3600)
    expected = np.bincount(hh - h_base, weights=secs / 3600.0 * cfg.base_rate * mult[hh - h_base], minlength=rain.size)
    return pd.DataFrame(
        {
            "hour": hour * 3600,
            "rainy": rain,
            "multiplier": mult,
            "true_supply": supply,
            "expected_pickups": expected[: rain.size],
        }
    )


def _weather(cfg, rng, t0, rain) -> pd.DataFrame:
    n = rain.size
    cp = np.where(rain, np.round(0.3 + rng.exponential(2.0, n), 1), np.where(rng.random(n) < 0.1, 0.1, 0.0))
    lga = np.where(rain, np.round(np.maximum(0.3, cp + rng.normal(0, 0.5, n)), 1), 0.0)
    jfk = np.where(rain, np.round(np.maximum(0.3, cp + rng.normal(0, 0.5, n)), 1), 0.0)
    cp = np.where(rng.random(n) < cfg.weather_missing_prob, np.nan, cp)
    hours = t0 + np.arange(n) * 3600
    frames = [
        pd.DataFrame({"station": sid, "hour": hours, "precip_mm": vals})
        for sid, vals in (("central_park", cp), ("lga", lga), ("jfk", jfk))
    ]
    return pd.concat(frames, ignore_index=True).sort_values(["hour", "station"], kind="stable").reset_index(drop=True)


TRIP_COLUMNS = [
    "medallion",
    "hack_license",
    "vendor_id",
    "pickup_datetime",
    "dropoff_datetime",
    "passenger_count",
    "trip_distance",
    "pickup_longitude",
    "pickup_latitude",
    "dropoff_longitude",
    "dropoff_latitude",
    "total_amount",
]


def write_trips(result: SimResult, path: str | os.PathLike) -> None:
    """Write trips in TLC column layout (distances in km, see the schema file)."""
    t = result.trips

    def ts(col):
        return pc.strftime(pa.array(t[col].to_numpy(), pa.timestamp("s")), format=TIME_FORMAT)

    def ids(col):
        cat = t[col].array
        return pa.DictionaryArray.from_arrays(
            pa.array(cat.codes, pa.int32()), pa.array(np.asarray(cat.categories, dtype=str), pa.string())
        ).cast(pa.string())

    table = pa.table(
        {
            "medallion": ids("medallion"),
            "hack_license": ids("hack_license"),
            "vendor_id": pa.array(result.extras["vendor_id"].to_numpy(), pa.string()),
            "pickup_datetime": ts("pickup_time"),
            "dropoff_datetime": ts("dropoff_time"),
            "passenger_count": pa.array(result.extras["passenger_count"].to_numpy()),
            "trip_distance": pa.array(t["trip_distance"].to_numpy()),
            "pickup_longitude": pa.array(t["pickup_lon"].to_numpy()),
            "pickup_latitude": pa.array(t["pickup_lat"].to_numpy()),
            "dropoff_longitude": pa.array(t["dropoff_lon"].to_numpy()),
            "dropoff_latitude": pa.array(t["dropoff_lat"].to_numpy()),
            "total_amount": pa.array(t["fare_total"].to_numpy()),
        }
    )
    write_csv(table, path)


def write_weather(weather: pd.DataFrame, path: str | os.PathLike) -> None:
    hours = pd.to_datetime(weather["hour"], unit="s").dt.strftime("%Y-%m-%d %H:%M")
    precip = ["M" if np.isnan(v) else f"{v:.1f}" for v in weather["precip_mm"].to_numpy()]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station,hour,precip_mm\n")
        for s, h, p in zip(weather["station"].tolist(), hours.tolist(), precip):
            fh.write(f"{s},{h},{p}\n")


def _fmt_time(col: pd.Series) -> pd.Series:
    return pd.to_datetime(col, unit="s").dt.strftime("%Y-%m-%d %H:%M:%S")


def write_outputs(result: SimResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trips": out / "trips.csv",
        "schema": out / "schema.cfg",
        "weather": out / "weather.csv",
        "stations": out / "stations.csv",
        "truth_shifts": out / "truth_shifts.csv",
        "truth_hours": out / "truth_hours.csv",
        "config": out / "sim.cfg",
    }
    write_trips(result, paths["trips"])
    paths["schema"].write_text(Schema.tlc("km").to_text(), encoding="utf-8")
    write_weather(result.weather, paths["weather"])
    write_station_coords(DEFAULT_STATIONS, paths["stations"])
    ts = result.truth.shifts.copy()
    for c in ("true_start", "start", "end"):
        ts[c] = _fmt_time(ts[c])
    ts.to_csv(paths["truth_shifts"], index=False, lineterminator="\n")
    th = result.truth.hours.copy()
    th["hour"] = _fmt_time(th["hour"])
    th["rainy"] = th["rainy"].astype(int)
    th.to_csv(paths["truth_hours"], index=False, lineterminator="\n", float_format="%.10g")
    paths["config"].write_text(result.truth.config.to_text(), encoding="utf-8")
    return paths


def load_truth_shifts(path: str | os.PathLike) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"driver": str})
    for c in ("true_start", "start", "end"):
        df[c] = (pd.to_datetime(df[c]) - pd.Timestamp(EPOCH)) // pd.Timedelta(seconds=1)
    return df


def load_truth_hours(path: str | os.PathLike) -> pd.DataFrame:
    df = pd.read_csv(path)
    df["hour"] = (pd.to_datetime(df["hour"]) - pd.Timestamp(EPOCH)) // pd.Timedelta(seconds=1)
    df["rainy"] = df["rainy"].astype(bool)
    return df


# ---------------------------------------------------------------------------
# recovery scoring


@dataclass
class RecoveryReport:
    n_true_shifts: int
    n_inferred_shifts: int
    n_matched_shifts: int
    max_start_delta_s: int
    mean_start_delta_s: float
    max_end_delta_s: int
    supply_mae: float
    supply_underestimates: bool  # inferred <= truth in every hour
    demand_ratio: float  # observed pickups / expected pickups
    demand_ratio_error: float

    @property
    def partition_exact(self) -> bool:
        return self.n_matched_shifts == self.n_true_shifts == self.n_inferred_shifts

    def as_dict(self) -> dict:
        d = asdict(self)
        d["partition_exact"] = self.partition_exact
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def score_recovery(
    truth_shifts: pd.DataFrame,
    truth_hours: pd.DataFrame,
    inferred_shifts: pd.DataFrame,
    bins: pd.DataFrame | None = None,
) -> RecoveryReport:
    """Compare reconstructed shifts and supply against simulator truth.

    Shifts match when driver, first pickup, last dropoff and trip count all
    agree.  Start deltas are measured from the true start, so unobserved
    cruising before the first pickup shows up as a positive delta.
    """
    td, idr = set(truth_shifts["driver"].astype(str)), set(inferred_shifts["driver"].astype(str))
    if td != idr:
        raise ValueError(f"driver sets differ: {len(td ^ idr)} ids in only one side")
    key = ["driver", "start", "end", "n_pickups"]
    t = truth_shifts.assign(driver=truth_shifts["driver"].astype(str))
    i = inferred_shifts.assign(driver=inferred_shifts["driver"].astype(str))
    matched = t[key].merge(i[key], on=key, how="inner")
    t_sorted = t.sort_values(["driver", "start"], kind="stable").reset_index(drop=True)
    i_sorted = i.sort_values(["driver", "start"], kind="stable").reset_index(drop=True)
    if len(t_sorted) == len(i_sorted) and (t_sorted["driver"].to_numpy() == i_sorted["driver"].to_numpy()).all():
        ds = i_sorted["start"].to_numpy() - t_sorted["true_start"].to_numpy()
        de = i_sorted["end"].to_numpy() - t_sorted["end"].to_numpy()
        max_ds, mean_ds, max_de = int(np.abs(ds).max(initial=0)), float(ds.mean()) if ds.size else 0.0, int(np.abs(de).max(initial=0))
    else:
        max_ds = max_de = -1
        mean_ds = float("nan")

    supply_mae, under, ratio = float("nan"), True, float("nan")
    if bins is not None:
        city = bins[bins["cell"] == -1].set_index("hour")
        th = truth_hours.set_index("hour")
        idx = th.index.union(city.index)
        inferred = city["supply"].reindex(idx, fill_value=0).to_numpy(np.float64)
        true = th["true_supply"].reindex(idx, fill_value=0).to_numpy(np.float64)
        supply_mae = float(np.mean(np.abs(inferred - true))) if idx.size else 0.0
        under = bool((inferred <= true).all())
        expected = float(th["expected_pickups"].sum())
        ratio = float(city["pickups"].sum()) / expected if expected > 0 else float("nan")
    return RecoveryReport(
        len(t),
        len(i),
        len(matched),
        max_ds,
        mean_ds,
        max_de,
        supply_mae,
        under,
        ratio,
        ratio - 1.0,
    )
