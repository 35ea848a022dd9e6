"""Hourly station precipitation: parsing, neighbour imputation, rain classification."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .geo import haversine_km
from .ingest import EPOCH

CENTRAL_PARK = "central_park"
REF_STATION = CENTRAL_PARK
RAIN_THRESHOLD_MM = 0.3

DEFAULT_STATIONS = {
    "central_park": (40.7789, -73.9692),
    "lga": (40.7794, -73.8803),
    "jfk": (40.6386, -73.7622),
}

_MISSING = {"", "M", "NA", "NaN", "nan"}
_TRACE = {"T"}


class WeatherError(ValueError):
    pass


class Unclassifiable(WeatherError):
    """No station reported precipitation for an hour."""


@dataclass(frozen=True)
class WeatherObservation:
    station: str
    hour: datetime
    precip_mm: float | None


@dataclass(frozen=True)
class HourWeather:
    hour: datetime
    precip_mm: float | None
    rainy: bool | None  # None: unclassifiable
    imputed: bool

    @property
    def status(self) -> str:
        if self.rainy is None:
            return "unclassifiable"
        return "rainy" if self.rainy else "clear"


@dataclass
class WeatherReport:
    rows_read: int = 0
    duplicates: int = 0


def load_station_coords(path: str | os.PathLike) -> dict[str, tuple[float, float]]:
    """Read ``station_id,lat,lon`` rows."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["station_id"].strip()] = (float(row["lat"]), float(row["lon"]))
    if not out:
        raise WeatherError(f"{path}: no stations")
    return out


def write_station_coords(stations: Mapping[str, tuple[float, float]], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("station_id,lat,lon\n")
        for sid, (lat, lon) in stations.items():
            fh.write(f"{sid},{lat},{lon}\n")


def _truncate_hour(text: str) -> datetime:
    text = text.strip()
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d %H"):
        try:
            return datetime.strptime(text, fmt).replace(minute=0, second=0)
        except ValueError:
            continue
    raise WeatherError(f"malformed hour {text!r}")


def _parse_precip(text: str) -> float | None:
    text = text.strip()
    if text in _MISSING:
        return None
    if text in _TRACE:
        return 0.0
    try:
        value = float(text)
    except ValueError:
        raise WeatherError(f"non-numeric precipitation {text!r}") from None
    if math.isnan(value):
        return None
    if value < 0:
        raise WeatherError("negative precipitation")
    return value


def parse_weather(
    source: str | os.PathLike | Iterable[str],
    stations: Iterable[str] = tuple(DEFAULT_STATIONS),
    report: WeatherReport | None = None,
) -> list[WeatherObservation]:
    """Read ``station,hour,precip_mm`` rows.

    Hours are truncated to the hour.  A repeated (station, hour) keeps the
    last row and is counted in ``report.duplicates``.  ``M``/``NA``/empty mean
    missing; ``T`` (trace) reads as 0.0.
    """
    known = set(stations)
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    else:
        lines = list(source)
    report = report if report is not None else WeatherReport()
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not {"station", "hour", "precip_mm"} <= set(reader.fieldnames):
        raise WeatherError("weather file needs station,hour,precip_mm columns")
    obs: dict[tuple[str, datetime], WeatherObservation] = {}
    for lineno, row in enumerate(reader, 2):
        report.rows_read += 1
        station = row["station"].strip()
        if station not in known:
            raise WeatherError(f"line {lineno}: unknown station id {station!r}")
        try:
            o = WeatherObservation(station, _truncate_hour(row["hour"]), _parse_precip(row["precip_mm"]))
        except WeatherError as exc:
            raise WeatherError(f"line {lineno}: {exc}") from None
        key = (o.station, o.hour)
        if key in obs:
            report.duplicates += 1
            del obs[key]  # re-insert to keep last-wins and file order of last occurrence
        obs[key] = o
    return list(obs.values())


def impute_missing(
    ref_station: str,
    hour: datetime,
    others: Mapping[str, float | None],
    station_coords: Mapping[str, tuple[float, float]] = DEFAULT_STATIONS,
    power: float = 2.0,
) -> float:
    """Inverse-distance-weighted estimate of the reference station's precipitation.

    ``others`` maps neighbour station ids to their value at ``hour`` (None if
    missing).  Weights are ``1 / d**power`` with ``d`` the great-circle
    distance to the reference station.
    """
    lat0, lon0 = station_coords[ref_station]
    num = den = 0.0
    for sid, value in sorted(others.items()):
        if sid == ref_station or value is None:
            continue
        d = haversine_km(lat0, lon0, *station_coords[sid])
        if d == 0:
            return float(value)
        w = 1.0 / d**power
        num += w * value
        den += w
    if den == 0:
        raise Unclassifiable(f"no station reported precipitation at {hour}")
    return num / den


def classify_hours(
    observations: Iterable[WeatherObservation],
    ref_station: str = REF_STATION,
    rain_threshold_mm: float = RAIN_THRESHOLD_MM,
    station_coords: Mapping[str, tuple[float, float]] = DEFAULT_STATIONS,
) -> dict[datetime, HourWeather]:
    """Classify every hour that any station covers as rainy, clear or unclassifiable."""
    by_hour: dict[datetime, dict[str, float | None]] = {}
    for o in observations:
        by_hour.setdefault(o.hour, {})[o.station] = o.precip_mm
    out = {}
    for hour in sorted(by_hour):
        values = by_hour[hour]
        ref = values.get(ref_station)
        if ref is not None:
            out[hour] = HourWeather(hour, ref, ref >= rain_threshold_mm, False)
            continue
        try:
            est = impute_missing(ref_station, hour, values, station_coords)
        except Unclassifiable:
            out[hour] = HourWeather(hour, None, None, False)
            continue
        out[hour] = HourWeather(hour, est, est >= rain_threshold_mm, True)
    return out


def weather_frame(classified: Mapping[datetime, HourWeather]) -> pd.DataFrame:
    """Hour table with epoch-second ``hour`` and nullable ``rainy``."""
    hours = list(classified.values())
    return pd.DataFrame(
        {
            "hour": np.array([int((h.hour - EPOCH).total_seconds()) for h in hours], dtype=np.int64),
            "precip_mm": np.array([np.nan if h.precip_mm is None else h.precip_mm for h in hours]),
            "rainy": pd.array([h.rainy for h in hours], dtype="boolean"),
            "imputed": np.array([h.imputed for h in hours], dtype=bool),
        }
    )


def write_hour_weather(classified: Mapping[datetime, HourWeather], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("hour,precip_mm,rainy,imputed\n")
        for h in classified.values():
            precip = "" if h.precip_mm is None else f"{h.precip_mm:.6g}"
            rainy = "" if h.rainy is None else str(int(h.rainy))
            fh.write(f"{h.hour:%Y-%m-%d %H:%M:%S},{precip},{rainy},{int(h.imputed)}\n")


def observations_from_frame(df: pd.DataFrame) -> list[WeatherObservation]:
    """Observations from a ``station, hour (epoch s), precip_mm`` frame; NaN is missing."""
    hours = pd.to_datetime(df["hour"].to_numpy(np.int64), unit="s").to_pydatetime()
    return [
        WeatherObservation(s, h, None if np.isnan(p) else float(p))
        for s, h, p in zip(df["station"].tolist(), hours, df["precip_mm"].to_numpy(np.float64))
    ]
