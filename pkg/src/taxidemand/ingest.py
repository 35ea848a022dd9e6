"""Streaming ingestion of TLC-style trip CSV files.

Rows are parsed into ten canonical fields; everything else in the source file
is ignored.  Two access paths share one set of rejection rules:

* ``parse_trip_row`` / ``validate_trip`` work on a single row and produce a
  :class:`TripRecord`.  They are the reference semantics.
* ``TripReader.batches`` parses whole blocks with pyarrow and numpy and yields
  pandas frames.  This is the path used for large files.

Frames carry times as int64 seconds since 1970-01-01 (naive local clock) and
distances in kilometres.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pcsv
from pandas.api.types import union_categoricals

logger = logging.getLogger(__name__)

CANONICAL_FIELDS = (
    "medallion",
    "hack_license",
    "pickup_time",
    "dropoff_time",
    "pickup_lat",
    "pickup_lon",
    "dropoff_lat",
    "dropoff_lon",
    "trip_distance",
    "fare_total",
)
TIME_FIELDS = ("pickup_time", "dropoff_time")
COORD_FIELDS = ("pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon")

KM_PER_MILE = 1.609344
TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
EPOCH = datetime(1970, 1, 1)

# rejection reasons, in precedence order
MALFORMED_ROW = "malformed row"
MALFORMED_TIMESTAMP = "malformed timestamp"
NON_NUMERIC_COORDINATE = "non-numeric coordinate"
NON_NUMERIC_DISTANCE = "non-numeric distance"
NON_NUMERIC_FARE = "non-numeric fare"
NEGATIVE_DURATION = "negative duration"
NEGATIVE_DISTANCE = "negative distance"
NEGATIVE_FARE = "negative fare"
OUT_OF_BBOX = "out of bounding box"
DURATION_OUT_OF_RANGE = "duration out of range"
DISTANCE_OUT_OF_RANGE = "distance out of range"

_PARSE_REASONS = (
    MALFORMED_TIMESTAMP,
    NON_NUMERIC_COORDINATE,
    NON_NUMERIC_DISTANCE,
    NON_NUMERIC_FARE,
    NEGATIVE_DURATION,
    NEGATIVE_DISTANCE,
    NEGATIVE_FARE,
)
_VALIDATE_REASONS = (OUT_OF_BBOX, DURATION_OUT_OF_RANGE, DISTANCE_OUT_OF_RANGE)
REASONS = (MALFORMED_ROW,) + _PARSE_REASONS + _VALIDATE_REASONS

_NUMBER_RE = r"[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?"
_NUMBER = re.compile(_NUMBER_RE)
_TIMESTAMP = re.compile(r"([0-9]{4})-([0-9]{2})-([0-9]{2}) ([0-9]{2}):([0-9]{2}):([0-9]{2})")


class IngestError(Exception):
    """A file-level problem: unreadable input or a header that lacks required columns."""


class RowError(ValueError):
    """A single row could not be turned into a TripRecord."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Schema:
    """Maps canonical field names to source column names."""

    columns: Mapping[str, str]
    distance_unit: str = "km"

    def __post_init__(self):
        missing = [f for f in CANONICAL_FIELDS if f not in self.columns]
        if missing:
            raise ValueError(f"schema does not map required fields: {', '.join(missing)}")
        if self.distance_unit not in ("km", "mi"):
            raise ValueError(f"distance unit must be 'km' or 'mi', got {self.distance_unit!r}")

    @property
    def distance_factor(self) -> float:
        return KM_PER_MILE if self.distance_unit == "mi" else 1.0

    @classmethod
    def tlc(cls, distance_unit: str = "mi") -> "Schema":
        """Column names used by the 2013 TLC yellow-cab trip files."""
        return cls(
            {
                "medallion": "medallion",
                "hack_license": "hack_license",
                "pickup_time": "pickup_datetime",
                "dropoff_time": "dropoff_datetime",
                "pickup_lat": "pickup_latitude",
                "pickup_lon": "pickup_longitude",
                "dropoff_lat": "dropoff_latitude",
                "dropoff_lon": "dropoff_longitude",
                "trip_distance": "trip_distance",
                "fare_total": "total_amount",
            },
            distance_unit,
        )

    @classmethod
    def canonical(cls) -> "Schema":
        """Identity mapping, used for the canonical trip store."""
        return cls({f: f for f in CANONICAL_FIELDS}, "km")

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "Schema":
        """Read a ``field=column`` text file; ``distance_unit=km|mi`` sets the unit."""
        values = read_key_values(path)
        unit = values.pop("distance_unit", "km")
        unknown = set(values) - set(CANONICAL_FIELDS)
        if unknown:
            raise ValueError(f"unknown schema fields: {', '.join(sorted(unknown))}")
        return cls(values, unit)

    def to_text(self) -> str:
        lines = [f"{f}={self.columns[f]}" for f in CANONICAL_FIELDS]
        lines.append(f"distance_unit={self.distance_unit}")
        return "\n".join(lines) + "\n"


def read_key_values(path: str | os.PathLike) -> dict[str, str]:
    """Parse a ``key=value`` file.  Blank lines and ``#`` comments are skipped."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


@dataclass(frozen=True)
class BBox:
    south: float = 40.49
    west: float = -74.27
    north: float = 40.92
    east: float = -73.68

    def __post_init__(self):
        if not (self.south < self.north and self.west < self.east):
            raise ValueError("bounding box is degenerate")

    @classmethod
    def parse(cls, text: str) -> "BBox":
        """``south,west,north,east`` in degrees."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("bbox needs four comma-separated numbers: south,west,north,east")
        return cls(*parts)

    def contains(self, lat, lon):
        return (lat >= self.south) & (lat <= self.north) & (lon >= self.west) & (lon <= self.east)


NYC_BBOX = BBox()


@dataclass(frozen=True)
class Limits:
    min_duration_s: int = 1
    max_duration_s: int = 6 * 3600
    min_distance_km: float = 0.0
    max_distance_km: float = 160.0


@dataclass(frozen=True)
class TripRecord:
    medallion: str
    hack_license: str
    pickup_time: datetime
    dropoff_time: datetime
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    trip_distance: float  # km
    fare_total: float

    @property
    def duration(self) -> timedelta:
        return self.dropoff_time - self.pickup_time

    @property
    def duration_s(self) -> int:
        return int(self.duration.total_seconds())


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rows_rejected_by_reason: Counter = field(default_factory=Counter)

    @property
    def rows_rejected(self) -> int:
        return sum(self.rows_rejected_by_reason.values())

    def merge(self, other: "IngestReport") -> "IngestReport":
        return IngestReport(
            self.rows_read + other.rows_read,
            self.rows_accepted + other.rows_accepted,
            self.rows_rejected_by_reason + other.rows_rejected_by_reason,
        )

    __add__ = merge

    def as_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_accepted": self.rows_accepted,
            "rows_rejected_by_reason": dict(sorted(self.rows_rejected_by_reason.items())),
        }


# ---------------------------------------------------------------------------
# row path


def parse_timestamp(text: str) -> datetime:
    m = _TIMESTAMP.fullmatch(text)
    if m is None:
        raise RowError(MALFORMED_TIMESTAMP)
    try:
        return datetime(*(int(g) for g in m.groups()))
    except ValueError:
        raise RowError(MALFORMED_TIMESTAMP) from None


def _parse_number(text: str, reason: str) -> float:
    if _NUMBER.fullmatch(text) is None:
        raise RowError(reason)
    value = float(text)
    if not math.isfinite(value):
        raise RowError(reason)
    return value


def parse_trip_row(raw_row: Mapping[str, str], schema: Schema) -> TripRecord:
    """Turn one CSV row (column name -> text) into a TripRecord.

    Raises RowError with one of the module's reason strings, or IngestError
    if a mapped column is absent from the row altogether.
    """
    cols = schema.columns
    try:
        text = {f: raw_row[cols[f]] for f in CANONICAL_FIELDS}
    except KeyError as exc:
        raise IngestError(f"missing required column {exc.args[0]!r}") from None
    if any(v is None for v in text.values()):
        raise RowError(MALFORMED_ROW)

    pickup = parse_timestamp(text["pickup_time"])
    dropoff = parse_timestamp(text["dropoff_time"])
    coords = [_parse_number(text[f], NON_NUMERIC_COORDINATE) for f in COORD_FIELDS]
    distance = _parse_number(text["trip_distance"], NON_NUMERIC_DISTANCE) * schema.distance_factor
    fare = _parse_number(text["fare_total"], NON_NUMERIC_FARE)
    if dropoff < pickup:
        raise RowError(NEGATIVE_DURATION)
    if distance < 0:
        raise RowError(NEGATIVE_DISTANCE)
    if fare < 0:
        raise RowError(NEGATIVE_FARE)
    return TripRecord(
        text["medallion"], text["hack_license"], pickup, dropoff, *coords, distance, fare
    )


def validate_trip(t: TripRecord, bbox: BBox = NYC_BBOX, limits: Limits = Limits()) -> str | None:
    """Return None when the trip is accepted, otherwise the rejection reason."""
    if not (bbox.contains(t.pickup_lat, t.pickup_lon) and bbox.contains(t.dropoff_lat, t.dropoff_lon)):
        return OUT_OF_BBOX
    if not limits.min_duration_s <= t.duration.total_seconds() <= limits.max_duration_s:
        return DURATION_OUT_OF_RANGE
    if not limits.min_distance_km <= t.trip_distance <= limits.max_distance_km:
        return DISTANCE_OUT_OF_RANGE
    return None


# ---------------------------------------------------------------------------
# vectorised path


def _days_from_civil(y, m, d):
    # Howard Hinnant's algorithm, valid for the proleptic Gregorian calendar
    y = y - (m <= 2)
    era = np.floor_divide(y, 400)
    yoe = y - era * 400
    mp = (m + 9) % 12
    doy = (153 * mp + 2) // 5 + d - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


_DIGIT_POS = np.array([0, 1, 2, 3, 5, 6, 8, 9, 11, 12, 14, 15, 17, 18])
_DAYS_IN_MONTH = np.array([0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31])


def parse_timestamps(arr: pa.Array) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``YYYY-MM-DD HH:MM:SS`` strings to epoch seconds.

    Returns ``(seconds, ok)``; entries where ``ok`` is False hold 0.
    """
    arr = pc.cast(arr, pa.large_string()) if arr.type != pa.large_string() else arr
    n = len(arr)
    seconds = np.zeros(n, dtype=np.int64)
    if n == 0:
        return seconds, np.zeros(0, dtype=bool)
    _, offsets_buf, data_buf = arr.buffers()
    offsets = np.frombuffer(offsets_buf, dtype=np.int64, count=n + 1, offset=arr.offset * 8)
    data = np.frombuffer(data_buf, dtype=np.uint8) if data_buf is not None else np.zeros(0, np.uint8)
    lengths = np.diff(offsets)
    ok = lengths == 19
    if arr.null_count:
        ok &= arr.is_valid().to_numpy(zero_copy_only=False)
    rows = np.flatnonzero(ok)
    if rows.size == 0:
        return seconds, ok
    if rows.size == n and offsets[-1] - offsets[0] == 19 * n:
        b = data[offsets[0] : offsets[-1]].reshape(n, 19).astype(np.int64)
    else:
        b = data[offsets[rows][:, None] + np.arange(19)].astype(np.int64)
    d = b[:, _DIGIT_POS] - 48
    good = ((d >= 0) & (d <= 9)).all(axis=1)
    good &= (b[:, 4] == 45) & (b[:, 7] == 45) & (b[:, 10] == 32) & (b[:, 13] == 58) & (b[:, 16] == 58)
    year = d[:, 0] * 1000 + d[:, 1] * 100 + d[:, 2] * 10 + d[:, 3]
    month = d[:, 4] * 10 + d[:, 5]
    day = d[:, 6] * 10 + d[:, 7]
    hour = d[:, 8] * 10 + d[:, 9]
    minute = d[:, 10] * 10 + d[:, 11]
    sec = d[:, 12] * 10 + d[:, 13]
    month_ok = (month >= 1) & (month <= 12)
    leap = ((year % 4 == 0) & (year % 100 != 0)) | (year % 400 == 0)
    dim = _DAYS_IN_MONTH[np.where(month_ok, month, 0)] + ((month == 2) & leap)
    good &= (year >= 1) & month_ok & (day >= 1) & (day <= dim)
    good &= (hour < 24) & (minute < 60) & (sec < 60)
    days = _days_from_civil(year, month, day)
    seconds[rows] = np.where(good, days * 86400 + hour * 3600 + minute * 60 + sec, 0)
    ok[rows] = good
    return seconds, ok


def parse_numbers(arr: pa.Array) -> tuple[np.ndarray, np.ndarray]:
    """Parse decimal strings to float64.  Returns ``(values, ok)``."""
    try:
        values = pc.cast(arr, pa.float64()).to_numpy(zero_copy_only=False)
        ok = np.isfinite(values)
    except pa.ArrowInvalid:
        valid = pc.match_substring_regex(arr, "^" + _NUMBER_RE + "$")
        cleaned = pc.if_else(valid, arr, pa.scalar("nan", arr.type))
        values = pc.cast(cleaned, pa.float64()).to_numpy(zero_copy_only=False)
        ok = np.isfinite(values)
    if arr.null_count:
        ok &= arr.is_valid().to_numpy(zero_copy_only=False)
    return np.where(ok, values, np.nan), ok


def _categorical(arr: pa.Array) -> pd.Categorical:
    enc = pc.dictionary_encode(arr).combine_chunks() if isinstance(arr, pa.ChunkedArray) else pc.dictionary_encode(arr)
    codes = enc.indices.to_numpy(zero_copy_only=False).astype(np.int32)
    return pd.Categorical.from_codes(codes, categories=pd.Index(enc.dictionary.to_pylist(), dtype=object))


def convert_batch(
    batch: pa.RecordBatch | pa.Table,
    schema: Schema,
    bbox: BBox,
    limits: Limits,
) -> tuple[pd.DataFrame, np.ndarray]:
    """Vectorised parse + validate of one block of string columns.

    Returns the frame of accepted trips and an object array holding, for every
    input row, ``None`` (accepted) or its rejection reason.
    """
    cols = schema.columns

    def col(f):
        c = batch.column(cols[f])
        return c.combine_chunks() if isinstance(c, pa.ChunkedArray) else c

    n = batch.num_rows
    pickup, ok_pu = parse_timestamps(col("pickup_time"))
    dropoff, ok_do = parse_timestamps(col("dropoff_time"))
    coords = {}
    ok_coord = np.ones(n, dtype=bool)
    for f in COORD_FIELDS:
        coords[f], ok = parse_numbers(col(f))
        ok_coord &= ok
    distance, ok_dist = parse_numbers(col("trip_distance"))
    distance = distance * schema.distance_factor
    fare, ok_fare = parse_numbers(col("fare_total"))
    duration = dropoff - pickup

    blank = np.ones(n, dtype=bool)
    for c in set(cols.values()):
        blank &= pc.binary_length(batch.column(c)).to_numpy(zero_copy_only=False) == 0

    with np.errstate(invalid="ignore"):
        in_box = bbox.contains(coords["pickup_lat"], coords["pickup_lon"]) & bbox.contains(
            coords["dropoff_lat"], coords["dropoff_lon"]
        )
        conditions = [
            blank,
            ~(ok_pu & ok_do),
            ~ok_coord,
            ~ok_dist,
            ~ok_fare,
            duration < 0,
            distance < 0,
            fare < 0,
            ~in_box,
            (duration < limits.min_duration_s) | (duration > limits.max_duration_s),
            (distance < limits.min_distance_km) | (distance > limits.max_distance_km),
        ]
    reasons = np.select(conditions, list(REASONS), default=None)
    keep = np.flatnonzero(reasons == None)  # noqa: E711
    keep_arr = pa.array(keep)
    frame = pd.DataFrame(
        {
            "medallion": _categorical(col("medallion").take(keep_arr)),
            "hack_license": _categorical(col("hack_license").take(keep_arr)),
            "pickup_time": pickup[keep],
            "dropoff_time": dropoff[keep],
            **{f: coords[f][keep] for f in COORD_FIELDS},
            "trip_distance": distance[keep],
            "fare_total": fare[keep],
        }
    )
    return frame, reasons


def empty_trip_frame() -> pd.DataFrame:
    cat = pd.Categorical([], categories=pd.Index([], dtype=object))
    return pd.DataFrame(
        {
            "medallion": cat,
            "hack_license": cat.copy(),
            "pickup_time": np.zeros(0, np.int64),
            "dropoff_time": np.zeros(0, np.int64),
            **{f: np.zeros(0) for f in COORD_FIELDS},
            "trip_distance": np.zeros(0),
            "fare_total": np.zeros(0),
        }
    )


def concat_trip_frames(frames: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """Concatenate trip frames, unioning the id categories instead of falling back to object."""
    frames = [f for f in frames if len(f)] or [empty_trip_frame()]
    if len(frames) == 1:
        return frames[0].reset_index(drop=True)
    out = {}
    for name in frames[0].columns:
        if name in ("medallion", "hack_license"):
            out[name] = union_categoricals([f[name].array for f in frames])
        else:
            out[name] = np.concatenate([f[name].to_numpy() for f in frames])
    return pd.DataFrame(out)


def frame_to_records(frame: pd.DataFrame) -> Iterator[TripRecord]:
    med = frame["medallion"].astype(str).tolist()
    hack = frame["hack_license"].astype(str).tolist()
    cols = [frame[f].tolist() for f in COORD_FIELDS + ("trip_distance", "fare_total")]
    pu = frame["pickup_time"].tolist()
    do = frame["dropoff_time"].tolist()
    for i in range(len(frame)):
        yield TripRecord(
            med[i],
            hack[i],
            EPOCH + timedelta(seconds=pu[i]),
            EPOCH + timedelta(seconds=do[i]),
            *(c[i] for c in cols),
        )


def records_to_frame(records: Iterable[TripRecord]) -> pd.DataFrame:
    records = list(records)
    if not records:
        return empty_trip_frame()
    data = {f: [getattr(r, f) for r in records] for f in CANONICAL_FIELDS}
    for f in TIME_FIELDS:
        data[f] = np.array([int((t - EPOCH).total_seconds()) for t in data[f]], dtype=np.int64)
    for f in ("medallion", "hack_license"):
        data[f] = pd.Categorical(data[f])
    for f in COORD_FIELDS + ("trip_distance", "fare_total"):
        data[f] = np.asarray(data[f], dtype=np.float64)
    return pd.DataFrame(data)


# ---------------------------------------------------------------------------
# file streaming


def read_header(path: str | os.PathLike) -> list[str]:
    try:
        with open(path, encoding="utf-8-sig", newline="") as fh:
            first = fh.readline()
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestError(f"{path}: cannot read file: {exc}") from exc
    if not first.strip():
        raise IngestError(f"{path}: header mismatch: file has no header row")
    return next(csv.reader([first]))


def _check_header(header: Sequence[str], schema: Schema, source) -> None:
    missing = [c for f, c in schema.columns.items() if c not in header]
    if missing:
        raise IngestError(f"{source}: header mismatch: missing columns {', '.join(missing)}")


def _data_line_numbers(ordinals: np.ndarray, skipped: Sequence[int]) -> np.ndarray:
    """Map 0-based ordinals of parsed rows to 1-based data line numbers, given skipped lines."""
    if not len(skipped):
        return ordinals + 1
    s = np.sort(np.asarray(skipped, dtype=np.int64))
    before = s - 1 - np.arange(len(s))  # parsed rows preceding each skipped line
    return ordinals + 1 + np.searchsorted(before, ordinals, side="right")


@dataclass
class _Unit:
    """One contiguous piece of CSV text: a whole file or a byte range of one."""

    source: str
    header: list[str]
    start: int = 0  # byte offset of the first data line
    stop: int | None = None


def _read_unit(unit: _Unit, schema: Schema, bbox: BBox, limits: Limits, block_size: int):
    """Yield ``(frame, reasons, line_numbers_of_rejects, n_rows)`` per block, then a final skipped record."""
    skipped: list[int] = []

    def on_invalid(row):
        skipped.append(row.number if row.number is not None else -1)
        return "skip"

    wanted = sorted(set(schema.columns.values()))
    convert = pcsv.ConvertOptions(
        column_types={c: pa.large_string() for c in wanted},
        include_columns=wanted,
        strings_can_be_null=False,
        quoted_strings_can_be_null=False,
    )
    parse = pcsv.ParseOptions(invalid_row_handler=on_invalid, ignore_empty_lines=False)
    read = pcsv.ReadOptions(
        column_names=unit.header, skip_rows=0, block_size=block_size, use_threads=False
    )
    with open(unit.source, "rb") as fh:
        if unit.start == 0 and unit.stop is None:
            fh.readline()  # header
            stream = fh
        else:
            fh.seek(unit.start)
            stream = io.BytesIO(fh.read(unit.stop - unit.start))
        try:
            reader = pcsv.open_csv(stream, read_options=read, parse_options=parse, convert_options=convert)
        except pa.ArrowInvalid as exc:
            if "Empty CSV file" in str(exc):
                yield None, None, None, skipped
                return
            raise IngestError(f"{unit.source}: {exc}") from exc
        ordinal = 0
        try:
            for batch in reader:
                frame, reasons = convert_batch(batch, schema, bbox, limits)
                rejected = np.flatnonzero(reasons != None)  # noqa: E711
                yield frame, reasons[rejected], ordinal + rejected, batch.num_rows
                ordinal += batch.num_rows
        except pa.ArrowInvalid as exc:
            raise IngestError(f"{unit.source}: {exc}") from exc
    yield None, None, None, skipped


class TripReader:
    """Streams accepted trips from an ordered list of CSV files.

    Iterate ``batches()`` for frames or iterate the reader itself for
    TripRecord values.  ``report`` is complete once iteration finishes.
    Memory use is bounded by ``block_size`` bytes of CSV text per block.
    """

    def __init__(
        self,
        paths: Sequence[str | os.PathLike],
        schema: Schema,
        bbox: BBox = NYC_BBOX,
        limits: Limits = Limits(),
        block_size: int = 16 << 20,
        reject_log: str | os.PathLike | None = None,
    ):
        self.paths = [str(p) for p in paths]
        self.schema = schema
        self.bbox = bbox
        self.limits = limits
        self.block_size = block_size
        self.reject_log = reject_log
        self.report = IngestReport()

    def batches(self) -> Iterator[pd.DataFrame]:
        self.report = IngestReport()
        log = open(self.reject_log, "w", encoding="utf-8") if self.reject_log else None
        line_base = 0
        try:
            for path in self.paths:
                header = read_header(path)
                _check_header(header, self.schema, path)
                rejects: list[tuple[np.ndarray, np.ndarray]] = []
                n_parsed = 0
                for frame, reasons, ordinals, extra in _read_unit(
                    _Unit(path, header), self.schema, self.bbox, self.limits, self.block_size
                ):
                    if frame is None:
                        skipped = extra
                        break
                    n_parsed += extra
                    self.report.rows_accepted += len(frame)
                    self.report.rows_rejected_by_reason.update(reasons.tolist())
                    if log is not None and len(reasons):
                        rejects.append((ordinals, reasons))
                    if len(frame):
                        yield frame
                self.report.rows_read += n_parsed + len(skipped)
                if skipped:
                    self.report.rows_rejected_by_reason[MALFORMED_ROW] += len(skipped)
                if log is not None:
                    _write_rejects(log, rejects, skipped, line_base)
                line_base += n_parsed + len(skipped)
        finally:
            if log is not None:
                log.close()

    def __iter__(self) -> Iterator[TripRecord]:
        for frame in self.batches():
            yield from frame_to_records(frame)

    def read_all(self) -> pd.DataFrame:
        return concat_trip_frames(list(self.batches()))


def _write_rejects(log, rejects, skipped, line_base: int) -> None:
    entries = []
    for ordinals, reasons in rejects:
        lines = _data_line_numbers(ordinals, skipped)
        entries.extend(zip(lines.tolist(), reasons.tolist()))
    entries.extend((s, MALFORMED_ROW) for s in skipped)
    for line, reason in sorted(entries):
        log.write(f"{line_base + line},{reason}\n")


def stream_trips(
    paths: Sequence[str | os.PathLike],
    schema: Schema,
    bbox: BBox = NYC_BBOX,
    limits: Limits = Limits(),
    block_size: int = 16 << 20,
    reject_log: str | os.PathLike | None = None,
) -> TripReader:
    return TripReader(paths, schema, bbox, limits, block_size, reject_log)


def read_trips(paths, schema: Schema, bbox: BBox = NYC_BBOX, limits: Limits = Limits(), **kwargs):
    """Read every accepted trip into one frame.  Returns ``(frame, report)``."""
    reader = TripReader(paths, schema, bbox, limits, **kwargs)
    frame = reader.read_all()
    return frame, reader.report


# ---------------------------------------------------------------------------
# chunked parallel ingestion


def split_file(path: str | os.PathLike, n_chunks: int) -> list[tuple[int, int]]:
    """Split a CSV body into byte ranges that end on line boundaries.

    Assumes no quoted newlines, which holds for TLC exports.
    """
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        fh.readline()
        body_start = fh.tell()
        bounds = [body_start]
        for k in range(1, n_chunks):
            target = body_start + (size - body_start) * k // n_chunks
            if target <= bounds[-1]:
                continue
            fh.seek(target - 1)
            fh.readline()  # advance to the next line start
            pos = fh.tell()
            if bounds[-1] < pos < size:
                bounds.append(pos)
        bounds.append(size)
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


def _read_chunk(args):
    path, header, start, stop, schema, bbox, limits, block_size = args
    frames, reason_counts, n_parsed, skipped = [], Counter(), 0, []
    for frame, reasons, _, extra in _read_unit(_Unit(path, header, start, stop), schema, bbox, limits, block_size):
        if frame is None:
            skipped = extra
            break
        n_parsed += extra
        reason_counts.update(reasons.tolist())
        frames.append(frame)
    report = IngestReport(n_parsed + len(skipped), sum(len(f) for f in frames), reason_counts)
    if skipped:
        report.rows_rejected_by_reason[MALFORMED_ROW] += len(skipped)
    return concat_trip_frames(frames), report


def read_trips_parallel(
    paths,
    schema: Schema,
    bbox: BBox = NYC_BBOX,
    limits: Limits = Limits(),
    n_chunks: int = 4,
    workers: int | None = None,
    block_size: int = 16 << 20,
):
    """Parse byte-range chunks concurrently and merge.

    Chunk results are merged in file order, so the frame and report equal
    those of :func:`read_trips`.
    """
    tasks = []
    for path in map(str, paths):
        header = read_header(path)
        _check_header(header, schema, path)
        for start, stop in split_file(path, n_chunks):
            tasks.append((path, header, start, stop, schema, bbox, limits, block_size))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_read_chunk, tasks))
    report = IngestReport()
    for _, r in results:
        report = report.merge(r)
    return concat_trip_frames([f for f, _ in results]), report


# ---------------------------------------------------------------------------
# canonical store


def write_canonical(frame: pd.DataFrame, path: str | os.PathLike) -> None:
    """Write trips with canonical column names, kilometres and text timestamps."""
    table = pa.table(
        {
            "medallion": pa.array(frame["medallion"].astype(str).to_numpy(), pa.string()),
            "hack_license": pa.array(frame["hack_license"].astype(str).to_numpy(), pa.string()),
            **{
                f: pc.strftime(pa.array(frame[f].to_numpy(), pa.timestamp("s")), format=TIME_FORMAT)
                for f in TIME_FIELDS
            },
            **{f: pa.array(frame[f].to_numpy(), pa.float64()) for f in COORD_FIELDS},
            "trip_distance": pa.array(frame["trip_distance"].to_numpy(), pa.float64()),
            "fare_total": pa.array(frame["fare_total"].to_numpy(), pa.float64()),
        }
    )
    write_csv(table, path)


def write_csv(table: pa.Table, path: str | os.PathLike) -> None:
    opts = pcsv.WriteOptions(quoting_style="needed", quoting_header="none", batch_size=1 << 16)
    pcsv.write_csv(table, str(path), write_options=opts)


WORLD_BBOX = BBox(-90.0, -180.0, 90.0, 180.0)
NO_LIMITS = Limits(0, np.iinfo(np.int64).max, 0.0, np.inf)


def read_canonical(path: str | os.PathLike, **kwargs) -> tuple[pd.DataFrame, IngestReport]:
    """Read a canonical store.  Its rows were validated on the way in, so no bbox or limits apply by default."""
    kwargs.setdefault("bbox", WORLD_BBOX)
    kwargs.setdefault("limits", NO_LIMITS)
    return read_trips([path], Schema.canonical(), **kwargs)


def trips_from_text(text: str, schema: Schema, **kwargs) -> tuple[pd.DataFrame, IngestReport]:
    """Convenience for tests and small inputs: ingest CSV text via a temporary file."""
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "trips.csv"
        p.write_text(text, encoding="utf-8")
        return read_trips([p], schema, **kwargs)
