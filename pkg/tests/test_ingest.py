import csv
import io
from datetime import datetime, timedelta

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from taxidemand.ingest import (
    BBox,
    IngestError,
    IngestReport,
    Limits,
    RowError,
    Schema,
    TripRecord,
    frame_to_records,
    parse_timestamp,
    parse_trip_row,
    read_canonical,
    read_trips,
    read_trips_parallel,
    split_file,
    stream_trips,
    trips_from_text,
    validate_trip,
    write_canonical,
)

from conftest import TLC_HEADER, tlc_row, tlc_text


def record(**kw):
    base = dict(
        medallion="M1",
        hack_license="H1",
        pickup_time=datetime(2013, 3, 8, 7, 15),
        dropoff_time=datetime(2013, 3, 8, 7, 28),
        pickup_lat=40.75,
        pickup_lon=-73.98,
        dropoff_lat=40.76,
        dropoff_lon=-73.97,
        trip_distance=3.0,
        fare_total=12.5,
    )
    base.update(kw)
    return TripRecord(**base)


# -- parse_trip_row ---------------------------------------------------------


def test_parse_row_duration_13_minutes(km_schema):
    t = parse_trip_row(tlc_row(), km_schema)
    assert t.duration == timedelta(minutes=13)
    assert t.hack_license == "H1" and t.trip_distance == 3.0


def test_parse_row_negative_duration(km_schema):
    with pytest.raises(RowError, match="negative duration"):
        parse_trip_row(tlc_row(dropoff="2013-03-08 07:00:00"), km_schema)


def test_parse_row_non_numeric_coordinate(km_schema):
    with pytest.raises(RowError, match="non-numeric coordinate"):
        parse_trip_row(tlc_row(plon="abc"), km_schema)


@pytest.mark.parametrize("text", ["2013-3-08 07:15:00", "2013-02-30 07:15:00", "2013-03-08T07:15:00", "", "x"])
def test_parse_row_malformed_timestamp(km_schema, text):
    with pytest.raises(RowError, match="malformed timestamp"):
        parse_trip_row(tlc_row(pickup=text), km_schema)


def test_parse_row_missing_column(km_schema):
    row = tlc_row()
    del row["total_amount"]
    with pytest.raises(IngestError, match="missing required column"):
        parse_trip_row(row, km_schema)


def test_miles_converted_to_km():
    t = parse_trip_row(tlc_row(dist="1"), Schema.tlc("mi"))
    assert t.trip_distance == pytest.approx(1.609344)


def test_parse_timestamp_second_precision():
    assert parse_timestamp("2013-12-31 23:59:59") == datetime(2013, 12, 31, 23, 59, 59)


# -- validate_trip ------------------------------------------------------------


def test_validate_accepts_in_range_trip():
    assert validate_trip(record()) is None


def test_validate_null_island_out_of_bbox():
    assert validate_trip(record(pickup_lat=0.0, pickup_lon=0.0)) == "out of bounding box"


def test_validate_thirty_day_trip():
    t = record(dropoff_time=datetime(2013, 3, 8, 7, 15) + timedelta(days=30))
    assert validate_trip(t) == "duration out of range"


def test_validate_limits_are_inclusive():
    six_h = record(dropoff_time=datetime(2013, 3, 8, 13, 15))
    assert validate_trip(six_h) is None
    assert validate_trip(record(dropoff_time=datetime(2013, 3, 8, 7, 15))) == "duration out of range"
    assert validate_trip(record(trip_distance=160.0)) is None
    assert validate_trip(record(trip_distance=160.001)) == "distance out of range"


def test_degenerate_bbox_rejected():
    with pytest.raises(ValueError):
        BBox(40.9, -74.0, 40.5, -73.0)


# -- streaming ----------------------------------------------------------------


def test_two_files_of_three_rows(write_tlc, km_schema):
    a = write_tlc([tlc_row(hack=f"A{i}") for i in range(3)])
    b = write_tlc([tlc_row(hack=f"B{i}") for i in range(3)])
    reader = stream_trips([a, b], km_schema)
    records = list(reader)
    assert len(records) == 6
    assert [r.hack_license for r in records] == ["A0", "A1", "A2", "B0", "B1", "B2"]
    assert reader.report.rows_read == 6 and reader.report.rows_accepted == 6


def test_malformed_row_counted(write_tlc, km_schema):
    p = write_tlc([tlc_row(), tlc_row(), "only,three,fields"])
    reader = stream_trips([p], km_schema)
    assert len(list(reader)) == 2
    assert dict(reader.report.rows_rejected_by_reason) == {"malformed row": 1}


def test_header_only_file(write_tlc, km_schema):
    p = write_tlc([])
    reader = stream_trips([p], km_schema)
    assert list(reader) == []
    assert reader.report.rows_read == 0


def test_header_mismatch(tmp_path, km_schema):
    p = tmp_path / "bad.csv"
    p.write_text(tlc_text([tlc_row()], header=TLC_HEADER).replace("total_amount", "fare"), encoding="utf-8")
    with pytest.raises(IngestError, match="header mismatch"):
        read_trips([p], km_schema)


def test_unreadable_file(tmp_path, km_schema):
    with pytest.raises((IngestError, OSError)):
        read_trips([tmp_path / "nope.csv"], km_schema)


def test_reject_log_lines(write_tlc, km_schema, tmp_path):
    rows = [
        tlc_row(),
        tlc_row(plat="0", plon="0", dlat="0", dlon="0"),
        tlc_row(fare="-1"),
        "a,b",
        tlc_row(dist="x"),
    ]
    p = write_tlc(rows)
    q = write_tlc([tlc_row(pickup="bad")])
    log = tmp_path / "rejects.csv"
    _, report = read_trips([p, q], km_schema, reject_log=log)
    assert log.read_text().splitlines() == [
        "2,out of bounding box",
        "3,negative fare",
        "4,malformed row",
        "5,non-numeric distance",
        "6,malformed timestamp",
    ]
    assert report.rows_read == 6 and report.rows_accepted == 1


def test_blank_line_is_malformed_row(km_schema):
    text = tlc_text([tlc_row()]) + "\n" + tlc_text([tlc_row()]).split("\n", 1)[1]
    _, report = trips_from_text(text, km_schema)
    assert report.rows_accepted == 2
    assert report.rows_rejected_by_reason["malformed row"] == 1


def test_small_blocks_match_one_block(write_tlc, km_schema):
    rows = [tlc_row(hack=f"H{i % 7}", pickup=f"2013-03-08 07:{i % 60:02d}:00", dropoff="2013-03-08 09:00:00") for i in range(300)]
    rows[17] = "garbage"
    p = write_tlc(rows)
    big, r1 = read_trips([p], km_schema)
    small, r2 = read_trips([p], km_schema, block_size=1 << 10)
    pd.testing.assert_frame_equal(big, small)
    assert r1 == r2


def test_parallel_matches_sequential(write_tlc, km_schema):
    rows = [tlc_row(hack=f"H{i % 5}", fare=str(i)) for i in range(500)]
    rows[3] = "x,y"
    rows[250] = tlc_row(plat="abc")
    p = write_tlc(rows)
    q = write_tlc(rows[:77])
    seq, r_seq = read_trips([p, q], km_schema)
    par, r_par = read_trips_parallel([p, q], km_schema, n_chunks=6, workers=3)
    pd.testing.assert_frame_equal(seq, par)
    assert r_seq == r_par


def test_split_file_covers_body(write_tlc):
    p = write_tlc([tlc_row() for _ in range(50)])
    chunks = split_file(p, 7)
    body = p.read_bytes()
    header_len = body.index(b"\n") + 1
    assert chunks[0][0] == header_len and chunks[-1][1] == len(body)
    assert all(a[1] == b[0] for a, b in zip(chunks, chunks[1:]))
    assert all(body[b - 1 : b] == b"\n" for _, b in chunks)


def test_canonical_round_trip(write_tlc, km_schema, tmp_path):
    p = write_tlc([tlc_row(hack=f"H{i}", plat=f"40.7{i}1234") for i in range(5)])
    frame, _ = read_trips([p], km_schema)
    write_canonical(frame, tmp_path / "c.csv")
    back, report = read_canonical(tmp_path / "c.csv")
    assert report.rows_accepted == 5
    pd.testing.assert_frame_equal(frame, back, check_categorical=False)


def test_report_merge():
    a = IngestReport(3, 2)
    a.rows_rejected_by_reason["malformed row"] += 1
    b = IngestReport(2, 2)
    c = a + b
    assert c.rows_read == 5 and c.rows_accepted == 4 and c.rows_rejected == 1


# -- totality and row/vector parity ---------------------------------------------

_FIELD_VALUES = {
    "pickup_datetime": ["2013-03-08 07:15:00", "2013-03-08 07:20:00", "2013-13-08 07:15:00", "now", "2013-03-08 7:15:00"],
    "dropoff_datetime": ["2013-03-08 07:28:00", "2013-03-08 07:10:00", "2013-03-09 08:00:00", "2013-04-08 07:28:00", ""],
    "pickup_latitude": ["40.75", "0", "abc", "nan", "4.075e1", " 40.75", "40.7_5", "-40.75"],
    "pickup_longitude": ["-73.98", "0", "", "-73.98e0", "inf"],
    "trip_distance": ["3", "0", "-1", "161", "x", ".5", "1e3", "5."],
    "total_amount": ["12.5", "0", "-0.01", "y", "+3"],
    "hack_license": ["H1", "", "H,2", 'say "hi"'],
}


def _oracle_reason(raw, schema, bbox=BBox(), limits=Limits()):
    try:
        t = parse_trip_row(raw, schema)
    except RowError as exc:
        return exc.reason
    return validate_trip(t, bbox, limits)


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.fixed_dictionaries({k: st.sampled_from(v) for k, v in _FIELD_VALUES.items()}), min_size=1, max_size=25))
def test_vectorised_path_matches_row_path(tmp_path, overrides):
    schema = Schema.tlc("mi")
    rows = [{**tlc_row(), **o} for o in overrides]
    text = tlc_text(rows)
    frame, report = trips_from_text(text, schema)
    expected_reasons, expected_records = [], []
    for raw in csv.DictReader(io.StringIO(text)):
        reason = _oracle_reason(raw, schema)
        if reason is None:
            expected_records.append(parse_trip_row(raw, schema))
        else:
            expected_reasons.append(reason)
    assert report.rows_read == len(rows)
    assert report.rows_read == report.rows_accepted + report.rows_rejected
    assert sorted(report.rows_rejected_by_reason.elements()) == sorted(expected_reasons)
    got = list(frame_to_records(frame))
    assert len(got) == len(expected_records)
    for g, e in zip(got, expected_records):
        assert g == e


@settings(max_examples=40, deadline=None)
@given(
    st.datetimes(min_value=datetime(1970, 1, 1), max_value=datetime(2099, 12, 31)),
)
def test_timestamp_fast_parser_matches_datetime(dt):
    from taxidemand.ingest import parse_timestamps
    import pyarrow as pa

    dt = dt.replace(microsecond=0)
    secs, ok = parse_timestamps(pa.array([dt.strftime("%Y-%m-%d %H:%M:%S")]))
    assert ok[0]
    assert secs[0] == int((dt - datetime(1970, 1, 1)).total_seconds())
