import csv
import io

import pytest

from taxidemand.ingest import Schema

TLC_HEADER = [
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


def tlc_row(
    pickup="2013-03-08 07:15:00",
    dropoff="2013-03-08 07:28:00",
    hack="H1",
    medallion="M1",
    plat="40.75",
    plon="-73.98",
    dlat="40.76",
    dlon="-73.97",
    dist="3",
    fare="12.5",
):
    return {
        "medallion": medallion,
        "hack_license": hack,
        "vendor_id": "CMT",
        "pickup_datetime": pickup,
        "dropoff_datetime": dropoff,
        "passenger_count": "1",
        "trip_distance": dist,
        "pickup_longitude": plon,
        "pickup_latitude": plat,
        "dropoff_longitude": dlon,
        "dropoff_latitude": dlat,
        "total_amount": fare,
    }


def tlc_text(rows, header=TLC_HEADER):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    for r in rows:
        if isinstance(r, str):
            buf.write(r + "\n")
        else:
            w.writerow(r)
    return buf.getvalue()


@pytest.fixture
def km_schema():
    return Schema.tlc("km")


@pytest.fixture
def write_tlc(tmp_path):
    counter = {"n": 0}

    def write(rows, name=None):
        counter["n"] += 1
        p = tmp_path / (name or f"trips{counter['n']}.csv")
        p.write_text(tlc_text(rows), encoding="utf-8")
        return p

    return write


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
