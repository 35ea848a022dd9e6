"""Large synthetic trip files assembled from independent simulator blocks."""
from pathlib import Path

import pandas as pd

from taxidemand.ingest import Schema
from taxidemand.simulate import SimConfig, simulate, write_trips


def write_large_trip_file(path, n_rows: int, seed: int = 0, drivers_per_block: int = 1000, days: int = 28) -> int:
    """Write at least ``n_rows`` trips in TLC layout (km distances); returns the row count.

    Each block is a separate simulation whose driver ids get a block prefix, so
    blocks never share a driver.
    """
    path = Path(path)
    total = 0
    block = 0
    with open(path, "wb") as out:
        while total < n_rows:
            sim = simulate(SimConfig(n_drivers=drivers_per_block, days=days, seed=seed * 10_000 + block))
            t = sim.trips
            for col in ("medallion", "hack_license"):
                t[col] = t[col].cat.rename_categories([f"B{block:03d}{c}" for c in t[col].cat.categories])
            need = n_rows - total
            if len(t) > need:
                sim.trips = t.iloc[:need].reset_index(drop=True)
                sim.extras = sim.extras.iloc[:need].reset_index(drop=True)
            tmp = path.with_suffix(f".part{block}")
            write_trips(sim, tmp)
            data = tmp.read_bytes()
            tmp.unlink()
            out.write(data if block == 0 else data[data.index(b"\n") + 1 :])
            total += len(sim.trips)
            block += 1
    return total


def km_schema() -> Schema:
    return Schema.tlc("km")


def measure_pipeline(path) -> dict:
    """Time ingest, shift synthesis and hourly binning over one trip file."""
    import resource
    import time

    from taxidemand.ingest import read_trips
    from taxidemand.metrics import aggregate_bins
    from taxidemand.shifts import build_shifts

    t0 = time.perf_counter()
    trips, rep = read_trips([path], km_schema())
    t1 = time.perf_counter()
    sr = build_shifts(trips)
    del trips
    t2 = time.perf_counter()
    bins = aggregate_bins(sr.trips, sr.shifts)
    t3 = time.perf_counter()
    return {
        "rows_read": rep.rows_read,
        "rows_accepted": rep.rows_accepted,
        "pickups_binned": int(bins["pickups"].sum()),
        "ingest_s": t1 - t0,
        "shifts_s": t2 - t1,
        "bins_s": t3 - t2,
        "total_s": t3 - t0,
        "peak_rss_gb": resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1e6,
    }


if __name__ == "__main__":
    import json
    import sys

    print(json.dumps(measure_pipeline(sys.argv[1])))
