"""Command-line entry point: ``taxidemand {ingest,shifts,analyze,test,simulate}``.

Every command writes its outputs into ``--out`` (or ``--out-dir``) together
with a ``manifest.json``.  The manifest id is a hash of the command, its
parameters and the contents of its inputs; the manifest lists every output
file with its digest.  CSV outputs carry no timestamps, so identical inputs
and seeds give byte-identical CSVs.

Exit codes: 0 success, 2 usage error, 3 input error (missing or unreadable
file, bad header or config), 4 data error (nothing usable to analyse).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .geo import Grid
from .ingest import NYC_BBOX, BBox, IngestError, Limits, Schema, read_canonical, read_trips, read_trips_parallel, write_canonical
from .metrics import INDEX_NAMES, write_bins_csv, write_comparison_csv, read_bins_csv, derive_indices
from .pipeline import PAIRING_RULE, analyze, run_tests
from .plots import line_chart, write_svg
from .shifts import build_shifts, interval_frame, shift_time_densities, write_shifts_csv
from .simulate import SimConfig, score_recovery, simulate
from .stats import OBSERVED, PERMUTATION, write_results_table
from .weather import (
    DEFAULT_STATIONS,
    RAIN_THRESHOLD_MM,
    REF_STATION,
    WeatherError,
    WeatherReport,
    classify_hours,
    load_station_coords,
    parse_weather,
    weather_frame,
    write_hour_weather,
)
from .windows import DEFAULT_WINDOWS, load_windows

CONFIG_ENV = "TAXIDEMAND_CONFIG_DIR"
EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DATA = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _config_file(explicit: str | None, name: str) -> Path | None:
    """An explicit path, else ``$TAXIDEMAND_CONFIG_DIR/name`` if present."""
    if explicit:
        return Path(explicit)
    base = os.environ.get(CONFIG_ENV)
    if base and (Path(base) / name).is_file():
        return Path(base) / name
    return None


def _require(path: Path | None, what: str, flag: str) -> Path:
    if path is None:
        raise CliError(f"missing {what}: pass {flag} or put it in ${CONFIG_ENV}", EXIT_USAGE)
    if not path.is_file():
        raise CliError(f"{what} not found: {path} (see {flag})", EXIT_INPUT)
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, params: dict):
        self.command = command
        self.params = {k: v for k, v in sorted(params.items()) if k not in ("func", "out")}
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.extra: dict = {}
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def add_input(self, path: Path) -> Path:
        self.inputs[str(path)] = _sha256(path)
        return path

    @property
    def id(self) -> str:
        key = json.dumps(
            {"command": self.command, "params": self.params, "inputs": sorted(self.inputs.values()), "version": __version__},
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def write(self, out_dir: Path) -> Path:
        doc = {
            "id": self.id,
            "command": self.command,
            "params": self.params,
            "inputs": [{"path": p, "sha256": h} for p, h in self.inputs.items()],
            "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in self.outputs],
            "versions": {"taxidemand": __version__, "numpy": np.__version__, "pandas": pd.__version__},
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **self.extra,
        }
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_trips(path: str, manifest: Manifest) -> pd.DataFrame:
    p = _require(Path(path), "canonical trip file", "--trips")
    manifest.add_input(p)
    try:
        trips, _ = read_canonical(p)
    except IngestError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    if trips.empty:
        raise CliError("no usable data: trip file has no rows", EXIT_DATA)
    return trips


def _load_windows(args, manifest):
    path = _config_file(args.windows, "windows.cfg")
    if path is None:
        return DEFAULT_WINDOWS
    manifest.add_input(_require(path, "windows config", "--windows"))
    try:
        return load_windows(path)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from None


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    m = Manifest("ingest", vars(args))
    schema_path = _require(_config_file(args.schema, "schema.cfg"), "schema file", "--schema")
    try:
        schema = Schema.from_file(m.add_input(schema_path))
        bbox = BBox.parse(args.bbox) if args.bbox else NYC_BBOX
    except (ValueError, KeyError) as exc:
        raise CliError(f"{schema_path}: {exc}", EXIT_INPUT) from None
    limits = Limits(max_duration_s=int(args.max_duration_h * 3600), max_distance_km=args.max_distance_km)
    paths = [_require(Path(p), "trip file", "TRIPS") for p in args.trips]
    for p in paths:
        m.add_input(p)
    out = _out_dir(args.out)
    try:
        if args.workers > 1:
            trips, report = read_trips_parallel(paths, schema, bbox, limits, n_chunks=args.workers, workers=args.workers)
        else:
            rejects = out / "rejects.csv"
            trips, report = read_trips(paths, schema, bbox, limits, reject_log=rejects)
            m.outputs.append(rejects)
    except (IngestError, OSError) as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    if report.rows_accepted == 0:
        raise CliError("no usable data: 0 rows accepted", EXIT_DATA)
    write_canonical(trips, out / "trips.csv")
    report_path = out / "ingest_report.json"
    report_path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    m.outputs += [out / "trips.csv", report_path]
    m.extra["ingest_report"] = report.as_dict()
    m.write(out)
    return EXIT_OK


def cmd_shifts(args) -> int:
    m = Manifest("shifts", vars(args))
    trips = _load_trips(args.trips, m)
    out = _out_dir(args.out)
    sr = build_shifts(trips, int(round(args.gap_hours * 3600)), _identity(args.identity), args.overlap)
    write_shifts_csv(sr.shifts, out / "shifts.csv")
    start, end = shift_time_densities(sr.shifts, args.bin_minutes)
    start.to_csv(out / "shift_start_density.csv")
    end.to_csv(out / "shift_end_density.csv")
    intervals = interval_frame(sr)
    intervals.assign(to_time=pd.to_datetime(intervals["to_time"], unit="s").dt.strftime("%Y-%m-%d %H:%M:%S")).to_csv(
        out / "empty_intervals.csv", index=False, lineterminator="\n", float_format="%.10g"
    )
    m.outputs += [out / n for n in ("shifts.csv", "shift_start_density.csv", "shift_end_density.csv", "empty_intervals.csv")]
    m.extra["shift_report"] = {
        "policy": sr.report.policy,
        "overlaps_dropped": sr.report.overlaps_dropped,
        "overlaps_clipped": sr.report.overlaps_clipped,
        "n_shifts": len(sr.shifts),
    }
    print(f"{len(sr.shifts)} shifts from {len(sr.trips)} trips; overlaps dropped {sr.report.overlaps_dropped}, "
          f"clipped {sr.report.overlaps_clipped}")
    m.write(out)
    return EXIT_OK


def _identity(name: str) -> str:
    return {"hack": "hack_license", "medallion": "medallion"}[name]


def _load_weather(args, m):
    weather_path = _require(Path(args.weather), "weather file", "--weather")
    coords_path = _config_file(args.station_coords, "stations.csv")
    try:
        coords = load_station_coords(m.add_input(coords_path)) if coords_path else DEFAULT_STATIONS
        report = WeatherReport()
        obs = parse_weather(m.add_input(weather_path), coords, report)
    except (WeatherError, OSError, KeyError, ValueError) as exc:
        raise CliError(f"{weather_path}: {exc}", EXIT_INPUT) from None
    if args.ref_station not in coords:
        raise CliError(f"reference station {args.ref_station!r} has no coordinates", EXIT_INPUT)
    classified = classify_hours(obs, args.ref_station, args.rain_threshold, coords)
    return classified, report


def cmd_analyze(args) -> int:
    m = Manifest("analyze", vars(args))
    trips = _load_trips(args.trips, m)
    windows = _load_windows(args, m)
    classified, wreport = _load_weather(args, m)
    weather = weather_frame(classified)
    out = _out_dir(args.out)
    grid = cells = None
    if args.cell:
        grid = Grid.from_bbox(BBox.parse(args.bbox) if args.bbox else NYC_BBOX, args.cell_size_m)
        try:
            cells = [grid.flat(_parse_cell(c, grid)) for c in args.cell]
        except ValueError as exc:
            raise CliError(str(exc), EXIT_USAGE) from None
    a = analyze(
        trips,
        weather,
        windows,
        int(round(args.gap_hours * 3600)),
        _identity(args.identity),
        supply_mode=args.supply_mode,
        grid=grid,
        cells=cells,
        min_slot_samples=args.min_slot_samples,
    )
    if not a.bins["rainy"].notna().any():
        raise CliError("no usable data: no trip hour has a weather classification", EXIT_DATA)
    write_hour_weather(classified, out / "hour_weather.csv")
    write_bins_csv(a.bins, out / "bins.csv")
    write_comparison_csv(a.comparison, out / "comparison.csv")
    m.outputs += [out / "hour_weather.csv", out / "bins.csv", out / "comparison.csv"]
    if a.hotspot_bins is not None:
        write_bins_csv(a.hotspot_bins, out / "hotspot_bins.csv", grid)
        hot_idx, _ = derive_indices(a.hotspot_bins)
        write_comparison_csv(
            _compare(hot_idx, windows, args.min_slot_samples), out / "hotspot_comparison.csv"
        )
        m.outputs += [out / "hotspot_bins.csv", out / "hotspot_comparison.csv"]
    if args.svg:
        for name in INDEX_NAMES:
            c = a.comparison[a.comparison["index"] == name]
            svg = line_chart(
                c["slot"].tolist(),
                {"clear": c["clear_mean"].tolist(), "rainy": c["rainy_mean"].tolist()},
                f"{name.replace('_', ' ')}: clear vs rainy",
                name,
            )
            write_svg(svg, out / f"{name}.svg")
            m.outputs.append(out / f"{name}.svg")
    m.extra["exclusions"] = dict(sorted(a.exclusions.items()))
    m.extra["weather"] = {
        "rows_read": wreport.rows_read,
        "duplicates": wreport.duplicates,
        "imputed_hours": int(weather["imputed"].sum()),
        "unclassifiable_hours": int(weather["rainy"].isna().sum()),
    }
    print(f"{len(a.bins)} hourly bins, {int(weather['rainy'].fillna(False).sum())} rainy hours; "
          f"exclusions {dict(sorted(a.exclusions.items()))}")
    m.write(out)
    return EXIT_OK


def _compare(indices, windows, min_samples):
    from .metrics import compare_regimes

    return compare_regimes(indices, windows, min_samples=min_samples)


def _parse_cell(text: str, grid: Grid):
    from .geo import GridCell

    try:
        row, col = (int(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"cell must be row:col, got {text!r}") from None
    if not (0 <= row < grid.n_rows and 0 <= col < grid.n_cols):
        raise ValueError(f"cell {text} is outside the {grid.n_rows}x{grid.n_cols} grid")
    return GridCell(row, col)


def cmd_test(args) -> int:
    m = Manifest("test", vars(args))
    bins_path = _require(Path(args.bins), "bin file", "--bins")
    m.add_input(bins_path)
    windows = _load_windows(args, m)
    try:
        bins = read_bins_csv(bins_path)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"{bins_path}: {exc}", EXIT_INPUT) from None
    bins = bins[bins["cell"].astype(str) == ""].copy()
    bins["cell"] = -1
    if bins.empty or not bins["rainy"].notna().any():
        raise CliError("no usable data: no classified citywide bins", EXIT_DATA)
    if "overloaded" not in bins:
        bins["overloaded"] = False
    indices, _ = derive_indices(bins)
    regimes = (OBSERVED, PERMUTATION) if args.regime == "both" else (args.regime,)
    results = run_tests(indices, args.index, regimes, windows, args.seed, args.pseudo_days)
    out = _out_dir(args.out)
    for w in windows:
        path = out / f"tests_{w.label}.csv"
        write_results_table(results, w.label, path)
        m.outputs.append(path)
    rows = [
        {
            "window": r.window,
            "day_class": r.day_class,
            "method": r.method,
            "regime": r.regime,
            "statistic": r.statistic,
            "p_value": r.p_value,
            "n1": r.n1,
            "n2": r.n2,
            "ties_present": int(r.ties_present),
            "exact": int(r.exact),
            "insufficient": int(r.insufficient),
        }
        for r in results
    ]
    pd.DataFrame(rows).to_csv(out / "test_results.csv", index=False, lineterminator="\n", float_format="%.10g")
    m.outputs.append(out / "test_results.csv")
    m.extra["wilcoxon_pairing"] = {
        OBSERVED: PAIRING_RULE,
        PERMUTATION: "pseudo-day rainy mean vs clear mean, pseudo-days holding both",
    }
    print(f"{len(results)} test results written to {out}")
    m.write(out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    m = Manifest("simulate", vars(args))
    overrides = {k: getattr(args, k) for k in ("seed", "n_drivers", "days") if getattr(args, k) is not None}
    cfg_path = _config_file(args.config, "sim.cfg")
    try:
        if cfg_path is not None:
            cfg = SimConfig.from_file(m.add_input(_require(cfg_path, "simulator config", "--config")), **overrides)
        else:
            cfg = SimConfig(**overrides)
    except (ValueError, TypeError) as exc:
        raise CliError(f"simulator config: {exc}", EXIT_INPUT) from None
    out = _out_dir(args.out_dir)
    result = simulate(cfg, out)
    m.outputs += [out / n for n in ("trips.csv", "schema.cfg", "weather.csv", "stations.csv", "truth_shifts.csv",
                                     "truth_hours.csv", "sim.cfg")]
    m.params["resolved_config_sha256"] = hashlib.sha256(cfg.to_text().encode()).hexdigest()
    print(f"{len(result.trips)} trips, {len(result.truth.shifts)} true shifts written to {out}")
    if args.score:
        trips, _ = read_trips([out / "trips.csv"], Schema.tlc("km"), cfg.bbox)
        from .pipeline import classify_weather_frame

        a = analyze(trips, classify_weather_frame(result.weather), gap_threshold_s=int(cfg.gap_threshold_h * 3600))
        rec = score_recovery(result.truth.shifts, result.truth.hours, a.shifts.shifts, a.bins)
        (out / "recovery.json").write_text(rec.to_json() + "\n", encoding="utf-8")
        m.outputs.append(out / "recovery.json")
        print(rec.to_json())
    m.write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taxidemand", description="Taxi supply/demand mismatch under rain.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="validate raw trip CSVs into the canonical store")
    q.add_argument("trips", nargs="+", help="trip CSV files, read in the given order")
    q.add_argument("--schema", help=f"schema config (default: ${CONFIG_ENV}/schema.cfg)")
    q.add_argument("--bbox", help="south,west,north,east (default: NYC)")
    q.add_argument("--max-duration-h", type=float, default=6.0)
    q.add_argument("--max-distance-km", type=float, default=160.0)
    q.add_argument("--workers", type=int, default=1, help="parallel chunked parsing (no reject log)")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ingest)

    def shift_opts(q):
        q.add_argument("--trips", required=True, help="canonical trips.csv from 'ingest'")
        q.add_argument("--gap-hours", type=float, default=8.0)
        q.add_argument("--identity", choices=("hack", "medallion"), default="hack")

    q = sub.add_parser("shifts", help="synthesise shifts and time-of-day densities")
    shift_opts(q)
    q.add_argument("--overlap", choices=("drop", "clip"), default="drop")
    q.add_argument("--bin-minutes", type=int, default=30)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_shifts)

    q = sub.add_parser("analyze", help="hourly bins, indices and rainy/clear comparison")
    shift_opts(q)
    q.add_argument("--weather", required=True, help="station,hour,precip_mm CSV")
    q.add_argument("--station-coords", help=f"station_id,lat,lon CSV (default: ${CONFIG_ENV}/stations.csv or built-in)")
    q.add_argument("--ref-station", default=REF_STATION)
    q.add_argument("--rain-threshold", type=float, default=RAIN_THRESHOLD_MM)
    q.add_argument("--windows", help=f"label=hours config (default: ${CONFIG_ENV}/windows.cfg or 6-10/16-20)")
    q.add_argument("--cell", action="append", help="hotspot grid cell row:col (repeatable)")
    q.add_argument("--cell-size-m", type=float, default=250.0)
    q.add_argument("--bbox", help="grid extent south,west,north,east (default: NYC)")
    q.add_argument("--supply-mode", choices=("overlap", "fractional"), default="overlap")
    q.add_argument("--min-slot-samples", type=int, default=10)
    q.add_argument("--svg", action="store_true", help="also write SVG charts")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_analyze)

    q = sub.add_parser("test", help="rank tests, rainy vs clear, per window and day class")
    q.add_argument("--bins", required=True, help="bins.csv from 'analyze'")
    q.add_argument("--index", choices=INDEX_NAMES, default="pickups_per_driver")
    q.add_argument("--regime", choices=(OBSERVED, PERMUTATION, "both"), default="both")
    q.add_argument("--pseudo-days", type=int, default=1000)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--windows")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_test)

    q = sub.add_parser("simulate", help="synthetic fleet with ground truth")
    q.add_argument("--config", help=f"key=value simulator config (default: ${CONFIG_ENV}/sim.cfg or built-in)")
    q.add_argument("--seed", type=int)
    q.add_argument("--n-drivers", type=int)
    q.add_argument("--days", type=int)
    q.add_argument("--score", action="store_true", help="run the pipeline on the output and score recovery")
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"taxidemand {args.command}: error: {exc}", file=sys.stderr)
        if exc.code in (EXIT_USAGE, EXIT_INPUT):
            print(f"usage hint: taxidemand {args.command} --help", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
