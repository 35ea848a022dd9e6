"""Run every CLI command end to end in one directory."""
from pathlib import Path

from taxidemand.cli import main

COMMANDS = ("simulate", "ingest", "shifts", "analyze", "test")


def run_chain(root: Path, seed: int = 7, n_drivers: int = 40, days: int = 10) -> dict[str, Path]:
    root = Path(root)
    d = {c: root / c for c in COMMANDS}
    sim = d["simulate"]
    codes = [
        main(["simulate", "--seed", str(seed), "--n-drivers", str(n_drivers), "--days", str(days), "--score", "--out-dir", str(sim)]),
        main(["ingest", str(sim / "trips.csv"), "--schema", str(sim / "schema.cfg"), "--out", str(d["ingest"])]),
        main(["shifts", "--trips", str(d["ingest"] / "trips.csv"), "--out", str(d["shifts"])]),
        main(
            [
                "analyze",
                "--trips", str(d["ingest"] / "trips.csv"),
                "--weather", str(sim / "weather.csv"),
                "--station-coords", str(sim / "stations.csv"),
                "--cell", "117:96",
                "--cell", "118:96",
                "--svg",
                "--out", str(d["analyze"]),
            ]
        ),
        main(["test", "--bins", str(d["analyze"] / "bins.csv"), "--pseudo-days", "200", "--seed", "3", "--out", str(d["test"])]),
    ]
    if any(codes):
        raise RuntimeError(f"CLI chain failed with exit codes {codes}")
    return d


def csv_files(d: dict[str, Path]) -> dict[str, bytes]:
    return {f"{c}/{p.name}": p.read_bytes() for c, path in d.items() for p in sorted(path.glob("*.csv"))}
