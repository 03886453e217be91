#!/usr/bin/env python3
"""Regenerate the per-subcommand golden outputs under docs/golden/.

Run from the repository root:  PYTHONPATH=src python3 scripts/make_golden.py
The goldens pin the report payloads and emitted artifacts of one fixed,
fast invocation per subcommand; tests/test_golden.py replays them.
"""

import io
import json
import os
import sys
from contextlib import redirect_stdout

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from sodeflow.cli import main  # noqa: E402

GOLDEN = os.path.join(os.path.dirname(__file__), os.pardir, "docs", "golden")

# one invocation per subcommand; %OUT% is replaced by the artifact stem
CASES = {
    "geodesic": [
        "geodesic", "--scene", "scenes/poincare.scene", "--p", "0,1",
        "--v", "1,0", "--t", "0:1:0.1", "--out", "csv", "--out-file", "%OUT%",
    ],
    "expmap": [
        "expmap", "--scene", "scenes/blowup1d.scene", "--p", "0", "--v", "0",
        "--eps", "0.25", "--jacobian", "--domain", "--horizon", "5",
    ],
    "plume": [
        "plume", "--scene", "scenes/expgrowth.scene", "--p", "0,0",
        "--eps", "0.25:1:0.25", "--a", "0.25:1:0.25", "--out", "both",
        "--out-file", "%OUT%",
    ],
    "classify": ["classify", "--scene", "scenes/poincare.scene"],
    "connection": ["connection", "--scene", "scenes/poincare.scene",
                   "--mode", "euler"],
    "finsler": ["finsler", "--scene", "scenes/hyperbolic.scene",
                "--at", "0,1;1,0"],
    "probe": [
        "probe", "--scene", "scenes/flat2d.scene", "--property", "both",
        "--K", "box(-1,1; -1,1)", "--base-grid", "3", "--dirs", "4",
        "--horizon", "25",
    ],
    "connect": [
        "connect", "--scene", "scenes/poincare.scene", "--p", "0,1",
        "--q", "0.5,1.5", "--eps", "1",
    ],
    "perturb": [
        "perturb", "--scene", "scenes/flat2d.scene", "--center", "0,0;0,0",
        "--radii", "1,1;1,1", "--amplitude", "0.01,0.01",
        "--out-file", "%OUT%",
    ],
    "report": ["report", "--scene", "scenes/linear_connection.scene"],
}

ARTIFACT_SUFFIXES = {
    "geodesic": [".csv"],
    "plume": ["-geodesics.csv", "-acurves.csv", ".svg"],
    "perturb": [".scene"],
}


def run_case(name: str, argv: list[str], out_dir: str) -> dict:
    stem = os.path.join(out_dir, name)
    argv = [a.replace("%OUT%", stem) for a in argv]
    buf = io.StringIO()
    with redirect_stdout(buf):
        rc = main(argv)
    if rc != 0:
        raise SystemExit(f"{name} exited {rc}")
    return json.loads(buf.getvalue())


def stable_payload(report: dict) -> dict:
    """The reproducible part of a run report (drop paths and timings)."""
    return {
        "command": report["command"],
        "seed": report["seed"],
        "options": report["options"],
        "scene_sha256": report["scene"]["sha256"],
        "results": report["results"],
    }


def main_():
    os.makedirs(GOLDEN, exist_ok=True)
    for name, argv in CASES.items():
        report = run_case(name, argv, GOLDEN)
        payload = stable_payload(report)
        if name == "perturb":  # the emitted scene path is machine-local
            payload["results"] = dict(payload["results"], scene_file="<stem>.scene")
        with open(os.path.join(GOLDEN, f"{name}.json"), "w", newline="\n") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"golden: {name}")


if __name__ == "__main__":
    main_()
