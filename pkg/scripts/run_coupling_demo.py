#!/usr/bin/env python3
"""Coupling demo: race oracle, per-seed coupling rows, point-process checks.

Writes race.json, couple.csv/json, ppp_check.json under out/coupling-demo/.
"""

import sys
from pathlib import Path

from ppcoupling.cli import main

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "out" / "coupling-demo"


def run() -> int:
    rc = 0
    rc |= main([
        "--seed", "2024", "--replicas", "100000", "--out-dir", str(OUT),
        "race", "--p", "0.5,0.5", "--q", "0.7,0.3",
    ])
    rc |= main([
        "--seed", "2024", "--replicas", "100000", "--out-dir", str(OUT),
        "--config", str(ROOT / "configs" / "couple_discrete.yaml"), "couple",
    ])
    rc |= main([
        "--seed", "2025", "--replicas", "100000", "--out-dir", str(OUT / "interval"),
        "--config", str(ROOT / "configs" / "couple_interval.yaml"), "couple",
    ])
    rc |= main([
        "--seed", "2026", "--replicas", "20000", "--out-dir", str(OUT), "ppp-check",
    ])
    print(f"artifacts under {OUT}")
    return rc


if __name__ == "__main__":
    sys.exit(run())
