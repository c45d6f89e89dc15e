#!/usr/bin/env python3
"""Latency report on synthetic VGA frames.

Uses models saved by run_synthetic_suite.py --save-models, training them
first when the directory is missing.

    python3 scripts/bench_vga.py --models models/ --frames 100 --out bench.json
"""
import argparse
import sys
from pathlib import Path

from drivehands.cli import main as cli_main
from drivehands.graspclf import save_grasp_model
from drivehands.illumskin import save_bank
from drivehands.synthsuite import SuiteConfig, run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", default="models")
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--max-proposals", type=int, default=8)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    d = Path(args.models)
    bank, grasp = d / "bank.json", d / "grasp.json"
    if not (bank.exists() and grasp.exists()):
        print(f"training models into {d}", file=sys.stderr)
        res = run_suite(SuiteConfig())
        d.mkdir(parents=True, exist_ok=True)
        save_bank(bank, res.bank)
        save_grasp_model(grasp, res.grasp_model)
    argv = ["bench", "--bank", str(bank), "--grasp-model", str(grasp),
            "--frames", str(args.frames), "--max-proposals", str(args.max_proposals)]
    if args.out:
        argv += ["--out", args.out]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
