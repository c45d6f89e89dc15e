#!/usr/bin/env python3
"""Run the seeded synthetic end-to-end suite and write metrics as JSON.

    python3 scripts/run_synthetic_suite.py --seed 0 --out suite.json --save-models models/
"""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from drivehands.graspclf import save_grasp_model
from drivehands.illumskin import save_bank
from drivehands.synthsuite import SuiteConfig, run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-images", type=int, default=None, help="corpus size (default 200)")
    ap.add_argument("--out", help="metrics JSON (default: stdout only)")
    ap.add_argument("--save-models", help="directory for bank.json and grasp.json")
    args = ap.parse_args()

    cfg = SuiteConfig(seed=args.seed)
    if args.n_images:
        cfg = replace(cfg, n_images=args.n_images, skin_train=int(0.7 * args.n_images))
    res = run_suite(cfg, log=lambda m: print(m, file=sys.stderr))
    doc = {"metrics": res.metrics, "passed": {k: bool(v) for k, v in res.passed.items()},
           "timings_s": res.timings, "config": res.config}
    text = json.dumps(doc, indent=2, default=float)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.save_models:
        d = Path(args.save_models)
        d.mkdir(parents=True, exist_ok=True)
        save_bank(d / "bank.json", res.bank)
        save_grasp_model(d / "grasp.json", res.grasp_model)
    return 0 if res.ok else 1


if __name__ == "__main__":
    sys.exit(main())
