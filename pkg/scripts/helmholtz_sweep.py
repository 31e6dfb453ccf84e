#!/usr/bin/env python3
"""Sweep the sensor budget on the Helmholtz desk model.

For each m0, solves the 1-relaxed problem, runs the p-continuation to a
binary design, and draws a seeded random-design baseline; writes one
comparison row per budget to comps.csv plus per-budget artifacts via the
CLI commands.  This reproduces the study pipeline end to end:

    python3 scripts/helmholtz_sweep.py --out-dir out/desk --m0-min 6 --m0-max 16
"""

import argparse
import json
import sys
from pathlib import Path

from sensoropt import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config",
                        default=str(ROOT / "configs" / "helmholtz_desk.json"))
    parser.add_argument("--out-dir", default="out/desk")
    parser.add_argument("--m0-min", type=int, default=6)
    parser.add_argument("--m0-max", type=int, default=16)
    parser.add_argument("--delta", type=float, default=0.05)
    parser.add_argument("--baseline-count", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out = Path(args.out_dir)
    bundle = out / "bundle"
    print(f"building model bundle from {args.config} ...")
    rc = cli.main(["build", "--config", args.config,
                   "--out-dir", str(bundle)])
    if rc != 0:
        return rc

    rows = ["m0,J_convex,J_binary,rand_min,rand_median,rand_max,"
            "fraction_beaten"]
    for m0 in range(args.m0_min, args.m0_max + 1):
        print(f"m0 = {m0}: solve / continue / baseline")
        for cmd in (["solve", "--bundle", str(bundle), "--m0", str(m0)],
                    ["continue", "--bundle", str(bundle), "--m0", str(m0),
                     "--delta", str(args.delta)]):
            rc = cli.main(cmd)
            if rc != 0:
                return rc
        cont = json.loads((bundle / f"continue_m0={m0}.json").read_text())
        design_file = out / f"design_m0={m0}.json"
        design_file.write_text(json.dumps({"w": cont["w"], "m0": m0}))
        rc = cli.main(["baseline", "--bundle", str(bundle),
                       "--m0", str(m0),
                       "--count", str(args.baseline_count),
                       "--seed", str(args.seed + m0),
                       "--design", str(design_file)])
        if rc != 0:
            return rc
        base = json.loads((bundle / f"baseline_m0={m0}.json").read_text())
        rows.append(
            f"{m0},{cont['J_convex']:.17g},{cont['J_binary']:.17g},"
            f"{base['min']:.17g},{base['quantiles']['50']:.17g},"
            f"{base['max']:.17g},{base['fraction_beaten']:.4f}")
        print(f"  J* = {cont['J_convex']:.6g}  J_binary = "
              f"{cont['J_binary']:.6g}  beats {100 * base['fraction_beaten']:.1f}%"
              f" of {args.baseline_count} random designs")

    comps = out / "comps.csv"
    comps.write_text("\n".join(rows) + "\n")
    print(f"wrote {comps}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
