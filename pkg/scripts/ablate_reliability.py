"""Compare negative-mining modes on the reference config across seeds.

Runs unreliable / reliable / all negative sources plus a supervised-only
baseline, prints per-mode means, and writes an ablation CSV.

Usage: python3 scripts/ablate_reliability.py [--seeds 0 1 2 3 4] [--out runs/ablation]
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from semipix.config import load_config
from semipix.trainer import ablation_to_csv, reliability_ablation, run_supervised_baseline

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "reference.cfg"))
    parser.add_argument("--modes", nargs="+",
                        default=["unreliable", "reliable", "all"])
    parser.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", default=str(ROOT / "runs" / "ablation"))
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    runs, summaries = reliability_ablation(cfg, args.modes, args.seeds)
    baseline = [run_supervised_baseline(replace(cfg, seed=s)).final_miou
                for s in args.seeds]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ablation_to_csv(runs, summaries, out / "ablation.csv")

    for s in summaries:
        print(f"{s['mode']:>10}: mean={s['mean']:.4f} std={s['std']:.4f}")
    base_std = float(np.std(baseline, ddof=1)) if len(baseline) > 1 else 0.0
    print(f"supervised: mean={np.mean(baseline):.4f} std={base_std:.4f}")
    by_mode = {s["mode"]: s["mean"] for s in summaries}
    if "unreliable" in by_mode and "reliable" in by_mode:
        gap = (by_mode["unreliable"] - by_mode["reliable"]) * 100
        print(f"unreliable - reliable = {gap:+.2f} mIoU points")
    if "unreliable" in by_mode:
        gap = (by_mode["unreliable"] - float(np.mean(baseline))) * 100
        print(f"unreliable - supervised = {gap:+.2f} mIoU points")
    print(f"csv written to {out / 'ablation.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
