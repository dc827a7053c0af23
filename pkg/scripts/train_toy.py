"""Train on the toy config and print the last few metric rows.

Usage: python3 scripts/train_toy.py [--config configs/toy.cfg] [--out runs/toy]
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from semipix.config import load_config
from semipix.trainer import METRICS_COLUMNS, run_training

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "toy.cfg"))
    parser.add_argument("--out", default=str(ROOT / "runs" / "toy"))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_training(cfg, out_dir=out)

    print(" ".join(METRICS_COLUMNS))
    for row in result.rows[-5:]:
        print(" ".join(f"{row[col]:.4g}" if col != "epoch" else str(row[col])
                       for col in METRICS_COLUMNS))
    print(f"final miou_val = {result.final_miou:.4f}")
    print(f"artifacts in {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
