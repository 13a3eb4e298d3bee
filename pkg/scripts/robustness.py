"""Compare R@1 drop under one-phrase-dropped queries: baseline vs MIDC-trained.

    python scripts/robustness.py --seeds 0 1 2 --out runs/robustness.json
"""
import argparse
import json
from pathlib import Path

from tptps.config import Config
from tptps.experiments import VARIANTS, robustness_study


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=None)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=["baseline", "midc"], choices=list(VARIANTS))
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    cfg = Config.load(args.config)
    if args.epochs:
        cfg.train.epochs = args.epochs
        cfg.train.warmup_epochs = min(cfg.train.warmup_epochs, args.epochs - 1)
    cfg.train.checkpoint_every = 0
    result = robustness_study(cfg, args.seeds, args.variants)
    for name, drop in result["mean_r1_drop"].items():
        print(f"mean R1 drop {name:9s} {drop:+.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(result, indent=2) + "\n")


if __name__ == "__main__":
    main()
