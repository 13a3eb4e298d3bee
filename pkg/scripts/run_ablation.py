"""Train every variant (baseline, +MIDC, +DAP, both) and print a comparison table.

    python scripts/run_ablation.py --out runs/ablation --seed 0
    tptps report --runs runs/ablation     # re-render later
"""
import argparse
from pathlib import Path

from tptps.config import Config
from tptps.corpus import generate_dataset
from tptps.experiments import VARIANTS, collect_reports, markdown_table, variant_config
from tptps.trainer import train


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    base = Config.load(args.config)
    if args.epochs:
        base.train.epochs = args.epochs
        base.train.warmup_epochs = min(base.train.warmup_epochs, args.epochs - 1)
    dataset = generate_dataset(base.corpus, base.train.corpus_seed)
    out = Path(args.out)
    for name in args.variants:
        cfg = variant_config(base, name, args.seed)
        train(cfg, dataset, out / f"{name}-s{args.seed}")
        print(f"finished {name}", flush=True)
    print(markdown_table(collect_reports(out)))


if __name__ == "__main__":
    main()
