"""Ablation variants, the degraded-query robustness study and run reports."""
from __future__ import annotations

import copy
import csv
import io
import json
from pathlib import Path

from .config import Config
from .corpus import Dataset, generate_dataset
from .trainer import train

# Table-style ablation grid over the two additions to the plain baseline
VARIANTS = {
    "baseline": dict(k_m=0, k_p=0),
    "midc": dict(k_m=3, k_p=0),
    "dap": dict(k_m=0, k_p=3),
    "tp-tps": dict(k_m=3, k_p=3),
}


def variant_config(base: Config, name: str, seed: int) -> Config:
    cfg = copy.deepcopy(base)
    for k, v in VARIANTS[name].items():
        setattr(cfg.train, k, v)
    cfg.train.seed = seed
    return cfg


def run_variant(base: Config, name: str, seed: int, dataset: Dataset | None = None, run_dir=None) -> dict:
    """Train one variant and report clean and degraded-query retrieval."""
    cfg = variant_config(base, name, seed)
    trainer = train(cfg, dataset, run_dir)
    clean = trainer.evaluate()
    degraded = trainer.evaluate(degrade=True, seed=seed)
    return {
        "variant": name,
        "seed": seed,
        "clean": clean,
        "degraded": degraded,
        "r1_drop": clean["R1"] - degraded["R1"],
    }


def robustness_study(base: Config, seeds=(0, 1, 2), variants=("baseline", "midc"), dataset=None, log=print) -> dict:
    """Mean R@1 drop under one-phrase-dropped queries, per variant."""
    dataset = dataset or generate_dataset(base.corpus, base.train.corpus_seed)
    runs = []
    for seed in seeds:
        for name in variants:
            res = run_variant(base, name, seed, dataset)
            log(f"{name:9s} seed={seed} R1={res['clean']['R1']:.3f} degraded={res['degraded']['R1']:.3f} "
                f"drop={res['r1_drop']:+.3f}")
            runs.append(res)
    mean_drop = {
        name: sum(r["r1_drop"] for r in runs if r["variant"] == name) / len(seeds) for name in variants
    }
    return {"runs": runs, "mean_r1_drop": mean_drop}


def collect_reports(runs_dir: str | Path) -> list[dict]:
    rows = []
    for path in sorted(Path(runs_dir).glob("*/report.json")):
        rep = json.loads(path.read_text())
        rows.append({
            "run": path.parent.name,
            "MIDC": "x" if rep.get("k_m", 0) > 0 else "",
            "DAP": "x" if rep.get("k_p", 0) > 0 else "",
            "R1": rep["R1"], "R5": rep.get("R5"), "R10": rep.get("R10"), "mAP": rep["mAP"],
            "R1_degraded": rep.get("degraded", {}).get("R1"),
        })
    return rows


def _fmt(v):
    return f"{100 * v:.2f}" if isinstance(v, float) else ("" if v is None else str(v))


def markdown_table(rows: list[dict]) -> str:
    if not rows:
        return "(no runs)\n"
    cols = list(rows[0])
    out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    out += ["| " + " | ".join(_fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(out) + "\n"


def csv_table(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()
