"""Command-line entry point: ``tptps <subcommand>`` (or ``python -m tptps``)."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config
from .corpus import Dataset, generate_dataset
from .dapgen import generate_prompts
from .evaluate import evaluate_index
from .experiments import collect_reports, csv_table, markdown_table
from .midgen import enumerate_mids
from .textparse import Lexicon, parse_description


def _captions(args) -> list[tuple[int, str]]:
    """(caption_id, text) pairs from --text, --captions JSONL, or stdin lines."""
    if args.text:
        return [(0, args.text)]
    if args.captions:
        with open(args.captions) as fh:
            return [(d["caption_id"], d["text"]) for d in map(json.loads, fh) if d]
    return [(i, line.strip()) for i, line in enumerate(sys.stdin) if line.strip()]


def _emit(rec: dict):
    sys.stdout.write(json.dumps(rec) + "\n")


def cmd_generate(args):
    cfg = Config.load(args.config)
    seed = cfg.train.corpus_seed if args.seed is None else args.seed
    ds = generate_dataset(cfg.corpus, seed)
    ds.save(args.out)
    print(f"wrote {len(ds.images)} images, {len(ds.captions)} captions to {args.out}", file=sys.stderr)


def cmd_parse(args):
    lex = Lexicon.load(args.lexicon)
    for cid, text in _captions(args):
        _emit({"caption_id": cid, "phrases": [p.to_dict() for p in parse_description(text, lex)]})


def cmd_mid(args):
    lex = Lexicon.load(args.lexicon)
    for cid, text in _captions(args):
        phrases = parse_description(text, lex)
        if not phrases:
            continue
        for m in enumerate_mids(phrases, text, args.mode, cid):
            _emit({"caption_id": cid, "states": list(m.kept), "text": m.text})


def cmd_prompts(args):
    lex = Lexicon.load(args.lexicon)
    for cid, text in _captions(args):
        for p in generate_prompts(parse_description(text, lex), cid):
            _emit({"caption_id": cid, "kind": p.kind, "group_key": p.group_key, "text": p.text})


def _dataset(cfg: Config, data_dir: str | None) -> Dataset:
    if data_dir:
        return Dataset.load(data_dir)
    return generate_dataset(cfg.corpus, cfg.train.corpus_seed)


def cmd_train(args):
    from .trainer import train

    cfg = Config.load(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    out = Path(args.out or f"runs/seed{cfg.train.seed}")
    trainer = train(cfg, _dataset(cfg, args.data), out)
    print(json.dumps(json.loads((out / "report.json").read_text()), indent=2))
    return trainer


def cmd_eval(args):
    import torch

    from .trainer import Trainer

    ckpt = torch.load(args.ckpt, weights_only=False)
    cfg = Config.from_dict(ckpt["config"])
    trainer = Trainer.from_checkpoint(args.ckpt, _dataset(cfg, args.data))
    index = trainer.retrieval_index(degrade=args.degrade)
    report = evaluate_index(index)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.rankings:
        ranks = index.ranking()
        hits = index.matches()
        with open(args.rankings, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["caption_id", "identity_id", "first_hit_rank", "top10_image_ids"])
            for q, cid in enumerate(trainer.test_caps):
                first = int(np.argmax(hits[q])) + 1
                top = " ".join(str(trainer.test_images[i]) for i in ranks[q, :10])
                w.writerow([cid, int(index.query_labels[q]), first, top])


def cmd_report(args):
    rows = collect_reports(args.runs)
    sys.stdout.write(markdown_table(rows))
    if args.csv:
        Path(args.csv).write_text(csv_table(rows))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tptps", description="Synthetic text-based person search pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate and save a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    for name, func, help_ in (("parse", cmd_parse, "extract attribute phrases"),
                              ("mid", cmd_mid, "enumerate multi-integrity descriptions"),
                              ("prompts", cmd_prompts, "generate attribute prompts")):
        p = sub.add_parser(name, help=help_ + " as JSONL")
        src = p.add_mutually_exclusive_group()
        src.add_argument("--text")
        src.add_argument("--captions", help="captions.jsonl file")
        p.add_argument("--lexicon")
        if name == "mid":
            p.add_argument("--mode", default="adjective_and_phrase", choices=["adjective_and_phrase", "full_component"])
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory (default: generate from the corpus block)")
    p.add_argument("--out", help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--rankings", help="per-query ranking CSV path")
    p.add_argument("--degrade", action="store_true", help="drop one attribute phrase from every query")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="compare runs as a markdown table")
    p.add_argument("--runs", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
