"""Batch assembly, optimization schedule and the training loop."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .config import Config, TrainConfig
from .corpus import Dataset, generate_dataset, render_image
from .dapgen import NOUN_GROUPS, generate_prompts, sample_prompts
from .encoders import DualEncoder
from .evaluate import RetrievalIndex, evaluate_index
from .losses import BatchFeatures, LossBreakdown, combine, loss_total, reference_loss
from .midgen import drop_one_phrase, enumerate_mids, sample_mids
from .textparse import ITEMS
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

GROUP_KEYS = sorted(NOUN_GROUPS.values()) + [f"adjective/{i}" for i in ITEMS if i != "gender"]
GROUP_ID = {k: i for i, k in enumerate(GROUP_KEYS)}
CSV_COLUMNS = ["step", "epoch", "lr", "L_cls", "L_align", "L_int", "L_pmt", "total"]


def derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ----------------------------------------------------------------- batches


class TextCache:
    """Per-caption MID variants and prompts, computed once."""

    def __init__(self, dataset: Dataset, mid_mode: str = "adjective_and_phrase"):
        self.dataset = dataset
        self.mid_mode = mid_mode
        self._mids: dict[int, list] = {}
        self._prompts: dict[int, list] = {}

    def mids(self, cid: int):
        if cid not in self._mids:
            rec = self.dataset.captions[cid]
            self._mids[cid] = enumerate_mids(rec.phrases, rec.text, self.mid_mode, cid) if rec.phrases else []
        return self._mids[cid]

    def prompts(self, cid: int):
        if cid not in self._prompts:
            self._prompts[cid] = generate_prompts(self.dataset.captions[cid].phrases, cid)
        return self._prompts[cid]


@dataclass
class Batch:
    caption_ids: list[int]
    labels: torch.Tensor
    grids: torch.Tensor
    caption_tokens: torch.Tensor
    mid_tokens: torch.Tensor | None = None
    mid_mask: torch.Tensor | None = None
    prompt_tokens: torch.Tensor | None = None
    pmt_groups: torch.Tensor | None = None
    pmt_mask: torch.Tensor | None = None
    texts: dict = field(default_factory=dict)

    @property
    def n_texts(self) -> int:
        n = self.caption_tokens.shape[0]
        for t in (self.mid_tokens, self.prompt_tokens):
            if t is not None:
                n += t.shape[0] * t.shape[1]
        return n


def _fill(samples: list, k: int, fallback: str):
    texts = [s.text for s in samples] + [fallback] * (k - len(samples))
    mask = [True] * len(samples) + [False] * (k - len(samples))
    return texts, mask


def assemble_batch(
    dataset: Dataset,
    indices,
    k_m: int,
    k_p: int,
    seed: int,
    tokenizer: Tokenizer,
    *,
    cache: TextCache | None = None,
    noise_epoch: int | None = None,
    dtype=torch.float64,
) -> Batch:
    """Captions, sampled MIDs and prompts, tokenized, plus the paired grids.

    With ``noise_epoch`` set, images are re-rendered with fresh noise for that
    epoch instead of using the stored grids.
    """
    cache = cache or TextCache(dataset)
    caps, mids, mid_mask, prompts, groups, pmt_mask, grids = [], [], [], [], [], [], []
    for cid in indices:
        rec = dataset.captions[cid]
        caps.append(rec.text)
        if noise_epoch is None:
            grids.append(dataset.images[rec.image_id].patch_grid)
        else:
            cfg = dataset.config
            ident = dataset.identities[rec.identity_id]
            grids.append(render_image(ident, cfg.noise_sigma, derive_seed(seed, noise_epoch, rec.image_id),
                                      cfg.grid_rows, cfg.grid_cols, cfg.patch_dim).patch_grid)
        if k_m:
            picked = sample_mids(cache.mids(cid), k_m, derive_seed(seed, cid, 0))
            texts, mask = _fill(picked, k_m, rec.text)
            mids.extend(texts)
            mid_mask.append(mask)
        if k_p:
            picked = sample_prompts(cache.prompts(cid), k_p, derive_seed(seed, cid, 1))
            texts, mask = _fill(picked, k_p, rec.text)
            prompts.extend(texts)
            pmt_mask.append(mask)
            groups.append([GROUP_ID[p.group_key] for p in picked] + [-1] * (k_p - len(picked)))
    B = len(caps)
    batch = Batch(
        caption_ids=list(indices),
        labels=torch.tensor([dataset.captions[c].identity_id for c in indices], dtype=torch.long),
        grids=torch.as_tensor(np.stack(grids), dtype=dtype),
        caption_tokens=tokenizer.encode_batch(caps),
        texts={"captions": caps, "mids": mids, "prompts": prompts},
    )
    if k_m:
        batch.mid_tokens = tokenizer.encode_batch(mids).view(B, k_m, -1)
        batch.mid_mask = torch.tensor(mid_mask)
    if k_p:
        batch.prompt_tokens = tokenizer.encode_batch(prompts).view(B, k_p, -1)
        batch.pmt_groups = torch.tensor(groups, dtype=torch.long)
        batch.pmt_mask = torch.tensor(pmt_mask)
    return batch


# ---------------------------------------------------------------- schedule


def lr_at(step: int, config: TrainConfig, steps_per_epoch: int) -> float:
    """Linear warm-up from 0, then cosine decay to 0 at the last step."""
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if step < warmup:
        return config.base_lr * step / warmup
    progress = min(1.0, (step - warmup) / max(1, total - 1 - warmup))
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------- training


def split_dataset(dataset: Dataset, held_out_images: int):
    """Hold out the last ``held_out_images`` images of every identity."""
    per_id: dict[int, list[int]] = {}
    for im in dataset.images:
        per_id.setdefault(im.identity_id, []).append(im.image_id)
    test_images = set()
    for ids in per_id.values():
        if held_out_images >= len(ids):
            raise ValueError("held_out_images leaves an identity without training images")
        test_images.update(ids[len(ids) - held_out_images:] if held_out_images else [])
    train_caps = [c.caption_id for c in dataset.captions if c.image_id not in test_images]
    test_caps = [c.caption_id for c in dataset.captions if c.image_id in test_images]
    return train_caps, sorted(test_images), test_caps


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


class Trainer:
    def __init__(self, config: Config, dataset: Dataset, run_dir: str | Path | None = None):
        config.validate()
        self.config = config
        self.dataset = dataset
        self.run_dir = Path(run_dir) if run_dir else None
        tc = config.train
        self.dtype = torch.float64 if tc.dtype == "float64" else torch.float32
        enc = config.encoder
        enc.patch_count = dataset.config.patch_count
        enc.patch_dim = dataset.config.patch_dim

        self.tokenizer = Tokenizer.from_lexicon(dataset.lexicon, enc.max_len)
        # draw initial weights in the run dtype, independent of the caller's global default
        previous = torch.get_default_dtype()
        torch.set_default_dtype(self.dtype)
        try:
            torch.manual_seed(tc.seed)
            self.model = DualEncoder(enc, self.tokenizer)
            d2 = 2 * enc.embed_dim
            self.classifier = nn.ParameterDict({
                "w_v": nn.Parameter(0.02 * torch.randn(dataset.n_classes, d2)),
                "w_t": nn.Parameter(0.02 * torch.randn(dataset.n_classes, d2)),
            })
        finally:
            torch.set_default_dtype(previous)
        self.optimizer = self._build_optimizer()
        self.cache = TextCache(dataset, tc.mid_mode)
        self.train_caps, self.test_images, self.test_caps = split_dataset(dataset, tc.held_out_images)
        self.steps_per_epoch = max(1, len(self.train_caps) // tc.batch_size)
        self.total_steps = tc.epochs * self.steps_per_epoch
        self.state = TrainState()

    def _build_optimizer(self):
        decay, no_decay = [], []
        for name, prm in list(self.model.named_parameters()) + [(f"classifier.{k}", v) for k, v in self.classifier.items()]:
            if not prm.requires_grad:
                continue
            (decay if prm.dim() >= 2 and "pos_embed" not in name else no_decay).append(prm)
        groups = [{"params": decay, "weight_decay": self.config.train.weight_decay},
                  {"params": no_decay, "weight_decay": 0.0}]
        return torch.optim.AdamW(groups, lr=self.config.train.base_lr)

    # -- one step

    def features(self, batch: Batch) -> BatchFeatures:
        m = self.model
        v = m.visual(batch.grids).concat
        B = batch.caption_tokens.shape[0]
        k_m = 0 if batch.mid_tokens is None else batch.mid_tokens.shape[1]
        ids = batch.caption_tokens if not k_m else torch.cat([batch.caption_tokens, batch.mid_tokens.flatten(0, 1)])
        t_all = m.text(ids).concat
        feats = BatchFeatures(v=v, t=t_all[:B], labels=batch.labels)
        if k_m:
            feats.t_mid = t_all[B:].view(B, k_m, -1)
            feats.mid_mask = batch.mid_mask
        if batch.prompt_tokens is not None:
            k_p = batch.prompt_tokens.shape[1]
            with torch.no_grad():
                feats.t_pmt = m.text(batch.prompt_tokens.flatten(0, 1)).concat.view(B, k_p, -1)
            feats.pmt_groups = batch.pmt_groups
            feats.pmt_mask = batch.pmt_mask
        return feats

    def compute_loss(self, batch: Batch) -> LossBreakdown:
        feats = self.features(batch)
        w_v, w_t = self.classifier["w_v"], self.classifier["w_t"]
        if self.config.train.reference_loss:
            total = reference_loss(feats.v, feats.t, feats.labels, w_v, w_t, self.config.loss)
            z = total.new_zeros(())
            return LossBreakdown(z, z, z, z, total)
        return loss_total(feats, w_v, w_t, self.config.loss)

    def batch_for(self, epoch: int, step_in_epoch: int, order) -> Batch:
        tc = self.config.train
        idx = order[step_in_epoch * tc.batch_size:(step_in_epoch + 1) * tc.batch_size]
        return assemble_batch(
            self.dataset, idx, tc.k_m, tc.k_p, derive_seed(tc.seed, epoch, step_in_epoch), self.tokenizer,
            cache=self.cache, noise_epoch=epoch if tc.renoise else None, dtype=self.dtype,
        )

    def epoch_order(self, epoch: int) -> list[int]:
        tc = self.config.train
        rng = np.random.default_rng(derive_seed(tc.seed, epoch, 7919))
        if tc.sampler == "shuffle":
            return [self.train_caps[i] for i in rng.permutation(len(self.train_caps))]
        # identity-balanced: consecutive pairs of captions share an identity
        by_id: dict[int, list[int]] = {}
        for c in self.train_caps:
            by_id.setdefault(self.dataset.captions[c].identity_id, []).append(c)
        pairs = []
        for caps in by_id.values():
            caps = [caps[i] for i in rng.permutation(len(caps))]
            pairs.extend(caps[i:i + 2] for i in range(0, len(caps) - 1, 2))
        return [c for i in rng.permutation(len(pairs)) for c in pairs[i]]

    def train_step(self, batch: Batch) -> dict:
        tc = self.config.train
        lr = lr_at(self.state.step, tc, self.steps_per_epoch)
        for g in self.optimizer.param_groups:
            g["lr"] = lr
        parts = self.compute_loss(batch)
        if not torch.isfinite(parts.total):
            self._dump_nonfinite(batch, parts)
        self.optimizer.zero_grad(set_to_none=True)
        parts.total.backward()
        self.optimizer.step()
        row = {"step": self.state.step, "epoch": self.state.epoch, "lr": lr}
        floats = parts.as_floats()
        if not tc.reference_loss:
            floats["total"] = combine(floats["L_cls"], floats["L_align"], floats["L_int"], floats["L_pmt"], self.config.loss)
        row.update(floats)
        self.state.history.append(row)
        self.state.step += 1
        return row

    def _dump_nonfinite(self, batch: Batch, parts: LossBreakdown):
        dump = {"step": self.state.step, "epoch": self.state.epoch, "caption_ids": batch.caption_ids,
                "texts": batch.texts, "losses": parts.as_floats()}
        target = (self.run_dir or Path(".")) / "nonfinite_batch.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(dump, indent=1))
        raise FloatingPointError(f"non-finite loss at step {self.state.step}; batch dumped to {target}")

    # -- loop

    def fit(self, epochs: int | None = None) -> TrainState:
        """Train until ``epochs`` (default: the configured total) have completed."""
        tc = self.config.train
        end = tc.epochs if epochs is None else min(tc.epochs, epochs)
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self.config.save(self.run_dir / "config.json")
            self.tokenizer.save(self.run_dir / "vocab.txt")
        self.model.train()
        while self.state.epoch < end:
            order = self.epoch_order(self.state.epoch)
            for i in range(self.steps_per_epoch):
                row = self.train_step(self.batch_for(self.state.epoch, i, order))
                self._log_row(row)
            self.state.epoch += 1
            log.info("epoch %d done, last total %.4f", self.state.epoch, self.state.history[-1]["total"])
            if self.run_dir and tc.checkpoint_every and self.state.epoch % tc.checkpoint_every == 0:
                self.save_checkpoint(self.run_dir / "checkpoints" / f"epoch_{self.state.epoch:03d}.pt")
        return self.state

    def _log_row(self, row):
        if not self.run_dir:
            return
        path = self.run_dir / "losses.csv"
        new = not path.exists() or row["step"] == 0
        with open(path, "w" if new else "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            if new:
                w.writeheader()
            w.writerow({k: row[k] for k in CSV_COLUMNS})

    # -- evaluation

    @torch.no_grad()
    def embed_texts(self, texts: list[str], chunk: int = 256) -> np.ndarray:
        self.model.eval()
        out = [self.model.text(self.tokenizer.encode_batch(texts[i:i + chunk])).concat
               for i in range(0, len(texts), chunk)]
        return torch.cat(out).double().numpy()

    @torch.no_grad()
    def embed_images(self, image_ids: list[int]) -> np.ndarray:
        self.model.eval()
        grids = torch.as_tensor(np.stack([self.dataset.images[i].patch_grid for i in image_ids]), dtype=self.dtype)
        return self.model.visual(grids).concat.double().numpy()

    def retrieval_index(self, degrade: bool = False, seed: int = 0) -> RetrievalIndex:
        caps = [self.dataset.captions[c] for c in self.test_caps]
        if degrade:
            texts = [drop_one_phrase(c.phrases, c.text, derive_seed(seed, c.caption_id)) for c in caps]
        else:
            texts = [c.text for c in caps]
        return RetrievalIndex(
            self.embed_images(self.test_images),
            np.array([self.dataset.images[i].identity_id for i in self.test_images]),
            self.embed_texts(texts),
            np.array([c.identity_id for c in caps]),
        )

    def evaluate(self, degrade: bool = False, seed: int = 0) -> dict[str, float]:
        report = evaluate_index(self.retrieval_index(degrade, seed))
        self.model.train()
        return report

    # -- persistence

    def save_checkpoint(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        params = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        params.update({f"classifier.{k}": v.detach() for k, v in self.classifier.items()})
        torch.save({
            "params": params,
            "shapes": {k: list(v.shape) for k, v in params.items()},
            "optimizer": self.optimizer.state_dict(),
            "step": self.state.step,
            "epoch": self.state.epoch,
            "history": self.state.history,
            "config": self.config.to_dict(),
            "vocab": self.tokenizer.itos,
        }, path)
        path.with_suffix(".json").write_text(json.dumps(self.config.to_dict(), indent=2) + "\n")

    def load_checkpoint(self, path: str | Path) -> None:
        ckpt = torch.load(path, weights_only=False)
        params = ckpt["params"]
        self.model.load_state_dict({k[len("model."):]: v for k, v in params.items() if k.startswith("model.")})
        with torch.no_grad():
            for k, v in self.classifier.items():
                v.copy_(params[f"classifier.{k}"])
        self.optimizer.load_state_dict(ckpt["optimizer"])
        self.state = TrainState(ckpt["step"], ckpt["epoch"], list(ckpt["history"]))

    @classmethod
    def from_checkpoint(cls, path: str | Path, dataset: Dataset, run_dir=None) -> "Trainer":
        ckpt = torch.load(path, weights_only=False)
        trainer = cls(Config.from_dict(ckpt["config"]), dataset, run_dir)
        trainer.load_checkpoint(path)
        return trainer


def train(config: Config, dataset: Dataset | None = None, run_dir=None) -> Trainer:
    """Build a corpus if needed, train to completion, write the final report."""
    if dataset is None:
        dataset = generate_dataset(config.corpus, config.train.corpus_seed)
    trainer = Trainer(config, dataset, run_dir)
    trainer.fit()
    if trainer.run_dir:
        report = trainer.evaluate()
        report["degraded"] = trainer.evaluate(degrade=True)
        report["k_m"], report["k_p"] = config.train.k_m, config.train.k_p
        report["lambda0"], report["lambda1"] = config.loss.lambda0, config.loss.lambda1
        report["seed"] = config.train.seed
        (trainer.run_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return trainer
