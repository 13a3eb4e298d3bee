"""Word-level tokenizer shared by captions, MIDs and prompts."""
from __future__ import annotations

from pathlib import Path

import torch

from .corpus import _TEMPLATES
from .dapgen import ADJECTIVE_TEMPLATE, NOUN_TEMPLATES, item_name
from .textparse import Lexicon, tokenize

SPECIALS = ("<pad>", "<sot>", "<eot>", "<unk>")
PAD, SOT, EOT, UNK = range(4)


def template_words() -> set[str]:
    texts = [t for triple in _TEMPLATES for t in triple] + list(NOUN_TEMPLATES.values())
    texts += [ADJECTIVE_TEMPLATE, "This is {S}.", "this person"]
    words = set()
    for t in texts:
        for ph in ("{S}", "{W}", "{C}", "{}"):
            t = t.replace(ph, " ")
        words.update(tokenize(t))
    return words | {"a", "an", "and"}


class Tokenizer:
    def __init__(self, words: list[str], max_len: int = 32):
        if max_len < 3:
            raise ValueError("max_len must leave room for at least one word")
        self.max_len = max_len
        self.itos = list(SPECIALS) + [w for w in words if w not in SPECIALS]
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_lexicon(cls, lexicon: Lexicon, max_len: int = 32) -> "Tokenizer":
        words = set(lexicon.words()) | template_words()
        for item in lexicon.nouns_by_item:
            words.update(item_name(item).split())
        return cls(sorted(words), max_len)

    def __len__(self):
        return len(self.itos)

    @property
    def pad_id(self):
        return PAD

    def encode(self, text: str) -> list[int]:
        """SOT, up to ``max_len - 2`` word ids, EOT, then padding to ``max_len``."""
        words = tokenize(text)
        if not words:
            raise ValueError(f"text has no tokens: {text!r}")
        ids = [SOT] + [self.stoi.get(w, UNK) for w in words[: self.max_len - 2]] + [EOT]
        return ids + [PAD] * (self.max_len - len(ids))

    def encode_batch(self, texts: list[str]) -> torch.Tensor:
        return torch.tensor([self.encode(t) for t in texts], dtype=torch.long).reshape(len(texts), self.max_len)

    def decode(self, ids) -> str:
        return " ".join(self.itos[int(i)] for i in ids if int(i) not in (PAD, SOT, EOT))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n")

    @classmethod
    def load(cls, path: str | Path, max_len: int = 32) -> "Tokenizer":
        words = Path(path).read_text().split("\n")
        return cls([w for w in words if w], max_len)
