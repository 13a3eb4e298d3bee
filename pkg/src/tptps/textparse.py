"""Lexicon-driven attribute phrase extraction.

A phrase is a maximal run of known adjectives (optionally joined by "and")
immediately followed by a known noun. Everything else is skipped, so the
parser is total over arbitrary strings.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

ITEMS = ("gender", "head_item", "upper_clothing", "lower_clothing", "foot_item", "accessory")
CATEGORIES = ("gender_noun", "wearing_noun", "decoration_noun")
DEFAULT_CATEGORY = {
    "gender": "gender_noun",
    "head_item": "wearing_noun",
    "upper_clothing": "wearing_noun",
    "lower_clothing": "wearing_noun",
    "foot_item": "wearing_noun",
    "accessory": "decoration_noun",
}

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass(frozen=True)
class AttributePhrase:
    adjectives: tuple[str, ...]
    noun: str
    noun_category: str
    attribute_item: str
    span: tuple[int, int] = (0, 0)  # token indices, end exclusive

    @property
    def key(self) -> tuple[tuple[str, ...], str, str]:
        """Identity of the phrase, ignoring where it sits in the caption."""
        return (self.adjectives, self.noun, self.attribute_item)

    @property
    def surface(self) -> str:
        if not self.adjectives:
            return self.noun
        return " and ".join(self.adjectives) + " " + self.noun

    def to_dict(self) -> dict:
        return {
            "adjectives": list(self.adjectives),
            "noun": self.noun,
            "noun_category": self.noun_category,
            "attribute_item": self.attribute_item,
            "span": list(self.span),
        }


@dataclass
class Lexicon:
    nouns_by_item: dict[str, list[str]]
    adjectives_by_item: dict[str, list[str]]
    category_by_item: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_CATEGORY))

    def __post_init__(self):
        missing = [item for item in ITEMS if item not in self.nouns_by_item]
        if missing:
            raise ConfigError(f"lexicon is missing item categories: {missing}")
        self.item_of_noun: dict[str, str] = {}
        for item, nouns in self.nouns_by_item.items():
            if item not in ITEMS:
                raise ConfigError(f"unknown attribute item {item!r} in lexicon")
            if not nouns:
                raise ConfigError(f"lexicon item {item!r} has no nouns")
            for noun in nouns:
                if noun in self.item_of_noun:
                    raise ConfigError(
                        f"noun {noun!r} listed under both {self.item_of_noun[noun]!r} and {item!r}"
                    )
                self.item_of_noun[noun] = item
        for item, cat in self.category_by_item.items():
            if cat not in CATEGORIES:
                raise ConfigError(f"unknown noun category {cat!r} for item {item!r}")
        self.adjectives = frozenset(a for adjs in self.adjectives_by_item.values() for a in adjs)
        clash = self.adjectives & set(self.item_of_noun)
        if clash:
            raise ConfigError(f"words used both as noun and adjective: {sorted(clash)}")

    @property
    def noun_category_map(self) -> dict[str, str]:
        return {n: self.category_by_item[i] for n, i in self.item_of_noun.items()}

    def words(self) -> list[str]:
        return sorted(set(self.item_of_noun) | self.adjectives)

    @classmethod
    def from_dict(cls, data: dict) -> "Lexicon":
        nouns, adjs, cats = {}, {}, {}
        for item, entry in data.items():
            nouns[item] = list(entry.get("nouns", []))
            adjs[item] = list(entry.get("adjectives", []))
            cats[item] = entry.get("category", DEFAULT_CATEGORY.get(item, "wearing_noun"))
        return cls(nouns, adjs, cats)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Lexicon":
        """Load a lexicon JSON file; ``None`` loads the bundled default."""
        if path is None:
            text = resources.files("tptps.data").joinpath("lexicon.json").read_text()
        else:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read lexicon {path}: {exc}") from exc
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            item: {
                "category": self.category_by_item[item],
                "nouns": list(self.nouns_by_item[item]),
                "adjectives": list(self.adjectives_by_item.get(item, [])),
            }
            for item in self.nouns_by_item
        }


def categorize_noun(noun: str, lexicon: Lexicon) -> tuple[str, str]:
    """Return ``(noun_category, attribute_item)`` for a lexicon noun."""
    try:
        item = lexicon.item_of_noun[noun]
    except KeyError:
        raise LookupError(f"noun not in lexicon: {noun!r}") from None
    return lexicon.category_by_item[item], item


def parse_tokens(tokens: list[str], lexicon: Lexicon) -> list[AttributePhrase]:
    phrases = []
    claimed = 0  # tokens before this index already belong to a phrase
    for pos, tok in enumerate(tokens):
        if tok not in lexicon.item_of_noun:
            continue
        start = pos
        adjs: list[str] = []
        # only adjectives the lexicon allows for this item; anything else ends the phrase
        allowed = lexicon.adjectives_by_item.get(lexicon.item_of_noun[tok], ())
        j = pos - 1
        while j >= claimed:
            if tokens[j] in allowed:
                adjs.append(tokens[j])
                start = j
                j -= 1
            elif tokens[j] == "and" and adjs and j - 1 >= claimed and tokens[j - 1] in allowed:
                j -= 1
            else:
                break
        category, item = categorize_noun(tok, lexicon)
        phrases.append(AttributePhrase(tuple(reversed(adjs)), tok, category, item, (start, pos + 1)))
        claimed = pos + 1
    return phrases


def parse_description(text: str, lexicon: Lexicon) -> list[AttributePhrase]:
    """Extract attribute phrases from ``text`` in left-to-right order."""
    return parse_tokens(tokenize(text), lexicon)
