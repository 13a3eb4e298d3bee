"""Multi-integrity descriptions: correct but strictly less complete rewrites.

Each phrase of a caption is kept whole, reduced to its bare noun, or dropped.
The surviving phrases are re-rendered through the caption templates so that
every variant stays grammatical.
"""
from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass

import numpy as np

from .corpus import N_TEMPLATES, render_description
from .textparse import AttributePhrase

FULL, NOUN_ONLY, ADJ_ONLY, DROPPED = "full", "noun_only", "adjectives_only", "dropped"
MODES = ("adjective_and_phrase", "full_component")


@dataclass(frozen=True)
class MIDVariant:
    text: str
    kept: tuple[str, ...]
    source_caption_id: int = -1


def _states(phrase: AttributePhrase, mode: str) -> list[str]:
    if not phrase.adjectives:
        return [FULL, DROPPED]
    if mode == "full_component":
        return [FULL, NOUN_ONLY, ADJ_ONLY, DROPPED]
    return [FULL, NOUN_ONLY, DROPPED]


def _part(phrase: AttributePhrase, state: str):
    if state == FULL:
        return (phrase.noun_category, phrase.surface, True)
    if state == NOUN_ONLY:
        return (phrase.noun_category, phrase.noun, True)
    # dangling adjectives keep their slot but lose the noun
    return (phrase.noun_category, " and ".join(phrase.adjectives), False)


def template_for(caption: str) -> int:
    return zlib.crc32(caption.encode()) % N_TEMPLATES


def render_states(phrases: list[AttributePhrase], states: tuple[str, ...], template: int) -> str:
    parts = []
    for phrase, state in zip(phrases, states):
        if state == DROPPED:
            continue
        if state == ADJ_ONLY and phrase.noun_category == "gender_noun":
            continue
        parts.append(_part(phrase, state))
    return render_description(parts, template)


def enumerate_mids(
    phrases: list[AttributePhrase],
    caption: str,
    mode: str = "adjective_and_phrase",
    caption_id: int = -1,
) -> list[MIDVariant]:
    """All strictly-incomplete, non-empty rewrites of ``caption``."""
    if not phrases:
        raise ValueError("enumerate_mids needs at least one phrase")
    if mode not in MODES:
        raise ValueError(f"unknown MID mode {mode!r}")
    template = template_for(caption)
    out = []
    for states in itertools.product(*(_states(p, mode) for p in phrases)):
        if all(s == FULL for s in states):
            continue
        if all(s == DROPPED for s in states):
            continue
        if mode == "full_component" and all(
            s == DROPPED or (s == ADJ_ONLY and p.noun_category == "gender_noun") for p, s in zip(phrases, states)
        ):
            continue
        out.append(MIDVariant(render_states(phrases, states, template), states, caption_id))
    return out


def draw(items: list, k: int, seed: int) -> list:
    """``k`` distinct items when possible, otherwise ``k`` draws with replacement."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0 or not items:
        return []
    rng = np.random.default_rng(seed)
    if len(items) >= k:
        idx = rng.choice(len(items), size=k, replace=False)
    else:
        idx = rng.integers(len(items), size=k)
    return [items[i] for i in idx]


def sample_mids(variants: list[MIDVariant], k_m: int, seed: int) -> list[MIDVariant]:
    return draw(variants, k_m, seed)


def drop_one_phrase(phrases: list[AttributePhrase], caption: str, seed: int) -> str:
    """Re-render ``caption`` with one randomly chosen phrase removed."""
    if len(phrases) < 2:
        return caption
    victim = int(np.random.default_rng(seed).integers(len(phrases)))
    states = tuple(DROPPED if i == victim else FULL for i in range(len(phrases)))
    return render_states(phrases, states, template_for(caption))
