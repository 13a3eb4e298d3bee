"""Single-attribute prompt sentences built from parsed caption phrases."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .midgen import draw
from .textparse import AttributePhrase, Lexicon

NOUN_TEMPLATES = {
    "gender_noun": "This person is a {}.",
    "wearing_noun": "This person wears {}.",
    "decoration_noun": "This person has {}.",
}
NOUN_GROUPS = {"gender_noun": "noun/gender", "wearing_noun": "noun/wearing", "decoration_noun": "noun/decoration"}
ADJECTIVE_TEMPLATE = "The {} of this person is {}."


@dataclass(frozen=True)
class Prompt:
    kind: str  # noun | adjective | phrase
    group_key: str
    text: str
    source_caption_id: int = -1


def item_name(item: str) -> str:
    return item.replace("_", " ")


def generate_prompts(phrases: list[AttributePhrase], caption_id: int = -1) -> list[Prompt]:
    """Noun, adjective and phrase prompts, in that order, without duplicates."""
    out: list[Prompt] = []
    for p in phrases:
        out.append(Prompt("noun", NOUN_GROUPS[p.noun_category], NOUN_TEMPLATES[p.noun_category].format(p.noun), caption_id))
    for p in phrases:
        if p.adjectives and p.noun_category != "gender_noun":
            text = ADJECTIVE_TEMPLATE.format(item_name(p.attribute_item), " and ".join(p.adjectives))
            out.append(Prompt("adjective", f"adjective/{p.attribute_item}", text, caption_id))
    for p in phrases:
        out.append(Prompt("phrase", NOUN_GROUPS[p.noun_category], NOUN_TEMPLATES[p.noun_category].format(p.surface), caption_id))
    seen = set()
    unique = []
    for pr in out:
        if (pr.group_key, pr.text) in seen:
            continue
        seen.add((pr.group_key, pr.text))
        unique.append(pr)
    return unique


def sample_prompts(prompts: list[Prompt], k_p: int, seed: int) -> list[Prompt]:
    return draw(prompts, k_p, seed)


def template_patterns(lexicon: Lexicon) -> dict[str, re.Pattern]:
    """Exact-match regexes for every prompt group, built from the lexicon."""

    def alt(words):
        return "(?:" + "|".join(sorted(map(re.escape, words), key=len, reverse=True)) + ")"

    pats = {}
    for item, nouns in lexicon.nouns_by_item.items():
        cat = lexicon.category_by_item[item]
        adjs = lexicon.adjectives_by_item.get(item, [])
        if cat == "gender_noun":
            body = alt(nouns)
        else:
            body = (f"(?:{alt(adjs)}(?: and {alt(adjs)})* )?" if adjs else "") + alt(nouns)
        key = NOUN_GROUPS[cat]
        prefix = re.escape(NOUN_TEMPLATES[cat].split("{}")[0])
        pats.setdefault(key, []).append(prefix + body + r"\.")
        if adjs and cat != "gender_noun":
            pats[f"adjective/{item}"] = [
                re.escape(f"The {item_name(item)} of this person is ") + f"{alt(adjs)}(?: and {alt(adjs)})*" + r"\."
            ]
    return {k: re.compile("^(?:" + "|".join(v) + ")$") for k, v in pats.items()}
