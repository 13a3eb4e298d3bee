import pytest

from tptps.corpus import CorpusConfig, generate_dataset
from tptps.dapgen import Prompt, generate_prompts, sample_prompts, template_patterns
from tptps.textparse import AttributePhrase, parse_description

MAN = AttributePhrase((), "man", "gender_noun", "gender")
RED_SHIRT = AttributePhrase(("red",), "shirt", "wearing_noun", "upper_clothing")
BW_BAG = AttributePhrase(("black", "white"), "backpack", "decoration_noun", "accessory")


def test_noun_prompt_gender():
    assert generate_prompts([MAN]) == [Prompt("noun", "noun/gender", "This person is a man.")]


def test_adjective_prompt():
    prompts = generate_prompts([RED_SHIRT])
    assert Prompt("adjective", "adjective/upper_clothing", "The upper clothing of this person is red.") in prompts


def test_phrase_prompt():
    prompts = generate_prompts([RED_SHIRT])
    assert Prompt("phrase", "noun/wearing", "This person wears red shirt.") in prompts


def test_three_kinds_in_order():
    prompts = generate_prompts([MAN, RED_SHIRT, BW_BAG])
    assert [p.text for p in prompts] == [
        "This person is a man.",
        "This person wears shirt.",
        "This person has backpack.",
        "The upper clothing of this person is red.",
        "The accessory of this person is black and white.",
        "This person wears red shirt.",
        "This person has black and white backpack.",
    ]
    assert [p.kind for p in prompts] == ["noun"] * 3 + ["adjective"] * 2 + ["phrase"] * 2


def test_empty_phrases():
    assert generate_prompts([]) == []


def test_sample_counts():
    prompts = generate_prompts([MAN, RED_SHIRT, BW_BAG])
    assert len(prompts) == 7
    assert sample_prompts(prompts, 0, 1) == []
    three = sample_prompts(prompts, 3, 1)
    assert len(set(three)) == 3
    four = prompts[:4]
    six = sample_prompts(four, 6, 2)
    assert len(six) == 6 and set(six) <= set(four) and len(set(six)) < 6


def test_group_keys_are_template_scoped():
    keys = {p.group_key for p in generate_prompts([MAN, RED_SHIRT, BW_BAG])}
    assert keys == {"noun/gender", "noun/wearing", "noun/decoration", "adjective/upper_clothing", "adjective/accessory"}


def test_faithful_to_source(lexicon):
    ds = generate_dataset(CorpusConfig(n_identities=20), seed=9)
    for cap in ds.captions[:100]:
        source = {p.key for p in cap.phrases}
        for pr in generate_prompts(cap.phrases):
            if pr.kind == "adjective":
                continue
            for p in parse_description(pr.text, lexicon):
                assert p.key in source or any(p.noun == s[1] and p.adjectives == () for s in source)


def test_regexes_reject_bad_grammar(lexicon):
    pats = template_patterns(lexicon)
    assert pats["noun/gender"].match("This person is a man.")
    assert not pats["noun/gender"].match("This person wears man.")
    assert not pats["noun/wearing"].match("This person wears a shirt.")
    assert pats["adjective/accessory"].match("The accessory of this person is black and white.")
    assert not pats["adjective/accessory"].match("The accessory of this person is backpack.")
