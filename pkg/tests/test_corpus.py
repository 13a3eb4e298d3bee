import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tptps.corpus import (
    AttributeValue,
    CorpusConfig,
    Dataset,
    Identity,
    _region_slots,
    _sample_identity,
    choose_subset,
    clean_grid,
    generate_dataset,
    render_caption,
    render_image,
)
from tptps.errors import ConfigError
from tptps.textparse import Lexicon, parse_description

MAN_RED_SHIRT = Identity(0, (
    AttributeValue("gender", "man"),
    AttributeValue("upper_clothing", "shirt", ("red",)),
    AttributeValue("lower_clothing", "shorts", ("black",)),
))


def test_counts():
    ds = generate_dataset(CorpusConfig(n_identities=50, images_per_identity=4, captions_per_image=2), seed=7)
    assert len(ds.images) == 200
    assert len(ds.captions) == 400
    per_id = np.bincount([c.identity_id for c in ds.captions])
    assert (per_id == 8).all()


def test_every_caption_mentions_two_phrases_of_its_identity(small_dataset):
    for cap in small_dataset.captions:
        own = {a.key for a in small_dataset.identities[cap.identity_id].attributes}
        assert len(cap.phrases) >= 2
        assert {p.key for p in cap.phrases} <= own


def test_identical_call_is_byte_identical(tmp_path):
    cfg = CorpusConfig(n_identities=5, images_per_identity=2, captions_per_image=2)
    generate_dataset(cfg, 11).save(tmp_path / "a")
    generate_dataset(cfg, 11).save(tmp_path / "b")
    for name in ("captions.jsonl", "images.json", "identities.json", "corpus.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_jsonl_schema(tmp_path, small_dataset):
    small_dataset.save(tmp_path)
    rec = json.loads((tmp_path / "captions.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"caption_id", "identity_id", "image_id", "text"}
    img = json.loads((tmp_path / "images.json").read_text())[0]
    assert {"image_id", "identity_id", "grid"} <= set(img)
    assert np.asarray(img["grid"]).shape == (48, 32)


def test_save_load_roundtrip(tmp_path, small_dataset):
    small_dataset.save(tmp_path)
    back = Dataset.load(tmp_path)
    assert back.identities == small_dataset.identities
    assert [c.text for c in back.captions] == [c.text for c in small_dataset.captions]
    assert [c.phrases for c in back.captions] == [c.phrases for c in small_dataset.captions]
    for a, b in zip(back.images, small_dataset.images):
        assert np.array_equal(a.patch_grid, b.patch_grid)


def test_distinct_identities_share_no_phrase():
    ds = generate_dataset(CorpusConfig(n_identities=2, distinct_attributes=True), seed=5)
    lex = ds.lexicon
    p0 = {p.key for c in ds.captions if c.identity_id == 0 for p in parse_description(c.text, lex)}
    p1 = {p.key for c in ds.captions if c.identity_id == 1 for p in parse_description(c.text, lex)}
    assert p0 and p1 and not (p0 & p1)


def test_missing_lexicon_item_is_config_error(tmp_path, lexicon):
    data = lexicon.to_dict()
    del data["foot_item"]
    path = tmp_path / "lex.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError):
        generate_dataset(CorpusConfig(lexicon_path=str(path)), 0)


def test_bad_counts_are_config_errors():
    with pytest.raises(ConfigError):
        generate_dataset(CorpusConfig(n_identities=1), 0)


# --- images


def test_zero_noise_is_deterministic():
    a = render_image(MAN_RED_SHIRT, 0.0, seed=1)
    b = render_image(MAN_RED_SHIRT, 0.0, seed=2)
    assert np.array_equal(a.patch_grid, b.patch_grid)
    assert a.patch_grid.shape == (48, 32)
    assert np.isfinite(a.patch_grid).all()


def test_upper_change_only_touches_upper_rows():
    other = Identity(1, (
        MAN_RED_SHIRT.attributes[0],
        AttributeValue("upper_clothing", "jacket", ("blue",)),
        MAN_RED_SHIRT.attributes[2],
    ))
    a = render_image(MAN_RED_SHIRT, 0.0, 0).patch_grid.reshape(12, 4, 32)
    b = render_image(other, 0.0, 0).patch_grid.reshape(12, 4, 32)
    differs = np.abs(a - b).max(axis=(1, 2)) > 0
    assert differs.tolist() == [False] * 2 + [True] * 4 + [False] * 6


def test_regions_partition_grid():
    slots = np.concatenate(list(_region_slots(12, 4).values()))
    assert sorted(slots.tolist()) == list(range(48))


def test_noise_std_monte_carlo():
    dev = np.concatenate([
        (render_image(MAN_RED_SHIRT, 0.1, seed).patch_grid - clean_grid(MAN_RED_SHIRT)).ravel()
        for seed in range(25)
    ])  # 25 * 48 = 1200 patches
    assert abs(dev.std() - 0.1) < 0.02


def test_separability_zero_noise(lexicon):
    rng = np.random.default_rng(0)
    cfg = CorpusConfig()
    for trial in range(50):
        a = _sample_identity(rng, lexicon, cfg, 0, set())
        b = _sample_identity(rng, lexicon, cfg, 1, {(x.item, x.noun) for x in a.attributes})
        ga, gb = clean_grid(a).ravel(), clean_grid(b).ravel()
        cross = ga @ gb / np.linalg.norm(ga) / np.linalg.norm(gb)
        assert cross < 1.0 - 1e-9


# --- captions


def test_caption_template_example():
    assert render_caption(MAN_RED_SHIRT, 3, seed=0) == "A man wears a red shirt and black shorts."


def test_subset_two_mentions_two(lexicon):
    for seed in range(30):
        assert len(parse_description(render_caption(MAN_RED_SHIRT, 2, seed), lexicon)) == 2


@pytest.mark.parametrize("size", [1, 4])
def test_subset_out_of_range(size):
    with pytest.raises(ValueError):
        render_caption(MAN_RED_SHIRT, size, 0)


def test_roundtrip_1000_identities(lexicon):
    rng = np.random.default_rng(1234)
    cfg = CorpusConfig()
    recovered = 0
    for i in range(1000):
        ident = _sample_identity(rng, lexicon, cfg, i, set())
        size = int(rng.integers(2, len(ident.attributes) + 1))
        seed = int(rng.integers(2**31))
        truth = [a.key for a in choose_subset(ident, size, seed)]
        got = [p.key for p in parse_description(render_caption(ident, size, seed, lexicon), lexicon)]
        recovered += got == truth
    assert recovered == 1000


def test_corpus_captions_parse_to_ground_truth():
    ds = generate_dataset(CorpusConfig(n_identities=125), seed=21)
    assert len(ds.captions) == 1000
    for cap in ds.captions:
        assert [p.key for p in cap.phrases] == [a.key for a in cap.mentioned]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_generation_is_pure(seed):
    cfg = CorpusConfig(n_identities=3, images_per_identity=1, captions_per_image=1)
    a, b = generate_dataset(cfg, seed), generate_dataset(cfg, seed)
    assert [c.text for c in a.captions] == [c.text for c in b.captions]
    assert all(np.array_equal(x.patch_grid, y.patch_grid) for x, y in zip(a.images, b.images))
