import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tptps.encoders import DualEncoder, EncoderConfig, gem_pool, set_frozen_layers
from tptps.tokenizer import EOT, PAD, SOT, Tokenizer


@pytest.fixture(scope="module")
def tokenizer():
    from tptps.textparse import Lexicon

    return Tokenizer.from_lexicon(Lexicon.load(), max_len=32)


def make_model(tokenizer, **kw):
    torch.manual_seed(0)
    cfg = EncoderConfig(**{"embed_dim": 16, "heads": 2, "visual_layers": 2, "text_layers": 4, **kw})
    return DualEncoder(cfg, tokenizer).double().eval()


# --- tokenizer


def test_tokenizer_roundtrip(tokenizer):
    ids = tokenizer.encode("A man wears a red shirt.")
    assert len(ids) == 32
    assert ids[0] == SOT
    n = ids.index(EOT)
    assert all(i == PAD for i in ids[n + 1:])
    assert tokenizer.decode(ids) == "a man wears a red shirt"


def test_tokenizer_truncates_long_text(tokenizer):
    ids = tokenizer.encode(" ".join(["shirt"] * 100))
    assert len(ids) == 32
    assert ids[-1] == EOT
    assert sum(i not in (SOT, EOT, PAD) for i in ids) == 30


def test_tokenizer_rejects_empty(tokenizer):
    with pytest.raises(ValueError):
        tokenizer.encode(" ,. ")


def test_vocab_file_roundtrip(tmp_path, tokenizer):
    tokenizer.save(tmp_path / "vocab.txt")
    back = Tokenizer.load(tmp_path / "vocab.txt")
    assert back.itos == tokenizer.itos


# --- gem


def test_gem_examples():
    x = torch.tensor([[1.0], [2.0], [3.0]])
    assert gem_pool(x, 1.0).item() == pytest.approx(2.0, abs=1e-12)
    assert gem_pool(x, 3.0).item() == pytest.approx(12 ** (1 / 3), abs=1e-12)
    assert abs(gem_pool(x, 64.0).item() - 3.0) / 3.0 < 0.05


def test_gem_rejects_empty():
    with pytest.raises(ValueError):
        gem_pool(torch.zeros(0, 4), 3.0)


def test_gem_mask_ignores_masked_tokens():
    x = torch.tensor([[[1.0], [2.0], [100.0]]])
    mask = torch.tensor([[True, True, False]])
    assert gem_pool(x, 2.0, mask).item() == pytest.approx(((1 + 4) / 2) ** 0.5)


nonneg = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                elements=st.floats(0, 10, allow_nan=False))


@settings(max_examples=200)
@given(nonneg, st.floats(1.0, 20.0), st.floats(0.0, 20.0))
def test_gem_between_mean_and_max_and_monotone(x, q, dq):
    t = torch.as_tensor(x)
    lo = t.clamp(min=1e-6).mean(0)
    hi = t.clamp(min=1e-6).max(0).values
    g1, g2 = gem_pool(t, q), gem_pool(t, q + dq)
    tol = 1e-9 * (1 + hi)
    assert (lo - tol <= g1).all() and (g1 <= hi + tol).all()
    assert (g1 <= g2 + tol).all()


# --- towers


def test_visual_sequence_length(tokenizer):
    m = make_model(tokenizer)
    out = m.encode_image(np.zeros((48, 32)))
    assert out.tokens.shape == (49, 16)
    assert out.concat.shape == (32,)
    assert torch.equal(out.concat, torch.cat([out.global_feat, out.pooled]))


def test_zero_projection_gives_zero_features(tokenizer):
    m = make_model(tokenizer)
    with torch.no_grad():
        m.visual.proj.weight.zero_()
    out = m.encode_image(np.zeros((48, 32)))
    assert torch.allclose(out.global_feat, torch.zeros(16), atol=0)
    assert torch.allclose(out.pooled, torch.zeros(16), atol=1e-5)  # clamp floor is 1e-6


def test_identical_inputs_identical_outputs(tokenizer):
    m = make_model(tokenizer)
    g = np.random.default_rng(0).normal(size=(48, 32))
    assert torch.equal(m.encode_image(g).concat, m.encode_image(g.copy()).concat)
    assert torch.equal(m.encode_text("a red shirt").concat, m.encode_text("a red shirt").concat)


def test_shape_mismatch(tokenizer):
    m = make_model(tokenizer)
    with pytest.raises(ValueError):
        m.encode_image(np.zeros((47, 32)))


def test_patch_permutation_changes_output(tokenizer):
    m = make_model(tokenizer)
    g = np.random.default_rng(1).normal(size=(48, 32))
    perm = np.random.default_rng(2).permutation(48)
    assert not torch.allclose(m.encode_image(g).concat, m.encode_image(g[perm]).concat)


def test_text_pooling_over_word_tokens(tokenizer):
    m = make_model(tokenizer, gem_q=1.0 + 1e-9)
    out = m.encode_text("red shirt")
    words = out.tokens[1:3]
    assert torch.allclose(out.pooled, words.clamp(min=1e-6).mean(0), atol=1e-7)
    assert torch.equal(out.global_feat, out.tokens[3])  # EOT position


def test_padding_invariance(tokenizer):
    m = make_model(tokenizer)
    ids = tokenizer.encode_batch(["a man wears black shorts"])
    n = int((ids != PAD).sum())
    full = m.text(ids)
    trimmed = m.text(ids[:, :n])
    assert torch.allclose(full.global_feat, trimmed.global_feat, atol=1e-12)
    assert torch.allclose(full.pooled, trimmed.pooled, atol=1e-12)


def test_batch_matches_single(tokenizer):
    m = make_model(tokenizer)
    texts = ["a man", "this person wears a red and white shirt and black shorts"]
    batch = m.encode_text(texts).concat
    for i, t in enumerate(texts):
        assert torch.allclose(batch[i], m.encode_text(t).concat, atol=1e-12)


def test_empty_text_rejected(tokenizer):
    m = make_model(tokenizer)
    with pytest.raises(ValueError):
        m.encode_text("...")


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(frozen_text_layers=4, text_layers=4).validate()
    with pytest.raises(ValueError):
        EncoderConfig(gem_q=1.0).validate()


# --- freezing


def _text_grads(m):
    m.zero_grad(set_to_none=True)
    out = m.encode_text(["a man wears a red shirt", "this person has a bag"])
    (out.concat ** 2).sum().backward()
    return {n: (p.grad if p.grad is not None else torch.zeros_like(p)) for n, p in m.text.named_parameters()}


def test_no_freezing_all_text_params_get_gradient(tokenizer):
    m = make_model(tokenizer, frozen_text_layers=0)
    for name, g in _text_grads(m).items():
        if name.startswith("gem."):
            continue
        assert g.abs().max() > 0, name


def test_freeze_two_of_four(tokenizer):
    m = make_model(tokenizer, frozen_text_layers=2)
    grads = _text_grads(m)
    for name, g in grads.items():
        if name.startswith(("blocks.0.", "blocks.1.", "token_embedding", "pos_embed")):
            assert g.abs().max() == 0, name
        if name.startswith(("blocks.2.", "blocks.3.")):
            assert g.norm() > 0, name


def test_set_frozen_layers_bounds(tokenizer):
    m = make_model(tokenizer)
    with pytest.raises(ValueError):
        set_frozen_layers(m, 4)
    set_frozen_layers(m, 0)
    assert all(p.requires_grad for n, p in m.text.named_parameters() if not n.startswith("gem."))


# --- gradient correctness


def _fd_rel_errors(m, loss_fn, n_entries=3, h=1e-6):
    gen = torch.Generator().manual_seed(0)
    m.zero_grad(set_to_none=True)
    loss_fn().backward()
    errs = {}
    for name, p in m.named_parameters():
        if not p.requires_grad:
            continue
        flat = p.data.view(-1)
        idx = torch.randperm(flat.numel(), generator=gen)[:n_entries]
        analytic = p.grad.view(-1)[idx].clone()
        numeric = torch.empty_like(analytic)
        with torch.no_grad():
            for j, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric[j] = (up - down) / (2 * h)
        denom = max(analytic.norm().item(), numeric.norm().item(), 1e-8)
        errs[name] = (analytic - numeric).norm().item() / denom
    return errs


def test_finite_difference_all_parameters(tokenizer):
    m = make_model(tokenizer, frozen_text_layers=0, gem_learnable=True)
    gen = torch.Generator().manual_seed(1)
    grids = torch.randn(2, 48, 32, generator=gen, dtype=torch.float64)
    ids = tokenizer.encode_batch(["a man wears a red shirt", "this person has a black bag"])
    ids = ids[:, :10]
    wv = torch.randn(32, dtype=torch.float64, generator=gen)
    wt = torch.randn(32, dtype=torch.float64, generator=gen)

    def probe():
        return (m.visual(grids).concat @ wv).sum() + (m.text(ids).concat @ wt).sum()

    errs = _fd_rel_errors(m, probe)
    assert len(errs) > 20
    bad = {k: v for k, v in errs.items() if v >= 1e-4}
    assert not bad, bad
