"""Synthetic attribute-grounded person corpus.

Every identity is a set of attribute values (one per body-region item plus a
gender noun). Images are patch grids in which each item's region carries a
vector derived from the attribute value; captions are template sentences over
a random subset of the attributes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .textparse import DEFAULT_CATEGORY, ITEMS, AttributePhrase, Lexicon, parse_description

N_TEMPLATES = 6
ITEM_ORDER = {item: i for i, item in enumerate(ITEMS)}
_VOWELS = set("aeiou")


@dataclass(frozen=True)
class AttributeValue:
    item: str
    noun: str
    adjectives: tuple[str, ...] = ()

    @property
    def surface(self) -> str:
        if not self.adjectives:
            return self.noun
        return " and ".join(self.adjectives) + " " + self.noun

    @property
    def key(self):
        return (self.adjectives, self.noun, self.item)


@dataclass(frozen=True)
class Identity:
    id: int
    attributes: tuple[AttributeValue, ...]

    def get(self, item: str) -> AttributeValue | None:
        for a in self.attributes:
            if a.item == item:
                return a
        return None

    def to_dict(self) -> dict:
        return {
            "identity_id": self.id,
            "attributes": [
                {"item": a.item, "noun": a.noun, "adjectives": list(a.adjectives)} for a in self.attributes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Identity":
        attrs = tuple(AttributeValue(a["item"], a["noun"], tuple(a["adjectives"])) for a in d["attributes"])
        return cls(d["identity_id"], attrs)


@dataclass
class ImageSpec:
    identity_id: int
    patch_grid: np.ndarray  # (rows * cols, patch_dim)
    noise_seed: int
    image_id: int = -1


@dataclass
class CaptionRecord:
    caption_id: int
    identity_id: int
    image_id: int
    text: str
    phrases: list[AttributePhrase] = field(default_factory=list)
    mentioned: tuple[AttributeValue, ...] = ()  # generator ground truth, not persisted


@dataclass
class CorpusConfig:
    n_identities: int = 50
    images_per_identity: int = 4
    captions_per_image: int = 2
    lexicon_path: str | None = None
    noise_sigma: float = 0.2
    grid_rows: int = 12
    grid_cols: int = 4
    patch_dim: int = 32
    min_items: int = 3
    max_items: int = 5
    distinct_attributes: bool = False

    def validate(self):
        if self.n_identities < 2:
            raise ConfigError("n_identities must be >= 2")
        if self.images_per_identity < 1 or self.captions_per_image < 1:
            raise ConfigError("images_per_identity and captions_per_image must be >= 1")
        if not 1 <= self.min_items <= self.max_items <= 5:
            raise ConfigError("need 1 <= min_items <= max_items <= 5")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")

    @property
    def patch_count(self) -> int:
        return self.grid_rows * self.grid_cols


# ---------------------------------------------------------------- rendering text


def with_article(surface: str) -> str:
    head = surface.split()[-1]
    if head.endswith("s"):
        return surface
    return ("an " if surface[0] in _VOWELS else "a ") + surface


def _join(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


# (with wearing and carrying, wearing only, carrying only)
_TEMPLATES = [
    ("{S} wears {W} and carries {C}.", "{S} wears {W}.", "{S} carries {C}."),
    ("{S} is wearing {W}. This person also has {C}.", "{S} is wearing {W}.", "{S} has {C}."),
    ("{S} in {W} is carrying {C}.", "{S} in {W} is walking.", "{S} is carrying {C}."),
    ("{S} dressed in {W}, with {C}.", "{S} dressed in {W}.", "{S} with {C}."),
    ("{S} has on {W} and holds {C}.", "{S} has on {W}.", "{S} holds {C}."),
    ("{S}, wearing {W}, walks with {C}.", "{S}, wearing {W}, walks by.", "{S} walks with {C}."),
]


def render_description(parts: list[tuple[str, str, bool]], template: int) -> str:
    """Render a sentence from ``(noun_category, surface, has_noun)`` parts.

    Parts without a noun (dangling adjectives) are written without an article.
    """
    subject = None
    wearing, carrying = [], []
    for category, surface, has_noun in parts:
        text = with_article(surface) if has_noun else surface
        if category == "gender_noun":
            subject = text
        elif category == "decoration_noun":
            carrying.append(text)
        else:
            wearing.append(text)
    s = subject if subject is not None else "this person"
    both, w_only, c_only = _TEMPLATES[template % N_TEMPLATES]
    if wearing and carrying:
        out = both.format(S=s, W=_join(wearing), C=_join(carrying))
    elif wearing:
        out = w_only.format(S=s, W=_join(wearing))
    elif carrying:
        out = c_only.format(S=s, C=_join(carrying))
    elif subject is not None:
        out = "This is {S}.".format(S=s)
    else:
        raise ValueError("nothing to describe")
    return out[0].upper() + out[1:]


def choose_subset(identity: Identity, subset_size: int, seed: int) -> list[AttributeValue]:
    n = len(identity.attributes)
    if not 2 <= subset_size <= n:
        raise ValueError(f"subset_size must be in [2, {n}], got {subset_size}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(n, size=subset_size, replace=False)
    chosen = [identity.attributes[i] for i in picked]
    return sorted(chosen, key=lambda a: ITEM_ORDER[a.item])


def render_caption(identity: Identity, subset_size: int, seed: int, lexicon: Lexicon | None = None) -> str:
    """Describe ``subset_size`` randomly chosen attributes of ``identity``."""
    cats = lexicon.category_by_item if lexicon is not None else DEFAULT_CATEGORY
    attrs = choose_subset(identity, subset_size, seed)
    parts = [(cats[a.item], a.surface, True) for a in attrs]
    return render_description(parts, seed % N_TEMPLATES)


# --------------------------------------------------------------- rendering images


def _region_slots(rows: int, cols: int) -> dict[str, np.ndarray]:
    head_end, upper_end, lower_end = rows // 6, rows // 2, (3 * rows) // 4
    grid = np.arange(rows * cols).reshape(rows, cols)
    outer = [0, cols - 1] if cols > 1 else [0]
    inner = list(range(1, cols - 1)) if cols > 2 else outer
    return {
        "head_item": grid[:head_end].ravel(),
        "upper_clothing": grid[head_end:upper_end].ravel(),
        "lower_clothing": grid[upper_end:lower_end].ravel(),
        "foot_item": grid[lower_end:, outer].ravel(),
        "accessory": grid[lower_end:, inner].ravel(),
    }


@lru_cache(maxsize=4096)
def _hash_vector(key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(key.encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    v.flags.writeable = False
    return v


def base_vector(value: AttributeValue, dim: int) -> np.ndarray:
    """Fixed vector of an attribute value: noun vector plus adjective vectors."""
    v = _hash_vector(f"{value.item}/noun/{value.noun}", dim).copy()
    for adj in value.adjectives:
        v += _hash_vector(f"{value.item}/adj/{adj}", dim)
    return v / np.sqrt(1 + len(value.adjectives))


def absent_vector(item: str, dim: int) -> np.ndarray:
    return _hash_vector(f"{item}/absent", dim)


def gender_bias(noun: str, dim: int) -> np.ndarray:
    return 0.5 * _hash_vector(f"gender/noun/{noun}", dim)


def clean_grid(identity: Identity, rows: int = 12, cols: int = 4, patch_dim: int = 32) -> np.ndarray:
    grid = np.zeros((rows * cols, patch_dim))
    for item, slots in _region_slots(rows, cols).items():
        value = identity.get(item)
        grid[slots] = base_vector(value, patch_dim) if value is not None else absent_vector(item, patch_dim)
    g = identity.get("gender")
    if g is not None:
        grid += gender_bias(g.noun, patch_dim)
    return grid


def render_image(
    identity: Identity, noise_sigma: float, seed: int, rows: int = 12, cols: int = 4, patch_dim: int = 32
) -> ImageSpec:
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    grid = clean_grid(identity, rows, cols, patch_dim)
    if noise_sigma > 0:
        grid = grid + np.random.default_rng(seed).normal(0.0, noise_sigma, size=grid.shape)
    return ImageSpec(identity.id, grid, seed)


# ------------------------------------------------------------------- the dataset


@dataclass
class Dataset:
    config: CorpusConfig
    seed: int
    lexicon: Lexicon
    identities: list[Identity]
    images: list[ImageSpec]
    captions: list[CaptionRecord]

    @property
    def n_classes(self) -> int:
        return len(self.identities)

    def image(self, image_id: int) -> ImageSpec:
        return self.images[image_id]

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        meta = {"seed": self.seed, "corpus": asdict(self.config), "lexicon": self.lexicon.to_dict()}
        (out / "corpus.json").write_text(json.dumps(meta, indent=1) + "\n")
        (out / "identities.json").write_text(
            json.dumps([i.to_dict() for i in self.identities]) + "\n"
        )
        with open(out / "captions.jsonl", "w") as fh:
            for c in self.captions:
                rec = {"caption_id": c.caption_id, "identity_id": c.identity_id, "image_id": c.image_id, "text": c.text}
                fh.write(json.dumps(rec) + "\n")
        images = [
            {"image_id": im.image_id, "identity_id": im.identity_id, "noise_seed": im.noise_seed,
             "grid": im.patch_grid.tolist()}
            for im in self.images
        ]
        (out / "images.json").write_text(json.dumps(images) + "\n")

    @classmethod
    def load(cls, in_dir: str | Path) -> "Dataset":
        src = Path(in_dir)
        meta = json.loads((src / "corpus.json").read_text())
        config = CorpusConfig(**meta["corpus"])
        lexicon = Lexicon.from_dict(meta["lexicon"])
        identities = [Identity.from_dict(d) for d in json.loads((src / "identities.json").read_text())]
        images = [
            ImageSpec(d["identity_id"], np.asarray(d["grid"], dtype=float), d["noise_seed"], d["image_id"])
            for d in json.loads((src / "images.json").read_text())
        ]
        captions = []
        with open(src / "captions.jsonl") as fh:
            for line in fh:
                d = json.loads(line)
                captions.append(
                    CaptionRecord(d["caption_id"], d["identity_id"], d["image_id"], d["text"],
                                  parse_description(d["text"], lexicon))
                )
        return cls(config, meta["seed"], lexicon, identities, images, captions)


def _sample_identity(rng, lexicon: Lexicon, config: CorpusConfig, ident: int, used: set) -> Identity:
    body_items = [i for i in ITEMS if i != "gender"]
    n_items = int(rng.integers(config.min_items, config.max_items + 1))
    items = ["gender"] + sorted(rng.choice(body_items, size=n_items, replace=False).tolist(), key=ITEM_ORDER.get)
    attrs = []
    for item in items:
        nouns = [n for n in lexicon.nouns_by_item[item] if (item, n) not in used]
        if not nouns:
            raise ConfigError(f"lexicon too small for distinct attributes on item {item!r}")
        noun = nouns[int(rng.integers(len(nouns)))]
        pool = lexicon.adjectives_by_item.get(item, [])
        n_adj = min(len(pool), int(rng.choice(3, p=[0.2, 0.5, 0.3])))
        adjs = tuple(rng.choice(pool, size=n_adj, replace=False).tolist()) if n_adj else ()
        attrs.append(AttributeValue(item, noun, adjs))
    return Identity(ident, tuple(attrs))


def generate_dataset(config: CorpusConfig, seed: int) -> Dataset:
    """Build a deterministic corpus for ``(config, seed)``."""
    config.validate()
    lexicon = Lexicon.load(config.lexicon_path)
    rng = np.random.default_rng(seed)

    identities: list[Identity] = []
    seen = set()
    used: set = set()
    while len(identities) < config.n_identities:
        ident = _sample_identity(rng, lexicon, config, len(identities), used)
        sig = frozenset(a.key for a in ident.attributes)
        if sig in seen:
            continue
        seen.add(sig)
        if config.distinct_attributes:
            used.update((a.item, a.noun) for a in ident.attributes)
        identities.append(ident)

    images, captions = [], []
    for ident in identities:
        for _ in range(config.images_per_identity):
            image_id = len(images)
            spec = render_image(ident, config.noise_sigma, int(rng.integers(2**31)),
                                config.grid_rows, config.grid_cols, config.patch_dim)
            spec.image_id = image_id
            images.append(spec)
            for _ in range(config.captions_per_image):
                cap_seed = int(rng.integers(2**31))
                size = int(rng.integers(2, len(ident.attributes) + 1))
                text = render_caption(ident, size, cap_seed, lexicon)
                captions.append(CaptionRecord(
                    len(captions), ident.id, image_id, text, parse_description(text, lexicon),
                    tuple(choose_subset(ident, size, cap_seed)),
                ))
    return Dataset(config, seed, lexicon, identities, images, captions)
