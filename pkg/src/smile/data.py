"""Synthetic two-domain text-line corpus generation and its on-disk format.

Characters are procedurally drawn 8x8 bitmaps laid out on a fixed grid, so a
line of up to L_max characters is an 8 x (8*L_max) grayscale image.  A
configurable pixel-level shift (shear, dimming, background lift, inversion,
salt-and-pepper) manufactures the target domain.  Everything is a pure
function of integer seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .binio import Reader
from .errors import ContractError, FormatError

GLYPH_H = 8
GLYPH_W = 8

SOURCE = 0
TARGET = 1
_DOMAIN_NAMES = {SOURCE: "source", TARGET: "target"}

MAGIC = b"SMCP"
VERSION = 1


class VocabSpec:
    """Character set plus the three control tokens appended after it.

    Indices 0..n-1 are the characters in order; GO, EOS, PAD take the last
    three slots, so the total class count is K = n + 3.
    """

    def __init__(self, characters: str):
        if len(characters) == 0:
            raise ContractError("vocab: need at least one character")
        if len(set(characters)) != len(characters):
            raise ContractError("vocab: duplicate characters")
        self.characters = characters
        self.n_chars = len(characters)
        self.K = self.n_chars + 3
        self.GO = self.K - 3
        self.EOS = self.K - 2
        self.PAD = self.K - 1
        self._index = {c: i for i, c in enumerate(characters)}

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self._index[c] for c in text)
        except KeyError as e:
            raise ContractError(f"vocab: unknown character {e.args[0]!r}") from None

    def decode(self, indices) -> str:
        out = []
        for i in indices:
            if not 0 <= i < self.n_chars:
                raise ContractError(f"vocab: index {i} is not a character index")
            out.append(self.characters[i])
        return "".join(out)

    def __eq__(self, other):
        return isinstance(other, VocabSpec) and self.characters == other.characters

    def __repr__(self):
        return f"VocabSpec({self.characters!r})"


def make_templates(vocab: VocabSpec, seed: int) -> np.ndarray:
    """Draw one 8x8 binary bitmap per character, shape [n_chars, 8, 8].

    Each glyph is a 3x3 block code upscaled 2x into rows 0-5, columns 0-5,
    plus a solid 2-row base band (rows 6-7, columns 0-5) shared by every
    character.  The band marks glyph presence so string length survives
    noise and background shifts; the 2x2 blocks keep the identity code
    legible under single-pixel corruption and one-pixel row shear, and the
    two blank right columns absorb shear spill.  Codes are drawn with an
    even number of lit cells (2, 4, or 6), so any two distinct codes differ
    in at least two blocks.  Each bitmap keeps between 8 and 40 lit pixels
    (here 20, 28, or 36) and no two bitmaps coincide; rejected draws retry
    on the same per-character stream.
    """
    templates = np.zeros((vocab.n_chars, GLYPH_H, GLYPH_W))
    seen: set[bytes] = set()
    for c in range(vocab.n_chars):
        rng = np.random.default_rng([seed, c])
        while True:
            code = (rng.random((3, 3)) < 0.5)
            if int(code.sum()) not in (2, 4, 6):
                continue
            key = code.tobytes()
            if key not in seen:
                break
        seen.add(key)
        templates[c, :6, :6] = np.kron(code.astype(np.float64), np.ones((2, 2)))
        templates[c, 6:, :6] = 1.0
    return templates


@dataclass(frozen=True)
class DomainConfig:
    """Pixel-level target-domain shift, applied in the listed order."""

    salt_pepper_prob: float = 0.0
    invert: bool = False
    intensity_scale: float = 1.0
    horizontal_shear: int = 0
    background_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.salt_pepper_prob <= 1.0:
            raise ContractError(f"salt_pepper_prob {self.salt_pepper_prob} not in [0,1]")
        if not 0.0 < self.intensity_scale <= 1.0:
            raise ContractError(f"intensity_scale {self.intensity_scale} not in (0,1]")
        if self.horizontal_shear not in (0, 1, 2):
            raise ContractError(f"horizontal_shear {self.horizontal_shear} not in {{0,1,2}}")
        if not 0.0 <= self.background_level < 1.0:
            raise ContractError(f"background_level {self.background_level} not in [0,1)")


@dataclass
class TextImage:
    pixels: np.ndarray                 # [8, 8*L_max] grayscale in [0,1]
    label: tuple[int, ...] | None      # character indices, None = unlabeled
    domain_tag: int                    # SOURCE or TARGET

    def __eq__(self, other):
        return (isinstance(other, TextImage)
                and self.domain_tag == other.domain_tag
                and self.label == other.label
                and np.array_equal(self.pixels, other.pixels))


@dataclass
class Corpus:
    vocab: VocabSpec
    images: list[TextImage]
    seed: int | None = None
    _pixel_cache: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.images)

    def pixel_array(self) -> np.ndarray:
        """All images stacked as [N, 8, W]."""
        if self._pixel_cache is None:
            self._pixel_cache = np.stack([im.pixels for im in self.images])
        return self._pixel_cache

    def labels(self) -> list[tuple[int, ...] | None]:
        return [im.label for im in self.images]

    @property
    def labeled(self) -> bool:
        return all(im.label is not None for im in self.images)

    def without_labels(self) -> "Corpus":
        stripped = [TextImage(im.pixels, None, im.domain_tag) for im in self.images]
        return Corpus(self.vocab, stripped, self.seed)

    def __eq__(self, other):
        return (isinstance(other, Corpus)
                and self.vocab == other.vocab
                and self.images == other.images)


def render_string(label, vocab: VocabSpec, templates: np.ndarray,
                  l_max: int) -> TextImage:
    """Lay the characters' bitmaps left to right, background-padded to L_max."""
    label = tuple(int(i) for i in label)
    if not 1 <= len(label) <= l_max:
        raise ContractError(
            f"render: label length {len(label)} outside [1, {l_max}]")
    for i in label:
        if not 0 <= i < vocab.n_chars:
            raise ContractError(f"render: index {i} is not a character index")
    pixels = np.zeros((GLYPH_H, GLYPH_W * l_max))
    for pos, i in enumerate(label):
        pixels[:, pos * GLYPH_W:(pos + 1) * GLYPH_W] = templates[i]
    return TextImage(pixels, label, SOURCE)


def _quantize(pixels: np.ndarray) -> np.ndarray:
    # snap to the 8-bit grid the file format stores, so save/load is exact
    return np.round(pixels * 255.0) / 255.0


def apply_domain_shift(img: TextImage, cfg: DomainConfig,
                       sample_seed: int) -> TextImage:
    """Shear, dim, lift, optionally invert, then speckle one image.

    The noise stream is a pure function of (cfg.seed, sample_seed); the label
    rides along untouched.
    """
    rng = np.random.default_rng([cfg.seed, sample_seed])
    px = img.pixels.copy()
    h, w = px.shape
    if cfg.horizontal_shear > 0:
        sheared = np.zeros_like(px)
        for y in range(h):
            shift = round(y * cfg.horizontal_shear / (h - 1))
            if shift == 0:
                sheared[y] = px[y]
            else:
                sheared[y, shift:] = px[y, :w - shift]
        px = sheared
    px = px * cfg.intensity_scale
    bg = cfg.background_level
    px = bg + (1.0 - bg) * px
    if cfg.invert:
        px = 1.0 - px
    if cfg.salt_pepper_prob > 0.0:
        hit = rng.random(px.shape) < cfg.salt_pepper_prob
        salt = rng.random(px.shape) < 0.5
        px = np.where(hit, np.where(salt, 1.0, 0.0), px)
    px = np.clip(px, 0.0, 1.0)
    return TextImage(_quantize(px), img.label, TARGET)


def generate_corpus(vocab: VocabSpec, templates: np.ndarray, count: int,
                    length_range: tuple[int, int], seed: int,
                    domain_cfg: DomainConfig | None = None,
                    char_dist: str = "uniform") -> Corpus:
    """Draw `count` labeled lines; shift them into the target domain if asked.

    Sample i is a pure function of (seed, i), so regeneration and parallel
    generation agree.  char_dist is "uniform" or "zipf" (exponent 1.0, rank
    by character order).
    """
    if count < 1:
        raise ContractError(f"generate_corpus: count {count} < 1")
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ContractError(f"generate_corpus: bad length range {length_range}")
    if char_dist == "uniform":
        probs = None
    elif char_dist == "zipf":
        ranks = np.arange(1, vocab.n_chars + 1, dtype=np.float64)
        probs = (1.0 / ranks) / np.sum(1.0 / ranks)
    else:
        raise ContractError(f"generate_corpus: unknown char_dist {char_dist!r}")
    images = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        length = int(rng.integers(lo, hi + 1))
        if probs is None:
            label = tuple(int(c) for c in rng.integers(0, vocab.n_chars, length))
        else:
            label = tuple(int(c) for c in rng.choice(vocab.n_chars, length, p=probs))
        img = render_string(label, vocab, templates, hi)
        img.pixels = _quantize(img.pixels)
        if domain_cfg is not None:
            img = apply_domain_shift(img, domain_cfg, i)
        images.append(img)
    return Corpus(vocab, images, seed)


# ---------------------------------------------------------------------------
# on-disk format

def vocab_block(vocab: VocabSpec) -> bytes:
    """u32 character count, then each character as a u32 code point."""
    parts = [struct.pack("<I", vocab.n_chars)]
    parts += [struct.pack("<I", ord(c)) for c in vocab.characters]
    return b"".join(parts)


def read_vocab_block(r: Reader) -> VocabSpec:
    n_chars = r.u32("vocab size")
    chars = []
    for i in range(n_chars):
        code = r.u32(f"vocab symbol {i}")
        try:
            chars.append(chr(code))
        except ValueError:
            raise FormatError(
                f"{r.path}: invalid code point {code} at offset {r.off - 4}"
            ) from None
    return VocabSpec("".join(chars))


def save_corpus(corpus: Corpus, path: str):
    if not corpus.images:
        raise ContractError("save_corpus: empty corpus")
    h, w = corpus.images[0].pixels.shape
    parts = [MAGIC, struct.pack("<IIII", VERSION, h, w, len(corpus.images)),
             vocab_block(corpus.vocab)]
    for im in corpus.images:
        if im.pixels.shape != (h, w):
            raise ContractError("save_corpus: images disagree on dimensions")
        label = im.label or ()
        if len(label) > 255:
            raise ContractError("save_corpus: label too long for format")
        parts.append(struct.pack("<BB", im.domain_tag, len(label)))
        parts.append(bytes(label))
        quantized = np.round(im.pixels * 255.0)
        if quantized.min() < 0 or quantized.max() > 255:
            raise ContractError("save_corpus: pixel outside [0,1]")
        parts.append(quantized.astype(np.uint8).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_corpus(path: str) -> Corpus:
    try:
        with open(path, "rb") as f:
            r = Reader(f.read(), path)
    except OSError as e:
        raise FormatError(f"cannot read corpus {path}: {e}") from None
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    h = r.u32("height")
    w = r.u32("width")
    count = r.u32("record count")
    vocab = read_vocab_block(r)
    images = []
    for i in range(count):
        tag = r.u8(f"record {i} domain tag")
        if tag not in _DOMAIN_NAMES:
            raise FormatError(
                f"{path}: bad domain tag {tag} at offset {r.off - 1}")
        label_len = r.u8(f"record {i} label length")
        if label_len:
            raw = r.take(label_len, f"record {i} label")
            label = tuple(raw)
            for idx in label:
                if idx >= vocab.n_chars:
                    raise FormatError(
                        f"{path}: label index {idx} out of vocab in record {i}")
        else:
            label = None
        raw = r.take(h * w, f"record {i} pixels")
        pixels = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
        pixels = (pixels / 255.0).reshape(h, w)
        images.append(TextImage(pixels, label, tag))
    r.expect_end()
    return Corpus(vocab, images, None)


# ---------------------------------------------------------------------------
# the stock desk-scale benchmark

GLYPH12_CHARS = "ABCDEFGHIJKL"
GLYPH12_LENGTHS = (1, 4)
GLYPH12_SHIFT = dict(salt_pepper_prob=0.15, invert=False, intensity_scale=0.7,
                     horizontal_shear=1, background_level=0.1)


def build_glyph12(seed: int) -> dict[str, Corpus]:
    """Generate the stock 12-character benchmark.

    Returns five corpora: clean labeled source_train (5000) and source_val
    (1000); shifted target_train (5000, labels stripped); target_labeled,
    the same 5000 images with labels kept, for supervised-target runs;
    and the sealed shifted labeled target_test (1000).
    """
    vocab = VocabSpec(GLYPH12_CHARS)
    templates = make_templates(vocab, seed)
    shift = DomainConfig(seed=seed + 40, **GLYPH12_SHIFT)
    source_train = generate_corpus(vocab, templates, 5000, GLYPH12_LENGTHS,
                                   seed=seed + 1)
    source_val = generate_corpus(vocab, templates, 1000, GLYPH12_LENGTHS,
                                 seed=seed + 2)
    target_labeled = generate_corpus(vocab, templates, 5000, GLYPH12_LENGTHS,
                                     seed=seed + 3, domain_cfg=shift)
    target_train = target_labeled.without_labels()
    target_test = generate_corpus(vocab, templates, 1000, GLYPH12_LENGTHS,
                                  seed=seed + 4, domain_cfg=shift)
    return {
        "source_train": source_train,
        "source_val": source_val,
        "target_train": target_train,
        "target_labeled": target_labeled,
        "target_test": target_test,
    }
