"""Synthetic image+text dataset with controllable modality informativeness.

Classes are defined by (pattern, keyword) pairs. A modality's informativeness
sets how many classes it identifies uniquely: the remaining classes share a
pattern (or keyword) pairwise, so no lookup rule can separate them from that
modality alone. Pattern-unique and keyword-unique classes are complementary
subsets, which makes the fused pair fully identifying whenever the two
informativeness fractions cover all classes.

The generator certifies this structure before any training run by scoring
exhaustive lookup-table classifiers over its own assignment tables.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoders import PAD_ID, UNK_ID, ImageBatch, TextBatch

_WS = re.compile(r"\s+")


class DatasetError(ValueError):
    pass


class DatasetIOError(IOError):
    pass


@dataclass
class SyntheticSpec:
    n_classes: int = 4
    samples_per_class: int = 60
    image_size: int = 32
    patch_size: int = 8
    channels: int = 1
    vocab_size: int = 32
    sentence_len: tuple = (4, 8)
    image_informativeness: float = 0.5
    text_informativeness: float = 0.5
    noise_level: float = 0.05
    seed: int = 0
    split_ratios: tuple = (0.6, 0.1, 0.3)

    def validate(self):
        problems = []
        if self.n_classes < 2:
            problems.append(f"n_classes must be >= 2, got {self.n_classes}")
        if self.samples_per_class < 1:
            problems.append("samples_per_class must be >= 1")
        if self.image_size % self.patch_size:
            problems.append(
                f"patch_size {self.patch_size} does not divide image_size {self.image_size}")
        for name in ("image_informativeness", "text_informativeness", "noise_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                problems.append(f"{name} must be in [0, 1], got {v}")
        lo, hi = self.sentence_len
        if lo < 1 or hi < lo:
            problems.append(f"sentence_len range invalid: {self.sentence_len}")
        if abs(sum(self.split_ratios) - 1.0) > 1e-9:
            problems.append(f"split ratios must sum to 1, got {self.split_ratios}")
        # keyword ids + a handful of filler words must fit the vocabulary
        if self.vocab_size < 2 + self.n_classes + 4:
            problems.append(
                f"vocab_size {self.vocab_size} too small for {self.n_classes} keywords")
        return problems


@dataclass
class Sample:
    image: np.ndarray     # [H, W, C] float32 in [0, 1]
    tokens: list
    label: int
    split: str


@dataclass
class Dataset:
    spec: SyntheticSpec
    samples: list
    vocab: dict
    pattern_of: list      # class -> pattern id
    keyword_of: list      # class -> keyword token id
    self_check: dict = field(default_factory=dict)

    def split(self, name):
        return [s for s in self.samples if s.split == name]

    @property
    def n_classes(self):
        return self.spec.n_classes


# ---------------------------------------------------------------------------
# class/group assignment
# ---------------------------------------------------------------------------

def _assign_groups(n_classes, n_unique, from_front):
    """Group labels for one modality: ``n_unique`` classes get their own
    group, the rest share groups pairwise (a lone remainder joins the last
    pair so it can never become accidentally unique)."""
    order = list(range(n_classes)) if from_front else list(range(n_classes))[::-1]
    group = [0] * n_classes
    gid = 0
    for c in order[:n_unique]:
        group[c] = gid
        gid += 1
    shared = order[n_unique:]
    while shared:
        chunk, shared = shared[:2], shared[2:]
        if len(chunk) == 1:
            # a lone leftover joins the previous group (shared or unique)
            # so no class sneaks back to being identifiable
            group[chunk[0]] = gid - 1
            continue
        for c in chunk:
            group[c] = gid
        gid += 1
    return group


def _lookup_accuracy(groups, counts):
    """Accuracy of the best deterministic group->class lookup rule."""
    by_group = {}
    for c, g in enumerate(groups):
        by_group.setdefault(g, []).append(c)
    correct = sum(max(counts[c] for c in members) for members in by_group.values())
    return correct / sum(counts)


def _self_check(spec, pattern_groups, keyword_groups):
    counts = [spec.samples_per_class] * spec.n_classes
    pair_groups = [f"{p}/{k}" for p, k in zip(pattern_groups, keyword_groups)]
    image_acc = _lookup_accuracy(pattern_groups, counts)
    text_acc = _lookup_accuracy(keyword_groups, counts)
    both_acc = _lookup_accuracy(pair_groups, counts)

    img_unrecoverable = sum(pattern_groups.count(g) > 1 for g in pattern_groups)
    txt_unrecoverable = sum(keyword_groups.count(g) > 1 for g in keyword_groups)
    n = spec.n_classes
    if img_unrecoverable < (1.0 - spec.image_informativeness) * n - 1e-9:
        raise DatasetError("generator self-check failed: image modality too informative")
    if txt_unrecoverable < (1.0 - spec.text_informativeness) * n - 1e-9:
        raise DatasetError("generator self-check failed: text modality too informative")
    return {
        "image_rule_accuracy": image_acc,
        "text_rule_accuracy": text_acc,
        "bimodal_rule_accuracy": both_acc,
        "image_unrecoverable_classes": int(img_unrecoverable),
        "text_unrecoverable_classes": int(txt_unrecoverable),
    }


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_pattern(pattern_id, size):
    """Deterministic binary pattern on a size x size grid."""
    i, j = np.mgrid[0:size, 0:size]
    variant = pattern_id % 8
    period = max(2, size // 4 // (1 + pattern_id // 8))
    half = period // 2
    if variant == 0:
        return ((i // half) % 2).astype(np.float64)
    if variant == 1:
        return ((j // half) % 2).astype(np.float64)
    if variant == 2:
        return (((i // half) + (j // half)) % 2).astype(np.float64)
    if variant == 3:
        return (((i + j) // half) % 2).astype(np.float64)
    if variant == 4:
        q = size // 4
        return ((i >= q) & (i < size - q) & (j >= q) & (j < size - q)).astype(np.float64)
    if variant == 5:
        r = np.sqrt((i - size / 2 + 0.5) ** 2 + (j - size / 2 + 0.5) ** 2)
        return ((r > size / 6) & (r < size / 3)).astype(np.float64)
    if variant == 6:
        third = size // 3
        return ((abs(i - size // 2) < third // 2) | (abs(j - size // 2) < third // 2)
                ).astype(np.float64)
    return (((i % period) < half // 2 + 1) & ((j % period) < half // 2 + 1)
            ).astype(np.float64)


def _render_sample_image(pattern_id, spec, rng):
    base = render_pattern(pattern_id, spec.image_size)
    fg = rng.uniform(0.75, 1.0)
    bg = rng.uniform(0.05, 0.2)
    img = bg + (fg - bg) * base
    if spec.noise_level > 0:
        corrupt = rng.random(img.shape) < spec.noise_level
        img = np.where(corrupt, rng.random(img.shape), img)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return np.repeat(img[:, :, None], spec.channels, axis=2)


def _sample_tokens(keyword_id, spec, vocab_lo, vocab_hi, rng):
    lo, hi = spec.sentence_len
    length = int(rng.integers(lo, hi + 1))
    tokens = list(rng.integers(vocab_lo, vocab_hi, length))
    tokens[int(rng.integers(0, length))] = keyword_id
    if spec.noise_level > 0:
        for t in range(length):
            if rng.random() < spec.noise_level:
                tokens[t] = int(rng.integers(2, vocab_hi))
    return [int(t) for t in tokens]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def build_vocab(spec, keyword_groups):
    n_keywords = len(set(keyword_groups))
    vocab = {"<pad>": PAD_ID, "<unk>": UNK_ID}
    for k in range(n_keywords):
        vocab[f"kw{k}"] = 2 + k
    filler_lo = 2 + n_keywords
    for w in range(spec.vocab_size - filler_lo):
        vocab[f"w{w}"] = filler_lo + w
    return vocab, filler_lo


def generate(spec: SyntheticSpec) -> Dataset:
    problems = spec.validate()
    if problems:
        raise DatasetError("invalid synthetic spec: " + "; ".join(problems))
    n = spec.n_classes
    img_unique = int(np.floor(spec.image_informativeness * n))
    txt_unique = int(np.floor(spec.text_informativeness * n))
    pattern_groups = _assign_groups(n, img_unique, from_front=True)
    keyword_groups = _assign_groups(n, txt_unique, from_front=False)
    self_check = _self_check(spec, pattern_groups, keyword_groups)

    vocab, filler_lo = build_vocab(spec, keyword_groups)
    keyword_ids = {g: 2 + i for i, g in enumerate(sorted(set(keyword_groups)))}
    keyword_of = [keyword_ids[g] for g in keyword_groups]

    train_r, val_r, _test_r = spec.split_ratios
    per = spec.samples_per_class
    n_train = int(round(train_r * per))
    n_val = int(round(val_r * per))

    samples = []
    for label in range(n):
        for i in range(per):
            rng = np.random.default_rng([spec.seed, label, i])
            image = _render_sample_image(pattern_groups[label], spec, rng)
            tokens = _sample_tokens(keyword_of[label], spec, filler_lo,
                                    spec.vocab_size, rng)
            split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
            samples.append(Sample(image=image, tokens=tokens, label=label, split=split))

    return Dataset(spec=spec, samples=samples, vocab=vocab,
                   pattern_of=pattern_groups, keyword_of=keyword_of,
                   self_check=self_check)


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def preprocess_text(raw: str) -> str:
    """Lowercase and collapse whitespace runs; idempotent."""
    return _WS.sub(" ", raw.lower()).strip()


def _resize_bilinear(img, out_h, out_w):
    H, W, _C = img.shape
    rows = np.linspace(0.0, H - 1.0, out_h) if out_h > 1 else np.zeros(1)
    cols = np.linspace(0.0, W - 1.0, out_w) if out_w > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def preprocess_image(raw, side: int) -> np.ndarray:
    """Bilinear resize to side x side and scale pixels into [0, 1].

    Byte-scale inputs (max > 1) are divided by 255; inputs already in [0, 1]
    pass through the scaler unchanged.
    """
    img = np.asarray(raw, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or 0 in img.shape:
        raise DatasetError(f"preprocess_image: bad image shape {img.shape}")
    if img.min() < 0:
        raise DatasetError("preprocess_image: negative pixel values")
    if img.max() > 1.0:
        img = img / 255.0
    img = np.clip(img, 0.0, 1.0)
    return _resize_bilinear(img, side, side).astype(np.float32)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def make_text_batch(samples, vocab_size, min_len=3) -> TextBatch:
    width = max(min_len, max(len(s.tokens) for s in samples))
    ids = np.full((len(samples), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(samples), width), dtype=bool)
    for r, s in enumerate(samples):
        ids[r, :len(s.tokens)] = s.tokens
        mask[r, :len(s.tokens)] = True
    return TextBatch(token_ids=ids, pad_mask=mask, vocab_size=vocab_size)


def make_image_batch(samples, patch_size) -> ImageBatch:
    pixels = np.stack([s.image for s in samples]).astype(np.float32)
    return ImageBatch(pixels=pixels, patch_size=patch_size)


def labels_of(samples):
    return np.array([s.label for s in samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    records = []
    offset = 0
    with open(os.path.join(out_dir, "images.bin"), "wb") as fh:
        for s in ds.samples:
            raw = np.ascontiguousarray(s.image.astype("<f4")).tobytes()
            records.append({"tokens": s.tokens, "label": s.label, "split": s.split,
                            "offset": offset, "length": len(raw)})
            fh.write(raw)
            offset += len(raw)
    spec = asdict(ds.spec)
    spec["sentence_len"] = list(spec["sentence_len"])
    spec["split_ratios"] = list(spec["split_ratios"])
    doc = {
        "spec": spec,
        "vocab": ds.vocab,
        "pattern_of": ds.pattern_of,
        "keyword_of": ds.keyword_of,
        "self_check": ds.self_check,
        "image_shape": [ds.spec.image_size, ds.spec.image_size, ds.spec.channels],
        "samples": records,
    }
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump(doc, fh)
    # the vocabulary also ships as a standalone word -> id file
    with open(os.path.join(out_dir, "vocab.json"), "w") as fh:
        json.dump(ds.vocab, fh, indent=1)


def load_dataset(in_dir) -> Dataset:
    try:
        with open(os.path.join(in_dir, "dataset.json")) as fh:
            doc = json.load(fh)
        with open(os.path.join(in_dir, "images.bin"), "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DatasetIOError(f"unreadable dataset at {in_dir}: {exc}") from exc

    spec_doc = dict(doc["spec"])
    spec_doc["sentence_len"] = tuple(spec_doc["sentence_len"])
    spec_doc["split_ratios"] = tuple(spec_doc["split_ratios"])
    spec = SyntheticSpec(**spec_doc)
    shape = tuple(doc["image_shape"])
    expected = int(np.prod(shape)) * 4
    samples = []
    for rec in doc["samples"]:
        start, length = rec["offset"], rec["length"]
        if length != expected or start + length > len(blob):
            raise DatasetIOError(
                f"corrupt image record at offset {start}: length {length}, "
                f"file has {len(blob)} bytes")
        img = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=start)
        samples.append(Sample(image=img.reshape(shape).astype(np.float32),
                              tokens=list(rec["tokens"]), label=int(rec["label"]),
                              split=rec["split"]))
    return Dataset(spec=spec, samples=samples, vocab=dict(doc["vocab"]),
                   pattern_of=list(doc["pattern_of"]),
                   keyword_of=list(doc["keyword_of"]),
                   self_check=dict(doc["self_check"]))
