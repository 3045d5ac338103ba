"""Seeded synthetic data: digit glyphs, a keyword sequence task, and a
context-rule tagging task.

The text tasks plant a recoverable signal (class keywords, trigger tokens)
among distractors, plus an optional spurious token that correlates with the
label in training but not at eval time. That shortcut is what gives
regularizers something to fix at tiny training sizes.

Token id layout: 0 = CLS, 1 = PAD, 2.. = task-specific ranges documented per
generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .model import Batch

CLS_ID = 0
PAD_ID = 1

# sequence task ranges
SEQ_KEYWORD_BASE = 4  # class c keyword token = 4 + c
SEQ_SPURIOUS_BASE = 20  # class c spurious token = 20 + c
SEQ_DISTRACTOR_BASE = 40

# token task ranges
TAG_TRIGGER_BASE = 4  # trigger for tag t (t >= 1) = 4 + t
TAG_DISTRACTOR_BASE = 40


@dataclass
class DigitData:
    """Noisy/clean 28x28 glyph pairs, flattened to 784."""

    noisy: np.ndarray  # [n, 784] in [0, 1]
    clean: np.ndarray  # [n, 784] in [0, 1]
    labels: np.ndarray  # [n] digit class


@dataclass
class Split:
    ids: np.ndarray  # int [n, s]
    labels: np.ndarray  # [n] or [n, s]
    pad_mask: np.ndarray  # bool [n, s]
    label_mask: np.ndarray | None = None  # token tasks only

    def __len__(self) -> int:
        return self.ids.shape[0]


@dataclass
class TaskData:
    task: str  # sequence-classify | token-tag
    num_classes: int
    train: Split
    dev: Split
    test: Split


# ---------------------------------------------------------------------------
# digit glyphs

# seven-segment corner points in a unit box: top/middle/bottom x left/right
_PTS = {"tl": (0.22, 0.16), "tr": (0.78, 0.16), "ml": (0.22, 0.50),
        "mr": (0.78, 0.50), "bl": (0.22, 0.84), "br": (0.78, 0.84)}
_SEGS = {"a": ("tl", "tr"), "b": ("tr", "mr"), "c": ("mr", "br"),
         "d": ("bl", "br"), "e": ("ml", "bl"), "f": ("tl", "ml"),
         "g": ("ml", "mr")}
_DIGIT_SEGS = ["abcdef", "bc", "abged", "abgcd", "fgbc",
               "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


def _rasterize_glyph(digit: int, gen: np.random.Generator,
                     size: int = 28) -> np.ndarray:
    """One jittered glyph in [0, 1]; jitter varies shift, slant, thickness."""
    shift = gen.uniform(-0.08, 0.08, size=2)
    slant = gen.uniform(-0.15, 0.15)
    thickness = gen.uniform(0.045, 0.085)
    coords = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(coords, coords)  # px: [y, x] layout
    # undo the slant/shift to sample the canonical glyph
    gx = px - shift[0] - slant * (0.5 - py)
    gy = py - shift[1]
    img = np.zeros((size, size))
    for seg in _DIGIT_SEGS[digit]:
        (x0, y0), (x1, y1) = _PTS[_SEGS[seg][0]], _PTS[_SEGS[seg][1]]
        dx, dy = x1 - x0, y1 - y0
        length_sq = dx * dx + dy * dy
        t = np.clip(((gx - x0) * dx + (gy - y0) * dy) / length_sq, 0.0, 1.0)
        dist = np.hypot(gx - (x0 + t * dx), gy - (y0 + t * dy))
        # soft edge: full ink inside the stroke, linear falloff outside
        ink = np.clip(1.0 - (dist - thickness) / 0.02, 0.0, 1.0)
        img = np.maximum(img, ink)
    return img


def generate_digits(n: int, noise_sigma: float, seed: int) -> DigitData:
    """Procedural digit images with additive Gaussian noise, clamped."""
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {noise_sigma}")
    gen = np.random.default_rng(
        rng.derive_seed(seed, 0, 0, 0, rng.DATA_ORDER))
    labels = gen.integers(0, 10, size=n)
    clean = np.stack([_rasterize_glyph(int(d), gen).ravel() for d in labels])
    if noise_sigma == 0:
        noisy = clean.copy()
    else:
        noisy = np.clip(clean + noise_sigma * gen.standard_normal(clean.shape),
                        0.0, 1.0)
    return DigitData(noisy=noisy, clean=clean, labels=labels)


# ---------------------------------------------------------------------------
# sequence classification

def _seq_split(n: int, vocab: int, seq_len: int, num_classes: int,
               n_keywords: int, spurious_strength: float,
               gen: np.random.Generator) -> Split:
    ids = gen.integers(SEQ_DISTRACTOR_BASE, vocab, size=(n, seq_len))
    ids[:, 0] = CLS_ID
    labels = gen.integers(0, num_classes, size=n)
    slots = seq_len - 1
    for i in range(n):
        c = int(labels[i])
        pos = 1 + gen.choice(slots, size=min(n_keywords + 1, slots),
                             replace=False)
        ids[i, pos[:n_keywords]] = SEQ_KEYWORD_BASE + c
        if gen.random() < spurious_strength:
            ids[i, pos[n_keywords]] = SEQ_SPURIOUS_BASE + c
    return Split(ids=ids, labels=labels,
                 pad_mask=np.ones((n, seq_len), dtype=bool))


def generate_seq_task(n_per_split, vocab: int = 256, seq_len: int = 16,
                      num_classes: int = 2, seed: int = 0,
                      n_keywords: int = 2,
                      spurious_strength_train: float = 0.9,
                      spurious_strength_eval: float = 0.0) -> TaskData:
    """Class keywords + distractors, with a train-only spurious token.

    n_per_split is (train, dev, test). The spurious token tracks the label
    at the configured training strength and disappears at eval, so memorizing
    it hurts; the keywords transfer.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if SEQ_SPURIOUS_BASE + num_classes > SEQ_DISTRACTOR_BASE:
        raise ValueError(f"too many classes for the token layout")
    n_train, n_dev, n_test = n_per_split
    splits = []
    for idx, (n, strength) in enumerate([
            (n_train, spurious_strength_train),
            (n_dev, spurious_strength_eval),
            (n_test, spurious_strength_eval)]):
        gen = np.random.default_rng(
            rng.derive_seed(seed, 0, 0, idx, rng.DATA_ORDER))
        splits.append(_seq_split(n, vocab, seq_len, num_classes, n_keywords,
                                 strength, gen))
    return TaskData("sequence-classify", num_classes, *splits)


def keyword_rule_accuracy(split: Split, num_classes: int) -> float:
    """Oracle: predict the class whose keyword occurs most often."""
    counts = np.stack([(split.ids == SEQ_KEYWORD_BASE + c).sum(axis=1)
                       for c in range(num_classes)], axis=1)
    return float((counts.argmax(axis=1) == split.labels).mean())


# ---------------------------------------------------------------------------
# token tagging

def _tag_split(n: int, vocab: int, seq_len: int, num_tags: int,
               trigger_prob: float, gen: np.random.Generator) -> Split:
    ids = gen.integers(TAG_DISTRACTOR_BASE, vocab, size=(n, seq_len))
    ids[:, 0] = CLS_ID
    lengths = gen.integers(max(seq_len // 2, 2), seq_len + 1, size=n)
    trigger = gen.random(size=(n, seq_len)) < trigger_prob
    which = gen.integers(1, num_tags, size=(n, seq_len))
    ids = np.where(trigger, TAG_TRIGGER_BASE + which, ids)
    ids[:, 0] = CLS_ID
    labels = apply_tag_rule(ids, num_tags)
    pad = np.arange(seq_len)[None, :] < lengths[:, None]
    ids[~pad] = PAD_ID
    labels[~pad] = 0
    label_mask = pad.copy()
    label_mask[:, 0] = False  # CLS carries no tag
    return Split(ids=ids, labels=labels, pad_mask=pad, label_mask=label_mask)


def apply_tag_rule(ids: np.ndarray, num_tags: int) -> np.ndarray:
    """The generating rule: a trigger token tags the following position."""
    prev = ids[:, :-1]
    in_range = (prev > TAG_TRIGGER_BASE) & (prev < TAG_TRIGGER_BASE + num_tags)
    labels = np.zeros_like(ids)
    labels[:, 1:] = np.where(in_range, prev - TAG_TRIGGER_BASE, 0)
    return labels


def generate_token_task(n_per_split, vocab: int = 256, seq_len: int = 16,
                        num_tags: int = 3, seed: int = 0,
                        trigger_prob: float = 0.2) -> TaskData:
    """Tag t at position i iff position i-1 holds trigger token 4+t."""
    if num_tags < 2:
        raise ValueError(f"need at least 2 tags, got {num_tags}")
    if TAG_TRIGGER_BASE + num_tags > TAG_DISTRACTOR_BASE:
        raise ValueError("too many tags for the token layout")
    splits = []
    for idx, n in enumerate(n_per_split):
        gen = np.random.default_rng(
            rng.derive_seed(seed, 1, 0, idx, rng.DATA_ORDER))
        splits.append(_tag_split(n, vocab, seq_len, num_tags, trigger_prob,
                                 gen))
    return TaskData("token-tag", num_tags, *splits)


# ---------------------------------------------------------------------------
# batching

def iter_batches(split: Split, batch_size: int, seed: int, epoch: int,
                 shuffle: bool = True):
    """Deterministic epoch order derived from (seed, epoch)."""
    n = len(split)
    order = np.arange(n)
    if shuffle:
        gen = np.random.default_rng(
            rng.derive_seed(seed, epoch, 0, 0, rng.DATA_ORDER))
        gen.shuffle(order)
    for start in range(0, n, batch_size):
        sel = order[start:start + batch_size]
        yield Batch(
            ids=split.ids[sel],
            labels=split.labels[sel],
            pad_mask=split.pad_mask[sel],
            label_mask=None if split.label_mask is None
            else split.label_mask[sel])
