"""Template-generated editing-text corpus for localizer training.

Crossing attribute phrases with modifiers and sentence frames yields a
labelled corpus of roughly 10,000 texts at full scale without any manual
annotation.  A small deterministic slice of two-attribute sentences gives
the multi-label case real coverage.
"""

from __future__ import annotations

import json
from pathlib import Path

from .localizer import LabelSet

SENTENCE_FRAMES = [
    "make the {attr} {mod}",
    "please make the {attr} {mod}",
    "i want the {attr} {mod}",
    "could you make the {attr} a bit {mod}",
    "{mod} {attr} please",
    "give the character a {mod} {attr}",
    "the {attr} should be {mod}",
]

MODIFIERS = [
    "bigger", "smaller", "wider", "narrower", "longer", "shorter",
    "higher", "lower", "darker", "lighter", "sharper", "softer",
]

DUAL_FRAME = "make the {attr_a} {mod_a} and the {attr_b} {mod_b}"


def build_corpus(label_set: LabelSet, dual_count: int = 200) -> list[tuple[str, set[str]]]:
    """Every (label phrase, modifier, frame) combination plus dual sentences.

    Fully deterministic: no randomness, order fixed by the label set.
    """
    corpus: list[tuple[str, set[str]]] = []
    for label in label_set.labels:
        attr = label_set.phrases_for(label)[0]
        for mod in MODIFIERS:
            for frame in SENTENCE_FRAMES:
                corpus.append((frame.format(attr=attr, mod=mod), {label}))

    n = len(label_set.labels)
    for k in range(dual_count):
        a = label_set.labels[(k * 7) % n]
        b = label_set.labels[(k * 13 + 1) % n]
        if a == b:
            b = label_set.labels[((k * 13 + 2) % n)]
            if a == b:
                continue
        text = DUAL_FRAME.format(
            attr_a=label_set.phrases_for(a)[0],
            mod_a=MODIFIERS[k % len(MODIFIERS)],
            attr_b=label_set.phrases_for(b)[0],
            mod_b=MODIFIERS[(k + 5) % len(MODIFIERS)],
        )
        corpus.append((text, {a, b}))
    return corpus


def split_corpus(
    corpus: list[tuple[str, set[str]]], holdout_fraction: float = 0.2, seed: int = 0
) -> tuple[list[tuple[str, set[str]]], list[tuple[str, set[str]]]]:
    """Deterministic shuffled train/holdout split."""
    import numpy as np

    order = np.random.default_rng(seed).permutation(len(corpus))
    n_holdout = int(len(corpus) * holdout_fraction)
    holdout = [corpus[i] for i in order[:n_holdout]]
    train = [corpus[i] for i in order[n_holdout:]]
    return train, holdout


def save_corpus(corpus: list[tuple[str, set[str]]], path: str | Path) -> None:
    """JSON lines, one {text, labels} object per line."""
    with open(path, "w") as fh:
        for text, labels in corpus:
            fh.write(json.dumps({"text": text, "labels": sorted(labels)}) + "\n")


def load_corpus(path: str | Path) -> list[tuple[str, set[str]]]:
    corpus = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            corpus.append((doc["text"], set(doc["labels"])))
    return corpus
