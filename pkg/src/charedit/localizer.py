"""Prompt -> semantic labels -> channel mask.

A linear multi-label classifier over hashed bag-of-token features scores
every semantic label; labels scoring above zero are predicted (the natural
decision boundary of the rank-based loss used for training).  Predicted
labels expand to a group-uniform channel mask through the schema's
label -> channel association.

Two fallbacks keep the dialogue loop alive when the classifier is unsure:
an exact-phrase lexicon lookup, then an all-ones mask flagged
"unlocalized".
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .schema import ParameterSchema, mask_from_channels

HASH_DIM = 4096
TOKEN_RE = re.compile(r"[a-z0-9]+")


class CorpusError(ValueError):
    """Raised when a training example references an unknown label."""


class TrainingDivergenceError(RuntimeError):
    """Raised when the full-batch training loss stops decreasing."""


@dataclass
class LabelSet:
    """Ordered semantic label identifiers plus lookup synonyms."""

    labels: list[str]
    synonyms: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate label identifiers")
        self.index = {name: i for i, name in enumerate(self.labels)}

    @property
    def size(self) -> int:
        return len(self.labels)

    def phrases_for(self, label: str) -> list[str]:
        return [label.replace("_", " ")] + self.synonyms.get(label, [])

    @classmethod
    def from_schema(cls, schema: ParameterSchema, synonyms: dict[str, list[str]] | None = None) -> "LabelSet":
        labels = schema.labels()
        return cls(labels=labels, synonyms=synonyms or {})


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def _token_slot(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def featurize(text: str, dim: int = HASH_DIM) -> np.ndarray:
    """L2-normalized hashed token counts; the zero vector for empty text."""
    phi = np.zeros(dim)
    for token in tokenize(text):
        phi[_token_slot(token, dim)] += 1.0
    norm = np.linalg.norm(phi)
    return phi / norm if norm > 0 else phi


def featurize_batch(texts: list[str], dim: int = HASH_DIM) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i, text in enumerate(texts):
        counts: dict[int, float] = {}
        for token in tokenize(text):
            slot = _token_slot(token, dim)
            counts[slot] = counts.get(slot, 0.0) + 1.0
        norm = np.sqrt(sum(v * v for v in counts.values()))
        for slot, v in counts.items():
            rows.append(i)
            cols.append(slot)
            vals.append(v / norm)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(texts), dim))


# -- rank-based multi-label loss ---------------------------------------------


def zlpr_loss(scores: np.ndarray, positives: set[int] | list[int]) -> tuple[float, np.ndarray]:
    """log(1 + sum_neg e^{s}) + log(1 + sum_pos e^{-s}) and its gradient.

    Stabilized with log-sum-exp so scores up to +-1e4 neither overflow nor
    lose the gradient.  Empty positive or negative sets are legal; the
    corresponding term is then log(1) = 0.
    """
    scores = np.asarray(scores, dtype=float)
    pos = np.zeros(scores.shape[0], dtype=bool)
    pos[list(positives)] = True

    s_neg = np.where(pos, -np.inf, scores)
    s_pos = np.where(pos, -scores, -np.inf)
    # log(1 + sum e^{v}) == logaddexp(0, logsumexp(v))
    lse_neg = float(np.logaddexp(0.0, logsumexp(s_neg)))
    lse_pos = float(np.logaddexp(0.0, logsumexp(s_pos)))

    grad = np.exp(s_neg - lse_neg) - np.exp(s_pos - lse_pos)
    return lse_neg + lse_pos, grad


def _zlpr_batch(scores: np.ndarray, pos_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss and per-score gradient over a (n, L) score matrix."""
    s_neg = np.where(pos_mask, -np.inf, scores)
    s_pos = np.where(pos_mask, -scores, -np.inf)
    lse_neg = np.logaddexp(0.0, logsumexp(s_neg, axis=1))
    lse_pos = np.logaddexp(0.0, logsumexp(s_pos, axis=1))
    n = scores.shape[0]
    grad = (np.exp(s_neg - lse_neg[:, None]) - np.exp(s_pos - lse_pos[:, None])) / n
    return float(np.mean(lse_neg + lse_pos)), grad


# -- model --------------------------------------------------------------------

MODEL_FORMAT_VERSION = 1


@dataclass
class LocalizerModel:
    """Linear scorer over hashed token features, thresholded at zero."""

    label_set: LabelSet
    weights: np.ndarray  # (L, H)
    bias: np.ndarray  # (L,)

    @property
    def hash_dim(self) -> int:
        return self.weights.shape[1]

    def score(self, prompt: str) -> np.ndarray:
        return self.weights @ featurize(prompt, self.hash_dim) + self.bias

    def predict(self, prompt: str) -> list[str]:
        s = self.score(prompt)
        return [self.label_set.labels[i] for i in np.flatnonzero(s > 0)]

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "labels": self.label_set.labels,
            "synonyms": self.label_set.synonyms,
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LocalizerModel":
        return cls(
            label_set=LabelSet(labels=list(doc["labels"]), synonyms=dict(doc.get("synonyms", {}))),
            weights=np.asarray(doc["weights"], dtype=float),
            bias=np.asarray(doc["bias"], dtype=float),
        )


def train(
    corpus: list[tuple[str, set[str]]],
    label_set: LabelSet,
    epochs: int = 150,
    lr: float = 0.1,
    seed: int = 0,
    hash_dim: int = HASH_DIM,
) -> tuple[LocalizerModel, list[float]]:
    """Full-batch adaptive-moment gradient descent on the rank loss.

    Per-coordinate adaptive steps (bias-corrected first/second moments):
    with L labels the loss hands each negative score a gradient of roughly
    1/L, so plain descent takes thousands of epochs to push negatives
    below the zero threshold.  Deterministic given seed.  Returns the
    model and the per-epoch loss curve (epochs + 1 entries, including the
    initial loss); raises TrainingDivergenceError when the loss turns
    non-finite or blows past twice its initial value.
    """
    if not corpus:
        raise CorpusError("empty corpus")
    for text, labels in corpus:
        unknown = set(labels) - set(label_set.labels)
        if unknown:
            raise CorpusError(f"unknown labels {sorted(unknown)} in example {text!r}")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    texts = [corpus[i][0] for i in order]
    pos_mask = np.zeros((len(corpus), label_set.size), dtype=bool)
    for row, i in enumerate(order):
        for label in corpus[i][1]:
            pos_mask[row, label_set.index[label]] = True

    phi = featurize_batch(texts, hash_dim)
    weights = np.zeros((label_set.size, hash_dim))
    bias = np.zeros(label_set.size)
    m_w = np.zeros_like(weights)
    v_w = np.zeros_like(weights)
    m_b = np.zeros_like(bias)
    v_b = np.zeros_like(bias)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    loss_curve = []
    ceiling = np.inf
    for step in range(1, epochs + 1):
        scores = phi @ weights.T + bias
        loss, grad = _zlpr_batch(scores, pos_mask)
        loss_curve.append(loss)
        if step == 1:
            ceiling = 2.0 * (loss + 1.0)
        if not np.isfinite(loss) or loss > ceiling:
            raise TrainingDivergenceError(
                f"loss {loss:.6g} diverged past {ceiling:.6g} at epoch {step - 1}"
            )
        g_w = grad.T @ phi
        g_b = grad.sum(axis=0)
        m_w = beta1 * m_w + (1 - beta1) * g_w
        v_w = beta2 * v_w + (1 - beta2) * g_w * g_w
        m_b = beta1 * m_b + (1 - beta1) * g_b
        v_b = beta2 * v_b + (1 - beta2) * g_b * g_b
        c1, c2 = 1 - beta1**step, 1 - beta2**step
        weights -= lr * (m_w / c1) / (np.sqrt(v_w / c2) + eps)
        bias -= lr * (m_b / c1) / (np.sqrt(v_b / c2) + eps)
    scores = phi @ weights.T + bias
    loss_curve.append(_zlpr_batch(scores, pos_mask)[0])

    return LocalizerModel(label_set=label_set, weights=weights, bias=bias), loss_curve


def micro_f1(model: LocalizerModel, corpus: list[tuple[str, set[str]]]) -> float:
    """Micro-averaged F1 of threshold-at-zero predictions."""
    tp = fp = fn = 0
    for text, gold in corpus:
        predicted = set(model.predict(text))
        tp += len(predicted & gold)
        fp += len(predicted - gold)
        fn += len(gold - predicted)
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


# -- prompt -> mask ------------------------------------------------------------


@dataclass
class LocalizeResult:
    mask: np.ndarray
    labels: list[str]
    unlocalized: bool
    source: str  # "model" | "lexicon" | "fallback_all"

    def to_dict(self) -> dict:
        return {
            "mask": self.mask.astype(int).tolist(),
            "labels": self.labels,
            "unlocalized": self.unlocalized,
            "source": self.source,
        }


def _phrase_in(phrase: str, prompt_tokens: list[str]) -> bool:
    words = tokenize(phrase)
    if not words:
        return False
    n = len(words)
    return any(prompt_tokens[i:i + n] == words for i in range(len(prompt_tokens) - n + 1))


def lexicon_lookup(prompt: str, label_set: LabelSet) -> list[str]:
    """Labels whose name or synonym occurs verbatim in the prompt."""
    prompt_tokens = tokenize(prompt)
    hits = []
    for label in label_set.labels:
        if any(_phrase_in(p, prompt_tokens) for p in label_set.phrases_for(label)):
            hits.append(label)
    return hits


def localize(prompt: str, model: LocalizerModel, schema: ParameterSchema) -> LocalizeResult:
    """Resolve a prompt to a group-uniform channel mask.

    Classifier first; exact-phrase lexicon if no label fires; all-ones
    mask flagged unlocalized as the last resort.
    """
    labels = model.predict(prompt)
    source = "model"
    if not labels:
        labels = lexicon_lookup(prompt, model.label_set)
        source = "lexicon"
    if not labels:
        return LocalizeResult(
            mask=np.ones(schema.size), labels=[], unlocalized=True, source="fallback_all"
        )
    channels: set[int] = set()
    for label in labels:
        channels |= schema.label_channel_map[label]
    return LocalizeResult(
        mask=mask_from_channels(channels, schema), labels=labels, unlocalized=False, source=source
    )
