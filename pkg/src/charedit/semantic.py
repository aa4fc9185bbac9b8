"""Differentiable rendering and embedding contracts plus the cosine loss.

The solver never talks to a game engine or a pretrained vision-language
model directly.  It sees two capability contracts:

  * a renderer mapping parameter vectors to a feature vector, with a VJP;
  * an embedder mapping text and rendered features into one shared
    embedding space, with a VJP on the feature side.

The semantic alignment loss is 1 - cos(text embedding, feature embedding).

Deterministic synthetic implementations of both contracts make the whole
optimization chain testable offline: a landmark-based face renderer
(linear maps + tanh) and a lexicon embedder (stored unit directions for
known phrases, hash-seeded directions otherwise).  Real models can be
attached out-of-process through the socket adapters in ``adapters``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .schema import DimensionError, ParameterSchema


class DegenerateEmbeddingError(ValueError):
    """Raised when an embedding has zero norm and cosine is undefined."""


class RendererContract(Protocol):
    """Differentiable map from parameter vectors to rendered features."""

    feature_dim: int

    def render(self, x: np.ndarray) -> np.ndarray: ...

    def render_vjp(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray: ...


class EmbedderContract(Protocol):
    """Text and rendered-feature encoders into a shared embedding space."""

    embed_dim: int

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_feature(self, f: np.ndarray) -> np.ndarray: ...

    def embed_feature_vjp(self, f: np.ndarray, upstream: np.ndarray) -> np.ndarray: ...


# -- synthetic renderer -----------------------------------------------------

LANDMARK_NAMES = [
    "outline_0", "outline_1", "outline_2", "outline_3",
    "outline_4", "outline_5", "outline_6", "outline_7",
    "brow_l", "brow_r",
    "eye_l", "eye_r",
    "nose_wing_l", "nose_wing_r", "nose_tip",
    "mouth_l", "mouth_r", "mouth_top", "mouth_bottom",
    "chin",
]


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


@dataclass
class SyntheticFaceRenderer:
    """Deterministic stand-in for a neural game-engine imitator.

    Bone channels drive 2-D landmark offsets through a linear map; makeup
    channels (one-hot groups relaxed through a per-group softmax) drive
    appearance features through a second linear map.  Both blocks pass
    through an elementwise tanh, so the map is smooth everywhere.

    Feature layout: ``[2 * n_landmarks` landmark features | appearance]``.
    Landmark preview positions are an affine rescale of the landmark
    feature block into the unit square.
    """

    schema: ParameterSchema
    landmark_map: np.ndarray  # (2*n_landmarks, N_bone)
    landmark_base: np.ndarray  # (2*n_landmarks,) logits of the neutral face
    makeup_map: np.ndarray  # (n_appearance, N_makeup)
    makeup_base: np.ndarray  # (n_appearance,)
    landmark_names: list[str] = field(default_factory=lambda: list(LANDMARK_NAMES))

    def __post_init__(self):
        self._bone = np.asarray(self.schema.bone_channels, dtype=int)
        self._makeup = np.asarray(self.schema.makeup_channels, dtype=int)
        # group member positions within the makeup sub-vector
        makeup_pos = {ch: k for k, ch in enumerate(self._makeup)}
        self._group_slots = [
            [makeup_pos[c] for c in self.schema.group_members(gid)]
            for gid in self.schema.discrete_groups
        ]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_map.shape[0] // 2

    @property
    def feature_dim(self) -> int:
        return self.landmark_map.shape[0] + self.makeup_map.shape[0]

    def _relax_makeup(self, x: np.ndarray) -> np.ndarray:
        """Makeup sub-vector with each one-hot group pushed through softmax."""
        m = x[self._makeup].astype(float).copy()
        for slots in self._group_slots:
            m[slots] = _softmax(m[slots])
        return m

    def _pre_tanh(self, x: np.ndarray) -> np.ndarray:
        u_land = self.landmark_base + self.landmark_map @ x[self._bone]
        u_app = self.makeup_base + self.makeup_map @ self._relax_makeup(x)
        return np.concatenate([u_land, u_app])

    def render(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.schema.size,):
            raise DimensionError(f"render: expected length {self.schema.size}, got {x.shape}")
        return np.tanh(self._pre_tanh(x))

    def render_vjp(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != (self.feature_dim,):
            raise DimensionError(f"render_vjp: expected length {self.feature_dim}, got {upstream.shape}")
        f = np.tanh(self._pre_tanh(x))
        t = upstream * (1.0 - f * f)
        n_land = self.landmark_map.shape[0]
        grad = np.zeros(self.schema.size)
        grad[self._bone] = self.landmark_map.T @ t[:n_land]
        g_mk = self.makeup_map.T @ t[n_land:]
        # softmax backward on each one-hot group block
        m = x[self._makeup].astype(float)
        for slots in self._group_slots:
            p = _softmax(m[slots])
            g = g_mk[slots]
            g_mk[slots] = p * (g - float(g @ p))
        grad[self._makeup] = g_mk
        return grad

    def landmarks(self, x: np.ndarray) -> np.ndarray:
        """(n_landmarks, 2) positions in the unit square."""
        f = self.render(x)
        block = f[: 2 * self.n_landmarks]
        return 0.5 + 0.45 * block.reshape(self.n_landmarks, 2)

    def appearance(self, x: np.ndarray) -> np.ndarray:
        return self.render(x)[2 * self.n_landmarks:]

    def to_dict(self) -> dict:
        return {
            "landmark_map": self.landmark_map.tolist(),
            "landmark_base": self.landmark_base.tolist(),
            "makeup_map": self.makeup_map.tolist(),
            "makeup_base": self.makeup_base.tolist(),
            "landmark_names": self.landmark_names,
        }

    @classmethod
    def from_dict(cls, doc: dict, schema: ParameterSchema) -> "SyntheticFaceRenderer":
        return cls(
            schema=schema,
            landmark_map=np.asarray(doc["landmark_map"], dtype=float),
            landmark_base=np.asarray(doc["landmark_base"], dtype=float),
            makeup_map=np.asarray(doc["makeup_map"], dtype=float),
            makeup_base=np.asarray(doc["makeup_base"], dtype=float),
            landmark_names=list(doc["landmark_names"]),
        )


# -- synthetic embedder -----------------------------------------------------


def normalize_phrase(text: str) -> str:
    return " ".join(text.lower().split())


def _hash_direction(text: str, dim: int) -> np.ndarray:
    """Deterministic unit direction for phrases outside the lexicon."""
    digest = hashlib.blake2b(normalize_phrase(text).encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


@dataclass
class SyntheticSemanticEmbedder:
    """Deterministic text/feature encoder pair sharing one embedding space.

    Known phrases return their stored unit direction; unknown phrases fall
    back to a hash-seeded deterministic unit direction, so every input
    embeds to something stable with norm 1.
    """

    lexicon: dict[str, np.ndarray]  # normalized phrase -> unit direction (D,)
    projector: np.ndarray  # (D, F)
    projector_bias: np.ndarray  # (D,)

    @property
    def embed_dim(self) -> int:
        return self.projector.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.projector.shape[1]

    def embed_text(self, text: str) -> np.ndarray:
        key = normalize_phrase(text)
        if key in self.lexicon:
            return self.lexicon[key].copy()
        return _hash_direction(key, self.embed_dim)

    def embed_feature(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.feature_dim,):
            raise DimensionError(f"embed_feature: expected length {self.feature_dim}, got {f.shape}")
        return np.tanh(self.projector @ f + self.projector_bias)

    def embed_feature_vjp(self, f: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        e = self.embed_feature(f)
        return self.projector.T @ (np.asarray(upstream, dtype=float) * (1.0 - e * e))

    def to_dict(self) -> dict:
        return {
            "lexicon": [
                {"phrase": phrase, "direction": d.tolist()} for phrase, d in sorted(self.lexicon.items())
            ],
            "projector": self.projector.tolist(),
            "projector_bias": self.projector_bias.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSemanticEmbedder":
        return cls(
            lexicon={e["phrase"]: np.asarray(e["direction"], dtype=float) for e in doc["lexicon"]},
            projector=np.asarray(doc["projector"], dtype=float),
            projector_bias=np.asarray(doc["projector_bias"], dtype=float),
        )


# -- semantic alignment loss ------------------------------------------------


def clip_loss(
    text: str,
    x: np.ndarray,
    renderer: RendererContract,
    embedder: EmbedderContract,
) -> tuple[float, np.ndarray]:
    """1 - cosine(text embedding, embedding of the rendered parameters).

    Returns the scalar loss and its gradient w.r.t. the parameter vector,
    chained through the embedder and renderer VJPs.
    """
    e_t = embedder.embed_text(text)
    f = renderer.render(x)
    e_i = embedder.embed_feature(f)
    nt = float(np.linalg.norm(e_t))
    ni = float(np.linalg.norm(e_i))
    if nt <= 0.0 or ni <= 0.0:
        raise DegenerateEmbeddingError(f"zero-norm embedding (text={nt:g}, feature={ni:g})")
    cos = float(e_t @ e_i) / (nt * ni)
    value = 1.0 - cos
    # d(1-cos)/d e_i, then back through the embedder and renderer
    grad_ei = cos * e_i / (ni * ni) - e_t / (nt * ni)
    grad_x = renderer.render_vjp(x, embedder.embed_feature_vjp(f, grad_ei))
    return value, grad_x


@dataclass
class PreviewData:
    """What the UI needs to draw a face: named landmarks plus appearance."""

    landmarks: np.ndarray  # (n_landmarks, 2) in the unit square
    landmark_names: list[str]
    appearance: np.ndarray

    def to_dict(self) -> dict:
        return {
            "landmarks": [[float(a), float(b)] for a, b in self.landmarks],
            "landmark_names": self.landmark_names,
            "appearance": [float(v) for v in self.appearance],
        }


def render_preview(x: np.ndarray, renderer: SyntheticFaceRenderer) -> PreviewData:
    """Deterministic landmark/appearance preview of a parameter vector."""
    return PreviewData(
        landmarks=renderer.landmarks(x),
        landmark_names=list(renderer.landmark_names),
        appearance=renderer.appearance(x),
    )


# -- finite-difference gradient checking ------------------------------------


@dataclass
class GradientCheckReport:
    name: str
    points: int
    step: float
    threshold: float
    max_rel_error: float
    worst_point_seed: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def gradient_check(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    dim: int,
    points: int = 100,
    h: float = 1e-5,
    seed: int = 0,
    threshold: float = 1e-4,
    sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
    name: str = "op",
) -> GradientCheckReport:
    """Compare an analytic gradient against central finite differences.

    Samples `points` random inputs (uniform in [-1, 1]^dim unless a sampler
    is given) and reports the worst relative error between the analytic
    gradient and the central-difference estimate.
    """
    rng = np.random.default_rng(seed)
    max_rel = 0.0
    worst = 0
    for k in range(points):
        v = sampler(rng) if sampler is not None else rng.uniform(-1.0, 1.0, dim)
        _, grad = value_and_grad(v)
        fd = np.empty(dim)
        for j in range(dim):
            vp = v.copy()
            vp[j] += h
            vm = v.copy()
            vm[j] -= h
            fd[j] = (value_and_grad(vp)[0] - value_and_grad(vm)[0]) / (2.0 * h)
        denom = max(float(np.linalg.norm(fd)), float(np.linalg.norm(grad)), 1e-8)
        rel = float(np.linalg.norm(fd - grad)) / denom
        if rel > max_rel:
            max_rel, worst = rel, k
    return GradientCheckReport(
        name=name, points=points, step=h, threshold=threshold,
        max_rel_error=max_rel, worst_point_seed=worst,
    )
