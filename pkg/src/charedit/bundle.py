"""Model stack assembly and artifact persistence.

A ModelStack is everything the solver and session layer need: schema,
latent model, prior, renderer, embedder, and the trained localizer.  The
builders here produce fully synthetic, seed-deterministic stacks at two
scales: a 12-channel desk stack for tests and interactive use, and the
full 450-channel stack.

The embedder lexicon is generated against the renderer: each attribute
phrase gets the embedding direction of an actual parameter configuration
(the phrase's "anchor") that differs from the prior-mean face only on that
attribute's channels.  Every lexicon direction is therefore realizable by
a masked edit, which is what makes closed-loop solver tests meaningful.

Artifacts serialize to a directory of versioned JSON files with a manifest
carrying the schema hash.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import latent as latent_mod
from .corpus import build_corpus
from .localizer import LabelSet, LocalizerModel, train
from .schema import ParameterSchema, desk_schema, paper_scale_schema, snap_discrete
from .semantic import LANDMARK_NAMES, SyntheticFaceRenderer, SyntheticSemanticEmbedder, normalize_phrase

ARTIFACT_FORMAT_VERSION = 1

LEXICON_MODIFIERS = [
    "bigger", "smaller", "wider", "narrower", "longer", "shorter",
    "higher", "lower", "darker", "lighter", "sharper", "softer",
]

# neutral face template in the unit square, y growing downward
_FACE_TEMPLATE: dict[str, tuple[float, float]] = {
    **{
        f"outline_{k}": (
            0.5 + 0.35 * math.cos(2 * math.pi * k / 8),
            0.5 + 0.43 * math.sin(2 * math.pi * k / 8),
        )
        for k in range(8)
    },
    "brow_l": (0.34, 0.30),
    "brow_r": (0.66, 0.30),
    "eye_l": (0.36, 0.40),
    "eye_r": (0.64, 0.40),
    "nose_wing_l": (0.44, 0.55),
    "nose_wing_r": (0.56, 0.55),
    "nose_tip": (0.50, 0.58),
    "mouth_l": (0.40, 0.70),
    "mouth_r": (0.60, 0.70),
    "mouth_top": (0.50, 0.67),
    "mouth_bottom": (0.50, 0.73),
    "chin": (0.50, 0.88),
}

_REGION_LANDMARKS = {
    "nose": ["nose_wing_l", "nose_wing_r", "nose_tip"],
    "mouth": ["mouth_l", "mouth_r", "mouth_top", "mouth_bottom"],
    "lip": ["mouth_top", "mouth_bottom", "mouth_l", "mouth_r"],
    "eye": ["eye_l", "eye_r"],
    "eyes": ["eye_l", "eye_r"],
    "eyelid": ["eye_l", "eye_r"],
    "brow": ["brow_l", "brow_r"],
    "jaw": ["outline_1", "outline_2", "outline_3", "chin"],
    "chin": ["chin", "outline_2"],
    "cheek": ["outline_0", "outline_4"],
    "forehead": ["outline_6", "brow_l", "brow_r"],
    "temple": ["outline_5", "outline_7"],
    "ear": ["outline_0", "outline_4"],
}

_LANDMARK_GAIN = 0.8
_BACKGROUND_GAIN = 0.05
_MAKEUP_GAIN = 0.1
_PROJECTOR_SCALE = 0.15
_EMBED_OFFSET = 0.4
_FEATURE_DIM = 128
_EMBED_DIM = 64


@dataclass
class ModelStack:
    """Everything a session needs, immutable after construction."""

    schema: ParameterSchema
    latent: latent_mod.LatentModel
    prior: latent_mod.PriorModel
    renderer: SyntheticFaceRenderer
    embedder: SyntheticSemanticEmbedder
    localizer: LocalizerModel
    label_set: LabelSet

    @property
    def schema_hash(self) -> str:
        return self.schema.content_hash()

    def mean_face(self) -> np.ndarray:
        return snap_discrete(self.latent.decode(self.prior.mu_z), self.schema)


def sample_valid_parameters(schema: ParameterSchema, n: int, seed: int) -> np.ndarray:
    """Seeded plausible-parameter population used to fit the latent space.

    Continuous channels: Gaussian around the bound midpoint, clipped.
    One-hot groups: uniform variant choice.
    """
    rng = np.random.default_rng(seed)
    lo, hi = schema.bounds_arrays()
    mid = (lo + hi) / 2.0
    spread = (hi - lo) * 0.3
    data = rng.normal(0.0, 1.0, size=(n, schema.size)) * spread + mid
    data = np.clip(data, lo, hi)
    for gid in schema.discrete_groups:
        members = schema.group_members(gid)
        data[:, members] = 0.0
        choices = rng.integers(0, len(members), size=n)
        data[np.arange(n), np.asarray(members)[choices]] = 1.0
    return data


def _logit_of_position(p: float) -> float:
    return math.atanh(max(-0.999, min(0.999, (p - 0.5) / 0.45)))


def _landmarks_for_label(label: str) -> list[str]:
    for token in label.lower().replace("_", " ").split():
        if token in _REGION_LANDMARKS:
            return _REGION_LANDMARKS[token]
    return []


def build_renderer(schema: ParameterSchema, seed: int) -> SyntheticFaceRenderer:
    """Wire bone channels to face landmarks, makeup channels to appearance.

    Each semantic label's channels drive the landmarks of its face region
    (dedicated spread/length wiring for the first two channels), with a
    small dense background coupling so every channel is visible to the
    feature vector.  Unmatched labels fall back to round-robin landmarks.
    """
    rng = np.random.default_rng(seed)
    names = list(LANDMARK_NAMES)
    slot = {name: i for i, name in enumerate(names)}
    n_feat_land = 2 * len(names)

    bone = schema.bone_channels
    col = {ch: i for i, ch in enumerate(bone)}
    landmark_map = rng.normal(0.0, _BACKGROUND_GAIN, size=(n_feat_land, len(bone)))

    rr = 0  # round-robin cursor for labels without a named region
    for label in schema.labels():
        channels = sorted(c for c in schema.label_channel_map[label] if c in col)
        if not channels:
            continue
        targets = _landmarks_for_label(label)
        if not targets:
            targets = [names[rr % len(names)], names[(rr + 7) % len(names)]]
            rr += 1
        for i, ch in enumerate(channels):
            c = col[ch]
            if i == 0 and len(targets) >= 2:
                # first channel spreads the region horizontally
                landmark_map[2 * slot[targets[1]], c] += _LANDMARK_GAIN
                landmark_map[2 * slot[targets[0]], c] -= _LANDMARK_GAIN
            elif i == 1 and len(targets) >= 3:
                landmark_map[2 * slot[targets[2]] + 1, c] += _LANDMARK_GAIN
            else:
                t = targets[i % len(targets)]
                landmark_map[2 * slot[t] + (i % 2), c] += _LANDMARK_GAIN

    landmark_base = np.empty(n_feat_land)
    for name, (px, py) in _FACE_TEMPLATE.items():
        landmark_base[2 * slot[name]] = _logit_of_position(px)
        landmark_base[2 * slot[name] + 1] = _logit_of_position(py)

    n_makeup = len(schema.makeup_channels)
    n_app = _FEATURE_DIM - n_feat_land
    makeup_map = rng.normal(0.0, _MAKEUP_GAIN, size=(n_app, n_makeup))
    makeup_base = np.zeros(n_app)

    return SyntheticFaceRenderer(
        schema=schema,
        landmark_map=landmark_map,
        landmark_base=landmark_base,
        makeup_map=makeup_map,
        makeup_base=makeup_base,
        landmark_names=names,
    )


def phrase_anchor(schema: ParameterSchema, base_x: np.ndarray, label: str, phrase: str) -> np.ndarray:
    """Parameter configuration embodying a phrase: base face with only the
    label's channels re-drawn from a phrase-seeded distribution."""
    digest = hashlib.blake2b(normalize_phrase(phrase).encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "big"))
    x = np.asarray(base_x, dtype=float).copy()
    channels = sorted(schema.label_channel_map[label])
    lo, hi = schema.bounds_arrays()
    grouped: set[int] = set()
    for gid in schema.discrete_groups:
        members = schema.group_members(gid)
        if any(c in channels for c in members):
            x[members] = 0.0
            x[members[rng.integers(0, len(members))]] = 1.0
            grouped.update(members)
    for c in channels:
        if c not in grouped:
            x[c] = rng.uniform(lo[c], hi[c])
    return x


def lexicon_phrases(label_set: LabelSet) -> list[tuple[str, str]]:
    """(label, phrase) pairs the embedder lexicon covers."""
    pairs = []
    for label in label_set.labels:
        attr = label_set.phrases_for(label)[0]
        pairs.append((label, attr))
        for mod in LEXICON_MODIFIERS:
            pairs.append((label, f"{mod} {attr}"))
    return pairs


def build_embedder(
    schema: ParameterSchema,
    renderer: SyntheticFaceRenderer,
    label_set: LabelSet,
    base_x: np.ndarray,
    seed: int,
) -> SyntheticSemanticEmbedder:
    """Contrastive embedder centered on the prior-mean face.

    The projection of the base face is cancelled in the bias so embeddings
    represent deviation from the neutral face (plus a fixed offset keeping
    the base embedding away from zero norm).  Lexicon directions are the
    embeddings of each phrase's anchor configuration, hence exactly
    realizable.
    """
    rng = np.random.default_rng(seed + 1)
    projector = rng.normal(
        0.0, _PROJECTOR_SCALE / math.sqrt(renderer.feature_dim),
        size=(_EMBED_DIM, renderer.feature_dim),
    )
    offset = rng.standard_normal(_EMBED_DIM)
    offset *= _EMBED_OFFSET / np.linalg.norm(offset)
    embedder = SyntheticSemanticEmbedder(
        lexicon={},
        projector=projector,
        projector_bias=offset - projector @ renderer.render(base_x),
    )
    for label, phrase in lexicon_phrases(label_set):
        anchor = phrase_anchor(schema, base_x, label, phrase)
        e = embedder.embed_feature(renderer.render(anchor))
        embedder.lexicon[normalize_phrase(phrase)] = e / np.linalg.norm(e)
    return embedder


DESK_SYNONYMS = {
    "eyes": ["eye"],
    "lipstick": ["lips", "lip"],
    "skin": ["skin tone"],
    "brow": ["brows", "eyebrow", "eyebrows"],
}


def build_stack(
    schema: ParameterSchema,
    seed: int = 0,
    n_samples: int = 512,
    n_components: int | None = None,
    synonyms: dict[str, list[str]] | None = None,
    localizer_epochs: int = 150,
    localizer_lr: float = 0.1,
) -> ModelStack:
    """Assemble a deterministic synthetic stack for a schema."""
    if n_components is None:
        n_components = len(schema.bone_channels)
    samples = sample_valid_parameters(schema, n_samples, seed)
    latent, prior = latent_mod.fit(samples, schema, n_components)
    renderer = build_renderer(schema, seed)
    label_set = LabelSet.from_schema(schema, synonyms)
    base_x = snap_discrete(latent.decode(prior.mu_z), schema)
    embedder = build_embedder(schema, renderer, label_set, base_x, seed)
    localizer, _ = train(
        build_corpus(label_set), label_set,
        epochs=localizer_epochs, lr=localizer_lr, seed=seed,
    )
    return ModelStack(
        schema=schema, latent=latent, prior=prior,
        renderer=renderer, embedder=embedder,
        localizer=localizer, label_set=label_set,
    )


def build_desk_stack(seed: int = 0) -> ModelStack:
    """12-channel stack: fast to build, used by tests and as the CLI default."""
    return build_stack(desk_schema(), seed=seed, n_samples=512, synonyms=DESK_SYNONYMS)


def build_paper_stack(seed: int = 0, n_samples: int = 10_000) -> ModelStack:
    """Full 450-channel stack with 60 latent bone components."""
    return build_stack(paper_scale_schema(), seed=seed, n_samples=n_samples, n_components=60)


# -- artifact directory io ----------------------------------------------------


def save_stack(stack: ModelStack, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = {
        "schema.json": stack.schema.to_dict(),
        "latent.json": stack.latent.to_dict(),
        "prior.json": stack.prior.to_dict(),
        "renderer.json": stack.renderer.to_dict(),
        "embedder.json": stack.embedder.to_dict(),
        "localizer.json": stack.localizer.to_dict(),
    }
    for name, doc in parts.items():
        (out / name).write_text(json.dumps(doc))
    manifest = {
        "format_version": ARTIFACT_FORMAT_VERSION,
        "role_name": stack.schema.role_name,
        "schema_hash": stack.schema_hash,
        "components": sorted(parts),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def load_stack(artifact_dir: str | Path) -> ModelStack:
    root = Path(artifact_dir)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("format_version") != ARTIFACT_FORMAT_VERSION:
        raise ValueError(f"unsupported artifact format {manifest.get('format_version')!r}")
    schema = ParameterSchema.from_dict(json.loads((root / "schema.json").read_text()))
    if schema.content_hash() != manifest["schema_hash"]:
        raise ValueError("artifact schema hash mismatch")
    localizer = LocalizerModel.from_dict(json.loads((root / "localizer.json").read_text()))
    return ModelStack(
        schema=schema,
        latent=latent_mod.LatentModel.from_dict(json.loads((root / "latent.json").read_text())),
        prior=latent_mod.PriorModel.from_dict(json.loads((root / "prior.json").read_text())),
        renderer=SyntheticFaceRenderer.from_dict(json.loads((root / "renderer.json").read_text()), schema),
        embedder=SyntheticSemanticEmbedder.from_dict(json.loads((root / "embedder.json").read_text())),
        localizer=localizer,
        label_set=localizer.label_set,
    )
