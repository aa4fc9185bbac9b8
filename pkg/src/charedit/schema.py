"""Character control parameter schema: channel layout, masks, and mixing.

A character is fully described by a flat float vector of length N.  The
schema gives each channel its meaning: continuous channels (bone positions,
continuous makeup) carry bounds, discrete channels belong to one-hot groups
(mutually exclusive makeup variants).  Semantic labels ("nose", "eyeshadow")
map onto channel index sets; the localizer turns predicted labels into
binary channel masks through this map.

Parameter vectors and masks are plain numpy arrays; the schema object holds
all per-channel semantics.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_FORMAT_VERSION = 1


class SchemaError(ValueError):
    """Raised when a schema document violates its structural invariants."""


class DimensionError(ValueError):
    """Raised when a vector's length does not match the schema."""


class MaskError(ValueError):
    """Raised when a channel mask is not uniform across a one-hot group."""


@dataclass(frozen=True)
class ChannelDescriptor:
    """One channel of the control parameter vector."""

    index: int
    kind: str  # "continuous" | "discrete_member"
    human_name: str
    bounds: tuple[float, float] | None = None  # continuous channels only
    group_id: str | None = None  # discrete members only
    family: str = "bone"  # "bone" channels are PCA-projected, "makeup" pass through

    def __post_init__(self):
        if self.kind == "continuous":
            if self.bounds is None or not self.bounds[0] < self.bounds[1]:
                raise SchemaError(f"channel {self.index}: continuous channel needs lo < hi bounds")
        elif self.kind == "discrete_member":
            if self.group_id is None:
                raise SchemaError(f"channel {self.index}: discrete member without group_id")
        else:
            raise SchemaError(f"channel {self.index}: unknown kind {self.kind!r}")


@dataclass
class ParameterSchema:
    """Channel layout plus the semantic label -> channel association."""

    role_name: str
    channels: list[ChannelDescriptor]
    discrete_groups: dict[str, tuple[int, int]]  # group_id -> [start, stop) index range
    label_channel_map: dict[str, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.channels)
        for i, ch in enumerate(self.channels):
            if ch.index != i:
                raise SchemaError(f"channel at position {i} has index {ch.index}")
        covered = np.zeros(n, dtype=bool)
        for gid, (start, stop) in self.discrete_groups.items():
            if stop - start < 2:
                raise SchemaError(f"group {gid!r}: one-hot group needs >= 2 members")
            if covered[start:stop].any():
                raise SchemaError(f"group {gid!r}: overlaps another group")
            covered[start:stop] = True
            for i in range(start, stop):
                ch = self.channels[i]
                if ch.kind != "discrete_member" or ch.group_id != gid:
                    raise SchemaError(f"group {gid!r}: channel {i} not a member of it")
        for i, ch in enumerate(self.channels):
            if ch.kind == "discrete_member" and not covered[i]:
                raise SchemaError(f"channel {i}: discrete member outside every group range")
        labelled = set()
        for label, chs in self.label_channel_map.items():
            if not chs:
                raise SchemaError(f"label {label!r} maps to no channels")
            if any(c < 0 or c >= n for c in chs):
                raise SchemaError(f"label {label!r} maps outside 0..{n - 1}")
            labelled |= set(chs)
        if self.label_channel_map and labelled != set(range(n)):
            missing = sorted(set(range(n)) - labelled)
            raise SchemaError(f"channels {missing} appear in no label's channel set")

    @property
    def size(self) -> int:
        return len(self.channels)

    @property
    def continuous_channels(self) -> list[int]:
        return [c.index for c in self.channels if c.kind == "continuous"]

    @property
    def bone_channels(self) -> list[int]:
        return [c.index for c in self.channels if c.kind == "continuous" and c.family == "bone"]

    @property
    def makeup_channels(self) -> list[int]:
        """Channels excluded from PCA: continuous makeup plus all discrete members."""
        return [c.index for c in self.channels if not (c.kind == "continuous" and c.family == "bone")]

    def group_members(self, group_id: str) -> list[int]:
        start, stop = self.discrete_groups[group_id]
        return list(range(start, stop))

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel (lo, hi); discrete members get [0, 1]."""
        lo = np.zeros(self.size)
        hi = np.ones(self.size)
        for ch in self.channels:
            if ch.kind == "continuous":
                lo[ch.index], hi[ch.index] = ch.bounds
        return lo, hi

    def labels(self) -> list[str]:
        return sorted(self.label_channel_map)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": SCHEMA_FORMAT_VERSION,
            "role_name": self.role_name,
            "channels": [
                {
                    "index": c.index,
                    "kind": c.kind,
                    "human_name": c.human_name,
                    "bounds": list(c.bounds) if c.bounds else None,
                    "group_id": c.group_id,
                    "family": c.family,
                }
                for c in self.channels
            ],
            "discrete_groups": {g: list(r) for g, r in self.discrete_groups.items()},
            "label_channel_map": {k: sorted(v) for k, v in self.label_channel_map.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ParameterSchema":
        if doc.get("format_version") != SCHEMA_FORMAT_VERSION:
            raise SchemaError(f"unsupported schema format_version {doc.get('format_version')!r}")
        channels = [
            ChannelDescriptor(
                index=c["index"],
                kind=c["kind"],
                human_name=c["human_name"],
                bounds=tuple(c["bounds"]) if c.get("bounds") else None,
                group_id=c.get("group_id"),
                family=c.get("family", "bone"),
            )
            for c in doc["channels"]
        ]
        return cls(
            role_name=doc["role_name"],
            channels=channels,
            discrete_groups={g: (r[0], r[1]) for g, r in doc["discrete_groups"].items()},
            label_channel_map={k: set(v) for k, v in doc["label_channel_map"].items()},
        )

    def content_hash(self) -> str:
        """Stable hash used to pair serialized vectors/models with their schema."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- parameter vector operations ------------------------------------------


def validate(x: np.ndarray, schema: ParameterSchema) -> list[str]:
    """Check a vector against the schema; returns one message per violation.

    An empty list means the vector is valid.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.size,):
        raise DimensionError(f"vector length {x.shape} does not match schema N={schema.size}")
    report = []
    for ch in schema.channels:
        if ch.kind != "continuous":
            continue
        lo, hi = ch.bounds
        v = x[ch.index]
        if v < lo or v > hi:
            report.append(f"channel {ch.index} ({ch.human_name}): {v} outside [{lo}, {hi}]")
    for gid in schema.discrete_groups:
        members = schema.group_members(gid)
        block = x[members]
        ones = np.flatnonzero(block == 1.0)
        if len(ones) != 1 or np.any((block != 0.0) & (block != 1.0)):
            report.append(f"group {gid} (channels {members[0]}..{members[-1]}): not one-hot")
    return report


def is_valid(x: np.ndarray, schema: ParameterSchema) -> bool:
    return not validate(x, schema)


def check_mask(r: np.ndarray, schema: ParameterSchema) -> np.ndarray:
    """Normalize a mask to 0/1 floats and enforce group uniformity."""
    r = np.asarray(r, dtype=float)
    if r.shape != (schema.size,):
        raise DimensionError(f"mask length {r.shape} does not match schema N={schema.size}")
    if np.any((r != 0.0) & (r != 1.0)):
        raise MaskError("mask entries must be 0 or 1")
    for gid in schema.discrete_groups:
        block = r[schema.group_members(gid)]
        if block.min() != block.max():
            raise MaskError(f"mask not uniform across one-hot group {gid}")
    return r


def mask_from_channels(channels: set[int], schema: ParameterSchema) -> np.ndarray:
    """Build a group-uniform mask covering the given channels.

    Any group touched by the set is included whole, so one-hot groups are
    always edited atomically.
    """
    r = np.zeros(schema.size)
    r[sorted(channels)] = 1.0
    for gid in schema.discrete_groups:
        members = schema.group_members(gid)
        if r[members].any():
            r[members] = 1.0
    return r


def mix(x_prev: np.ndarray, x_cand: np.ndarray, r: np.ndarray, schema: ParameterSchema) -> np.ndarray:
    """Masked channel mixing: keep x_prev where r==0, take x_cand where r==1.

    Channels with r==0 are copied bit-identically from x_prev.
    """
    r = check_mask(r, schema)
    x_prev = np.asarray(x_prev, dtype=float)
    x_cand = np.asarray(x_cand, dtype=float)
    if x_prev.shape != (schema.size,) or x_cand.shape != (schema.size,):
        raise DimensionError("mix: vector length does not match schema")
    out = x_prev.copy()
    sel = r == 1.0
    out[sel] = x_cand[sel]
    return out


def snap_discrete(x: np.ndarray, schema: ParameterSchema) -> np.ndarray:
    """Project a relaxed vector back onto the valid set.

    Each one-hot group becomes one-hot at its argmax (ties -> lowest index);
    continuous channels are clamped to their bounds.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.size,):
        raise DimensionError(f"vector length {x.shape} does not match schema N={schema.size}")
    out = x.copy()
    for ch in schema.channels:
        if ch.kind == "continuous":
            lo, hi = ch.bounds
            out[ch.index] = min(max(out[ch.index], lo), hi)
    for gid in schema.discrete_groups:
        members = schema.group_members(gid)
        best = int(np.argmax(out[members]))  # np.argmax already takes the lowest index on ties
        out[members] = 0.0
        out[members[0] + best] = 1.0
    return out


def default_vector(schema: ParameterSchema) -> np.ndarray:
    """Neutral valid vector: continuous channels at bound midpoints, groups at member 0."""
    x = np.zeros(schema.size)
    for ch in schema.channels:
        if ch.kind == "continuous":
            lo, hi = ch.bounds
            x[ch.index] = (lo + hi) / 2.0
    for gid in schema.discrete_groups:
        x[schema.group_members(gid)[0]] = 1.0
    return x


def vector_to_dict(x: np.ndarray, schema: ParameterSchema) -> dict:
    return {"schema_hash": schema.content_hash(), "values": np.asarray(x, dtype=float).tolist()}


def vector_from_dict(doc: dict, schema: ParameterSchema) -> np.ndarray:
    if doc.get("schema_hash") != schema.content_hash():
        raise SchemaError("vector was serialized against a different schema")
    x = np.asarray(doc["values"], dtype=float)
    if x.shape != (schema.size,):
        raise DimensionError("serialized vector length does not match schema")
    return x


# -- shipped schemas --------------------------------------------------------


def desk_schema() -> ParameterSchema:
    """Small 12-channel schema used by tests and the default desk stack.

    6 bone channels, 2 continuous makeup channels, two one-hot groups of 2.
    """
    names = ["brow height", "eye size", "nose width", "nose length", "mouth width", "jaw width"]
    channels = [
        ChannelDescriptor(i, "continuous", names[i], bounds=(-1.0, 1.0), family="bone")
        for i in range(6)
    ]
    channels += [
        ChannelDescriptor(6, "continuous", "skin tone", bounds=(0.0, 1.0), family="makeup"),
        ChannelDescriptor(7, "continuous", "blush intensity", bounds=(0.0, 1.0), family="makeup"),
        ChannelDescriptor(8, "discrete_member", "eyeshadow style A", group_id="eyeshadow_style", family="makeup"),
        ChannelDescriptor(9, "discrete_member", "eyeshadow style B", group_id="eyeshadow_style", family="makeup"),
        ChannelDescriptor(10, "discrete_member", "lipstick style A", group_id="lipstick_style", family="makeup"),
        ChannelDescriptor(11, "discrete_member", "lipstick style B", group_id="lipstick_style", family="makeup"),
    ]
    return ParameterSchema(
        role_name="desk",
        channels=channels,
        discrete_groups={"eyeshadow_style": (8, 10), "lipstick_style": (10, 12)},
        label_channel_map={
            "brow": {0},
            "eyes": {1},
            "nose": {2, 3},
            "mouth": {4},
            "jaw": {5},
            "skin": {6},
            "blush": {7},
            "eyeshadow": {8, 9},
            "lipstick": {10, 11},
        },
    )


def paper_scale_schema() -> ParameterSchema:
    """Full-scale 450-channel schema: 284 bone + 41 continuous makeup + 125 discrete.

    The 125 discrete channels form 25 one-hot groups of 5.  Labels are split
    into 117 categories: 84 bone regions, 8 makeup tones, 25 style groups.
    """
    channels: list[ChannelDescriptor] = []
    label_map: dict[str, set[int]] = {}

    parts = ["brow", "eye", "nose", "mouth", "jaw", "cheek", "chin", "forehead",
             "temple", "ear", "lip", "eyelid"]
    zones = ["left", "right", "upper", "lower", "inner", "outer", "central"]
    bone_labels = [f"{z} {p}" for p in parts for z in zones][:84]
    # 68 regions of 3 channels + 16 regions of 5 channels = 284 bone channels
    idx = 0
    for li, label in enumerate(bone_labels):
        width = 3 if li < 68 else 5
        chs = set()
        for _ in range(width):
            channels.append(
                ChannelDescriptor(idx, "continuous", f"{label} bone {idx}", bounds=(-1.0, 1.0), family="bone")
            )
            chs.add(idx)
            idx += 1
        label_map[label] = chs
    assert idx == 284

    # 7 tone labels of 5 channels + 1 of 6 = 41 continuous makeup channels
    for li in range(8):
        width = 5 if li < 7 else 6
        label = f"tone{li}"
        chs = set()
        for _ in range(width):
            channels.append(
                ChannelDescriptor(idx, "continuous", f"{label} makeup {idx}", bounds=(0.0, 1.0), family="makeup")
            )
            chs.add(idx)
            idx += 1
        label_map[label] = chs
    assert idx == 325

    # 25 one-hot groups of 5 discrete channels
    groups = {}
    for g in range(25):
        gid = f"style{g:02d}"
        start = idx
        chs = set()
        for m in range(5):
            channels.append(
                ChannelDescriptor(idx, "discrete_member", f"{gid} variant {m}", group_id=gid, family="makeup")
            )
            chs.add(idx)
            idx += 1
        groups[gid] = (start, idx)
        label_map[gid] = chs
    assert idx == 450

    return ParameterSchema(
        role_name="paper_scale",
        channels=channels,
        discrete_groups=groups,
        label_channel_map=label_map,
    )
