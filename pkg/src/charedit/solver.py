"""Masked gradient solver over the low-dimension parameter space.

Creation optimizes a latent vector z from the prior mean under

    semantic_loss(T, render(decode(z))) + lambda * prior(z)

Editing starts from the latent of the previous parameters and evaluates
the semantic loss on the channel-mixed vector

    x_mix = (1 - r) * x_prev + r * decode(z)

with the loss weighted by the strength weight -cos(s*pi) + 1, so channels
outside the mask r are preserved bit-identically and the user's intended
intensity scales the semantic pull.  Plain gradient descent, fixed step
count, separate learning rates for continuous coordinates and relaxed
one-hot coordinates.

One-hot group coordinates are optimized as unconstrained logits consumed
through a per-group softmax by the renderer.  The softmax is invariant to
a constant shift per group, and that shift direction has (near) zero
variance in the prior's training set, making it pathologically stiff
under the ridge whitener.  The update therefore has its per-group mean
removed each step: render semantics are unchanged and the stiff direction
is never excited.  Final vectors are snapped back to valid one-hots and
clamped bounds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .schema import check_mask, mix, snap_discrete
from .semantic import clip_loss


class DivergenceError(RuntimeError):
    """Raised when the objective turns non-finite during optimization."""

    def __init__(self, step: int, trace: list[tuple[float, float, float]]):
        super().__init__(f"non-finite objective at step {step}")
        self.step = step
        self.trace = trace


@dataclass
class SolveConfig:
    steps: int = 100
    lr_continuous: float = 1.0
    lr_discrete: float = 100.0
    lambda_prior: float = 8e-4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.lr_continuous <= 0 or self.lr_discrete <= 0:
            raise ValueError("learning rates must be > 0")
        if self.lambda_prior < 0:
            raise ValueError("lambda_prior must be >= 0")


@dataclass
class SolveResult:
    x_final: np.ndarray  # snapped, schema-valid
    z_final: np.ndarray
    loss_trace: list[tuple[float, float, float]]  # (clip, prior, total) incl. initial point
    edited_channels: np.ndarray  # the mask the solve ran under
    strength_weight: float
    steps_performed: int
    config: SolveConfig = field(default_factory=SolveConfig)

    def to_dict(self) -> dict:
        return {
            "x_final": self.x_final.tolist(),
            "z_final": self.z_final.tolist(),
            "loss_trace": [[c, p, t] for c, p, t in self.loss_trace],
            "edited_channels": self.edited_channels.astype(int).tolist(),
            "strength_weight": self.strength_weight,
            "steps_performed": self.steps_performed,
            "config": asdict(self.config),
        }


def strength_weight(s: float) -> float:
    """Editing-strength weight for the semantic loss: -cos(s*pi) + 1.

    Zero at s=0, one at s=0.5, two at s=1, strictly increasing on [0, 1].
    Inputs outside [0, 1] are clamped with a warning.
    """
    if s < 0.0 or s > 1.0:
        warnings.warn(f"strength {s} outside [0, 1], clamping", stacklevel=2)
        s = min(max(s, 0.0), 1.0)
    return -math.cos(s * math.pi) + 1.0


def _lr_vector(models, config: SolveConfig) -> np.ndarray:
    """Per-latent-coordinate learning rate: discrete slots get lr_discrete."""
    latent = models.latent
    lr = np.full(latent.latent_dim, config.lr_continuous)
    kinds = {c.index: c.kind for c in models.schema.channels}
    for j, ch in enumerate(latent.passthrough_channels):
        if kinds[int(ch)] == "discrete_member":
            lr[latent.n_components + j] = config.lr_discrete
    return lr


def _group_slot_blocks(models) -> list[np.ndarray]:
    """Latent slot indices of each one-hot group's logit block."""
    latent = models.latent
    slot_of = {int(ch): latent.n_components + j for j, ch in enumerate(latent.passthrough_channels)}
    return [
        np.array([slot_of[c] for c in models.schema.group_members(gid)])
        for gid in models.schema.discrete_groups
    ]


def _degauge(update: np.ndarray, group_blocks: list[np.ndarray]) -> np.ndarray:
    """Remove the softmax-invariant per-group mean from an update step."""
    for block in group_blocks:
        update[block] -= update[block].mean()
    return update


def objective_eval(
    z: np.ndarray,
    x_prev: np.ndarray | None,
    r: np.ndarray | None,
    prompt: str,
    lam_s: float,
    lam: float,
    models,
) -> tuple[float, float, float, np.ndarray]:
    """Evaluate lam_s * semantic + lam * prior at z with full gradient.

    With a mask, the semantic loss sees the channel-mixed vector and its
    gradient flows only through masked channels (the chain rule through
    the mixing).  Without a mask (creation), decode(z) is evaluated raw.
    """
    latent, prior = models.latent, models.prior
    x_dec = latent.decode(z)
    if r is not None:
        x_eval = mix(x_prev, x_dec, r, models.schema)
    else:
        x_eval = x_dec
    clip_v, g_x = clip_loss(prompt, x_eval, models.renderer, models.embedder)
    if r is not None:
        g_x = g_x * r  # d x_mix / d x_dec = diag(r)
    prior_v, g_prior = prior.loss(z)
    total = lam_s * clip_v + lam * prior_v
    grad = lam_s * latent.decode_vjp(z, g_x) + lam * g_prior
    return total, clip_v, prior_v, grad


def _descend(
    z0: np.ndarray,
    objective,
    models,
    config: SolveConfig,
) -> tuple[np.ndarray, list[tuple[float, float, float]]]:
    """Run the fixed-step descent loop, recording (clip, prior, total)."""
    lr = _lr_vector(models, config)
    group_blocks = _group_slot_blocks(models)
    z = z0.copy()
    trace: list[tuple[float, float, float]] = []
    # divergence shows up as inf/nan in the objective; the guard below turns
    # it into a structured error, so numpy's overflow warnings are noise here
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.steps):
            total, clip_v, prior_v, grad = objective(z)
            trace.append((clip_v, prior_v, total))
            if not math.isfinite(total):
                raise DivergenceError(step, trace)
            z = z - _degauge(lr * grad, group_blocks)
        total, clip_v, prior_v, _ = objective(z)
        trace.append((clip_v, prior_v, total))
        if not math.isfinite(total):
            raise DivergenceError(config.steps, trace)
    return z, trace


def create(prompt: str, config: SolveConfig, models) -> SolveResult:
    """Solve whole-face parameters for a prompt, starting at the prior mean."""
    if not prompt.strip():
        raise ValueError("empty prompt")
    lam = config.lambda_prior
    z_final, trace = _descend(
        models.prior.mu_z,
        lambda z: objective_eval(z, None, None, prompt, 1.0, lam, models),
        models,
        config,
    )
    return SolveResult(
        x_final=snap_discrete(models.latent.decode(z_final), models.schema),
        z_final=z_final,
        loss_trace=trace,
        edited_channels=np.ones(models.schema.size),
        strength_weight=1.0,
        steps_performed=config.steps,
        config=config,
    )


def edit(
    x_prev: np.ndarray,
    prompt: str,
    strength: float,
    r: np.ndarray,
    config: SolveConfig,
    models,
) -> SolveResult:
    """Masked edit from x_prev; non-masked channels come back bit-identical.

    Strength 0 is an explicit no-op: optimizing with a zero semantic
    weight would only drift masked channels toward the prior mean against
    the user's stated intent, so the parameters are returned unchanged
    (the trace then has a single entry for the untouched point).
    """
    r = check_mask(r, models.schema)
    lam_s = strength_weight(strength)
    lam = config.lambda_prior
    z0 = models.latent.encode(x_prev)
    if lam_s == 0.0:
        total, clip_v, prior_v, _ = objective_eval(z0, x_prev, r, prompt, 0.0, lam, models)
        return SolveResult(
            x_final=np.asarray(x_prev, dtype=float).copy(),
            z_final=z0,
            loss_trace=[(clip_v, prior_v, total)],
            edited_channels=r,
            strength_weight=0.0,
            steps_performed=0,
            config=config,
        )
    z_final, trace = _descend(
        z0,
        lambda z: objective_eval(z, x_prev, r, prompt, lam_s, lam, models),
        models,
        config,
    )
    x_final = snap_discrete(mix(x_prev, models.latent.decode(z_final), r, models.schema), models.schema)
    # snapping can only touch masked channels: unmasked ones were copied
    # from a valid x_prev and stay inside bounds / exact one-hots
    return SolveResult(
        x_final=x_final,
        z_final=z_final,
        loss_trace=trace,
        edited_channels=r,
        strength_weight=lam_s,
        steps_performed=config.steps,
        config=config,
    )
