"""Projected low-dimension parameter space.

Bone channels are reduced with PCA; makeup channels (continuous and
discrete) pass through untouched.  A latent vector z is the concatenation
of PCA coordinates and the raw passthrough block.  A whitened Gaussian
prior fitted on the encoded training set keeps optimized latents close to
the population of plausible characters:

    prior(z) = || A (z - mu) ||^2,   A = Cov^(-1/2)

The matrix square root uses a symmetric eigendecomposition with a small
ridge so rank-deficient training sets never fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schema import DimensionError, ParameterSchema

MODEL_FORMAT_VERSION = 1
COV_RIDGE = 1e-6


class FitError(ValueError):
    """Raised when the training set cannot support the requested fit."""


@dataclass
class LatentModel:
    """PCA basis over bone channels plus raw passthrough makeup channels."""

    mean_x: np.ndarray  # bone sub-vector mean, length N_bone
    basis: np.ndarray  # (M_pca, N_bone), orthonormal rows
    bone_channels: np.ndarray  # int indices into the full vector
    passthrough_channels: np.ndarray  # int indices into the full vector

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.n_components + len(self.passthrough_channels)

    @property
    def full_dim(self) -> int:
        return len(self.bone_channels) + len(self.passthrough_channels)

    def encode(self, x: np.ndarray) -> np.ndarray:
        """z = [basis @ (x_bone - mean), x_passthrough]."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.full_dim,):
            raise DimensionError(f"encode: expected length {self.full_dim}, got {x.shape}")
        z_pca = self.basis @ (x[self.bone_channels] - self.mean_x)
        return np.concatenate([z_pca, x[self.passthrough_channels]])

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Inverse map; output is raw (not clamped, groups not snapped)."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.latent_dim,):
            raise DimensionError(f"decode: expected length {self.latent_dim}, got {z.shape}")
        x = np.empty(self.full_dim)
        x[self.bone_channels] = self.mean_x + self.basis.T @ z[: self.n_components]
        x[self.passthrough_channels] = z[self.n_components:]
        return x

    def decode_vjp(self, z: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. decode(z) back to a gradient w.r.t. z."""
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != (self.full_dim,):
            raise DimensionError(f"decode_vjp: expected length {self.full_dim}, got {upstream.shape}")
        return np.concatenate(
            [self.basis @ upstream[self.bone_channels], upstream[self.passthrough_channels]]
        )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "mean_x": self.mean_x.tolist(),
            "basis": self.basis.tolist(),
            "bone_channels": self.bone_channels.tolist(),
            "passthrough_channels": self.passthrough_channels.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatentModel":
        return cls(
            mean_x=np.asarray(doc["mean_x"], dtype=float),
            basis=np.asarray(doc["basis"], dtype=float),
            bone_channels=np.asarray(doc["bone_channels"], dtype=int),
            passthrough_channels=np.asarray(doc["passthrough_channels"], dtype=int),
        )


@dataclass
class PriorModel:
    """Whitened Gaussian prior over latent vectors."""

    mu_z: np.ndarray  # (M,)
    whitener: np.ndarray  # (M, M), Cov^(-1/2)

    def loss(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        """Squared whitened distance to the mean and its gradient."""
        z = np.asarray(z, dtype=float)
        if z.shape != self.mu_z.shape:
            raise DimensionError(f"prior: expected length {self.mu_z.shape}, got {z.shape}")
        d = z - self.mu_z
        w = self.whitener @ d
        value = float(w @ w)
        grad = 2.0 * (self.whitener.T @ w)
        return value, grad

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "mu_z": self.mu_z.tolist(),
            "whitener": self.whitener.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PriorModel":
        return cls(
            mu_z=np.asarray(doc["mu_z"], dtype=float),
            whitener=np.asarray(doc["whitener"], dtype=float),
        )


def prior_loss(z: np.ndarray, prior: PriorModel) -> tuple[float, np.ndarray]:
    return prior.loss(z)


def _inverse_sqrt(cov: np.ndarray, ridge: float = COV_RIDGE) -> np.ndarray:
    """Symmetric inverse principal square root of (cov + ridge*I)."""
    cov = (cov + cov.T) / 2.0 + ridge * np.eye(cov.shape[0])
    eigval, eigvec = np.linalg.eigh(cov)
    return (eigvec / np.sqrt(eigval)) @ eigvec.T


def fit(
    params: list[np.ndarray] | np.ndarray,
    schema: ParameterSchema,
    n_components: int,
) -> tuple[LatentModel, PriorModel]:
    """Fit PCA on bone sub-vectors and the whitened prior on encoded latents.

    Requires at least n_components + 1 samples.  A zero-variance training
    set is legal: the covariance ridge keeps the whitener finite.
    """
    data = np.asarray(params, dtype=float)
    if data.ndim != 2 or data.shape[1] != schema.size:
        raise DimensionError(f"fit: expected (n, {schema.size}) samples, got {data.shape}")
    if data.shape[0] < n_components + 1:
        raise FitError(f"fit: need at least {n_components + 1} samples, got {data.shape[0]}")

    bone = np.asarray(schema.bone_channels, dtype=int)
    passthrough = np.asarray(schema.makeup_channels, dtype=int)
    if n_components < 1 or n_components > len(bone):
        raise FitError(f"fit: n_components must be in 1..{len(bone)}")

    bones = data[:, bone]
    mean_x = bones.mean(axis=0)
    # Principal directions of the centered bone block; rows of Vt are
    # orthonormal even when the data is rank deficient.  Thin SVD: the
    # sample count can be much larger than the bone dimension.
    _, _, vt = np.linalg.svd(bones - mean_x, full_matrices=False)
    if vt.shape[0] < n_components:  # fewer samples than components requested
        raise FitError(f"fit: rank {vt.shape[0]} insufficient for {n_components} components")
    basis = vt[:n_components]

    model = LatentModel(
        mean_x=mean_x,
        basis=basis,
        bone_channels=bone,
        passthrough_channels=passthrough,
    )

    latents = np.stack([model.encode(x) for x in data])
    mu_z = latents.mean(axis=0)
    centered = latents - mu_z
    cov = (centered.T @ centered) / latents.shape[0]
    prior = PriorModel(mu_z=mu_z, whitener=_inverse_sqrt(cov))
    return model, prior
