"""Principal component analysis used to compact high-dimensional per-frame features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError, DimensionError


@dataclass
class PcaBasis:
    mean: np.ndarray           # (d,)
    components: np.ndarray     # (d, k), orthonormal columns
    explained_variance: np.ndarray  # (k,), descending
    total_variance: float

    @property
    def explained_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_fit(data: np.ndarray, components: int) -> PcaBasis:
    """Top-``components`` principal axes of ``data`` (rows are samples), via SVD."""
    data = np.asarray(data, dtype=np.float64)
    n, d = data.shape
    if components < 1 or components > d:
        raise ConfigurationError(f"PCA: {components} components requested for {d}-dimensional data")
    if n <= components and components < d:
        raise ContractError(f"PCA: need more samples ({n}) than components ({components})")
    mean = data.mean(axis=0)
    centered = data - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    var = s ** 2 / max(n - 1, 1)
    comps = vt[:components].T
    # fix the sign so the largest-magnitude loading of each axis is positive
    flip = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(components)])
    comps = comps * np.where(flip == 0, 1.0, flip)
    ev = np.zeros(components)
    ev[:min(components, len(var))] = var[:components]
    return PcaBasis(mean, comps, ev, float(var.sum()))


def pca_transform(basis: PcaBasis, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.mean.shape[0]:
        raise DimensionError(f"PCA: input dimension {x.shape[-1]} != basis dimension {basis.mean.shape[0]}")
    return (x - basis.mean) @ basis.components


def pca_inverse(basis: PcaBasis, z: np.ndarray) -> np.ndarray:
    return z @ basis.components.T + basis.mean
