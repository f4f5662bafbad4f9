"""Synthetic low-rank ground-truth cubes for desk-scale experiments.

A cube is drawn as a sum of rank-one terms: smooth nonnegative abundance
maps normalized to a per-pixel simplex, times smooth spectra in [0, 1].
The simplex constraint keeps values inside [0, 1] and pins the spectral
rank of the result, so every generated cube is a clean member of the model
class the restoration assumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .cube import HSICube, RANGE_UNIT01
from .errors import ContractError


@dataclass(frozen=True)
class SynthSpec:
    shape: tuple[int, int, int]
    rank: int = 3
    smoothness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ContractError(f"rank must be >= 1, got {self.rank}")
        if min(self.shape) <= 0:
            raise ContractError(f"dimensions must be positive, got {self.shape}")
        if self.smoothness < 0.0:
            raise ContractError(f"smoothness must be >= 0, got {self.smoothness}")


def make_synthetic(spec: SynthSpec) -> tuple[HSICube, np.ndarray, np.ndarray]:
    """Deterministic (cube, abundances, spectra) triple for a spec.

    Returns the cube plus the exact factors: abundances with shape
    (height, width, rank) summing to one per pixel, and spectra with shape
    (bands, rank), each spectrum inside [0.05, 0.95].
    """
    h, w, b = spec.shape
    rng = np.random.default_rng(spec.seed)

    maps = rng.random((h, w, spec.rank))
    if spec.smoothness > 0.0:
        for r in range(spec.rank):
            maps[:, :, r] = gaussian_filter(maps[:, :, r], spec.smoothness, mode="reflect")
    maps += 1e-3  # keep the simplex normalization away from 0/0
    maps /= maps.sum(axis=2, keepdims=True)

    spectra = rng.random((b, spec.rank))
    if b > 2:
        spectra = gaussian_filter1d(spectra, max(spec.smoothness, 1.0), axis=0, mode="reflect")
    lo, hi = spectra.min(axis=0, keepdims=True), spectra.max(axis=0, keepdims=True)
    span = np.where(hi - lo < 1e-9, 1.0, hi - lo)
    spectra = 0.05 + 0.9 * (spectra - lo) / span

    cube_arr = np.einsum("ijr,kr->ijk", maps, spectra)
    cube = HSICube.from_array(cube_arr, RANGE_UNIT01)
    return cube, maps, spectra
