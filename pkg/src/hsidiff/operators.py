"""Linear degradation operators exposed through their singular value structure.

Each operator represents a measurement matrix acting on flattened cubes,
factored as (orthogonal U) x (diagonal scales) x (orthogonal V transposed).
The factors are never materialized in the production path; every kind has a
closed-form decomposition, so singular values are exact by construction:

* identity (denoising): all scales 1, both bases trivial.
* voxel selection (completion): scales 1 on observed coordinates, V is the
  permutation moving observed coordinates to the leading block.
* per-band block averaging (super-resolution): scales 1/p with multiplicity
  one per block, V rotates each p*p block onto (normalized mean, details).

``materialize_dense`` exists for test oracles only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

DENSE_LIMIT = 4096


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian measurement noise in the signed11 value range.

    The unit01-range level reported on the command line is half of
    ``sigma_y`` (rescaling [0,1] to [-1,1] doubles every distance).
    """

    sigma_y: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma_y < 0.0:
            raise ContractError(f"sigma_y must be >= 0, got {self.sigma_y}")


def add_noise(y: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """y + sigma_y * eps with i.i.d. standard normal eps, deterministic per seed."""
    y = np.asarray(y, dtype=np.float64)
    if spec.sigma_y == 0.0:
        return y.copy()
    rng = np.random.default_rng(spec.seed)
    return y + spec.sigma_y * rng.standard_normal(y.shape)


class DegradationOperator:
    """Base class; subclasses fill in the structured transforms.

    ``shape`` is the full-resolution cube shape the operator consumes.
    All vector arguments follow the cube linearization order.
    """

    kind: str

    def __init__(self, shape: tuple[int, int, int], m: int, singulars: np.ndarray):
        self.shape = tuple(int(d) for d in shape)
        self.n = self.shape[0] * self.shape[1] * self.shape[2]
        self.m = int(m)
        singulars = np.asarray(singulars, dtype=np.float64)
        singulars.flags.writeable = False
        self.singulars = singulars

    def _check(self, x: np.ndarray, length: int, name: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (length,):
            raise ContractError(f"{name}: expected shape ({length},), got {x.shape}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def v_transform(self, x: np.ndarray) -> np.ndarray:
        """Coordinates of x in the right singular basis."""
        raise NotImplementedError

    def v_inverse(self, xb: np.ndarray) -> np.ndarray:
        """Inverse of v_transform (the basis is orthogonal)."""
        raise NotImplementedError

    def ut_transform(self, y: np.ndarray) -> np.ndarray:
        """Coordinates of y in the left singular basis."""
        raise NotImplementedError

    def sigma_pinv_ut(self, y: np.ndarray) -> np.ndarray:
        """Pseudoinverse-scaled measurement, zero on rank-deficient coordinates."""
        raise NotImplementedError


class IdentityOperator(DegradationOperator):
    kind = "denoise"

    def __init__(self, shape: tuple[int, int, int]):
        n = shape[0] * shape[1] * shape[2]
        super().__init__(shape, n, np.ones(n))

    def apply(self, x):
        return self._check(x, self.n, "apply").copy()

    def apply_transpose(self, y):
        return self._check(y, self.m, "apply_transpose").copy()

    def v_transform(self, x):
        return self._check(x, self.n, "v_transform").copy()

    def v_inverse(self, xb):
        return self._check(xb, self.n, "v_inverse").copy()

    def ut_transform(self, y):
        return self._check(y, self.m, "ut_transform").copy()

    def sigma_pinv_ut(self, y):
        return self._check(y, self.m, "sigma_pinv_ut").copy()


class CompletionOperator(DegradationOperator):
    """Selection of observed voxels; the right basis is a permutation."""

    kind = "completion"

    def __init__(self, mask: np.ndarray, shape: tuple[int, int, int]):
        mask = np.asarray(mask)
        if mask.shape == shape:
            flat = mask.astype(bool).ravel(order="F")
        else:
            flat = mask.astype(bool).ravel()
        n = shape[0] * shape[1] * shape[2]
        if flat.size != n:
            raise ContractError(f"mask size {flat.size} does not match cube size {n}")
        observed = np.flatnonzero(flat)
        if observed.size == 0:
            raise ContractError("mask observes no voxels")
        m = observed.size
        singulars = np.concatenate([np.ones(m), np.zeros(n - m)])
        super().__init__(shape, m, singulars)
        self.observed = observed
        self.perm = np.concatenate([observed, np.flatnonzero(~flat)])
        for arr in (self.observed, self.perm):
            arr.flags.writeable = False

    def apply(self, x):
        return self._check(x, self.n, "apply")[self.observed]

    def apply_transpose(self, y):
        y = self._check(y, self.m, "apply_transpose")
        out = np.zeros(self.n)
        out[self.observed] = y
        return out

    def v_transform(self, x):
        return self._check(x, self.n, "v_transform")[self.perm]

    def v_inverse(self, xb):
        xb = self._check(xb, self.n, "v_inverse")
        out = np.empty(self.n)
        out[self.perm] = xb
        return out

    def ut_transform(self, y):
        return self._check(y, self.m, "ut_transform").copy()

    def sigma_pinv_ut(self, y):
        y = self._check(y, self.m, "sigma_pinv_ut")
        out = np.zeros(self.n)
        out[: self.m] = y
        return out


def _block_basis(p: int) -> np.ndarray:
    """Orthonormal basis of the p*p block space whose first row is the
    normalized constant vector. The completion of that vector is fixed by a
    hard-coded seed so the decomposition is identical across runs."""
    size = p * p
    basis = np.empty((size, size))
    basis[0] = 1.0 / p
    rng = np.random.default_rng(987654321)
    raw = rng.standard_normal((size + 8, size))
    row = 1
    for cand in raw:
        v = cand.copy()
        for _ in range(2):  # repeated Gram-Schmidt for orthogonality to ~1e-15
            for u in basis[:row]:
                v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm < 1e-6:
            continue
        basis[row] = v / norm
        row += 1
        if row == size:
            break
    if row != size:
        raise RuntimeError("failed to complete the block basis")
    return basis


class BlockAverageOperator(DegradationOperator):
    """Per-band p*p block averaging; every block contributes one output pixel."""

    kind = "sr_block"

    def __init__(self, shape: tuple[int, int, int], p: int):
        if p not in (2, 4, 8):
            raise ContractError(f"scale factor must be one of 2, 4, 8, got {p}")
        h, w, b = shape
        if h % p != 0 or w % p != 0:
            raise ContractError(f"spatial dims {h}x{w} not divisible by p={p}")
        n = h * w * b
        ho, wo = h // p, w // p
        m = ho * wo * b
        self.p = p
        singulars = np.concatenate([np.full(m, 1.0 / p), np.zeros(n - m)])
        super().__init__(shape, m, singulars)

        # block_index[b_out] lists the p*p flat input indices of the block
        # feeding output voxel b_out, column-major inside the block; b_out
        # runs over the output cube's own linearization order.
        ib, jb, kb = np.unravel_index(np.arange(m), (ho, wo, b), order="F")
        local = np.arange(p * p)
        di, dj = local % p, local // p
        self.block_index = (
            kb[:, None] * (h * w)
            + (jb[:, None] * p + dj[None, :]) * h
            + (ib[:, None] * p + di[None, :])
        )
        self.basis = _block_basis(p)
        for arr in (self.block_index, self.basis):
            arr.flags.writeable = False

    def apply(self, x):
        x = self._check(x, self.n, "apply")
        return x[self.block_index].mean(axis=1)

    def apply_transpose(self, y):
        y = self._check(y, self.m, "apply_transpose")
        out = np.zeros(self.n)
        out[self.block_index] = y[:, None] / (self.p * self.p)
        return out

    def v_transform(self, x):
        x = self._check(x, self.n, "v_transform")
        gathered = x[self.block_index]
        out = np.empty(self.n)
        out[: self.m] = gathered @ self.basis[0]
        out[self.m :] = (gathered @ self.basis[1:].T).ravel()
        return out

    def v_inverse(self, xb):
        xb = self._check(xb, self.n, "v_inverse")
        details = xb[self.m :].reshape(self.m, -1)
        blocks = xb[: self.m, None] * self.basis[0][None, :] + details @ self.basis[1:]
        out = np.empty(self.n)
        out[self.block_index] = blocks
        return out

    def ut_transform(self, y):
        return self._check(y, self.m, "ut_transform").copy()

    def sigma_pinv_ut(self, y):
        y = self._check(y, self.m, "sigma_pinv_ut")
        out = np.zeros(self.n)
        out[: self.m] = y * self.p
        return out


def make_denoise(shape: tuple[int, int, int]) -> IdentityOperator:
    if min(shape) <= 0:
        raise ContractError(f"dimensions must be positive, got {shape}")
    return IdentityOperator(shape)


def make_completion(mask: np.ndarray, shape: tuple[int, int, int]) -> CompletionOperator:
    return CompletionOperator(mask, shape)


def make_sr_block(shape: tuple[int, int, int], p: int) -> BlockAverageOperator:
    return BlockAverageOperator(shape, p)


def make_mask(
    shape: tuple[int, int, int], sampling_rate: float, seed: int
) -> np.ndarray:
    """I.i.d. Bernoulli(sampling_rate) voxel mask as a boolean cube array."""
    if not 0.0 < sampling_rate <= 1.0:
        raise ContractError(f"sampling rate must be in (0, 1], got {sampling_rate}")
    rng = np.random.default_rng(seed)
    mask = rng.random(shape) < sampling_rate
    if not mask.any():
        # a degenerate draw at tiny rates; guarantee the contract
        mask.flat[0] = True
    return mask


def materialize_dense(op: DegradationOperator) -> np.ndarray:
    """Explicit dense matrix, column by column. Test oracle only."""
    if op.n > DENSE_LIMIT:
        raise ContractError(f"refusing to materialize n={op.n} > {DENSE_LIMIT}")
    dense = np.empty((op.m, op.n))
    basis = np.zeros(op.n)
    for c in range(op.n):
        basis[c] = 1.0
        dense[:, c] = op.apply(basis)
        basis[c] = 0.0
    return dense
