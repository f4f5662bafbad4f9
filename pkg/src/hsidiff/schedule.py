"""Diffusion noise schedule: per-step variance increments and derived tables.

Levels are 1-based (t = 1..T). Arrays are stored 0-based, so level t lives
at index t-1; the cumulative signal coefficient at level 0 is 1 by
definition and the noise scale at level 0 is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SIGMA_POSTERIOR = "posterior_sqrt"
SIGMA_SNR = "snr"
_CONVENTIONS = (SIGMA_POSTERIOR, SIGMA_SNR)


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule tables, immutable and freely shareable.

    ``sigma_convention`` selects how the per-level noise scale is derived:

    * ``snr``: sigma_t = sqrt((1 - abar_t) / abar_t), the scale of the
      noise carried by a unit-signal iterate. This is the only convention
      under which restoration at realistic measurement noise is feasible,
      so it is the package default.
    * ``posterior_sqrt``: sigma_t = sqrt(((1 - abar_{t-1}) / (1 - abar_t)) * beta_t),
      the square root of the forward-posterior variance, with the t=1
      value clamped to sqrt(beta_1) to avoid a degenerate zero.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray
    sigma_convention: str = SIGMA_SNR

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(
        cls, betas: np.ndarray, sigma_convention: str = SIGMA_SNR
    ) -> "DiffusionSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ContractError("need at least one beta value")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ContractError("every beta must lie strictly in (0, 1)")
        if sigma_convention not in _CONVENTIONS:
            raise ContractError(f"unknown sigma convention {sigma_convention!r}")
        alpha = 1.0 - betas
        alpha_bar = np.cumprod(alpha)
        if sigma_convention == SIGMA_SNR:
            sigma = np.sqrt((1.0 - alpha_bar) / alpha_bar)
        else:
            prev = np.concatenate(([1.0], alpha_bar[:-1]))
            sigma = np.sqrt((1.0 - prev) / (1.0 - alpha_bar) * betas)
            sigma[0] = np.sqrt(betas[0])  # the formula degenerates to 0 at t=1
        for arr in (betas, alpha, alpha_bar, sigma):
            arr.flags.writeable = False
        return cls(betas, alpha, alpha_bar, sigma, sigma_convention)

    def _check_level(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ContractError(f"level {t} out of range [1, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check_level(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal coefficient; level 0 is 1 by definition."""
        if t == 0:
            return 1.0
        self._check_level(t)
        return float(self.alpha_bar[t - 1])

    def sigma_at(self, t: int) -> float:
        self._check_level(t)
        return float(self.sigma[t - 1])


def make_linear_schedule(
    T: int,
    beta_1: float = 1e-4,
    beta_T: float = 2e-3,
    sigma_convention: str = SIGMA_SNR,
) -> DiffusionSchedule:
    """Linearly interpolated beta schedule from beta_1 to beta_T over T levels."""
    if T < 2:
        raise ContractError(f"need T >= 2, got {T}")
    if not 0.0 < beta_1 <= beta_T < 1.0:
        raise ContractError(f"need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_T}")
    t = np.arange(1, T + 1, dtype=np.float64)
    betas = beta_1 + (t - 1.0) / (T - 1.0) * (beta_T - beta_1)
    return DiffusionSchedule.from_betas(betas, sigma_convention)


def sigma_t(schedule: DiffusionSchedule, t: int) -> float:
    """Noise scale at level t under the schedule's convention."""
    return schedule.sigma_at(t)


def forward_perturb(
    x0: np.ndarray, t: int, schedule: DiffusionSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Sample the forward process at level t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps."""
    schedule._check_level(t)
    x0 = np.asarray(x0, dtype=np.float64)
    abar = schedule.alpha_bar_at(t)
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
