"""Variance-preserving forward SDE and the quantities every estimator integrates.

The forward process is ``dX = -beta(t)/2 X dt + sqrt(beta(t)) dW`` with a linear
``beta`` schedule.  Its perturbation kernel is ``X_t | X_0 ~ N(k_t X_0, v_t I)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VpSchedule:
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0
    t_eps: float = 1e-5

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not 0 < self.t_eps < self.T:
            raise ValueError("need 0 < t_eps < T")

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T):
            raise ValueError(f"t outside [0, {self.T}]")
        return t

    def beta(self, t):
        return self.beta_min + (np.asarray(t) / self.T) * (self.beta_max - self.beta_min)

    def drift_coef(self, t):
        """f_t = -beta(t)/2."""
        return -0.5 * self.beta(t)

    def diffusion_coef(self, t):
        """g_t = sqrt(beta(t))."""
        return np.sqrt(self.beta(t))

    def integrated_beta(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t / self.T

    def kernel(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(k_t, v_t)`` with ``k_t = exp(-B(t)/2)`` and ``v_t = 1 - k_t^2``."""
        t = self._check(t)
        b = self.integrated_beta(t)
        return np.exp(-0.5 * b), -np.expm1(-b)

    def chi(self, t, sigma: float):
        """Variance of the diffused isotropic reference N(0, sigma^2 I)."""
        k, v = self.kernel(t)
        return k * k * sigma * sigma + v

    def time_for_integrated_beta(self, b):
        """Invert ``B(t) = b`` (positive root of the quadratic)."""
        b = np.asarray(b, dtype=np.float64)
        a = 0.5 * (self.beta_max - self.beta_min) / self.T
        return 2.0 * b / (self.beta_min + np.sqrt(self.beta_min ** 2 + 4.0 * a * b))


def perturb(schedule: VpSchedule, x0, t, noise):
    """Diffuse ``x0`` to time ``t``: ``k_t x0 + sqrt(v_t) noise``.

    ``t`` is a scalar or one value per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ValueError(f"dimension mismatch: x0 {x0.shape} vs noise {noise.shape}")
    k, v = schedule.kernel(t)
    k, v = _col(k, x0), _col(v, x0)
    return k * x0 + np.sqrt(v) * noise


def true_conditional_score(schedule: VpSchedule, x_t, x0, t):
    """Score of N(k_t x0, v_t I) at ``x_t``."""
    if np.any(np.asarray(t) <= 0):
        raise ValueError("conditional score needs t > 0")
    x_t = np.asarray(x_t, dtype=np.float64)
    k, v = schedule.kernel(t)
    return -(x_t - _col(k, x_t) * x0) / _col(v, x_t)


def gaussian_reference_score(schedule: VpSchedule, x, t, sigma: float):
    """Score ``-x / chi_t`` of the diffused N(0, sigma^2 I)."""
    x = np.asarray(x, dtype=np.float64)
    return -x / _col(schedule.chi(t, sigma), x)


def tail_correction(schedule: VpSchedule, sigma: float, n_dims: int) -> float:
    """KL(N(0, I) || N(0, chi_T I)) in ``n_dims`` dimensions."""
    if n_dims < 1:
        raise ValueError("n_dims must be >= 1")
    chi_T = float(schedule.chi(schedule.T, sigma))
    return 0.5 * n_dims * (np.log(chi_T) - 1.0 + 1.0 / chi_T)


def _col(a, like):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1 and like.ndim == 2:
        return a[:, None]
    return a


class TimeSampler:
    """Importance proposal over ``[t_eps, T]`` for time integrals.

    ``kind="likelihood"`` draws from ``q(t) ∝ g_t^2 / v_t``.  For the VP schedule
    ``∫ g^2/v dt = log(v_t / k_t^2)``, so the CDF and its inverse are exact.
    ``kind="uniform"`` draws uniformly.  In both cases ``E_q[w h(t)] = ∫ h dt``.
    """

    def __init__(self, schedule: VpSchedule, kind: str = "likelihood"):
        if kind not in ("likelihood", "uniform"):
            raise ValueError(f"unknown proposal {kind!r}")
        self.schedule = schedule
        self.kind = kind
        self._lo = self._log_snr_inv(schedule.t_eps)
        self._hi = self._log_snr_inv(schedule.T)

    def _log_snr_inv(self, t):
        # log(v_t / k_t^2) = log(expm1(B(t)))
        b = self.schedule.integrated_beta(t)
        return np.log(np.expm1(b))

    @property
    def normalizer(self) -> float:
        """Total mass of the unnormalised proposal over the support."""
        if self.kind == "uniform":
            return self.schedule.T - self.schedule.t_eps
        return float(self._hi - self._lo)

    def density(self, t):
        t = np.asarray(t, dtype=np.float64)
        s = self.schedule
        if self.kind == "uniform":
            return np.full_like(t, 1.0 / (s.T - s.t_eps))
        _, v = s.kernel(t)
        return s.beta(t) / v / self.normalizer

    def cdf(self, t):
        if self.kind == "uniform":
            s = self.schedule
            return (np.asarray(t) - s.t_eps) / (s.T - s.t_eps)
        return (self._log_snr_inv(t) - self._lo) / self.normalizer

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=np.float64)
        s = self.schedule
        if self.kind == "uniform":
            return s.t_eps + u * (s.T - s.t_eps)
        level = self._lo + u * self.normalizer
        b = np.logaddexp(0.0, level)  # log1p(exp(level))
        return np.clip(s.time_for_integrated_beta(b), s.t_eps, s.T)

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` times and their importance weights ``1/q(t)``."""
        t = self.inverse_cdf(rng.uniform(size=n))
        return t, 1.0 / self.density(t)


def sample_time(sampler: TimeSampler, rng: np.random.Generator, n: int = 1):
    return sampler.sample(rng, n)
