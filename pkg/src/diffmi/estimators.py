"""KL divergence, entropy and mutual information from score differences.

All estimators are Monte Carlo integrals over diffusion time of
``g_t^2 / 2 * E ||s_a(X_t) - s_b(X_t)||^2`` with ``X_t`` obtained by diffusing
the supplied clean samples.  Times come from :class:`TimeSampler`, so each draw
carries its importance weight.

A score oracle is anything with the methods an estimator calls:

* KL / entropy: a callable ``score(x, t) -> array``.
* conditional MI: ``marginal_score(x, t)`` and ``conditional_score(x, y, t)``.
* joint MI: ``joint_score(x, y, t)``, ``cond_score_a(x, y0, t)``,
  ``cond_score_b(x0, y, t)``.

Trained models from :mod:`diffmi.score_models` and the analytic Gaussian
oracles below both satisfy these.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .sde import TimeSampler, VpSchedule, tail_correction


class EstimatorVariant(str, enum.Enum):
    COND_SIGMA = "minde_c_sigma"
    COND = "minde_c"
    JOINT_SIGMA = "minde_j_sigma"
    JOINT = "minde_j"

    @property
    def needs_sigma(self) -> bool:
        return self in (EstimatorVariant.COND_SIGMA, EstimatorVariant.JOINT_SIGMA)


class DegenerateInputWarning(UserWarning):
    """The two variables coincide; their MI is infinite."""


@dataclass
class McConfig:
    n_runs: int = 10
    n_time: int = 1
    proposal: str = "likelihood"

    def __post_init__(self):
        if self.n_runs < 1 or self.n_time < 1:
            raise ValueError("n_runs and n_time must be >= 1")


@dataclass
class MiEstimate:
    mean: float
    stderr: float
    n_points: int
    n_time_samples: int
    variant: str
    sigma: float | None = None
    seed: int | None = None
    run_means: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# -- analytic oracles --------------------------------------------------------------

class GaussianScore:
    """Exact score of a diffused N(mean, cov): ``-(k^2 C + v I)^{-1} (x - k m)``."""

    kind = "analytic"

    def __init__(self, mean, cov, schedule: VpSchedule | None = None):
        self.cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self.mean = np.zeros(len(self.cov)) if mean is None else np.asarray(mean, float).ravel()
        self.schedule = schedule or VpSchedule()
        self._lam, self._u = np.linalg.eigh(self.cov)

    def __call__(self, x, t):
        return _diffused_gaussian_score(self.schedule, self._lam, self._u, x, self.mean, t)


def _diffused_gaussian_score(schedule, lam, u, x, centre, t):
    """Batched ``-(k^2 C + v I)^{-1} (x - k centre)`` using ``C = U diag(lam) U^T``.

    ``centre`` is one mean or one mean per row.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))
    k, v = schedule.kernel(t)
    r = x - k[:, None] * centre
    z = r @ u
    z = z / (k[:, None] ** 2 * lam[None, :] + v[:, None])
    return -(z @ u.T)


class GaussianPairOracle:
    """Exact marginal, conditional and joint scores for a Gaussian pair (A, B).

    ``cov`` is the covariance of ``[A; B]`` with zero mean; A takes the first
    ``x_dim`` coordinates.
    """

    kind = "analytic"

    def __init__(self, cov, x_dim: int, schedule: VpSchedule | None = None):
        cov = np.asarray(cov, dtype=np.float64)
        self.schedule = schedule or VpSchedule()
        self.x_dim = x_dim
        sa, sb = cov[:x_dim, :x_dim], cov[x_dim:, x_dim:]
        sab = cov[:x_dim, x_dim:]
        self.gain_a = sab @ np.linalg.inv(sb)       # E[A | B=y] = gain_a y
        self.gain_b = sab.T @ np.linalg.inv(sa)     # E[B | A=x] = gain_b x
        self._eig = {
            "a": np.linalg.eigh(sa),
            "b": np.linalg.eigh(sb),
            "joint": np.linalg.eigh(cov),
            "a|b": np.linalg.eigh(sa - self.gain_a @ sab.T),
            "b|a": np.linalg.eigh(sb - self.gain_b @ sab),
        }

    def _score(self, which, x, centre, t):
        lam, u = self._eig[which]
        return _diffused_gaussian_score(self.schedule, lam, u, x, centre, t)

    def marginal_score(self, x, t):
        return self._score("a", x, 0.0, t)

    def marginal_score_b(self, y, t):
        return self._score("b", y, 0.0, t)

    def conditional_score(self, x, y, t):
        return self._score("a|b", x, np.asarray(y) @ self.gain_a.T, t)

    cond_score_a = conditional_score

    def cond_score_b(self, x0, y, t):
        return self._score("b|a", y, np.asarray(x0) @ self.gain_b.T, t)

    def joint_score(self, x, y, t):
        return self._score("joint", np.concatenate([x, y], axis=1), 0.0, t)


# -- Monte Carlo machinery ------------------------------------------------------------

def _draws(schedule, mc: McConfig, rng, n_points):
    """Yield ``(t, weight * g_t^2 / 2)`` for each of ``n_runs * n_time`` sweeps."""
    sampler = TimeSampler(schedule, mc.proposal)
    for _ in range(mc.n_runs * mc.n_time):
        t, w = sampler.sample(rng, n_points)
        yield t, 0.5 * w * schedule.beta(t)


def _diffuse(schedule, x0, t, rng):
    k, v = schedule.kernel(t)
    return k[:, None] * x0 + np.sqrt(v)[:, None] * rng.standard_normal(x0.shape)


def _summarize(values: list[np.ndarray], mc: McConfig, n_points, variant, sigma=None,
               seed=None, flags=None) -> MiEstimate:
    per_run = [np.concatenate(values[r * mc.n_time:(r + 1) * mc.n_time])
               for r in range(mc.n_runs)]
    allv = np.concatenate(per_run)
    return MiEstimate(
        mean=float(allv.mean()),
        stderr=float(allv.std(ddof=1) / np.sqrt(len(allv))) if len(allv) > 1 else 0.0,
        n_points=int(n_points),
        n_time_samples=mc.n_time * mc.n_runs,
        variant=str(variant),
        sigma=sigma,
        seed=seed,
        run_means=[float(r.mean()) for r in per_run],
        flags=list(flags or []),
    )


def _sq(a):
    return np.sum(a * a, axis=1)


def _check_samples(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) == 0:
        raise ValueError("empty sample set")
    return x


def kl_divergence(score_a, score_b, samples, schedule: VpSchedule | None = None,
                  mc: McConfig | None = None, rng: np.random.Generator | None = None,
                  seed: int | None = None) -> MiEstimate:
    """KL(mu_A || mu_B) from two score oracles and samples of mu_A.

    The KL between the terminal marginals is treated as zero.
    """
    schedule = schedule or VpSchedule()
    mc = mc or McConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    x0 = _check_samples(samples)
    values = []
    for t, wg in _draws(schedule, mc, rng, len(x0)):
        xt = _diffuse(schedule, x0, t, rng)
        sa, sb = score_a(xt, t), score_b(xt, t)
        if sa.shape != xt.shape or sb.shape != xt.shape:
            raise ValueError(f"score dimension mismatch: {sa.shape}, {sb.shape} vs {xt.shape}")
        values.append(wg * _sq(sa - sb))
    return _summarize(values, mc, len(x0), "kl", seed=seed)


def entropy(score_a, samples, sigma: float = 1.0, schedule: VpSchedule | None = None,
            mc: McConfig | None = None, rng: np.random.Generator | None = None,
            seed: int | None = None) -> MiEstimate:
    """Differential entropy (nats) of mu_A against an isotropic N(0, sigma^2 I) reference.

    ``(N/2) log(2 pi sigma^2) + E||X||^2 / (2 sigma^2) - e(mu_A, N_sigma) - tail``.
    The second-moment term is folded into the per-point values so the
    reported standard error covers both random terms.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    schedule = schedule or VpSchedule()
    mc = mc or McConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    x0 = _check_samples(samples)
    dim = x0.shape[1]
    const = 0.5 * dim * np.log(2 * np.pi * sigma ** 2) - tail_correction(schedule, sigma, dim)
    moment = _sq(x0) / (2 * sigma ** 2)
    values = []
    for t, wg in _draws(schedule, mc, rng, len(x0)):
        xt = _diffuse(schedule, x0, t, rng)
        ref = -xt / schedule.chi(t, sigma)[:, None]
        values.append(const + moment - wg * _sq(score_a(xt, t) - ref))
    return _summarize(values, mc, len(x0), "entropy", sigma=sigma, seed=seed)


def _prepare_pair(x, y, variant, sigma, expected):
    variant = EstimatorVariant(variant)
    if variant not in expected:
        raise ValueError(f"variant {variant.value} not valid here")
    if variant.needs_sigma and sigma is None:
        raise ValueError(f"{variant.value} requires sigma")
    if not variant.needs_sigma and sigma is not None:
        raise ValueError(f"{variant.value} does not accept sigma")
    if sigma is not None and sigma <= 0:
        raise ValueError("sigma must be positive")
    x, y = _check_samples(x), _check_samples(y)
    if len(x) != len(y):
        raise ValueError("x and y must be paired")
    flags = []
    if x.shape == y.shape and np.allclose(x, y):
        warnings.warn("B equals A: mutual information is infinite; reporting the finite "
                      "Monte Carlo value", DegenerateInputWarning, stacklevel=3)
        flags.append("degenerate_self_information")
    return variant, x, y, flags


def mi_minde_c(model, x, y, variant=EstimatorVariant.COND, sigma: float | None = None,
               mc: McConfig | None = None, rng: np.random.Generator | None = None,
               seed: int | None = None, schedule: VpSchedule | None = None) -> MiEstimate:
    """I(A; B) from marginal and conditional scores of A.

    ``COND`` integrates ``||s_A - s_{A|y}||^2``; ``COND_SIGMA`` the entropy
    difference ``||s_{A|y} + x/chi||^2 - ||s_A + x/chi||^2``.
    """
    variant, x0, y0, flags = _prepare_pair(
        x, y, variant, sigma, (EstimatorVariant.COND, EstimatorVariant.COND_SIGMA))
    schedule = schedule or getattr(model, "schedule", None) or VpSchedule()
    mc = mc or McConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    values = []
    for t, wg in _draws(schedule, mc, rng, len(x0)):
        xt = _diffuse(schedule, x0, t, rng)
        s_marg = model.marginal_score(xt, t)
        s_cond = model.conditional_score(xt, y0, t)
        if variant is EstimatorVariant.COND:
            values.append(wg * _sq(s_marg - s_cond))
        else:
            ref = xt / schedule.chi(t, sigma)[:, None]
            values.append(wg * (_sq(s_cond + ref) - _sq(s_marg + ref)))
    return _summarize(values, mc, len(x0), variant.value, sigma, seed, flags)


def mi_minde_j(model, x, y, variant=EstimatorVariant.JOINT, sigma: float | None = None,
               mc: McConfig | None = None, rng: np.random.Generator | None = None,
               seed: int | None = None, schedule: VpSchedule | None = None) -> MiEstimate:
    """I(A; B) from joint and both conditional scores.

    ``JOINT`` integrates ``||s_C - [s_{A|y0}, s_{B|x0}]||^2``; ``JOINT_SIGMA``
    the three-entropy combination with the Gaussian reference.
    """
    variant, x0, y0, flags = _prepare_pair(
        x, y, variant, sigma, (EstimatorVariant.JOINT, EstimatorVariant.JOINT_SIGMA))
    schedule = schedule or getattr(model, "schedule", None) or VpSchedule()
    mc = mc or McConfig()
    rng = rng if rng is not None else np.random.default_rng(seed)
    values = []
    for t, wg in _draws(schedule, mc, rng, len(x0)):
        xt = _diffuse(schedule, x0, t, rng)
        yt = _diffuse(schedule, y0, t, rng)
        s_joint = model.joint_score(xt, yt, t)
        s_a = model.cond_score_a(xt, y0, t)
        s_b = model.cond_score_b(x0, yt, t)
        if variant is EstimatorVariant.JOINT:
            values.append(wg * _sq(s_joint - np.concatenate([s_a, s_b], axis=1)))
        else:
            inv_chi = 1.0 / schedule.chi(t, sigma)[:, None]
            xyt = np.concatenate([xt, yt], axis=1)
            values.append(wg * (_sq(s_a + xt * inv_chi) + _sq(s_b + yt * inv_chi)
                                - _sq(s_joint + xyt * inv_chi)))
    return _summarize(values, mc, len(x0), variant.value, sigma, seed, flags)


def estimate_mi(model, x, y, variant, sigma=None, **kw) -> MiEstimate:
    variant = EstimatorVariant(variant)
    if variant in (EstimatorVariant.COND, EstimatorVariant.COND_SIGMA):
        return mi_minde_c(model, x, y, variant, sigma, **kw)
    return mi_minde_j(model, x, y, variant, sigma, **kw)


def kl_linear_invariance_check(mean_a, cov_a, mean_b, cov_b, q, n: int = 100_000,
                               schedule: VpSchedule | None = None,
                               mc: McConfig | None = None, seed: int = 0):
    """Compare KL(A||B) with KL(QA||QB) for an orthogonal ``q``.

    The rotated oracles are the original analytic scores composed with
    ``q^T`` and mapped back by ``q``.  Returns ``(discrepancy, combined_stderr)``.
    """
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    if not np.allclose(q.T @ q, np.eye(len(q)), atol=1e-10):
        raise ValueError("q must be orthogonal")
    schedule = schedule or VpSchedule()
    mc = mc or McConfig(n_runs=1)
    sa = GaussianScore(mean_a, cov_a, schedule)
    sb = GaussianScore(mean_b, cov_b, schedule)
    rng = np.random.default_rng(seed)
    xa = rng.multivariate_normal(np.asarray(mean_a, float), np.asarray(cov_a, float), size=n)
    base = kl_divergence(sa, sb, xa, schedule, mc, np.random.default_rng(seed + 1))
    rot = kl_divergence(lambda x, t: sa(x @ q, t) @ q.T, lambda x, t: sb(x @ q, t) @ q.T,
                        xa @ q.T, schedule, mc, np.random.default_rng(seed + 1))
    return abs(rot.mean - base.mean), float(np.hypot(rot.stderr, base.stderr))


def score_error_diagnostic(score_learned, score_true, score_ref, samples,
                           schedule: VpSchedule | None = None, mc: McConfig | None = None,
                           seed: int = 0) -> float:
    """``e(learned) - e(analytic)`` against a common reference score, same draws."""
    schedule = schedule or VpSchedule()
    mc = mc or McConfig(n_runs=1)
    a = kl_divergence(score_learned, score_ref, samples, schedule, mc, seed=seed)
    b = kl_divergence(score_true, score_ref, samples, schedule, mc, seed=seed)
    return a.mean - b.mean
