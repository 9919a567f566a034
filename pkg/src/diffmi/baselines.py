"""Discriminative variational MI bounds (MINE, DV, NWJ, InfoNCE) and KSG.

Neural critics score concatenated pairs ``f(x, y)``.  Training maximises the
chosen lower bound with Adam; the critic with the best validation bound is kept.
Test-time bounds are evaluated on ``batch_size`` chunks using every pair in the
chunk: the diagonal plays the joint, the off-diagonal the product of marginals.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import special
from scipy.spatial import cKDTree
from scipy.stats import norm, rankdata

from . import nncore as nn
from .estimators import MiEstimate

log = logging.getLogger(__name__)


class BaselineVariant(str, enum.Enum):
    MINE = "mine"
    DV = "dv"
    NWJ = "nwj"
    INFONCE = "infonce"
    KSG = "ksg"

    @property
    def neural(self) -> bool:
        return self is not BaselineVariant.KSG


@dataclass
class CriticConfig:
    width: int = 64
    n_layers: int = 3
    lr: float = 5e-4
    batch_size: int = 128
    max_iterations: int = 20_000
    eval_every: int = 250
    patience: int = 20
    val_fraction: float = 0.1
    ema_rate: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError("critic needs at least two layers")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


class Critic(nn.Module):
    """Concatenation critic: an MLP on ``[x, y]`` with a scalar head."""

    def __init__(self, x_dim: int, y_dim: int, width: int = 64, n_layers: int = 3,
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        self.x_dim, self.y_dim = x_dim, y_dim
        sizes = [x_dim + y_dim] + [width] * (n_layers - 1) + [1]
        self.net = nn.MLP(sizes, rng, activation="relu", name="critic")
        self.best_step = 0
        self.val_curve: list[float] = []

    def __call__(self, xy) -> nn.Tensor:
        return self.net(xy)

    def scores(self, x, y) -> np.ndarray:
        return self(np.hstack([x, y])).data[:, 0]

    def pair_matrix(self, x, y) -> nn.Tensor:
        """``f(x_i, y_j)`` for every ``i, j`` flattened row-major to ``(B*B, 1)``."""
        b = len(x)
        xy = np.hstack([np.repeat(x, b, axis=0), np.tile(y, (b, 1))])
        return self(xy)


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(n)
    return perm[np.roll(np.arange(n), 1)][np.argsort(perm)]


# -- bounds on a score matrix (numpy, evaluation only) ------------------------------

def _matrix_bound(variant: BaselineVariant, f: np.ndarray) -> float:
    b = len(f)
    joint = np.mean(np.diagonal(f))
    off = f[~np.eye(b, dtype=bool)]
    if variant in (BaselineVariant.DV, BaselineVariant.MINE):
        return float(joint - (special.logsumexp(off) - np.log(off.size)))
    if variant is BaselineVariant.NWJ:
        return float(joint - np.exp(special.logsumexp(off - 1.0) - np.log(off.size)))
    if variant is BaselineVariant.INFONCE:
        return float(np.mean(np.diagonal(f) - special.logsumexp(f, axis=1)) + np.log(b))
    raise ValueError(variant)


def evaluate_bound(critic: Critic, variant, x, y, batch_size: int = 128):
    """Chunked bound on held-out pairs; returns ``(mean, stderr, n_chunks)``."""
    variant = BaselineVariant(variant)
    n_chunks = len(x) // batch_size
    if n_chunks < 1:
        raise ValueError(f"need at least {batch_size} samples to evaluate")
    vals = []
    for c in range(n_chunks):
        sl = slice(c * batch_size, (c + 1) * batch_size)
        f = critic.pair_matrix(x[sl], y[sl]).data.reshape(batch_size, batch_size)
        vals.append(_matrix_bound(variant, f))
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se, len(vals)


# -- training losses (autodiff) -------------------------------------------------------------

class _MineDenominator:
    """EMA of ``E_q[e^f]`` kept in log space for the bias-corrected gradient."""

    def __init__(self, rate: float):
        self.rate = rate
        self.log_ema: float | None = None

    def update(self, log_mean_exp: float) -> float:
        if self.log_ema is None:
            self.log_ema = log_mean_exp
        else:
            self.log_ema = float(np.logaddexp(np.log(self.rate) + self.log_ema,
                                              np.log1p(-self.rate) + log_mean_exp))
        return self.log_ema


def _loss(variant, critic, x, y, rng, mine_state):
    b = len(x)
    if variant is BaselineVariant.INFONCE:
        f = nn.reshape(critic.pair_matrix(x, y), (b, b))
        return -(nn.mean(nn.take_diag(f)) - nn.mean(nn.logsumexp(f, axis=1)))
    idx = _derangement(b, rng)
    f_joint = critic(np.hstack([x, y]))
    f_marg = critic(np.hstack([x, y[idx]]))
    joint = nn.mean(f_joint)
    if variant is BaselineVariant.DV:
        lme = nn.logsumexp(f_marg) - np.log(b)
        return -(joint - lme)
    if variant is BaselineVariant.NWJ:
        lme = nn.logsumexp(f_marg - 1.0) - np.log(b)
        return -(joint - nn.exp(lme))
    if variant is BaselineVariant.MINE:
        shift = float(np.max(f_marg.data))
        log_cur = float(special.logsumexp(f_marg.data) - np.log(b))
        log_ema = mine_state.update(log_cur)
        scaled = nn.mean(nn.exp(f_marg - shift))
        # gradient equals grad E[e^f] / EMA(E[e^f])
        return -(joint - scaled * float(np.exp(min(shift - log_ema, 700.0))))
    raise ValueError(variant)


def train_critic(variant, x, y, config: CriticConfig | None = None,
                 rng: np.random.Generator | None = None, progress: bool = False) -> Critic:
    """Maximise the variant's bound on ``(x, y)`` with early stopping.

    Every ``eval_every`` steps the bound is measured on a held-out split; the
    critic with the best such value is restored once ``patience`` evaluations
    pass without improvement (or iterations run out).
    """
    variant = BaselineVariant(variant)
    if not variant.neural:
        raise ValueError("KSG has no critic")
    config = config or CriticConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y):
        raise ValueError("x and y must be paired 2-D arrays")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    perm = rng.permutation(len(x))
    n_val = max(config.batch_size, int(round(config.val_fraction * len(x))))
    if len(x) - n_val < config.batch_size:
        raise ValueError("not enough samples for a training batch after the validation split")
    val, tr = perm[:n_val], perm[n_val:]
    x_val, y_val, x_tr, y_tr = x[val], y[val], x[tr], y[tr]

    critic = Critic(x.shape[1], y.shape[1], config.width, config.n_layers,
                    seed=int(rng.integers(2 ** 31)))
    params = critic.parameters()
    opt = nn.Adam(params, lr=config.lr)
    mine_state = _MineDenominator(config.ema_rate)
    best, best_state, since = -np.inf, critic.state(), 0
    for it in range(config.max_iterations):
        idx = rng.integers(0, len(x_tr), size=config.batch_size)
        try:
            with nn.Tape() as tape:
                loss = _loss(variant, critic, x_tr[idx], y_tr[idx], rng, mine_state)
            opt.step(tape.backward(loss))
        except (nn.TrainingDiverged, nn.NonFiniteError) as err:
            raise nn.TrainingDiverged(f"{variant.value} critic diverged at step {it}: {err}",
                                      checkpoint=best_state) from err
        if (it + 1) % config.eval_every == 0:
            value, _, _ = evaluate_bound(critic, variant, x_val, y_val, config.batch_size)
            critic.val_curve.append(value)
            if progress:
                log.info("%s step %d val bound %.4f", variant.value, it + 1, value)
            if value > best:
                best, best_state, since = value, critic.state(), 0
                critic.best_step = it + 1
            else:
                since += 1
                if since >= config.patience:
                    break
    critic.load_state(best_state)
    return critic


def ksg(x, y, k: int = 10, rank_transform: bool = True) -> MiEstimate:
    """Kraskov estimator (first algorithm) with the max-norm.

    With ``rank_transform`` each coordinate is first replaced by the normal
    score of its rank, which makes the estimate exactly invariant to strictly
    monotone per-coordinate maps.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    n = len(x)
    if len(y) != n:
        raise ValueError("x and y must be paired")
    if k < 1 or int(k) != k:
        raise ValueError("k must be a positive integer")
    if n <= k + 1:
        raise ValueError(f"need more than k+1={k + 1} samples, got {n}")
    if rank_transform:
        x, y = _normal_scores(x), _normal_scores(y)
    xy = np.hstack([x, y])
    dist, _ = cKDTree(xy).query(xy, k=k + 1, p=np.inf)
    eps = dist[:, -1]
    # strictly-closer neighbours, excluding the point itself
    radius = np.nextafter(eps, 0)
    nx = cKDTree(x).query_ball_point(x, radius, p=np.inf, return_length=True) - 1
    ny = cKDTree(y).query_ball_point(y, radius, p=np.inf, return_length=True) - 1
    terms = special.digamma(k) + special.digamma(n) - special.digamma(nx + 1) - special.digamma(ny + 1)
    return MiEstimate(mean=float(terms.mean()), stderr=float(terms.std(ddof=1) / np.sqrt(n)),
                      n_points=n, n_time_samples=0, variant=f"ksg{k}")


def _normal_scores(a):
    ranks = rankdata(a, axis=0)
    return norm.ppf(ranks / (len(a) + 1))


def estimate(variant, x_test, y_test, critic: Critic | None = None, k: int = 10,
             batch_size: int = 128) -> MiEstimate:
    """Bound value on held-out samples (neural) or the KSG estimate."""
    variant = BaselineVariant(variant)
    if not variant.neural:
        return ksg(x_test, y_test, k)
    if critic is None:
        raise ValueError(f"{variant.value} needs a trained critic")
    mean, se, n_chunks = evaluate_bound(critic, variant, np.asarray(x_test, float),
                                        np.asarray(y_test, float), batch_size)
    return MiEstimate(mean=mean, stderr=se, n_points=n_chunks * batch_size, n_time_samples=0,
                      variant=variant.value, flags=[f"best_step={critic.best_step}"])
