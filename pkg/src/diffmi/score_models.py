"""Score networks for the conditional and masked-joint diffusion flavours.

Both flavours share one residual MLP.  The network predicts the noise ``eps``
that produced ``x_t``; scores are recovered as ``-eps / sqrt(v_t)``.

* :class:`CondScoreModel` scores variable A.  With ``c=1`` it sees the context
  ``y`` (conditional score of A given B=y), with ``c=0`` the context is zeroed
  (marginal score of A).
* :class:`JointScoreModel` sees ``[x, y]`` and a mask ``(alpha, beta)``:
  ``(1, 1)`` is the joint score, ``(1, 0)`` diffuses x with y held clean,
  ``(0, 1)`` the reverse.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nncore as nn
from .sde import TimeSampler, VpSchedule

log = logging.getLogger(__name__)

JOINT_MASKS = ((1, 1), (1, 0), (0, 1))


@dataclass(frozen=True)
class ScoreArch:
    x_dim: int
    y_dim: int
    width: int = 64
    n_blocks: int = 3
    time_embed: int = 64
    norm: bool = True

    def __post_init__(self):
        if min(self.x_dim, self.y_dim, self.width, self.time_embed, self.n_blocks) <= 0:
            raise ValueError(f"invalid architecture {self}")
        if self.time_embed % 2:
            raise ValueError("time_embed must be even")


@dataclass
class TrainConfig:
    d: float = 0.5
    lr: float = 1e-3
    batch_size: int = 128
    iterations: int = 50_000
    ema_momentum: float = 0.999
    seed: int = 0
    proposal: str = "likelihood"
    val_fraction: float = 0.05
    eval_every: int = 1000

    def __post_init__(self):
        if not 0.0 <= self.d <= 1.0:
            raise ValueError("d must lie in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    val_steps: list[int] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    def running_mean(self, window: int = 1000) -> np.ndarray:
        x = np.asarray(self.losses)
        if len(x) < window:
            return np.array([x.mean()]) if len(x) else x
        c = np.cumsum(np.insert(x, 0, 0.0))
        return (c[window:] - c[:-window]) / window


def sinusoidal_embedding(t, dim: int, scale: float = 1000.0) -> np.ndarray:
    """Fixed sin/cos features of ``scale * t`` over geometric frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10_000.0) * np.arange(half) / half)
    ang = scale * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ScoreNet(nn.Module):
    """Residual MLP: input projection + time + flag embeddings, then blocks.

    Blocks are pre-normalized by default (see ``nncore.ResidualBlock``). The
    output head is zero-initialised so every score starts at 0.
    """

    def __init__(self, n_in: int, n_out: int, n_flags: int, width: int, n_blocks: int,
                 time_embed: int, rng: np.random.Generator, norm: bool = True):
        self.time_embed = time_embed
        self.inp = nn.Linear(n_in, width, rng, name="inp")
        self.temb = nn.Linear(time_embed, width, rng, name="temb")
        self.flags = nn.Parameter(rng.normal(scale=0.1, size=(n_flags, width)), "flags")
        self.blocks = [nn.ResidualBlock(width, rng, name=f"block{i}", norm=norm)
                       for i in range(n_blocks)]
        self.out = nn.Linear(width, n_out, rng, zero=True, name="out")

    def __call__(self, x: np.ndarray, t: np.ndarray, flag_idx: np.ndarray) -> nn.Tensor:
        onehot = np.zeros((len(flag_idx), self.flags.shape[0]))
        onehot[np.arange(len(flag_idx)), flag_idx] = 1.0
        h = (self.inp(x) + self.temb(sinusoidal_embedding(t, self.time_embed))
             + nn.linear(onehot, self.flags))
        for block in self.blocks:
            h = block(h)
        return self.out(nn.silu(h))


class _Base:
    kind = "base"

    def __init__(self, arch: ScoreArch, schedule: VpSchedule | None = None, seed: int = 0):
        self.arch = arch
        self.schedule = schedule or VpSchedule()
        self.init_seed = seed
        self.history = TrainHistory()
        self.raw_state: list[np.ndarray] | None = None

    def parameters(self):
        return self.net.parameters()

    def state(self):
        return self.net.state()

    def load_state(self, arrays):
        self.net.load_state(arrays)

    def _t_rows(self, t, n):
        t = np.asarray(t, dtype=np.float64)
        if t.ndim == 0:
            t = np.full(n, float(t))
        s = self.schedule
        if np.any(t < s.t_eps * (1 - 1e-12)) or np.any(t > s.T):
            raise ValueError(f"t must lie in [{s.t_eps}, {s.T}]")
        return t

    def _to_score(self, eps, t):
        _, v = self.schedule.kernel(t)
        return -eps / np.sqrt(v)[:, None]


class CondScoreModel(_Base):
    """Scores of A (marginal, ``c=0``) and of A given B=y (``c=1``)."""

    kind = "conditional"

    def __init__(self, arch: ScoreArch, schedule: VpSchedule | None = None, seed: int = 0):
        super().__init__(arch, schedule, seed)
        rng = np.random.default_rng(seed)
        self.net = ScoreNet(arch.x_dim + arch.y_dim, arch.x_dim, 2, arch.width,
                            arch.n_blocks, arch.time_embed, rng, arch.norm)

    def forward(self, x_t, ctx, t, c) -> nn.Tensor:
        x_t = np.asarray(x_t, dtype=np.float64)
        n = len(x_t)
        c = np.broadcast_to(np.asarray(c, dtype=np.int64), (n,))
        ctx = np.asarray(ctx, dtype=np.float64) * c[:, None]
        return self.net(np.concatenate([x_t, ctx], axis=1), self._t_rows(t, n), c)

    def predict_eps(self, x_t, ctx, t, c) -> np.ndarray:
        return self.forward(x_t, ctx, t, c).data

    def predict_score(self, x, y, t, c) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if y is None:
            y = np.zeros((len(x), self.arch.y_dim))
        t = self._t_rows(t, len(x))
        return self._to_score(self.predict_eps(x, y, t, c), t)

    def marginal_score(self, x, t) -> np.ndarray:
        return self.predict_score(x, None, t, 0)

    def conditional_score(self, x, y, t) -> np.ndarray:
        return self.predict_score(x, y, t, 1)


class JointScoreModel(_Base):
    """One network for the joint and both conditional scores via ``(alpha, beta)``."""

    kind = "joint"

    def __init__(self, arch: ScoreArch, schedule: VpSchedule | None = None, seed: int = 0):
        super().__init__(arch, schedule, seed)
        rng = np.random.default_rng(seed)
        n = arch.x_dim + arch.y_dim
        self.net = ScoreNet(n, n, 3, arch.width, arch.n_blocks, arch.time_embed, rng, arch.norm)

    @staticmethod
    def mask_index(mask) -> int:
        mask = tuple(int(m) for m in mask)
        if mask not in JOINT_MASKS:
            raise ValueError(f"invalid mask {mask}; expected one of {JOINT_MASKS}")
        return JOINT_MASKS.index(mask)

    def forward(self, xy, t, mask_idx) -> nn.Tensor:
        xy = np.asarray(xy, dtype=np.float64)
        n = len(xy)
        mask_idx = np.broadcast_to(np.asarray(mask_idx, dtype=np.int64), (n,))
        return self.net(xy, self._t_rows(t, n), mask_idx)

    def predict_score(self, x, y, t, mask) -> np.ndarray:
        """Full ``(n, x_dim + y_dim)`` score; frozen blocks carry no meaning."""
        idx = self.mask_index(mask)
        xy = np.concatenate([np.asarray(x, float), np.asarray(y, float)], axis=1)
        t = self._t_rows(t, len(xy))
        return self._to_score(self.forward(xy, t, idx).data, t)

    def joint_score(self, x, y, t) -> np.ndarray:
        return self.predict_score(x, y, t, (1, 1))

    def cond_score_a(self, x, y0, t) -> np.ndarray:
        return self.predict_score(x, y0, t, (1, 0))[:, : self.arch.x_dim]

    def cond_score_b(self, x0, y, t) -> np.ndarray:
        return self.predict_score(x0, y, t, (0, 1))[:, self.arch.x_dim:]


# -- losses ---------------------------------------------------------------------

def _diagnose(loss, it, t, *arrays):
    norms = ", ".join(f"{np.linalg.norm(a):.3g}" for a in arrays)
    return (f"non-finite loss {loss} at iteration {it}; t in [{np.min(t):.3g}, {np.max(t):.3g}];"
            f" input norms {norms}")


def _weights(sampler: TimeSampler, t, w):
    _, v = sampler.schedule.kernel(t)
    return w * sampler.schedule.beta(t) / (2.0 * v)


def loss_step_conditional(model: CondScoreModel, x0, y0, rng: np.random.Generator,
                          sampler: TimeSampler, d: float = 0.5, iteration: int = -1):
    """Denoising score-matching loss (as a tape Tensor) for one batch.

    Each row takes the context branch with probability ``d``.
    """
    n = len(x0)
    c = (rng.uniform(size=n) < d).astype(np.int64)
    t, w = sampler.sample(rng, n)
    noise = rng.standard_normal(x0.shape)
    k, v = model.schedule.kernel(t)
    x_t = k[:, None] * x0 + np.sqrt(v)[:, None] * noise
    eps_hat = model.forward(x_t, y0, t, c)
    # ||s_hat - s_true||^2 = ||eps_hat - eps||^2 / v_t
    per_row = nn.sum(nn.square(eps_hat - noise), axis=1)
    loss = nn.mean(per_row * _weights(sampler, t, w))
    if not np.isfinite(loss.data):
        raise nn.TrainingDiverged(_diagnose(loss.data, iteration, t, x0, y0))
    return loss


def loss_step_joint(model: JointScoreModel, x0, y0, rng: np.random.Generator,
                    sampler: TimeSampler, d: float = 0.5, iteration: int = -1):
    """Masked joint loss: both blocks diffuse w.p. ``d``, else one uniformly chosen block."""
    n, nx = x0.shape
    both = rng.uniform(size=n) < d
    pick_x = rng.uniform(size=n) < 0.5
    alpha = (both | pick_x).astype(float)
    beta = (both | ~pick_x).astype(float)
    mask_idx = np.where(both, 0, np.where(pick_x, 1, 2))
    t, w = sampler.sample(rng, n)
    k, v = model.schedule.kernel(t)
    clean = np.concatenate([x0, y0], axis=1)
    noise = rng.standard_normal(clean.shape)
    diffuse = np.concatenate([np.repeat(alpha[:, None], nx, 1),
                              np.repeat(beta[:, None], y0.shape[1], 1)], axis=1)
    x_t = np.where(diffuse > 0, k[:, None] * clean + np.sqrt(v)[:, None] * noise, clean)
    eps_hat = model.forward(x_t, t, mask_idx)
    per_row = nn.sum(nn.square(eps_hat - noise) * diffuse, axis=1)
    loss = nn.mean(per_row * _weights(sampler, t, w))
    if not np.isfinite(loss.data):
        raise nn.TrainingDiverged(_diagnose(loss.data, iteration, t, x0, y0))
    return loss


def _loss_fn(model):
    return loss_step_joint if isinstance(model, JointScoreModel) else loss_step_conditional


def validation_loss(model, x0, y0, sampler: TimeSampler, d: float = 0.5,
                    seed: int = 12345, n_repeats: int = 4) -> float:
    """Score-matching loss on held-out data with a fixed evaluation stream."""
    rng = np.random.default_rng(seed)
    fn = _loss_fn(model)
    return float(np.mean([fn(model, x0, y0, rng, sampler, d).data for _ in range(n_repeats)]))


def train(model, x, y, config: TrainConfig, progress: bool = False):
    """Fit ``model`` on standardized ``(x, y)`` pairs; leaves the EMA weights loaded.

    The raw (non-averaged) final weights are kept in ``model.raw_state``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("x and y must have the same number of rows")
    rng = np.random.default_rng(config.seed)
    sampler = TimeSampler(model.schedule, config.proposal)
    perm = rng.permutation(len(x))
    n_val = int(round(config.val_fraction * len(x))) if config.iterations else 0
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    params = model.parameters()
    opt = nn.Adam(params, lr=config.lr)
    ema = nn.EmaShadow(params, config.ema_momentum)
    fn = _loss_fn(model)
    last_good = model.state()
    for it in range(config.iterations):
        idx = rng.integers(0, len(x_tr), size=config.batch_size)
        try:
            with nn.Tape() as tape:
                loss = fn(model, x_tr[idx], y_tr[idx], rng, sampler, config.d, it)
            opt.step(tape.backward(loss))
        except (nn.TrainingDiverged, nn.NonFiniteError) as err:
            raise nn.TrainingDiverged(f"training diverged at iteration {it}: {err}",
                                      checkpoint=last_good) from err
        ema.update()
        model.history.losses.append(float(loss.data))
        if config.eval_every and (it + 1) % config.eval_every == 0:
            last_good = model.state()
            if n_val:
                model.raw_state = model.state()
                model.load_state(ema.shadow)
                vl = validation_loss(model, x[val_idx], y[val_idx], sampler, config.d)
                model.load_state(model.raw_state)
                model.history.val_steps.append(it + 1)
                model.history.val_losses.append(vl)
                if progress:
                    log.info("iter %d train %.4f val %.4f", it + 1,
                             np.mean(model.history.losses[-config.eval_every:]), vl)
    model.raw_state = model.state()
    ema.copy_to()
    return model


# -- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"DIFFMICK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model, path) -> None:
    """Binary checkpoint: magic, version, JSON header, little-endian float64 payload."""
    state = model.state()
    s = model.schedule
    header = {
        "kind": model.kind,
        "arch": asdict(model.arch),
        "schedule": {"beta_min": s.beta_min, "beta_max": s.beta_max, "T": s.T, "t_eps": s.t_eps},
        "seed": model.init_seed,
        "iteration": len(model.history.losses),
        "shapes": [list(a.shape) for a in state],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for a in state:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns a ready-to-score model."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a score-model checkpoint")
    version, n = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + n])
    cls = {"conditional": CondScoreModel, "joint": JointScoreModel}[header["kind"]]
    model = cls(ScoreArch(**header["arch"]), VpSchedule(**header["schedule"]), seed=header["seed"])
    payload = np.frombuffer(raw[16 + n:], dtype="<f8")
    arrays, offset = [], 0
    for shape in header["shapes"]:
        size = int(np.prod(shape))
        arrays.append(payload[offset:offset + size].reshape(shape).astype(np.float64))
        offset += size
    if offset != payload.size:
        raise ValueError("checkpoint payload size mismatch")
    model.load_state(arrays)
    return model
