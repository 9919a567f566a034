"""Dense float64 tensors with a reverse-mode tape, MLP blocks, Adam and EMA.

Usage::

    with Tape() as tape:
        out = net(Tensor(x))
        loss = mean(square(out))
    grads = tape.backward(loss)
    opt.step(grads)

Only ops executed while a tape is active are recorded.  Gradients are returned
for :class:`Parameter` objects only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_ACTIVE_TAPES: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of primitive ops; consumed by a single :meth:`backward`."""

    def __init__(self):
        self.ops: list[tuple[Tensor, tuple, object]] = []
        self.params: dict[int, Parameter] = {}
        self.consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple, vjp) -> None:
        if self.consumed:
            raise TapeError("tape already consumed")
        for t in inputs:
            if isinstance(t, Parameter):
                self.params.setdefault(id(t), t)
        self.ops.append((out, inputs, vjp))

    def backward(self, loss: Tensor) -> dict[Parameter, np.ndarray]:
        """Reverse sweep from a scalar ``loss``; one gradient per registered parameter."""
        if self.consumed:
            raise TapeError("tape already consumed")
        if loss.data.size != 1:
            raise TapeError(f"backward needs a scalar output, got shape {loss.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self.ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        self.ops.clear()
        return {
            p: grads.get(pid, np.zeros_like(p.data)) for pid, p in self.params.items()
        }


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _emit(name: str, data: np.ndarray, inputs: tuple, vjp) -> Tensor:
    # a NaN/Inf anywhere propagates into the sum
    if not math.isfinite(data.sum()):
        raise NonFiniteError(f"non-finite output in {name}")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs and _ACTIVE_TAPES:
        _ACTIVE_TAPES[-1].record(out, inputs, vjp)
    return out


# -- primitives ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")
    return _emit("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` as a single recorded op."""
    x = _as_tensor(x)
    xd, wd = x.data, w.data
    if xd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ValueError(f"linear: input {xd.shape} incompatible with weight {wd.shape}")
    out = xd @ wd
    if b is None:
        return _emit("linear", out, (x, w), lambda g: (g @ wd.T, xd.T @ g))
    out = out + b.data
    return _emit("linear", out, (x, w, b),
                 lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def silu(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * xd))
    return _emit("silu", xd * sig, (x,),
                 lambda g: (g * sig * (1.0 + xd * (1.0 - sig)),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit("relu", x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _emit("log", y, (x,), lambda g: (g / xd,))


def square(x) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    return _emit("square", xd * xd, (x,), lambda g: (2.0 * g * xd,))


def concat(tensors, axis: int = 1) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    shape = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(x, axis=None, keepdims: bool = False) -> Tensor:
    """Max-shifted log-sum-exp; the shift keeps exp() from overflowing."""
    x = _as_tensor(x)
    xd = x.data
    m = np.max(xd, axis=axis, keepdims=True)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis) if axis is not None else np.reshape(g, (1,) * xd.ndim)
        return (g * soft,)

    return _emit("logsumexp", out, (x,), vjp)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Standardize each row to zero mean and unit variance (no affine part)."""
    x = _as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    y = (x.data - mu) * inv

    def vjp(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True)
                       - y * (g * y).mean(axis=-1, keepdims=True)),)

    return _emit("layer_norm", y, (x,), vjp)


def take_diag(x) -> Tensor:
    """Diagonal of a square matrix."""
    x = _as_tensor(x)
    n = x.shape[0]

    def vjp(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _emit("take_diag", np.diagonal(x.data).copy(), (x,), vjp)


# -- layers -------------------------------------------------------------------

class Module:
    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for v in self.__dict__.values():
            if isinstance(v, Parameter):
                out.append(v)
            elif isinstance(v, Module):
                out.extend(v.parameters())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, Module):
                        out.extend(item.parameters())
                    elif isinstance(item, Parameter):
                        out.append(item)
        return out

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError("state length mismatch")
        for p, a in zip(params, arrays):
            if p.data.shape != np.shape(a):
                raise ValueError(f"shape mismatch for {p.name}: {p.data.shape} vs {np.shape(a)}")
            p.data = np.array(a, dtype=np.float64)

    def n_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))


class Linear(Module):
    """Fan-in scaled uniform init (He); ``zero=True`` gives an all-zero layer."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 zero: bool = False, name: str = "linear"):
        bound = np.sqrt(6.0 / n_in)
        w = np.zeros((n_in, n_out)) if zero else rng.uniform(-bound, bound, size=(n_in, n_out))
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(n_out), f"{name}.b")

    def __call__(self, x) -> Tensor:
        return linear(x, self.w, self.b)


class LayerNorm(Module):
    """Row-wise layer normalization with a learned gain and bias."""

    def __init__(self, width: int, name: str = "norm"):
        self.gain = Parameter(np.ones(width), f"{name}.gain")
        self.bias = Parameter(np.zeros(width), f"{name}.bias")

    def __call__(self, x) -> Tensor:
        return layer_norm(x) * self.gain + self.bias


class ResidualBlock(Module):
    """``h + W2 silu(W1 a(h))``; width preserving.

    ``a`` is a layer norm when ``norm`` is set and ``silu`` otherwise. The
    normalized form keeps each increment bounded, so the block stack cannot
    amplify inputs that fall outside the range seen in training.
    """

    def __init__(self, width: int, rng: np.random.Generator, name: str = "block",
                 norm: bool = False):
        self.norm = LayerNorm(width, name=f"{name}.norm") if norm else None
        self.fc1 = Linear(width, width, rng, name=f"{name}.fc1")
        self.fc2 = Linear(width, width, rng, name=f"{name}.fc2")
        self.fc2.w.data *= 0.5

    def __call__(self, h: Tensor) -> Tensor:
        a = self.norm(h) if self.norm is not None else silu(h)
        return h + self.fc2(silu(self.fc1(a)))


class MLP(Module):
    """Plain feed-forward net with a scalar or vector head."""

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 activation: str = "relu", name: str = "mlp"):
        self.layers = [Linear(a, b, rng, name=f"{name}.{i}")
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.activation = {"relu": relu, "silu": silu, "tanh": tanh}[activation]

    def __call__(self, x) -> Tensor:
        h = _as_tensor(x)
        for layer in self.layers[:-1]:
            h = self.activation(layer(h))
        return self.layers[-1](h)


# -- optimisation -------------------------------------------------------------

class TrainingDiverged(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite.

    ``checkpoint`` holds the last parameter state known to be finite.
    """

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class AdamState:
    """Moments are stored flat, in parameter order."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        size = int(np.sum([p.data.size for p in self.params]))
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                               m=np.zeros(size), v=np.zeros(size))
        self._offsets = np.cumsum([0] + [p.data.size for p in self.params])

    def step(self, grads: dict[Parameter, np.ndarray]) -> None:
        st = self.state
        parts = []
        for p in self.params:
            g = grads.get(p)
            parts.append(np.zeros(p.data.size) if g is None else g.ravel())
        g = np.concatenate(parts)
        if not np.all(np.isfinite(g)):
            bad = [p.name for p, part in zip(self.params, parts) if not np.all(np.isfinite(part))]
            raise TrainingDiverged(f"non-finite gradient for {bad} at step {st.step + 1}")
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        st.m *= st.beta1
        st.m += (1.0 - st.beta1) * g
        st.v *= st.beta2
        st.v += (1.0 - st.beta2) * (g * g)
        update = st.lr * (st.m / bc1) / (np.sqrt(st.v / bc2) + st.eps)
        for p, lo, hi in zip(self.params, self._offsets[:-1], self._offsets[1:]):
            p.data -= update[lo:hi].reshape(p.data.shape)


class EmaShadow:
    """Exponential moving average of parameters: ``s <- m s + (1 - m) p``."""

    def __init__(self, params: list[Parameter], momentum: float = 0.999):
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.params = list(params)
        self.momentum = momentum
        self.shadow = [p.data.copy() for p in self.params]

    def update(self, params: list[Parameter] | None = None) -> None:
        params = self.params if params is None else params
        if len(params) != len(self.shadow):
            raise ValueError("parameter count mismatch")
        m = self.momentum
        for s, p in zip(self.shadow, params):
            if s.shape != p.data.shape:
                raise ValueError(f"shape mismatch {s.shape} vs {p.data.shape}")
            s *= m
            s += (1.0 - m) * p.data

    def copy_to(self, params: list[Parameter] | None = None) -> None:
        params = self.params if params is None else params
        for s, p in zip(self.shadow, params):
            p.data = s.copy()
