"""Dense reverse-mode autodiff over float64 numpy arrays, plus Adam.

The graph is define-by-run: every operation on a :class:`Tensor` records its
parents and a closure that pushes the output gradient back to them.  Calling
``backward()`` on a scalar walks the recorded graph in reverse topological
order.

Broadcasting is deliberately narrow.  Binary elementwise ops accept operands
of identical shape, or one operand of shape ``()``.  Anything else must go
through :func:`expand` so that broadcasts are visible in model code.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised at graph-construction time when operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """Raised when a loss, gradient or parameter becomes non-finite."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- bookkeeping -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        if self.shape != ():
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=DTYPE)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, _parents=parents)
    if out.requires_grad:
        out._backward = backward
    return out


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ; use expand() to broadcast")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # leading axes added by matmul batching, then size-1 axes
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "div")
    out = a.data / b.data

    def backward(g):
        a._accumulate(_unbroadcast(g / b.data, a.shape))
        b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching semantics (leading dims of either side)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _node(out, (a, b), backward)


# -- elementwise unary ----------------------------------------------------

def _unary(a, value: np.ndarray, local: np.ndarray | Callable[[], np.ndarray]) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        d = local() if callable(local) else local
        a._accumulate(g * d)

    return _node(value, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.maximum(a.data, 0.0), lambda: (a.data > 0).astype(DTYPE))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)
    return _unary(a, s, lambda: s * (1.0 - s))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _unary(a, t, lambda: 1.0 - t * t)


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _unary(a, e, e)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda: 1.0 / a.data)


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated without overflow."""
    a = as_tensor(a)
    x = a.data
    value = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _unary(a, value, lambda: _stable_sigmoid(x))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _unary(a, a.data ** p, lambda: p * a.data ** (p - 1))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; the gradient is zero where clipping is active."""
    a = as_tensor(a)
    inside = ((a.data > lo) & (a.data < hi)).astype(DTYPE)
    return _unary(a, np.clip(a.data, lo, hi), inside)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- reductions and shape ops ------------------------------------------------

def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def expand(a, shape: tuple[int, ...]) -> Tensor:
    """Explicit broadcast of ``a`` to ``shape`` (numpy rules)."""
    a = as_tensor(a)
    try:
        value = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}") from exc

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _node(np.array(value), (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(np.transpose(g, inverse))

    return _node(np.transpose(a.data, axes), (a,), backward)


def take(a, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(np.array(a.data[idx]), (a,), backward)


def scatter(values, index, shape: tuple[int, ...]) -> Tensor:
    """Place 1-d ``values`` into a zero array of ``shape`` at ``index`` (tuple of int arrays)."""
    values = as_tensor(values)
    out = np.zeros(shape, dtype=DTYPE)
    np.add.at(out, index, values.data)

    def backward(g):
        values._accumulate(g[index])

    return _node(out, (values,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis of a 2-d ``x`` and apply an affine map."""
    n, d = x.shape
    mu = expand(mean(x, axis=1, keepdims=True), (n, d))
    centred = x - mu
    var = expand(mean(centred * centred, axis=1, keepdims=True), (n, d))
    normed = centred * power(var + eps, -0.5)
    return normed * expand(gain, (n, d)) + expand(bias, (n, d))


# -- parameters and optimisation -------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamStore:
    """Named trainable tensors with per-tensor Adam moments.

    Only the parameters named in a gradient mapping move on a step, so
    rarely-visited tensors (per-graph edge gates) keep their own step count
    for bias correction.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already exists")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        self.steps[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
        names = self.params if names is None else names
        out = {}
        for name in names:
            g = self.params[name].grad
            out[name] = np.zeros_like(self.params[name].data) if g is None else g
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for k, value in state.items():
            if k in self.params:
                if self.params[k].shape != value.shape:
                    raise ShapeError(f"{k}: checkpoint shape {value.shape} != {self.params[k].shape}")
                self.params[k].data = np.array(value, dtype=DTYPE)
            else:
                self.add(k, value)

    def assert_finite(self) -> None:
        for k, t in self.params.items():
            if not np.all(np.isfinite(t.data)):
                raise NumericError(f"parameter {k!r} became non-finite")


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads.values()])))
    if not np.isfinite(total):
        raise NumericError("non-finite gradient norm")
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float = 1e-3,
    weight_decay: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    lr_overrides: Mapping[str, float] | None = None,
) -> ParamStore:
    """One Adam update with decoupled weight decay (AdamW ordering).

    ``lr_overrides`` maps a parameter-name prefix to its own learning rate.
    """
    for name, g in grads.items():
        p = store.params[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        rate = lr
        if lr_overrides:
            for prefix, r in lr_overrides.items():
                if name.startswith(prefix):
                    rate = r
                    break
        store.steps[name] += 1
        t = store.steps[name]
        store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = store.m[name] / (1 - beta1 ** t)
        v_hat = store.v[name] / (1 - beta2 ** t)
        data = p.data - rate * m_hat / (np.sqrt(v_hat) + eps)
        p.data = data - rate * weight_decay * data
    store.assert_finite()
    return store


# -- gradient checking ----------------------------------------------------

def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    skip: Callable[[str, tuple], bool] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the scalar loss from the current ``params`` values and
    be deterministic (any sampling noise supplied as a constant input).
    ``skip(name, index)`` excludes coordinates, e.g. relu kinks.
    """
    for t in params.values():
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for k, t in params.items()}
    worst = 0.0
    for name, t in params.items():
        for idx in np.ndindex(t.shape):
            if skip is not None and skip(name, idx):
                continue
            orig = t.data[idx]
            t.data[idx] = orig + eps
            up = fn().item()
            t.data[idx] = orig - eps
            down = fn().item()
            t.data[idx] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(analytic[name][idx] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, err)
    return worst


# -- checkpoint blob ------------------------------------------------------

CHECKPOINT_MAGIC = b"AGCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> None:
    """Write named float64 tensors with shape headers and a JSON config block.

    Layout: magic(4) | version(u8) | config_len(u32) | config utf-8 |
    count(u32) | per tensor: name_len(u16) name ndim(u8) dims(u32*ndim) data(f64 LE).
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    cfg = json.dumps(config or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<B", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 5
    (cfg_len,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    config = json.loads(blob[pos:pos + cfg_len].decode())
    pos += cfg_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return tensors, config
