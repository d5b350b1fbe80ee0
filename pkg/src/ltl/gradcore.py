"""A small reverse-mode autodiff engine over numpy arrays of rank <= 2.

Graphs are built eagerly and are single use: ``backward`` walks the graph
once in reverse topological order, accumulates gradients into the leaf
parameters, and then releases the intermediate closures.
"""

from __future__ import annotations

import base64
import json
import zlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes " + " vs ".join(str(s) for s in shapes))
        self.shapes = shapes


class NonScalarLoss(ValueError):
    pass


class GraphConsumed(RuntimeError):
    pass


class NaNGuard(FloatingPointError):
    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"non-finite value in {name!r}" + (f": {detail}" if detail else ""))
        self.name = name


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_back", "name")

    def __init__(self, data, requires_grad=False, prev=(), back=None, name=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = prev
        self._back = back
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} dtype={self.dtype}>"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: mul(self, -1.0)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def _node(data, parents, back):
    """Build an op result; records the closure only if some parent needs it."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, back)
    return Tensor(data)


def constant(x, dtype=np.float64) -> Tensor:
    return Tensor(np.array(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _pair(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    elif not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.data.shape, b.data.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            k = float(b)
            return _node(a.data * k, (a,), lambda g: (g * k,))
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _node(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    y = ad / bd
    return _node(
        y,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * y / bd, bd.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0.0, x).astype(x.dtype)
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(y, (a,), lambda g: (g * s,))


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    y = _softmax(a.data)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    y = x - lse

    def back(g):
        p = np.exp(y)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node(y, (a,), back)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    shape = a.data.shape
    y = a.data.sum(axis=axis, keepdims=keepdims)
    if not isinstance(y, np.ndarray):
        y = np.asarray(y, dtype=a.data.dtype)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(y, (a,), back)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if len(parts) == 1:
        return parts[0]
    other = 1 - axis if parts[0].data.ndim == 2 else None
    if other is not None:
        ref = parts[0].data.shape[other]
        for p in parts[1:]:
            if p.data.ndim != 2 or p.data.shape[other] != ref:
                raise ShapeMismatch("concat", *(q.shape for q in parts))
    y = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(y, tuple(parts), back)


def slice_(a: Tensor, key) -> Tensor:
    shape, dtype = a.data.shape, a.data.dtype
    y = a.data[key]

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        out[key] = g
        return (out,)

    return _node(y, (a,), back)


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows by integer index (embedding lookup, batched stack reads)."""
    idx = np.asarray(idx, dtype=np.intp)
    shape, dtype = a.data.shape, a.data.dtype
    y = a.data[idx]

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _node(y, (a,), back)


embedding_lookup = take_rows


def pick(a: Tensor, idx) -> Tensor:
    """``a[i, idx[i]]`` for every row, as an ``(n, 1)`` column."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    shape, dtype = a.data.shape, a.data.dtype
    y = a.data[rows, idx][:, None]

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        out[rows, idx] = g[:, 0]
        return (out,)

    return _node(y, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T, (a,), lambda g: (g.T,))


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0 or not train:
        return a
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def custom_gradient(value: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """A node with a given forward value and a declared backward rule.

    ``rule(g)`` returns one gradient (or None) per input.
    """
    return _node(value, tuple(inputs), rule)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward ``hard``; backward passes the incoming gradient to ``soft``."""
    return custom_gradient(hard.astype(soft.data.dtype), (soft,), lambda g: (g,))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-row negative log likelihood as an ``(n, 1)`` column."""
    return mul(pick(log_softmax(logits), labels), -1.0)


# ---------------------------------------------------------------------------
# backward


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._prev:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._prev and loss._back is None:
        raise GraphConsumed("backward already ran on this graph")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._back is None:
            if node._prev:
                raise GraphConsumed("graph node was released by an earlier backward")
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            node._back = None
            continue
        pgrads = node._back(g)
        for p, pg in zip(node._prev, pgrads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._back = None


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Named, independent numpy generators derived from one 64-bit seed."""

    NAMES = ("init", "dropout", "gumbel", "policy", "data")

    def __init__(self, seed: int):
        self.seed = int(seed) & (2**64 - 1)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode()),))
            gen = np.random.Generator(np.random.PCG64(ss))
            self._streams[name] = gen
        return gen

    def get_state(self) -> dict:
        return {"seed": self.seed, "streams": {k: g.bit_generator.state for k, g in sorted(self._streams.items())}}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._streams = {}
        for name, st in state["streams"].items():
            self[name].bit_generator.state = st


# ---------------------------------------------------------------------------
# parameters


def glorot(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = (shape[0], shape[1]) if len(shape) == 2 else (shape[0], shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ParameterStore:
    """Named trainable tensors plus frozen arrays, all of one float width."""

    def __init__(self, dtype=np.float64, rng: RngStream | None = None):
        self.dtype = np.dtype(dtype)
        self.rng = rng if rng is not None else RngStream(0)
        self.params: dict[str, Tensor] = {}
        self.frozen: dict[str, Tensor] = {}

    def param(self, name: str, shape, init="glorot", value=None) -> Tensor:
        if name in self.params or name in self.frozen:
            raise KeyError(f"duplicate parameter name {name!r}")
        shape = tuple(shape)
        if value is not None:
            data = np.array(value, dtype=self.dtype).reshape(shape)
        elif init == "glorot":
            data = glorot(self.rng["init"], shape, self.dtype)
        elif init == "zeros":
            data = np.zeros(shape, self.dtype)
        elif init == "ones":
            data = np.ones(shape, self.dtype)
        elif init == "normal":
            data = (0.1 * self.rng["init"].standard_normal(shape)).astype(self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def ensure(self, name: str, shape, init="glorot", value=None) -> Tensor:
        """Return the existing parameter ``name`` or create it."""
        if name in self.params:
            t = self.params[name]
            if t.shape != tuple(shape):
                raise ShapeMismatch(f"parameter {name}", t.shape, tuple(shape))
            return t
        return self.param(name, shape, init, value)

    def freeze(self, name: str, value) -> Tensor:
        if name in self.params or name in self.frozen:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), name=name)
        self.frozen[name] = t
        return t

    def const(self, x) -> Tensor:
        return Tensor(np.asarray(x, dtype=self.dtype))

    def __getitem__(self, name) -> Tensor:
        return self.params[name] if name in self.params else self.frozen[name]

    def __contains__(self, name) -> bool:
        return name in self.params or name in self.frozen

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict:
        return {k: p.grad for k, p in self.params.items()}

    def num_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def snapshot(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def restore(self, snap: dict) -> None:
        for k, v in snap.items():
            self.params[k].data = v.copy()

    def astype(self, dtype) -> "ParameterStore":
        """A copy of this store at another float width (shares nothing)."""
        other = ParameterStore(dtype, self.rng)
        for k, p in self.params.items():
            other.param(k, p.shape, value=p.data)
        for k, p in self.frozen.items():
            other.freeze(k, p.data)
        return other


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0, no_decay: Iterable[str] = ()):
        self.lr, self.beta1, self.beta2, self.eps, self.l2 = lr, beta1, beta2, eps, l2
        self.no_decay = set(no_decay)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore, grads: dict | None = None) -> None:
        """Bias-corrected Adam with L2 added to the gradient.

        Parameters without a gradient this step are left untouched.
        """
        grads = store.grads() if grads is None else grads
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        updates = {}
        for name, p in store.params.items():
            g = grads.get(name)
            if g is None:
                continue
            if self.l2 and name not in self.no_decay:
                g = g + self.l2 * p.data
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            delta = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(delta)):
                raise NaNGuard(name, f"step {self.t}")
            updates[name] = (p.data - delta).astype(p.data.dtype), m, v
        for name, (value, m, v) in updates.items():
            store.params[name].data = value
            self.m[name] = m
            self.v[name] = v

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = dict(state["m"])
        self.v = dict(state["v"])


def adam_step(store: ParameterStore, grads: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0, opt: Adam | None = None) -> Adam:
    """One Adam update; pass back the returned optimizer to continue."""
    opt = opt if opt is not None else Adam(lr, beta1, beta2, eps, l2)
    opt.step(store, grads)
    return opt


# ---------------------------------------------------------------------------
# gradient check


def grad_check(f: Callable[[], Tensor], store: ParameterStore, eps=1e-5, n_coords=64, rng=None, names=None) -> float:
    """Max relative error between backprop and central differences.

    ``f`` rebuilds the graph from the current store values each call. At
    most ``n_coords`` coordinates are sampled per parameter (all of them
    when the parameter is smaller).
    """
    if store.dtype != np.float64:
        raise TypeError("grad_check needs a float64 store")
    rng = rng if rng is not None else np.random.default_rng(0)
    names = list(store.params) if names is None else list(names)
    store.zero_grad()
    backward(f())
    worst = 0.0
    for name in names:
        p = store.params[name]
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= n_coords else rng.choice(size, n_coords, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            fp = float(f().data)
            flat[c] = old - eps
            fm = float(f().data)
            flat[c] = old
            numeric = (fp - fm) / (2 * eps)
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    store.zero_grad()
    return worst


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def _enc(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": a.dtype.str,
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype(a.dtype.newbyteorder("<")).tobytes()).decode(),
    }


def _dec(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"]).newbyteorder("<")).reshape(d["shape"]).astype(np.dtype(d["dtype"])).copy()


def save_checkpoint(path, store: ParameterStore, opt: Adam | None = None, meta: dict | None = None) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "dtype": store.dtype.str,
        "params": {k: _enc(p.data) for k, p in store.params.items()},
        "frozen": {k: _enc(p.data) for k, p in store.frozen.items()},
        "adam": None,
        "rng": store.rng.get_state(),
        "meta": meta or {},
    }
    if opt is not None:
        doc["adam"] = {
            "t": opt.t,
            "hyper": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "l2": opt.l2, "no_decay": sorted(opt.no_decay)},
            "m": {k: _enc(v) for k, v in opt.m.items()},
            "v": {k: _enc(v) for k, v in opt.v.items()},
        }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_checkpoint(path) -> tuple[ParameterStore, Adam | None, dict]:
    """Returns (store, optimizer or None, meta)."""
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    rng = RngStream(doc["rng"]["seed"])
    rng.set_state(doc["rng"])
    store = ParameterStore(np.dtype(doc["dtype"]), rng)
    for k, d in doc["params"].items():
        store.param(k, d["shape"], value=_dec(d))
    for k, d in doc["frozen"].items():
        store.freeze(k, _dec(d))
    adam = None
    if doc["adam"] is not None:
        adam = Adam(**doc["adam"]["hyper"])
        adam.t = doc["adam"]["t"]
        adam.m = {k: _dec(v) for k, v in doc["adam"]["m"].items()}
        adam.v = {k: _dec(v) for k, v in doc["adam"]["v"].items()}
    return store, adam, doc["meta"]
