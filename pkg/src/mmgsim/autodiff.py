"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every operation returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` on a scalar walks that graph once in reverse topological
order, accumulates gradients into leaf tensors and then releases the graph.
"""
from __future__ import annotations

import json
import math
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + ", ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate without recording a graph (targets, rollouts, finite differences)."""
    prev = grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_released")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor data contains NaN or Inf")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self._released = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_item(t: Tensor):
    raise ShapeError("item", t.shape, detail="tensor is not a scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, parents: tuple, backward: Callable) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced NaN or Inf")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._released = False
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = parents if track else ()
    out._backward = backward if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead > 0:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _bshape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None
    if len(shape) > 3:
        raise ShapeError(op, a.shape, b.shape, detail="broadcasting beyond rank 3")
    return shape


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, "add", (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, "sub", (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _bshape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, "mul", (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError("broadcast", a.shape, shape) from None
    sa = a.shape
    return _result(out, "broadcast", (a,), lambda g: (_unbroadcast(g, sa),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log of max(a, floor); the gradient is zero where the floor is active."""
    a = as_tensor(a)
    x = a.data
    live = x > floor
    safe = np.where(live, x, floor)
    return _result(np.log(safe), "log", (a,), lambda g: (np.where(live, g / safe, 0.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, "relu", (a,), lambda g: (g * mask,))


def minimum(a, b) -> Tensor:
    """Elementwise min of two tensors; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _bshape("minimum", a, b)
    take_a = a.data <= b.data
    sa, sb = a.shape, b.shape
    return _result(np.where(take_a, a.data, b.data), "minimum", (a, b),
                   lambda g: (_unbroadcast(g * take_a, sa), _unbroadcast(g * ~take_a, sb)))


def gaussian_sample_reparam(mean, std, noise) -> Tensor:
    """mean + std * noise with ``noise`` held fixed (reparameterisation)."""
    mean, std = as_tensor(mean), as_tensor(std)
    eps = np.asarray(noise, dtype=np.float64)
    if not (mean.shape == std.shape == eps.shape):
        raise ShapeError("gaussian_sample_reparam", mean.shape, std.shape, eps.shape)
    return _result(mean.data + std.data * eps, "gaussian_sample_reparam", (mean, std),
                   lambda g: (g, g * eps))


# ---------------------------------------------------------------- reductions / shape

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    sa = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, sa).copy(),)

    return _result(np.asarray(out, dtype=np.float64), "sum", (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    sa = a.shape
    n = a.data.size if axis is None else np.prod([sa[i] for i in np.atleast_1d(axis)])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, sa).copy(),)

    return _result(np.asarray(out, dtype=np.float64), "mean", (a,), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    sa = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", sa, shape) from None
    return _result(out, "reshape", (a,), lambda g: (g.reshape(sa),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    sa = a.shape

    def back(g):
        full = np.zeros(sa)
        np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(a.data[idx], dtype=np.float64), "getitem", (a,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, "concat", tuple(ts), back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise ShapeError("stack", *[t.shape for t in ts])
    expanded = [reshape(t, shape[:axis] + (1,) + shape[axis:]) for t in ts]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad

    return _result(np.asarray(ad @ bd, dtype=np.float64), "matmul", (a, b), back)


def conv1d(x, w, b=None, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    ``x`` is (N, C_in, L) and ``w`` is (C_out, C_in, K), giving (N, C_out, L_out)
    with ``L_out = L + 2*padding - K + 1``.  A bare signal (L,) with kernel (K,)
    is also accepted and returns (L_out,).
    """
    x, w = as_tensor(x), as_tensor(w)
    bare = x.ndim == 1 and w.ndim == 1
    if bare:
        xd, wd = x.data[None, None, :], w.data[None, None, :]
    else:
        xd, wd = x.data, w.data
    if xd.ndim != 3 or wd.ndim != 3 or xd.shape[1] != wd.shape[1]:
        raise ShapeError("conv1d", x.shape, w.shape)
    n, cin, length = xd.shape
    cout, _, k = wd.shape
    lout = length + 2 * padding - k + 1
    if lout < 1:
        raise ShapeError("conv1d", x.shape, w.shape, detail="kernel longer than padded signal")
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    # cols: (N, C_in*K, L_out)
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (N, C_in, L_out, K)
    cols = cols.transpose(0, 1, 3, 2).reshape(n, cin * k, lout)
    wmat = wd.reshape(cout, cin * k)
    out = np.matmul(wmat, cols)  # (N, C_out, L_out)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError("conv1d", x.shape, w.shape, b.shape, detail="bias must be (C_out,)")
        out = out + b.data[None, :, None]
        parents.append(b)

    def back(g):
        g3 = g[None, None, :] if bare else g
        gw = np.einsum("nol,nkl->ok", g3, cols).reshape(wd.shape)
        gcols = np.matmul(wmat.T, g3).reshape(n, cin, k, lout)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + lout] += gcols[:, :, j, :]
        gx = gxp[:, :, padding:padding + length] if padding else gxp
        if bare:
            grads = [gx[0, 0], gw[0, 0]]
        else:
            grads = [gx, gw]
        if b is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    if bare:
        out = out[0, 0]
    return _result(out, "conv1d", tuple(parents), back)


# ---------------------------------------------------------------- backward pass

def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``, then free the graph."""
    if loss._released:
        raise TapeError("backward already ran on this graph")
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any tensor that requires grad")
    order = _topo(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.requires_grad = False
            node._released = True


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Named parameter registry with attached gradient buffers."""

    def __init__(self):
        self.entries: dict[str, Tensor] = {}
        self.step_count = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()

    def zero_grad(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.size for t in self.entries.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.entries.values()])

    def load_values(self, other: "ParamStore") -> None:
        for name, t in self.entries.items():
            t.data = other[name].data.copy()

    def to_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "params": {name: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                       for name, t in self.entries.items()},
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ParamStore":
        store = cls()
        for name, rec in payload["params"].items():
            store.add(name, np.array(rec["values"], dtype=np.float64).reshape(rec["shape"]))
        store.step_count = int(payload.get("step_count", 0))
        return store

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def assign_from(self, payload: dict) -> None:
        """Overwrite values in place from a ``to_dict`` payload (names must match)."""
        params = payload["params"]
        missing = set(self.entries) ^ set(params)
        if missing:
            raise KeyError(f"checkpoint/parameter mismatch: {sorted(missing)}")
        for name, t in self.entries.items():
            t.data = np.array(params[name]["values"], dtype=np.float64).reshape(params[name]["shape"])
        self.step_count = int(payload.get("step_count", 0))


class AdamState:
    def __init__(self, store: ParamStore, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in store.items()}
        self.t = 0


def adam_step(store: ParamStore, state: AdamState) -> None:
    for name, p in store.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None
    store.step_count += 1


# ---------------------------------------------------------------- checks

def grad_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)."""
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.array(point, dtype=np.float64)
    p = Tensor(x0, requires_grad=True)
    out = f(p)
    if out.data.size != 1:
        raise ShapeError("grad_check", out.shape, detail="f must be scalar-valued")
    if out.requires_grad:
        backward(out)
        analytic = p.grad if p.grad is not None else np.zeros_like(x0)
    else:
        analytic = np.zeros_like(x0)
    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(x0.size):
            xp = x0.copy().reshape(-1)
            xm = x0.copy().reshape(-1)
            xp[i] += h
            xm[i] -= h
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            flat[i] = (fp - fm) / (2.0 * h)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    return float(err.max()) if err.size else 0.0


def param_grad_check(loss_fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """grad_check over parameters held inside a closure (perturbs them in place)."""
    params = list(params)
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss_fn().item()
                flat[i] = orig - h
                fm = loss_fn().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * h)
                a = analytic.reshape(-1)[i]
                worst = max(worst, abs(a - num) / (abs(a) + 1e-8))
    for p in params:
        p.grad = None
    return worst


def sum_of_squares(x: Tensor) -> Tensor:
    return tsum(mul(x, x))


def gaussian_log_prob_const(dim: int) -> float:
    return -0.5 * dim * math.log(2.0 * math.pi)
