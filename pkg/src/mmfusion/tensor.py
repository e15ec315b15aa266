"""Dense tensors with reverse-mode automatic differentiation.

Every operation builds a node in an implicit computation graph (tensors keep
references to their parents plus a closure that maps the upstream gradient to
parent gradients). ``backward`` walks the graph once in reverse topological
order and accumulates gradients on every tensor that requires them.

Conventions kept deliberately narrow so the gradient code stays auditable:

* dtypes are float32 or float64, never mixed inside one operation;
* the only broadcasting allowed is bias-style: ``add(a, b)`` accepts a ``b``
  whose shape equals a trailing slice of ``a.shape``;
* gradients accumulate across ``backward`` calls -- callers zero them.
"""

from __future__ import annotations

import numpy as np

DTYPES = ("float32", "float64")


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DtypeError(TypeError):
    """Operand dtypes are mixed or unsupported."""


class GraphError(RuntimeError):
    """The differentiation graph was used outside its contract."""


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff graph.

    ``requires_grad=False`` tensors are constants: backward never writes to
    them and graph construction prunes paths that only lead to constants.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Constant view of this tensor, cut out of the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_dtype(op, *tensors):
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DtypeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. ``b`` may be bias-shaped: a trailing slice of ``a.shape``."""
    _check_same_dtype("add", a, b)
    if a.shape != b.shape:
        nd = b.data.ndim
        if nd == 0 or a.data.ndim < nd or a.shape[a.data.ndim - nd:] != b.shape:
            raise ShapeError(f"add: shape {a.shape} incompatible with {b.shape}")
    lead = a.data.ndim - b.data.ndim

    def backward_fn(g):
        gb = g
        if a.shape != b.shape:
            gb = g.sum(axis=tuple(range(lead))) if lead else g
        return g, gb

    return _result(a.data + b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shaped tensors."""
    _check_same_dtype("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape {a.shape} != {b.shape}")

    def backward_fn(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), backward_fn)


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)

    def backward_fn(g):
        return (g * c,)

    return _result(x.data * c, (x,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Standard 2-D matrix product [m,k]x[k,n] -> [m,n]."""
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), backward_fn)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [B,m,k]x[B,k,n] -> [B,m,n], no broadcasting."""
    _check_same_dtype("bmm", a, b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm: expects 3-D operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.shape} and {b.shape}")

    def backward_fn(g):
        return g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g

    return _result(a.data @ b.data, (a, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return _result(np.maximum(x.data, 0), (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive; clamp first")

    def backward_fn(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward_fn)


def clip_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; gradient is blocked where the floor binds."""
    mask = x.data > floor

    def backward_fn(g):
        return (g * mask,)

    return _result(np.maximum(x.data, floor), (x,), backward_fn)


# ---------------------------------------------------------------------------
# normalizers
# ---------------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``; slices sum to one."""
    if not np.all(np.isfinite(x.data)):
        bad = int(np.sum(~np.isfinite(x.data)))
        raise ValueError(f"softmax: input has {bad} non-finite entries")
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _result(y, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine.

    Zero-variance vectors are handled by ``eps`` (output is the bias).
    """
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    _check_same_dtype("layer_norm", x, gain, bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must be shape ({d},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward_fn(g):
        gy = g * gain.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gy - m1 - xhat * m2)
        axes = tuple(range(x.data.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward_fn)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv1d(x: Tensor, weight: Tensor, bias: Tensor, window: int) -> Tensor:
    """1-D convolution over positions with ReLU fused in.

    ``x`` is [n, d_in] or [B, n, d_in]; ``weight`` is [window*d_in, d_out];
    position t sees the flattened slice x[t:t+window]. Output length n-window+1.
    """
    if window not in (1, 2, 3):
        raise ValueError(f"conv1d: window must be 1, 2 or 3, got {window}")
    _check_same_dtype("conv1d", x, weight, bias)
    squeeze = x.data.ndim == 2
    data = x.data[None] if squeeze else x.data
    if data.ndim != 3:
        raise ShapeError(f"conv1d: expects [n,d] or [B,n,d], got {x.shape}")
    B, n, d_in = data.shape
    if n < window:
        raise ShapeError(
            f"conv1d: sequence length {n} shorter than window {window}; pad the input first")
    if weight.shape[0] != window * d_in:
        raise ShapeError(
            f"conv1d: weight rows {weight.shape[0]} != window*d_in = {window * d_in}")
    d_out = weight.shape[1]
    steps = n - window + 1
    # windows[b, t] = concat(x[b, t], ..., x[b, t+window-1])
    windows = np.concatenate([data[:, j:j + steps, :] for j in range(window)], axis=2)
    pre = windows.reshape(B * steps, window * d_in) @ weight.data + bias.data
    mask = pre > 0
    out = np.maximum(pre, 0).reshape(B, steps, d_out)

    def backward_fn(g):
        gp = g.reshape(B * steps, d_out) * mask
        gw = windows.reshape(B * steps, window * d_in).T @ gp
        gb = gp.sum(axis=0)
        gwin = (gp @ weight.data.T).reshape(B, steps, window * d_in)
        gx = np.zeros_like(data)
        for j in range(window):
            gx[:, j:j + steps, :] += gwin[:, :, j * d_in:(j + 1) * d_in]
        return gx[0] if squeeze else gx, gw, gb

    return _result(out[0] if squeeze else out, (x, weight, bias), backward_fn)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def _check_axis(op, x, axis):
    axis = axis if axis >= 0 else x.data.ndim + axis
    if not 0 <= axis < x.data.ndim:
        raise ShapeError(f"{op}: axis {axis} invalid for shape {x.shape}")
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: axis {axis} of shape {x.shape} is empty")
    return axis


def mean_pool(x: Tensor, axis: int) -> Tensor:
    axis = _check_axis("mean_pool", x, axis)
    n = x.shape[axis]

    def backward_fn(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _result(x.data.mean(axis=axis), (x,), backward_fn)


def max_pool(x: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; gradient routes to the first argmax on ties."""
    axis = _check_axis("max_pool", x, axis)
    idx = np.argmax(x.data, axis=axis)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (gx,)

    return _result(np.max(x.data, axis=axis), (x,), backward_fn)


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over everything (scalar) when axis is None."""
    if axis is None:
        def backward_all(g):
            return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

        return _result(x.data.sum(), (x,), backward_all)
    axis = _check_axis("tsum", x, axis)
    n = x.shape[axis]

    def backward_fn(g):
        return (np.repeat(np.expand_dims(g, axis), n, axis=axis),)

    return _result(x.data.sum(axis=axis), (x,), backward_fn)


def concat(xs, axis: int = 0) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat: empty input list")
    _check_same_dtype("concat", *xs)
    axis = axis if axis >= 0 else xs[0].data.ndim + axis
    sizes = [t.shape[axis] for t in xs]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(xs)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), backward_fn)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        return (g.transpose(inverse),)

    return _result(x.data.transpose(axes), (x,), backward_fn)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    axis = _check_axis("narrow", x, axis)
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow: slice [{start}, {start + length}) out of range for axis "
            f"{axis} of shape {x.shape}")
    slicer = [slice(None)] * x.data.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[slicer] = g
        return (gx,)

    return _result(x.data[slicer], (x,), backward_fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table [V,E], integer ids of any shape -> ids.shape + (E,)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DtypeError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {table.shape[0]}) in lookup")

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward_fn)


def pick(x: Tensor, idx) -> Tensor:
    """Select one column per row of a 2-D tensor: out[i] = x[i, idx[i]]."""
    idx = np.asarray(idx)
    if x.data.ndim != 2:
        raise ShapeError(f"pick: expects 2-D input, got {x.shape}")
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: index shape {idx.shape} != ({x.shape[0]},)")
    rows = np.arange(x.shape[0])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _result(x.data[rows, idx], (x,), backward_fn)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli keep mask: 1 with probability ``p``. Scaling is the caller's job."""
    if not 0 < p <= 1:
        raise ValueError(f"dropout_mask: keep probability must be in (0, 1], got {p}")
    return (rng.random(shape) < p).astype(np.float64)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor
    with ``requires_grad=True``.

    Repeated calls add up; callers zero gradients between steps.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    # iterative DFS topological sort (graphs can be deep)
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    seed = np.ones_like(loss.data) if grad is None else np.asarray(grad, dtype=loss.data.dtype)
    flowing = {id(loss): seed}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            held = flowing.get(id(parent))
            flowing[id(parent)] = pg if held is None else held + pg


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

class Module:
    """Minimal parameter registry: tensors and submodules assigned as
    attributes are tracked in insertion order, which fixes checkpoint layout."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def parameter_count(self) -> int:
        seen, total = set(), 0
        for _, p in self.named_parameters():
            if id(p) not in seen:
                seen.add(id(p))
                total += p.size
        return total

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast all parameters in place (float32 <-> float64)."""
        if np.dtype(dtype).name not in DTYPES:
            raise DtypeError(f"astype: unsupported dtype {dtype}")
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module):
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]
