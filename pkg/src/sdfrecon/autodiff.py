"""Tape-based reverse-mode differentiation over numpy arrays.

Every training step records its forward computation on a fresh Tape; the
reverse sweep walks the recorded nodes in exact reverse creation order
(creation order is a topological order), which makes gradient accumulation
deterministic. Ops are polymorphic: if no argument is a Node the plain
numpy result is returned and nothing is recorded, so inference reuses the
same code paths with zero tape overhead.

Spatial SDF gradients are not handled here by nesting tapes: models
propagate d(value)/d(position) as ordinary forward arrays (built from
these same ops), so losses on the gradient differentiate with respect to
parameters in the single reverse pass.
"""

import numpy as np

from . import kernels


class GradientError(RuntimeError):
    """Non-finite gradient detected; message names the parameter group."""


class Node:
    """One array value on the tape."""

    __slots__ = ("value", "grad", "_backward")

    def __init__(self, value, backward=None):
        self.value = value
        self.grad = None
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of nodes; reverse sweep replays their adjoints."""

    def __init__(self):
        self.nodes = []

    def _record(self, value, backward):
        node = Node(np.asarray(value, dtype=np.float64), backward)
        self.nodes.append(node)
        return node

    def leaf(self, array, grad_out):
        """A differentiable input; its adjoint accumulates into grad_out."""

        def backward(g):
            grad_out[...] += g

        return self._record(array, backward)

    def constant(self, array):
        return self._record(array, None)

    def backward(self, loss):
        """Accumulate d(loss)/d(leaf) into every leaf's gradient buffer."""
        if loss.value.shape != ():
            raise ValueError("backward target must be a scalar node")
        loss.grad = np.asarray(1.0)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
            node.grad = None  # free adjoint memory as the sweep passes


def val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*args):
    # nodes record onto the active tape; op helpers only need to know
    # whether any arg is differentiable
    for a in args:
        if isinstance(a, Node):
            return True
    return False


_ACTIVE_TAPE = None


class recording:
    """Context manager installing the tape new ops record onto."""

    def __init__(self, tape):
        self.tape = tape

    def __enter__(self):
        global _ACTIVE_TAPE
        self._prev = _ACTIVE_TAPE
        _ACTIVE_TAPE = self.tape
        return self.tape

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev
        return False


def _emit(value, backward):
    return _ACTIVE_TAPE._record(value, backward)


def _accum(node, g):
    if isinstance(node, Node):
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        node.grad += g


def _unbroadcast(g, shape):
    """Sum g down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    av, bv = val(a), val(b)
    out = av + bv
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, _unbroadcast(g, av.shape))
        _accum(b, _unbroadcast(g, bv.shape))

    return _emit(out, backward)


def sub(a, b):
    av, bv = val(a), val(b)
    out = av - bv
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, _unbroadcast(g, av.shape))
        _accum(b, _unbroadcast(-g, bv.shape))

    return _emit(out, backward)


def neg(a):
    if not _tape_of(a):
        return -val(a)

    def backward(g):
        _accum(a, -g)

    return _emit(-a.value, backward)


def mul(a, b):
    av, bv = val(a), val(b)
    out = av * bv
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, _unbroadcast(g * bv, av.shape))
        _accum(b, _unbroadcast(g * av, bv.shape))

    return _emit(out, backward)


def div(a, b):
    av, bv = val(a), val(b)
    out = av / bv
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, _unbroadcast(g / bv, av.shape))
        _accum(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return _emit(out, backward)


def matmul(a, b):
    """2-D matrix product."""
    av, bv = val(a), val(b)
    out = av @ bv
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, g @ bv.T)
        _accum(b, av.T @ g)

    return _emit(out, backward)


# ---------------------------------------------------------------------------
# shape


def reshape(a, shape):
    av = val(a)
    out = av.reshape(shape)
    if not _tape_of(a):
        return out

    def backward(g):
        _accum(a, g.reshape(av.shape))

    return _emit(out, backward)


def concat(parts, axis=-1):
    vals = [val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    if not _tape_of(*parts):
        return out
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _emit(out, backward)


def cols(a, start, stop):
    """Slice [start:stop] of the last axis."""
    av = val(a)
    out = av[..., start:stop]
    if not _tape_of(a):
        return out

    def backward(g):
        if a.grad is None:
            a.grad = np.zeros_like(av)
        a.grad[..., start:stop] += g

    return _emit(out, backward)


def sumall(a):
    av = val(a)
    out = av.sum()
    if not _tape_of(a):
        return out

    def backward(g):
        _accum(a, np.broadcast_to(g, av.shape))

    return _emit(out, backward)


def sum_axis(a, axis, keepdims=False):
    av = val(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _tape_of(a):
        return out

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, av.shape))

    return _emit(out, backward)


# ---------------------------------------------------------------------------
# elementwise


def _unary(a, out, dfun):
    if not _tape_of(a):
        return out

    def backward(g):
        _accum(a, g * dfun())

    return _emit(out, backward)


def exp(a):
    out = np.exp(val(a))
    return _unary(a, out, lambda: out)


def log(a):
    av = val(a)
    return _unary(a, np.log(av), lambda: 1.0 / av)


def sqrt(a):
    out = np.sqrt(val(a))
    return _unary(a, out, lambda: 0.5 / out)


def square(a):
    av = val(a)
    return _unary(a, av * av, lambda: 2.0 * av)


def absval(a):
    av = val(a)
    return _unary(a, np.abs(av), lambda: np.sign(av))


def sin(a):
    av = val(a)
    return _unary(a, np.sin(av), lambda: np.cos(av))


def cos(a):
    av = val(a)
    return _unary(a, np.cos(av), lambda: -np.sin(av))


def sigmoid(a):
    av = val(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _unary(a, out, lambda: out * (1.0 - out))


def softplus(a, sharpness=1.0):
    """log(1 + exp(k*x)) / k, computed stably."""
    av = val(a)
    out = np.logaddexp(0.0, sharpness * av) / sharpness
    return _unary(a, out, lambda: _sigmoid_value(sharpness * av))


def _sigmoid_value(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(a):
    av = val(a)
    return _unary(a, np.maximum(av, 0.0), lambda: (av > 0).astype(np.float64))


def where_mask(mask, a, b):
    """Select by a constant boolean mask (not differentiable in mask)."""
    av, bv = val(a), val(b)
    m = np.asarray(mask, dtype=bool)
    out = np.where(m, av, bv)
    if not _tape_of(a, b):
        return out

    def backward(g):
        _accum(a, _unbroadcast(np.where(m, g, 0.0), av.shape))
        _accum(b, _unbroadcast(np.where(m, 0.0, g), bv.shape))

    return _emit(out, backward)


def exclusive_cumsum(a, axis=-1):
    """y_i = sum_{j<i} x_j along axis (y_0 = 0)."""
    av = val(a)
    inc = np.cumsum(av, axis=axis)
    out = inc - av  # exclusive
    if not _tape_of(a):
        return out

    def backward(g):
        total = g.sum(axis=axis, keepdims=True)
        ginc = np.cumsum(g, axis=axis)
        _accum(a, total - ginc)  # sum over i > j

    return _emit(out, backward)


# ---------------------------------------------------------------------------
# grid gather


def grid_blend(table, idx, w, wg, need_dfeat=True):
    """Trilinear blend of 8 gathered rows per point, plus spatial gradient.

    table: (T, F) node or array; idx (N, 8) int64; w (N, 8); wg (N, 8, 3)
    weight-gradients already scaled to world units. Returns (feat (N, F),
    dfeat (N, 3, F) or None).
    """
    tv = val(table)
    feat, dfeat = kernels.gather_blend(tv, idx, w, wg)
    if not _tape_of(table):
        return feat, (dfeat if need_dfeat else None)

    feat_node = _emit(feat, None)
    dfeat_node = _emit(dfeat, None) if need_dfeat else None

    # one fused scatter for both outputs' adjoints, attached to an anchor
    # recorded after them so the reverse sweep fires it first
    def backward(_):
        gfeat = feat_node.grad
        gdfeat = dfeat_node.grad if dfeat_node is not None else None
        if gfeat is None and gdfeat is None:
            return
        if gfeat is None:
            gfeat = np.zeros_like(feat)
        if table.grad is None:
            table.grad = np.zeros_like(tv)
        kernels.scatter_blend_grad(table.grad, idx, w, wg, gfeat, gdfeat)

    anchor = _emit(np.zeros(()), backward)
    anchor.grad = np.zeros(())  # always fire during the sweep
    return feat_node, dfeat_node


def gather_rows(table, idx):
    """table[idx] with scatter-add adjoint. idx any integer shape."""
    tv = val(table)
    out = tv[idx]
    if not _tape_of(table):
        return out

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(tv)
        np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, tv.shape[-1]))

    return _emit(out, backward)


# ---------------------------------------------------------------------------
# parameters


class Param:
    """Handle into a ParamStore group: (group, offset, shape)."""

    __slots__ = ("group", "offset", "shape", "size")

    def __init__(self, group, offset, shape):
        self.group = group
        self.offset = offset
        self.shape = tuple(shape)
        self.size = int(np.prod(self.shape)) if self.shape else 1


class ParamStore:
    """Flat per-group parameter arrays with paired gradient accumulators.

    Groups carry their own learning rate (the optimizer reads it). Models
    allocate during construction; `freeze()` materializes the flat arrays.
    """

    def __init__(self):
        self._pending = {}  # group -> list of 1-D chunks
        self.groups = {}  # group -> dict(values, grads, lr)
        self._lrs = {}

    def add_group(self, name, lr):
        if name in self._pending or name in self.groups:
            raise ValueError(f"duplicate parameter group {name!r}")
        self._pending[name] = []
        self._lrs[name] = float(lr)

    def alloc(self, group, init):
        """Append an initialized array to a group; returns a Param handle."""
        if group not in self._pending:
            raise ValueError(f"unknown or frozen group {group!r}")
        init = np.asarray(init, dtype=np.float64)
        offset = sum(c.size for c in self._pending[group])
        self._pending[group].append(init.reshape(-1).copy())
        return Param(group, offset, init.shape)

    def freeze(self):
        for name, chunks in self._pending.items():
            values = (
                np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float64)
            )
            self.groups[name] = {
                "values": values,
                "grads": np.zeros_like(values),
                "lr": self._lrs[name],
            }
        self._pending = {}

    def view(self, param):
        g = self.groups[param.group]
        return g["values"][param.offset : param.offset + param.size].reshape(
            param.shape
        )

    def grad_view(self, param):
        g = self.groups[param.group]
        return g["grads"][param.offset : param.offset + param.size].reshape(
            param.shape
        )

    def zero_grads(self):
        for g in self.groups.values():
            g["grads"][:] = 0.0

    def check_finite(self):
        for name, g in self.groups.items():
            if not np.all(np.isfinite(g["grads"])):
                raise GradientError(f"non-finite gradient in group {name!r}")

    def node(self, tape, param):
        """Leaf node for a parameter; adjoints land in its grad view."""
        return tape.leaf(self.view(param), self.grad_view(param))

    def bind(self, tape, params):
        """Map {name: Param} -> {name: Node} (or raw views when tape None)."""
        if tape is None:
            return {k: self.view(p) for k, p in params.items()}
        return {k: self.node(tape, p) for k, p in params.items()}

    def total_size(self):
        return sum(g["values"].size for g in self.groups.values())


class AdamState:
    """First/second moments per group plus the shared step counter."""

    def __init__(self, store, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {n: np.zeros_like(g["values"]) for n, g in store.groups.items()}
        self.v = {n: np.zeros_like(g["values"]) for n, g in store.groups.items()}


def adam_step(store, state, clip_norm=0.0):
    """One Adam update over every group (its own lr), then zero gradients.

    clip_norm > 0 clips the global gradient norm before the update.
    """
    store.check_finite()
    if clip_norm and clip_norm > 0.0:
        total = 0.0
        for g in store.groups.values():
            total += float(np.dot(g["grads"], g["grads"]))
        total = np.sqrt(total)
        if total > clip_norm:
            scale = clip_norm / total
            for g in store.groups.values():
                g["grads"] *= scale
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in store.groups.items():
        grad = g["grads"]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        mhat = m / bc1
        vhat = v / bc2
        g["values"] -= g["lr"] * mhat / (np.sqrt(vhat) + state.eps)
        grad[:] = 0.0
