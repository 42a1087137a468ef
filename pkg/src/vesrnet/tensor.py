"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (f32 by default, f64 for gradient checking). Gradients
are recorded on an explicit Tape: every operation appends one node whose
parents all precede it, so a single reverse pass over the node list is a valid
topological sweep. Tapes are meant to live for one forward/backward step and
then be discarded.

There is no broadcasting except tensor-scalar; all shape alignment between
tensors is explicit.
"""

from __future__ import annotations

import numpy as np

_active_tape = None
_finite_checks = False


def set_finite_checks(enabled: bool) -> None:
    """Validate every op output for NaN/Inf. Slow; intended for tests."""
    global _finite_checks
    _finite_checks = bool(enabled)


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _active_tape
        self._saved = _active_tape
        _active_tape = None
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = self._saved
        return False


class Tape:
    """Append-only op record for one forward pass.

    Node parents always have smaller ids than the node itself, so iterating
    the node list in reverse is a topological order. A tape is single-writer
    and single-use: backward() may run once, then make a fresh tape.
    """

    _token_counter = 0

    def __init__(self):
        Tape._token_counter += 1
        self.token = Tape._token_counter
        self.nodes = []  # (op name, parent ids, vjp); vjp is None for leaves
        self.grads = {}  # node id -> ndarray, populated by backward()
        self._done = False

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def _node_for(self, t: "Tensor") -> int:
        """Node id of `t` on this tape, registering a leaf if unseen."""
        if t._tape_token != self.token:
            t._tape_token = self.token
            t._node_id = self._append("leaf", (), None)
        return t._node_id

    def _append(self, op, parents, vjp) -> int:
        self.nodes.append((op, parents, vjp))
        return len(self.nodes) - 1

    def backward(self, loss: "Tensor") -> dict:
        """Reverse sweep from a scalar loss; returns the node-id grad map.

        Gradients of nodes not reachable from the loss are left absent and
        read back as zeros through grad().
        """
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if self._done:
            raise RuntimeError("backward already ran on this tape; reset by creating a new tape")
        if loss._tape_token != self.token:
            raise ValueError("loss was not computed under this tape")
        self._done = True
        grads = self.grads
        grads[loss._node_id] = np.ones_like(loss.data)
        for nid in range(loss._node_id, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            op, parents, vjp = self.nodes[nid]
            if vjp is None:
                continue
            for pid, pg in zip(parents, vjp(g)):
                if pg is None:
                    continue
                acc = grads.get(pid)
                if acc is None:
                    # copy: vjp outputs may alias each other or the child buffer
                    grads[pid] = np.array(pg)
                else:
                    acc += pg
        return grads

    def grad(self, t: "Tensor") -> np.ndarray:
        """Gradient buffer of `t` after backward(); zeros if unreached."""
        if t._tape_token == self.token:
            g = self.grads.get(t._node_id)
            if g is not None:
                return g
        return np.zeros_like(t.data)


class Tensor:
    """N-dimensional array value participating in autodiff.

    `data` is a numpy array (row major). When a tape is active, ops record
    nodes; otherwise they are plain eager computations.
    """

    __slots__ = ("data", "_tape_token", "_node_id")

    def __init__(self, data, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self._tape_token = 0
        self._node_id = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *order):
        if len(order) == 1 and isinstance(order[0], (tuple, list)):
            order = tuple(order[0])
        return permute(self, order)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def abs(self):
        return tabs(self)


def from_op(op: str, data: np.ndarray, parents, vjp) -> Tensor:
    """Wrap an op result, recording a tape node when a tape is active.

    `vjp(grad_out)` must return one gradient array (or None) per parent.
    Forward context needed by the vjp lives in its closure.
    """
    if _finite_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in output of op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    tape = _active_tape
    if tape is not None:
        pids = tuple(tape._node_for(p) for p in parents)
        out._tape_token = tape.token
        out._node_id = tape._append(op, pids, vjp)
    else:
        out._tape_token = 0
        out._node_id = -1
    return out


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


# -- elementwise -----------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape("add", a, b)
        return from_op("add", a.data + b.data, (a, b), lambda g: (g, g))
    s = float(b)
    return from_op("add_scalar", a.data + s, (a,), lambda g: (g,))


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape("sub", a, b)
        return from_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    s = float(b)
    return from_op("sub_scalar", a.data - s, (a,), lambda g: (g,))


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape("mul", a, b)
        ad, bd = a.data, b.data
        return from_op("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))
    s = float(b)
    return from_op("scale", a.data * s, (a,), lambda g: (g * s,))


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch form of the binary ops: op in {add, sub, mul, scale}."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "scale":
        return mul(a, float(b))
    raise ValueError(f"unknown elementwise op '{op}'")


# -- matmul ----------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects rank-2 tensors, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {tuple(a.shape)} vs {tuple(b.shape)}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return from_op("matmul", ad @ bd, (a, b), vjp)


# -- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    n = 1
    for s in new_shape:
        n *= s
    if n != x.size:
        raise ValueError(f"reshape: element count mismatch, {tuple(x.shape)} -> {new_shape}")
    old_shape = x.shape
    return from_op("reshape", x.data.reshape(new_shape), (x,),
                   lambda g: (g.reshape(old_shape),))


def permute(x: Tensor, order) -> Tensor:
    order = tuple(int(a) for a in order)
    if sorted(order) != list(range(x.data.ndim)):
        raise ValueError(f"permute: invalid axis order {order} for rank {x.data.ndim}")
    inv = np.argsort(order)
    # physical reorder (contiguous result), unlike metadata-only reshape
    return from_op("permute", np.ascontiguousarray(np.transpose(x.data, order)), (x,),
                   lambda g: (np.transpose(g, inv),))


def select(x: Tensor, index: int) -> Tensor:
    """Pick one slice along the leading axis."""
    index = int(index)
    if not 0 <= index < x.shape[0]:
        raise IndexError(f"index {index} out of range for leading extent {x.shape[0]}")
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return from_op("select", np.array(x.data[index]), (x,), vjp)


def stack(tensors) -> Tensor:
    """Stack along a new leading axis."""
    tensors = list(tensors)
    for t in tensors[1:]:
        _check_same_shape("stack", tensors[0], t)
    data = np.stack([t.data for t in tensors])
    return from_op("stack", data, tuple(tensors),
                   lambda g: tuple(g[i] for i in range(len(tensors))))


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along an existing axis."""
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(tensors)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return from_op("concat", np.concatenate([t.data for t in tensors], axis=axis),
                   tuple(tensors), vjp)


# -- reductions and pointwise -------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return from_op("sum", np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
                   lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return from_op("mean", np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
                   lambda g: (np.broadcast_to(g / n, shape),))


def tabs(x: Tensor) -> Tensor:
    sgn = np.sign(x.data)  # 0 at exact ties
    return from_op("abs", np.abs(x.data), (x,), lambda g: (g * sgn,))
