"""Dense real-tensor kernels with a minimal reverse-mode differentiation tape.

Scope is deliberately narrow: exactly the primitives needed to push an image
through a small transformer encoder and differentiate scalar losses back to
that image. Tensors are immutable, finite-checked on construction, and either
float64 (test mode) or float32 (fast mode); both precisions share one code
path. All reductions delegate to numpy kernels whose evaluation order is
fixed for a fixed shape, so identical inputs give bitwise-identical outputs.
"""

import math

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

# tanh-approximation GELU; the two constants are part of the artifact's
# numeric contract and are also what the analytic derivative assumes.
GELU_C0 = math.sqrt(2.0 / math.pi)
GELU_C1 = 0.044715


class Tensor:
    """Immutable dense tensor of 32- or 64-bit reals.

    Construction validates finiteness: a NaN or Inf raises NonFiniteError
    immediately instead of flowing on silently. A Tensor may carry a
    reference to the Tape node that produced it; tensors without a tape are
    constants as far as differentiation is concerned.
    """

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr is data and arr.flags.writeable:
            arr = arr.copy()  # never freeze the caller's buffer
        arr = np.ascontiguousarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # thin operator sugar over the op functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


class _Node:
    """One recorded primitive: op name, argument slots, aux, saved output.

    Argument slots are either an int (index of the producing node on the same
    tape) or a raw ndarray constant. `aux` holds non-differentiable operands
    (shapes, indices, scalars) plus anything the forward pass saves for
    reversal (e.g. sort permutations).
    """

    __slots__ = ("op", "args", "aux", "output")

    def __init__(self, op, args, aux, output):
        self.op = op
        self.args = args
        self.aux = aux
        self.output = output


class Tape:
    """Append-only record of primitive operations for one reverse sweep.

    A tape is confined to one logical execution at a time; distinct tapes are
    independent. The reverse sweep visits nodes in exact reverse recording
    order, which is a valid topological order because every node's arguments
    were recorded before it.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self):
        return len(self._nodes)

    def watch(self, data, dtype=None) -> Tensor:
        """Record `data` as a differentiable leaf and return its Tensor."""
        t = Tensor(data, dtype=dtype)
        node_id = self._record("leaf", (), {}, t.data)
        return Tensor(t.data, tape=self, node=node_id)

    def _record(self, op, args, aux, output) -> int:
        self._nodes.append(_Node(op, args, aux, output))
        return len(self._nodes) - 1

    def _resolve(self, slot):
        return self._nodes[slot].output if isinstance(slot, int) else slot

    def gradients(self, loss: Tensor, inputs) -> list[np.ndarray]:
        """Reverse sweep: d(loss)/d(input) for each watched input tensor.

        The loss must be a scalar recorded on this tape. Inputs the loss does
        not depend on get zero gradients.
        """
        if loss.tape is not self or loss.node is None:
            raise ContractError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
        for t in inputs:
            if t.tape is not self or self._nodes[t.node].op != "leaf":
                raise ContractError("gradient target is not a leaf of this tape")

        grads: dict[int, np.ndarray] = {
            loss.node: np.ones_like(loss.data)
        }
        for node_id in range(loss.node, -1, -1):
            g = grads.pop(node_id, None)
            if g is None:
                continue
            node = self._nodes[node_id]
            if node.op == "leaf":
                grads[node_id] = g  # keep leaf grads for collection
                continue
            arrays = [self._resolve(a) for a in node.args]
            contribs = _BACKWARD[node.op](node.aux, arrays, node.output, g)
            for slot, contrib in zip(node.args, contribs):
                if not isinstance(slot, int) or contrib is None:
                    continue
                if slot in grads:
                    grads[slot] = grads[slot] + contrib
                else:
                    grads[slot] = contrib
        return [
            grads.get(t.node, np.zeros_like(t.data)) for t in inputs
        ]

    def replay_check(self) -> bool:
        """Re-run every node forward and compare bytes with the recording."""
        for node in self._nodes:
            if node.op == "leaf":
                continue
            arrays = [self._resolve(a) for a in node.args]
            redo = _FORWARD[node.op](node.aux, *arrays)
            if redo.tobytes() != node.output.tobytes():
                return False
        return True


def backward(tape: Tape, loss: Tensor, inputs) -> list[np.ndarray]:
    """Module-level alias for Tape.gradients."""
    return tape.gradients(loss, inputs)


# ---------------------------------------------------------------------------
# op plumbing

_FORWARD = {}
_BACKWARD = {}


def _op(name):
    def deco(pair):
        fwd, bwd = pair()
        _FORWARD[name] = fwd
        _BACKWARD[name] = bwd
        return pair

    return deco


def _apply(op, aux, *args):
    tape = None
    dtype = None
    for a in args:
        if isinstance(a, Tensor):
            if dtype is None:
                dtype = a.data.dtype
            if a.tape is not None:
                if tape is not None and tape is not a.tape:
                    raise ContractError("operands recorded on different tapes")
                tape = a.tape
    arrays = []
    for a in args:
        if isinstance(a, Tensor):
            arrays.append(a.data)
        else:
            arrays.append(np.asarray(a, dtype=dtype))
    # overflow shows up as the typed error below, not as a warning
    with np.errstate(over="ignore"):
        out = _FORWARD[op](aux, *arrays)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")
    if tape is None:
        result = Tensor.__new__(Tensor)
        out = np.ascontiguousarray(out)
        out.flags.writeable = False
        result.data, result.tape, result.node = out, None, None
        return result
    slots = tuple(
        a.node if isinstance(a, Tensor) and a.tape is tape else arr
        for a, arr in zip(args, arrays)
    )
    out = np.ascontiguousarray(out)
    out.flags.writeable = False
    node_id = tape._record(op, slots, aux, out)
    result = Tensor.__new__(Tensor)
    result.data, result.tape, result.node = out, tape, node_id
    return result


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum out the axes numpy broadcast when going from `shape` to grad.shape."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


@_op("matmul")
def _matmul():
    def fwd(aux, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul shapes {a.shape} x {b.shape}")
        return a @ b

    def bwd(aux, arrays, out, g):
        a, b = arrays
        return g @ b.T, a.T @ g

    return fwd, bwd


@_op("affine")
def _affine():
    # x @ w + b in one node; the fused form halves node count in hot loops
    def fwd(aux, x, w, b):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"affine shapes {x.shape} x {w.shape}")
        return x @ w + b

    def bwd(aux, arrays, out, g):
        x, w, b = arrays
        return g @ w.T, x.T @ g, _unbroadcast(g, b.shape)

    return fwd, bwd


@_op("add")
def _add():
    def fwd(aux, a, b):
        return a + b

    def bwd(aux, arrays, out, g):
        a, b = arrays
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return fwd, bwd


@_op("sub")
def _sub():
    def fwd(aux, a, b):
        return a - b

    def bwd(aux, arrays, out, g):
        a, b = arrays
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return fwd, bwd


@_op("mul")
def _mul():
    def fwd(aux, a, b):
        return a * b

    def bwd(aux, arrays, out, g):
        a, b = arrays
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

    return fwd, bwd


@_op("div")
def _div():
    def fwd(aux, a, b):
        with np.errstate(divide="ignore", invalid="ignore"):
            return a / b

    def bwd(aux, arrays, out, g):
        a, b = arrays
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

    return fwd, bwd


@_op("scale")
def _scale():
    def fwd(aux, a):
        return a * aux["c"]

    def bwd(aux, arrays, out, g):
        return (g * aux["c"],)

    return fwd, bwd


@_op("add_const")
def _add_const():
    def fwd(aux, a):
        return a + aux["c"]

    def bwd(aux, arrays, out, g):
        return (g,)

    return fwd, bwd


@_op("neg")
def _neg():
    def fwd(aux, a):
        return -a

    def bwd(aux, arrays, out, g):
        return (-g,)

    return fwd, bwd


@_op("abs")
def _abs():
    # subgradient 0 at exact zeros, per the loss kink convention
    def fwd(aux, a):
        return np.abs(a)

    def bwd(aux, arrays, out, g):
        return (g * np.sign(arrays[0]),)

    return fwd, bwd


@_op("powc")
def _powc():
    # x**p for x >= 0 and fixed p >= 1, or the 1/p root of a nonnegative
    # scalar; at x == 0 the derivative is taken as 0 (p != 1 case)
    def fwd(aux, a):
        return a ** aux["p"]

    def bwd(aux, arrays, out, g):
        a = arrays[0]
        p = aux["p"]
        if p == 1.0:
            return (g,)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(a > 0, p * a ** (p - 1.0), 0.0)
        return (g * d,)

    return fwd, bwd


@_op("sqrt")
def _sqrt():
    def fwd(aux, a):
        return np.sqrt(a)

    def bwd(aux, arrays, out, g):
        return (g * 0.5 / out,)

    return fwd, bwd


@_op("log")
def _log():
    def fwd(aux, a):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)

    def bwd(aux, arrays, out, g):
        return (g / arrays[0],)

    return fwd, bwd


@_op("sum_all")
def _sum_all():
    def fwd(aux, a):
        return np.asarray(a.sum(), dtype=a.dtype)

    def bwd(aux, arrays, out, g):
        return (np.broadcast_to(g, arrays[0].shape).copy(),)

    return fwd, bwd


@_op("sum_rows")
def _sum_rows():
    def fwd(aux, a):
        if a.ndim != 2:
            raise DimensionError(f"sum_rows needs a matrix, got {a.shape}")
        return a.sum(axis=1)

    def bwd(aux, arrays, out, g):
        return (np.broadcast_to(g[:, None], arrays[0].shape).copy(),)

    return fwd, bwd


@_op("gelu")
def _gelu():
    def fwd(aux, a):
        inner = GELU_C0 * (a + GELU_C1 * a ** 3)
        return 0.5 * a * (1.0 + np.tanh(inner))

    def bwd(aux, arrays, out, g):
        a = arrays[0]
        inner = GELU_C0 * (a + GELU_C1 * a ** 3)
        t = np.tanh(inner)
        d = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * a ** 2)
        return (g * d,)

    return fwd, bwd


@_op("softmax_rows")
def _softmax_rows():
    def fwd(aux, a):
        if a.ndim != 2:
            raise DimensionError(f"softmax_rows needs a matrix, got {a.shape}")
        shifted = a - a.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def bwd(aux, arrays, out, g):
        s = out
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return fwd, bwd


@_op("layer_norm")
def _layer_norm():
    def fwd(aux, x, gamma, beta):
        if x.ndim != 2 or x.shape[1] < 1:
            raise DimensionError(f"layer_norm needs rows of length >= 1, got {x.shape}")
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise DimensionError(
                f"layer_norm affine shapes {gamma.shape}/{beta.shape} vs rows of {x.shape}"
            )
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + aux["eps"])
        return xc * inv * gamma + beta

    def bwd(aux, arrays, out, g):
        x, gamma, beta = arrays
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + aux["eps"])
        xhat = xc * inv
        gh = g * gamma
        gx = inv * (
            gh
            - gh.mean(axis=1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return fwd, bwd


@_op("sort_rows")
def _sort_rows():
    # stable ascending sort of each row; the permutation recorded at forward
    # time is the route gradients take back (subgradient at ties)
    def fwd(aux, a):
        perm = np.argsort(a, axis=-1, kind="stable")
        aux["perm"] = perm
        return np.take_along_axis(a, perm, axis=-1)

    def bwd(aux, arrays, out, g):
        gi = np.zeros_like(arrays[0])
        np.put_along_axis(gi, aux["perm"], g, axis=-1)
        return (gi,)

    return fwd, bwd


@_op("gather_rows")
def _gather_rows():
    def fwd(aux, a):
        return a[aux["indices"]]

    def bwd(aux, arrays, out, g):
        gi = np.zeros_like(arrays[0])
        np.add.at(gi, aux["indices"], g)
        return (gi,)

    return fwd, bwd


@_op("take_flat")
def _take_flat():
    def fwd(aux, a):
        return a.reshape(-1)[aux["indices"]].reshape(aux["shape"])

    def bwd(aux, arrays, out, g):
        flat = np.zeros(arrays[0].size, dtype=g.dtype)
        np.add.at(flat, aux["indices"].reshape(-1), g.reshape(-1))
        return (flat.reshape(arrays[0].shape),)

    return fwd, bwd


@_op("reshape")
def _reshape():
    def fwd(aux, a):
        return a.reshape(aux["shape"])

    def bwd(aux, arrays, out, g):
        return (g.reshape(arrays[0].shape),)

    return fwd, bwd


@_op("transpose")
def _transpose():
    def fwd(aux, a):
        if a.ndim != 2:
            raise DimensionError(f"transpose needs a matrix, got {a.shape}")
        return a.T.copy()

    def bwd(aux, arrays, out, g):
        return (g.T.copy(),)

    return fwd, bwd


@_op("attn_scores")
def _attn_scores():
    # (q @ k.T) * c fused, the inner product pattern of self-attention
    def fwd(aux, q, k):
        if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
            raise DimensionError(f"attn_scores shapes {q.shape} x {k.shape}")
        return (q @ k.T) * aux["c"]

    def bwd(aux, arrays, out, g):
        q, k = arrays
        gs = g * aux["c"]
        return gs @ k, gs.T @ q

    return fwd, bwd


@_op("concat_rows")
def _concat_rows():
    def fwd(aux, *parts):
        return np.concatenate(parts, axis=0)

    def bwd(aux, arrays, out, g):
        sizes = [a.shape[0] for a in arrays]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=0))

    return fwd, bwd


@_op("concat_cols")
def _concat_cols():
    def fwd(aux, *parts):
        return np.concatenate(parts, axis=1)

    def bwd(aux, arrays, out, g):
        sizes = [a.shape[1] for a in arrays]
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=1))

    return fwd, bwd


@_op("slice_cols")
def _slice_cols():
    def fwd(aux, a):
        return a[:, aux["j0"]:aux["j1"]].copy()

    def bwd(aux, arrays, out, g):
        gi = np.zeros_like(arrays[0])
        gi[:, aux["j0"]:aux["j1"]] = g
        return (gi,)

    return fwd, bwd


# ---------------------------------------------------------------------------
# public op surface


def matmul(a, b) -> Tensor:
    return _apply("matmul", {}, a, b)


def affine(x, w, b) -> Tensor:
    return _apply("affine", {}, x, w, b)


def add(a, b) -> Tensor:
    return _apply("add", {}, a, b)


def sub(a, b) -> Tensor:
    return _apply("sub", {}, a, b)


def mul(a, b) -> Tensor:
    return _apply("mul", {}, a, b)


def div(a, b) -> Tensor:
    return _apply("div", {}, a, b)


def scale(a, c: float) -> Tensor:
    return _apply("scale", {"c": float(c)}, a)


def add_const(a, c: float) -> Tensor:
    return _apply("add_const", {"c": float(c)}, a)


def neg(a) -> Tensor:
    return _apply("neg", {}, a)


def absolute(a) -> Tensor:
    return _apply("abs", {}, a)


def powc(a, p: float) -> Tensor:
    return _apply("powc", {"p": float(p)}, a)


def sqrt(a) -> Tensor:
    return _apply("sqrt", {}, a)


def log(a) -> Tensor:
    return _apply("log", {}, a)


def sum_all(a) -> Tensor:
    return _apply("sum_all", {}, a)


def sum_rows(a) -> Tensor:
    return _apply("sum_rows", {}, a)


def gelu(a) -> Tensor:
    return _apply("gelu", {}, a)


def softmax_rows(a) -> Tensor:
    return _apply("softmax_rows", {}, a)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    return _apply("layer_norm", {"eps": float(eps)}, x, gamma, beta)


def sort_rows(a) -> Tensor:
    return _apply("sort_rows", {}, a)


def sort_with_permutation(v) -> tuple[Tensor, np.ndarray]:
    """Ascending stable sort of a vector plus the permutation used.

    perm maps sorted position -> original index; equal values keep their
    original relative order.
    """
    v = as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError(f"sort_with_permutation needs a vector, got {v.shape}")
    row = _apply("reshape", {"shape": (1, v.data.size)}, v)
    srt = sort_rows(row)
    perm = row.tape._nodes[srt.node].aux["perm"][0].copy() if row.tape is not None \
        else np.argsort(v.data, kind="stable")
    flat = _apply("reshape", {"shape": (v.data.size,)}, srt)
    return flat, perm


def gather_rows(a, indices) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    return _apply("gather_rows", {"indices": indices}, a)


def take_flat(a, indices: np.ndarray, shape) -> Tensor:
    return _apply("take_flat", {"indices": indices, "shape": tuple(shape)}, a)


def reshape(a, shape) -> Tensor:
    return _apply("reshape", {"shape": tuple(shape)}, a)


def transpose(a) -> Tensor:
    return _apply("transpose", {}, a)


def attn_scores(q, k, c: float) -> Tensor:
    return _apply("attn_scores", {"c": float(c)}, q, k)


def concat_rows(parts) -> Tensor:
    return _apply("concat_rows", {}, *parts)


def concat_cols(parts) -> Tensor:
    return _apply("concat_cols", {}, *parts)


def slice_cols(a, j0: int, j1: int) -> Tensor:
    return _apply("slice_cols", {"j0": int(j0), "j1": int(j1)}, a)
