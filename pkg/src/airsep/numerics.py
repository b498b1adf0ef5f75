"""Dense float64 tensors with reverse-mode automatic differentiation.

A small pure-numpy core sized for set-transformer policy networks: 1-D/2-D
arrays, primitive ops recorded onto an implicit tape during the forward
pass, and the network building blocks (exact-erf GELU, layer norm, stable
softmax, multi-head self-attention). Everything is 64-bit; a NaN or Inf
anywhere is treated as a bug and raises immediately.
"""

import json
import math
import os

import numpy as np
from scipy.special import erf

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

CHECKPOINT_FORMAT_VERSION = 1
_META_KEY = "__meta__"


class NumericsError(Exception):
    """Base class for tensor-core failures."""


class ShapeError(NumericsError):
    """Operand shapes are incompatible with the requested op."""


class NonFiniteError(NumericsError):
    """A NaN or Inf appeared in tensor data."""


class GraphError(NumericsError):
    """Backward was invoked on something that is not a scalar graph output."""


class ConfigError(NumericsError):
    """Structural configuration is invalid (e.g. heads not dividing the width)."""


class Node:
    """One recorded primitive op: input tensors, output tensor, backward rule.

    ``backward_fn`` maps the gradient w.r.t. the output to a tuple of
    gradients aligned with ``inputs`` (``None`` for non-differentiable slots).
    """

    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, inputs, output, backward_fn, name):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.name = name

    def __repr__(self):
        return f"Node({self.name}, out_shape={self.output.data.shape})"


class Tensor:
    """A float64 array plus optional gradient buffer and producing node."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        # single-pass finiteness screen: any NaN/Inf poisons the sum; the exact
        # elementwise check only runs when the cheap screen trips
        with np.errstate(over="ignore", invalid="ignore"):
            if not math.isfinite(float(arr.sum())) and not np.all(np.isfinite(arr)):
                raise NonFiniteError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are plain Python numbers
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_grad_enabled = True


class no_grad:
    """Context that skips tape recording; forward values are unaffected."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _op(data, inputs, backward_fn, name):
    """Create the output tensor of a primitive and record its node."""
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(tuple(inputs), out, backward_fn, name)
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic primitives
# ---------------------------------------------------------------------------


def add(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return _op(a.data + c, [a], lambda g: (g,), "add_const")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _op(out, [a, b], bwd, "add")


def sub(a, b):
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _op(out, [a, b], bwd, "sub")


def neg(a):
    return _op(-a.data, [a], lambda g: (-g,), "neg")


def mul(a, b):
    if not isinstance(b, Tensor):
        c = float(b)
        return _op(a.data * c, [a], lambda g: (g * c,), "mul_const")
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _op(out, [a, b], bwd, "mul")


def matmul(a, b):
    """Matrix product for 1-D/2-D operands with standard vector promotion."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ShapeError("matmul requires 1-D or 2-D operands")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    a2 = ad if ad.ndim == 2 else ad[None, :]
    b2 = bd if bd.ndim == 2 else bd[:, None]
    out2 = a2 @ b2
    out = out2
    if ad.ndim == 1:
        out = out[0]
    if bd.ndim == 1:
        out = out[..., 0]

    def bwd(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(ad.shape)
        gb = (a2.T @ g2).reshape(bd.shape)
        return ga, gb

    return _op(out, [a, b], bwd, "matmul")


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return _op(a.data.T.copy(), [a], lambda g: (g.T,), "transpose")


def reshape(a, shape):
    old = a.data.shape
    return _op(a.data.reshape(shape), [a], lambda g: (g.reshape(old),), "reshape")


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _op(out, tensors, bwd, "concat")


def stack(tensors):
    """Stack same-shape tensors along a new leading axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack of zero tensors")
    out = np.stack([t.data for t in tensors])

    def bwd(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _op(out, tensors, bwd, "stack")


def narrow(a, axis, start, length):
    """Contiguous slice of ``length`` entries along ``axis``."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _op(out, [a], bwd, "narrow")


def pick(a, index):
    """Select one entry of a 1-D tensor; returns a 0-d tensor."""
    if a.data.ndim != 1:
        raise ShapeError("pick expects a 1-D tensor")
    i = int(index)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _op(a.data[i], [a], bwd, "pick")


def tsum(a):
    shape = a.data.shape
    return _op(a.data.sum(), [a], lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def tmean(a):
    shape = a.data.shape
    n = a.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _op(a.data.mean(), [a], bwd, "mean")


def square(a):
    return _op(a.data * a.data, [a], lambda g: (2.0 * a.data * g,), "square")


def exp(a):
    with np.errstate(over="ignore"):  # overflow becomes Inf and is rejected by _op
        out = np.exp(a.data)
    return _op(out, [a], lambda g: (g * out,), "exp")


def log(a):
    return _op(np.log(a.data), [a], lambda g: (g / a.data,), "log")


def minimum(a, b):
    """Elementwise minimum; at exact ties the gradient goes to ``a``."""
    take_a = a.data <= b.data

    def bwd(g):
        return np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)

    return _op(np.where(take_a, a.data, b.data), [a, b], bwd, "minimum")


def maximum(a, b):
    """Elementwise maximum; at exact ties the gradient goes to ``a``."""
    take_a = a.data >= b.data

    def bwd(g):
        return np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)

    return _op(np.where(take_a, a.data, b.data), [a, b], bwd, "maximum")


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes wherever the input is inside (inclusive)."""
    inside = (a.data >= lo) & (a.data <= hi)

    def bwd(g):
        return (np.where(inside, g, 0.0),)

    return _op(np.clip(a.data, lo, hi), [a], bwd, "clip")


# ---------------------------------------------------------------------------
# network building blocks
# ---------------------------------------------------------------------------


def gelu(a):
    """Exact Gaussian-error linear unit x * Phi(x) (erf form, not tanh)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / SQRT2))
    out = x * cdf

    def bwd(g):
        pdf = INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _op(out, [a], bwd, "gelu")


def layer_norm(a, gain, bias, eps=1e-5):
    """Standardize each row (biased variance + eps), then apply gain and bias."""
    x = a.data
    if x.ndim not in (1, 2):
        raise ShapeError("layer_norm expects a 1-D or 2-D tensor")
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes)
        dbias = g.sum(axis=axes)
        return dx, dgain, dbias

    return _op(out, [a, gain, bias], bwd, "layer_norm")


def softmax(a):
    """Max-subtracted exponential normalization along the last axis."""
    x = a.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _op(p, [a], bwd, "softmax")


def log_softmax(a):
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _op(out, [a], bwd, "log_softmax")


def mha_core(q, k, v, heads):
    """Multi-head scaled dot-product attention on projected q/k/v of shape (n, d).

    Splits the width into ``heads`` slices, attends within each head at scale
    1/sqrt(d/heads), and concatenates the per-head results. No positional
    information enters: permuting the rows permutes the output identically.
    """
    n, d = q.data.shape
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    qh = q.data.reshape(n, heads, dh)
    kh = k.data.reshape(n, heads, dh)
    vh = v.data.reshape(n, heads, dh)
    scores = np.einsum("ihd,jhd->hij", qh, kh) * scale
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    attn = e / e.sum(axis=-1, keepdims=True)
    out = np.einsum("hij,jhd->ihd", attn, vh).reshape(n, d)

    def bwd(g):
        gh = g.reshape(n, heads, dh)
        d_attn = np.einsum("ihd,jhd->hij", gh, vh)
        gv = np.einsum("hij,ihd->jhd", attn, gh).reshape(n, d)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        gq = scale * np.einsum("hij,jhd->ihd", d_scores, kh).reshape(n, d)
        gk = scale * np.einsum("hij,ihd->jhd", d_scores, qh).reshape(n, d)
        return gq, gk, gv

    return _op(out, [q, k, v], bwd, "mha_core")


class AttentionParams:
    """Learnable projections of one self-attention sublayer (q, k, v, output)."""

    __slots__ = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

    def __init__(self, wq, bq, wk, bk, wv, bv, wo, bo):
        self.wq, self.bq = wq, bq
        self.wk, self.bk = wk, bk
        self.wv, self.bv = wv, bv
        self.wo, self.bo = wo, bo

    @classmethod
    def create(cls, rng, dim):
        parts = []
        for _ in range(4):
            w, b = init_affine(rng, dim, dim)
            parts.extend([w, b])
        return cls(*parts)

    def tensors(self):
        return {
            "wq": self.wq, "bq": self.bq,
            "wk": self.wk, "bk": self.bk,
            "wv": self.wv, "bv": self.bv,
            "wo": self.wo, "bo": self.bo,
        }


def self_attention(tokens, params, heads):
    """Multi-head self-attention with output projection over a (n, d) token set."""
    if tokens.data.ndim != 2:
        raise ShapeError("self_attention expects (n, d) tokens")
    d = tokens.data.shape[1]
    if d % heads != 0:
        raise ConfigError(f"token width {d} not divisible by {heads} heads")
    q = add(matmul(tokens, params.wq), params.bq)
    k = add(matmul(tokens, params.wk), params.bk)
    v = add(matmul(tokens, params.wv), params.bv)
    mixed = mha_core(q, k, v, heads)
    return add(matmul(mixed, params.wo), params.bo)


# ---------------------------------------------------------------------------
# reverse-mode differentiation
# ---------------------------------------------------------------------------


class ComputeGraph:
    """Topologically ordered list of the nodes reaching one output tensor."""

    def __init__(self, nodes):
        self.nodes = list(nodes)

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def trace(cls, output):
        """Collect the producing nodes of ``output`` in topological order."""
        nodes = []
        seen = set()
        if output.node is None:
            return cls(nodes)
        stack = [(output.node, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append((t.node, False))
        return cls(nodes)


def backward(loss, graph=None):
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires-grad leaf.

    ``loss`` must be a 0-d tensor. Each recorded node is visited exactly once;
    a tensor consumed by several ops receives the sum of all path gradients.
    Existing ``grad`` buffers are accumulated into, not overwritten.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if graph is None:
        graph = ComputeGraph.trace(loss)
    grads = {id(loss): np.ones((), dtype=np.float64)}
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = grads[id(loss)] if loss.grad is None else loss.grad + grads[id(loss)]
        return graph
    # backward rules may hand back the upstream gradient itself or a view of it
    # (identity-like ops); leaves must own their grad buffers because clip and
    # optimizer steps mutate them in place, so only those cases are copied
    def aliases_upstream(g, g_out):
        if g is g_out:
            return True
        if g.base is None:
            return False
        owner = g_out if g_out.base is None else g_out.base
        return g.base is owner

    for node in reversed(graph.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        in_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            if t.node is None:
                if t.grad is not None:
                    t.grad = t.grad + g
                else:
                    t.grad = g.copy() if aliases_upstream(g, g_out) else g
            else:
                key = id(t)
                grads[key] = g if key not in grads else grads[key] + g
    return graph


def zero_grads(params):
    for p in params:
        p.grad = None


def finite_diff_check(f, params, h=1e-5, max_entries_per_param=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic closure rebuilding the scalar loss from the
    current values of ``params``. Error per entry is
    |analytic - numeric| / max(1, |analytic|). With ``max_entries_per_param``
    set, at most that many entries of each tensor are probed (sampled with
    ``rng``); otherwise every entry is checked.
    """
    params = list(params)
    zero_grads(params)
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            indices = rng.choice(flat.size, size=max_entries_per_param, replace=False)
        else:
            indices = range(flat.size)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().data)
            flat[i] = orig - h
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            if err > worst:
                worst = err
    return worst


# ---------------------------------------------------------------------------
# parameter initialization and checkpoints
# ---------------------------------------------------------------------------


def init_affine(rng, fan_in, fan_out):
    """Weight ~ U(-1, 1)/sqrt(fan_in), bias zero; both trainable."""
    bound = 1.0 / math.sqrt(fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
    b = Tensor(np.zeros(fan_out), requires_grad=True)
    return w, b


def init_gaussian(rng, shape):
    """Standard-normal tensor, trainable."""
    return Tensor(rng.standard_normal(size=shape), requires_grad=True)


def save_checkpoint(path, arrays, meta=None):
    """Write named float64 arrays plus a JSON metadata block to an .npz file.

    The layout is the stock numpy archive: one float64 entry per name (the
    shape table lives in the npz headers) plus a reserved ``__meta__`` JSON
    string carrying ``format_version`` and caller metadata. Round-trips are
    bit-exact. Returns the actual path written (numpy appends ``.npz``).
    """
    payload = {}
    for name, value in arrays.items():
        if name.startswith("__"):
            raise ValueError(f"array name {name!r} collides with reserved keys")
        data = value.data if isinstance(value, Tensor) else np.asarray(value)
        payload[name] = np.asarray(data, dtype=np.float64)
    meta = dict(meta or {})
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    blob = np.array(json.dumps(meta, sort_keys=True))
    path = os.fspath(path)
    if not path.endswith(".npz"):
        path = path + ".npz"
    np.savez(path, **{_META_KEY: blob}, **payload)
    return path


def load_checkpoint(path):
    """Read back (arrays, meta) written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        if _META_KEY not in z:
            raise ValueError(f"{path} is not a parameter checkpoint (missing metadata)")
        meta = json.loads(str(z[_META_KEY]))
        version = meta.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format_version {version!r}")
        arrays = {name: z[name] for name in z.files if name != _META_KEY}
    return arrays, meta
