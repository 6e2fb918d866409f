"""Small tape-based reverse-mode autodiff over float64 numpy arrays.

Every op takes :class:`Tensor` inputs, computes its value eagerly and, when
any input lives on a :class:`Tape`, appends a node holding a closure that
maps the output gradient to input gradients. ``backward`` walks the tape in
reverse append order, which is a valid reverse topological order because a
node can only consume tensors created before it.

Only the operations the acuity network needs are provided.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


@dataclass
class _Node:
    out: int
    inputs: tuple[int | None, ...]
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    """Append-only record of differentiable operations."""

    nodes: list[_Node] = field(default_factory=list)
    _next_id: int = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def leaf(self, data, name: str | None = None) -> "Tensor":
        """Register ``data`` as a differentiable input (parameter or probe)."""
        return Tensor(data, tape=self, node_id=self._new_id(), name=name)

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    __slots__ = ("data", "tape", "id", "name")

    def __init__(self, data, tape: Tape | None = None, node_id: int | None = None,
                 name: str | None = None):
        # read-only view: the caller's array stays writable
        arr = np.asarray(data, dtype=DTYPE).view()
        arr.flags.writeable = False
        self.data = arr
        self.tape = tape
        self.id = node_id
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, id={self.id})"

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("inputs belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(out_data)
    out = Tensor(out_data, tape=tape, node_id=tape._new_id())
    tape.nodes.append(_Node(out.id, tuple(t.id for t in inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record(a.data + c, (a,), lambda g: (g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _record(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    x = a.data
    s = _sigmoid(x)
    return _record(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def softplus(a: Tensor) -> Tensor:
    x = a.data
    return _record(_softplus(x), (a,), lambda g: (g * _sigmoid(x),))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    """``a[..., K] @ b[K, N]`` (or plain 2-D matmul)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _record(ad @ bd, (a, b), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} to {shape}") from None
    return _record(out, (a,), lambda g: (g.reshape(src),))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice/int) indexing; gradient scatters back into the source."""
    src = a.shape
    out = a.data[index]

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        full[index] = g
        return (full,)

    return _record(np.array(out), (a,), backward)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    return take(a, (Ellipsis, slice(start, stop)))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        other = [n for i, n in enumerate(t.shape) if i != ax]
        first = [n for i, n in enumerate(tensors[0].shape) if i != ax]
        if t.ndim != tensors[0].ndim or other != first:
            raise ShapeError(f"concat: incompatible shapes {tensors[0].shape} and {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return _record(out, tensors, lambda g: tuple(np.split(g, sizes, axis=ax)))


def gather(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]``; repeated indices accumulate gradient."""
    idx = np.asarray(index, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather: index out of range for table of {table.shape[0]} rows")
    src = table.shape

    def backward(g):
        full = np.zeros(src, dtype=DTYPE)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, src[1]))
        return (full,)

    return _record(table.data[idx], (table,), backward)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _record(out, (a,), backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / max(n, 1))


# ---------------------------------------------------------------------------
# convolution, normalization, pooling


def _causal_windows(x: np.ndarray, k: int) -> np.ndarray:
    """Stack ``x[B, L, C]`` into ``[B, L, k, C]`` with left zero padding."""
    b, n, c = x.shape
    padded = np.concatenate([np.zeros((b, k - 1, c), dtype=DTYPE), x], axis=1)
    idx = np.arange(n)[:, None] + np.arange(k)[None, :]
    return padded[:, idx, :]


def _fold_windows(g: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of :func:`_causal_windows`."""
    b, _, k, c = g.shape
    out = np.zeros((b, n + k - 1, c), dtype=DTYPE)
    for j in range(k):
        out[:, j:j + n, :] += g[:, :, j, :]
    return out[:, k - 1:, :]


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Causal convolution with same-length output.

    ``x[B, L, Cin]``, ``w[K, Cin, Cout]``; output position t sees inputs
    t-K+1 .. t, where ``w[K-1]`` multiplies the current position.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.shape} and {w.shape}")
    k = w.shape[0]
    n = x.shape[1]
    win = _causal_windows(x.data, k)
    wd = w.data
    out = np.einsum("blkc,kco->blo", win, wd, optimize=True)

    def backward(g):
        gx = _fold_windows(np.einsum("blo,kco->blkc", g, wd, optimize=True), n)
        gw = np.einsum("blkc,blo->kco", win, g, optimize=True)
        return gx, gw

    y = _record(out, (x, w), backward)
    return y if bias is None else add(y, bias)


def depthwise_conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel causal convolution: ``x[B, L, C]``, ``w[K, C]``."""
    if x.ndim != 3 or w.ndim != 2 or x.shape[2] != w.shape[1]:
        raise ShapeError(f"depthwise_conv1d: incompatible shapes {x.shape} and {w.shape}")
    k = w.shape[0]
    n = x.shape[1]
    win = _causal_windows(x.data, k)
    wd = w.data
    out = np.einsum("blkc,kc->blc", win, wd)

    def backward(g):
        gx = _fold_windows(g[:, :, None, :] * wd[None, None, :, :], n)
        gw = np.einsum("blkc,blc->kc", win, g)
        return gx, gw

    y = _record(out, (x, w), backward)
    return y if bias is None else add(y, bias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply gain and bias."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {gain.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def backward(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(xd.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(xhat * gd + bias.data, (x, gain, bias), backward)


def topk_mean(x: Tensor, k: int, mask=None) -> Tensor:
    """Per-channel mean of the k largest values along axis 1.

    ``x[B, L, C]``; ``mask[B, L]`` marks real positions. Samples with fewer
    than k real positions average over all of them; samples with none give 0.
    Ties prefer the lower time index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if x.ndim != 3:
        raise ShapeError(f"topk_mean: expected [B, L, C], got {x.shape}")
    b, n, c = x.shape
    m = np.ones((b, n), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != (b, n):
        raise ShapeError(f"topk_mean: mask shape {m.shape} does not match {x.shape}")
    counts = m.sum(axis=1)
    keff = np.minimum(counts, k)
    if n == 0:
        return _record(np.zeros((b, c), dtype=DTYPE), (x,), lambda g: (np.zeros((b, 0, c)),))
    masked = np.where(m[:, :, None], x.data, -np.inf)
    order = np.argsort(-masked, axis=1, kind="stable")
    kk = min(k, n)
    top = order[:, :kk, :]
    rank_ok = np.arange(kk)[None, :, None] < keff[:, None, None]
    weights = np.where(rank_ok, 1.0 / np.maximum(keff, 1)[:, None, None], 0.0)
    picked = np.take_along_axis(x.data, top, axis=1)
    out = (np.where(rank_ok, picked, 0.0) * weights).sum(axis=1)

    def backward(g):
        gx = np.zeros((b, n, c), dtype=DTYPE)
        np.put_along_axis(gx, top, g[:, None, :] * weights, axis=1)
        return (gx,)

    return _record(out, (x,), backward)


# ---------------------------------------------------------------------------
# state-space scan and loss


def selective_scan(u: Tensor, a_bar: Tensor, b_bar: Tensor, c: Tensor, d: Tensor) -> Tensor:
    """Diagonal linear recurrence with time-varying coefficients.

    Shapes: ``u[B, L, D]``, ``a_bar[B, L, D, N]``, ``b_bar[B, L, D, N]``,
    ``c[B, L, N]``, ``d[D]``. With ``h_0 = 0``::

        h_t = a_bar_t * h_{t-1} + b_bar_t * u_t
        y_t = sum_n c_t[n] h_t[:, n] + d * u_t
    """
    bsz, n_steps, dim = u.shape
    n_state = a_bar.shape[-1]
    if (a_bar.shape != (bsz, n_steps, dim, n_state) or b_bar.shape != a_bar.shape
            or c.shape != (bsz, n_steps, n_state) or d.shape != (dim,)):
        raise ShapeError(
            f"selective_scan: incompatible shapes u{u.shape} a_bar{a_bar.shape} "
            f"b_bar{b_bar.shape} c{c.shape} d{d.shape}")
    ud, ad, bd, cd, dd = u.data, a_bar.data, b_bar.data, c.data, d.data
    bu = bd * ud[..., None]
    hs = np.empty_like(ad)
    h = np.zeros((bsz, dim, n_state), dtype=DTYPE)
    for t in range(n_steps):
        h = ad[:, t] * h + bu[:, t]
        hs[:, t] = h
    y = np.einsum("bldn,bln->bld", hs, cd) + ud * dd

    def backward(g):
        gc = np.einsum("bld,bldn->bln", g, hs)
        gd = (g * ud).sum(axis=(0, 1))
        ga = np.empty_like(ad)
        gbu = np.empty_like(ad)
        dh = np.zeros((bsz, dim, n_state), dtype=DTYPE)
        for t in range(n_steps - 1, -1, -1):
            dh = dh + g[:, t, :, None] * cd[:, t, None, :]
            gbu[:, t] = dh
            if t > 0:
                ga[:, t] = dh * hs[:, t - 1]
            else:
                ga[:, t] = 0.0
            dh = dh * ad[:, t]
        gu = (gbu * bd).sum(axis=-1) + g * dd
        gb = gbu * ud[..., None]
        return gu, ga, gb, gc, gd

    return _record(y, (u, a_bar, b_bar, c, d), backward)


def selective_scan_fused(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor,
                         d: Tensor) -> Tensor:
    """Discretize and scan in one op.

    Same result as ``selective_scan(u, exp(delta * A), delta * B, C, d)``
    with shapes ``u, delta [B, L, D]``, ``A [D, N]``, ``B, C [B, L, N]``,
    ``d [D]``, but the backward pass avoids broadcasting temporaries.
    """
    bsz, n_steps, dim = u.shape
    n_state = A.shape[-1]
    if (delta.shape != u.shape or A.shape != (dim, n_state) or B.shape != (bsz, n_steps, n_state)
            or C.shape != B.shape or d.shape != (dim,)):
        raise ShapeError(
            f"selective_scan_fused: incompatible shapes u{u.shape} delta{delta.shape} "
            f"A{A.shape} B{B.shape} C{C.shape} d{d.shape}")
    # time-major copies keep every per-step slice contiguous
    ud, dl = u.data.transpose(1, 0, 2), delta.data.transpose(1, 0, 2)
    bd, cd = B.data.transpose(1, 0, 2), C.data.transpose(1, 0, 2)
    ad, dd = A.data, d.data
    a_bar = np.exp(dl[..., None] * ad)
    du = dl * ud
    hs = du[..., None] * bd[:, :, None, :]
    for t in range(1, n_steps):
        hs[t] += a_bar[t] * hs[t - 1]
    y = np.matmul(hs, cd[..., None])[..., 0] + ud * dd

    def backward(g):
        g = g.transpose(1, 0, 2)
        dh_all = g[..., None] * cd[:, :, None, :]
        for t in range(n_steps - 2, -1, -1):
            dh_all[t] += dh_all[t + 1] * a_bar[t + 1]
        # gradient reaching a_bar_t is dh_t * h_{t-1}; fold in d a_bar / d(delta A)
        ga = np.zeros_like(hs)
        np.multiply(dh_all[1:], hs[:-1], out=ga[1:])
        ga *= a_bar
        dh_b = np.matmul(dh_all, bd[..., None])[..., 0]
        g_delta = np.einsum("lbdn,dn->lbd", ga, ad) + dh_b * ud
        g_A = np.einsum("lbdn,lbd->dn", ga, dl, optimize=True)
        g_u = dh_b * dl + g * dd
        g_B = np.matmul(du[..., None, :], dh_all)[..., 0, :]
        g_C = np.matmul(g[..., None, :], hs)[..., 0, :]
        g_d = (g * ud).sum(axis=(0, 1))
        tm = (1, 0, 2)
        return (g_u.transpose(tm), g_delta.transpose(tm), g_A,
                g_B.transpose(tm), g_C.transpose(tm), g_d)

    y = y.transpose(1, 0, 2)
    return _record(y, (u, delta, A, B, C, d), backward)


def bce_with_logits(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted binary cross-entropy on logits: ``sum(w * l) / n``."""
    y = np.asarray(targets, dtype=DTYPE)
    if y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: incompatible shapes {logits.shape} and {y.shape}")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=DTYPE)
    if w.shape != y.shape:
        raise ShapeError(f"bce_with_logits: incompatible shapes {logits.shape} and {w.shape}")
    z = logits.data
    n = max(y.size, 1)
    per = _softplus(z) - y * z
    out = np.asarray((w * per).sum() / n)
    return _record(out, (logits,), lambda g: (g * w * (_sigmoid(z) - y) / n,))


# ---------------------------------------------------------------------------
# reverse pass


def backward(tape: Tape, loss: Tensor, seed=None) -> dict[int, np.ndarray]:
    """Gradients of ``loss`` for every tensor id reachable on ``tape``.

    ``seed`` overrides the upstream gradient; it is required for a
    non-scalar ``loss``.
    """
    if loss.tape is not tape or loss.id is None:
        raise ValueError("loss was not recorded on this tape")
    if seed is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
    grads: dict[int, np.ndarray] = {loss.id: np.asarray(seed, dtype=DTYPE)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if inp is None or gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    return grads


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               check: Sequence[bool] | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``fn`` maps tensors to a tensor; a non-scalar output is reduced with a
    fixed random projection so every output element participates.
    """
    inputs = [np.array(x, dtype=DTYPE) for x in inputs]
    check = [True] * len(inputs) if check is None else list(check)
    rng = np.random.default_rng(0)
    probe_cache: dict[tuple, np.ndarray] = {}

    def scalar(out: Tensor) -> Tensor:
        if out.data.size == 1:
            return reduce_sum(out)
        if out.shape not in probe_cache:
            probe_cache[out.shape] = rng.uniform(-1.0, 1.0, size=out.shape)
        return reduce_sum(mul(out, probe_cache[out.shape]))

    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    loss = scalar(fn(*leaves))
    grads = backward(tape, loss)

    worst = 0.0
    for i, x in enumerate(inputs):
        if not check[i]:
            continue
        analytic = grads.get(leaves[i].id, np.zeros_like(x))
        flat = x.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = scalar(fn(*[Tensor(v) for v in inputs])).item()
            flat[j] = orig - h
            fm = scalar(fn(*[Tensor(v) for v in inputs])).item()
            flat[j] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic.reshape(-1)[j] - numeric) / max(1e-8, abs(numeric))
            # near-zero gradients are compared absolutely
            if abs(numeric) < 1e-6:
                err = abs(analytic.reshape(-1)[j] - numeric)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# parameter checkpoints

CHECKPOINT_FORMAT = "ndgrad-params/1"


def save_params(path, params: dict[str, np.ndarray]) -> None:
    """Write ``{"format", "params": {name: {"shape", "values"}}}`` as JSON.

    Values are written with ``repr`` precision so loading is lossless.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "params": {
            name: {"shape": list(arr.shape),
                   "values": [float(v) for v in np.asarray(arr, dtype=DTYPE).reshape(-1)]}
            for name, arr in sorted(params.items())
        },
    }
    Path(path).write_text(json.dumps(payload))


def load_params(path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {payload.get('format')!r}")
    return {
        name: np.asarray(entry["values"], dtype=DTYPE).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
