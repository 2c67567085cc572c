"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records primitive applications in execution order; node ids
are indices into the tape, so creation order is already a topological order.
Everything is define-by-run: build a fresh tape per forward pass, call
:func:`backward` on a scalar output, and read gradients out of the returned
store. Values are always float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "Tape",
    "DiffArray",
    "Gradients",
    "GradCheckResult",
    "new_param",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "matvec",
    "take_index",
    "reshape",
    "concat_channels",
    "sigmoid",
    "softplus",
    "leaky_relu",
    "log",
    "sqrt",
    "clamp",
    "conv2d",
    "upsample_nearest",
    "grid_pool_sum",
    "reduce_sum",
    "l1_diff",
    "backward",
    "grad_check",
]


class Tape:
    """Ordered record of primitive applications for one forward pass.

    A tape and the arrays recorded on it belong to a single execution
    context; distinct tapes are independent and may run in parallel.
    """

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list = []  # callable(g) -> tuple of parent grads, or None for leaves
        self._shapes: list[tuple[int, ...]] = []
        # True once any op was evaluated exactly at a subgradient point
        # (l1_diff residual 0, leaky_relu input 0, clamp at a bound).
        self.at_kink = False
        # per-op record of which side of each kink the evaluation fell on;
        # lets grad_check detect stencils that straddle a kink
        self.kink_signature: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._parents)

    def _record(self, values: np.ndarray, parents: tuple[int, ...], vjp) -> "DiffArray":
        nid = len(self._parents)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._shapes.append(values.shape)
        return DiffArray(self, nid, values)


class DiffArray:
    """Value node on a tape: a float64 ndarray plus a gradient handle."""

    __slots__ = ("tape", "node_id", "values")

    def __init__(self, tape: Tape, node_id: int, values: np.ndarray):
        self.tape = tape
        self.node_id = node_id
        self.values = values

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"DiffArray(shape={self.shape}, node_id={self.node_id})"

    # Operator sugar; constants on either side stay off the tape.
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

    def __neg__(self):
        return neg(self)


def _values(x) -> np.ndarray:
    if isinstance(x, DiffArray):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _tape_of(*operands) -> Tape:
    tape = None
    for x in operands:
        if isinstance(x, DiffArray):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands recorded on different tapes")
    if tape is None:
        raise ValueError("at least one operand must be a DiffArray")
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient ``g`` back down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def new_param(tape: Tape, values, shape=None) -> DiffArray:
    """Register a leaf node that participates in gradient accumulation."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(shape)
        if arr.size != math.prod(shape):
            raise ValueError(
                f"values of size {arr.size} do not fill shape {shape}"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter values must be finite")
    return tape._record(arr.copy(), (), None)


def _binary(a, b, fwd, grad_a, grad_b) -> DiffArray:
    tape = _tape_of(a, b)
    av, bv = _values(a), _values(b)
    out = fwd(av, bv)
    parents, grads = [], []
    if isinstance(a, DiffArray):
        parents.append(a.node_id)
        grads.append(lambda g: _unbroadcast(grad_a(g, av, bv), av.shape))
    if isinstance(b, DiffArray):
        parents.append(b.node_id)
        grads.append(lambda g: _unbroadcast(grad_b(g, av, bv), bv.shape))
    return tape._record(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def add(a, b) -> DiffArray:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> DiffArray:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> DiffArray:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(x: DiffArray) -> DiffArray:
    return x.tape._record(-x.values, (x.node_id,), lambda g: (-g,))


def scale(x: DiffArray, c: float) -> DiffArray:
    c = float(c)
    return x.tape._record(c * x.values, (x.node_id,), lambda g: (c * g,))


def matvec(w, v) -> DiffArray:
    """Matrix-vector product ``w @ v`` for w of shape (m, n), v of shape (n,)."""
    tape = _tape_of(w, v)
    wv, vv = _values(w), _values(v)
    if wv.ndim != 2 or vv.ndim != 1 or wv.shape[1] != vv.shape[0]:
        raise ValueError(f"matvec shape mismatch: {wv.shape} @ {vv.shape}")
    out = wv @ vv
    parents, grads = [], []
    if isinstance(w, DiffArray):
        parents.append(w.node_id)
        grads.append(lambda g: np.outer(g, vv))
    if isinstance(v, DiffArray):
        parents.append(v.node_id)
        grads.append(lambda g: wv.T @ g)
    return tape._record(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def take_index(x: DiffArray, i: int) -> DiffArray:
    """Select ``x[i]`` along the leading axis; gradient scatters back into row i."""
    n = x.values.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for leading axis of size {n}")

    def vjp(g):
        gx = np.zeros_like(x.values)
        gx[i] = g
        return (gx,)

    return x.tape._record(x.values[i].copy(), (x.node_id,), vjp)


def reshape(x: DiffArray, shape) -> DiffArray:
    shape = tuple(shape)
    old = x.values.shape
    return x.tape._record(
        x.values.reshape(shape), (x.node_id,), lambda g: (g.reshape(old),)
    )


def concat_channels(a: DiffArray, b: DiffArray) -> DiffArray:
    """Concatenate two (H, W, C) arrays along the channel axis."""
    tape = _tape_of(a, b)
    ca = a.values.shape[-1]
    out = np.concatenate([a.values, b.values], axis=-1)
    return tape._record(
        out,
        (a.node_id, b.node_id),
        lambda g: (g[..., :ca], g[..., ca:]),
    )


def sigmoid(x: DiffArray) -> DiffArray:
    # expit is the numerically stable two-branch logistic.
    y = expit(x.values)
    return x.tape._record(y, (x.node_id,), lambda g: (g * y * (1.0 - y),))


def softplus(x: DiffArray) -> DiffArray:
    y = np.logaddexp(0.0, x.values)
    xv = x.values
    return x.tape._record(y, (x.node_id,), lambda g: (g * expit(xv),))


def leaky_relu(x: DiffArray, alpha: float = 0.1) -> DiffArray:
    xv = x.values
    if np.any(xv == 0.0):
        x.tape.at_kink = True
    x.tape.kink_signature.append(xv > 0.0)
    slope = np.where(xv > 0.0, 1.0, alpha)
    return x.tape._record(np.where(xv > 0.0, xv, alpha * xv), (x.node_id,), lambda g: (g * slope,))


def log(x: DiffArray) -> DiffArray:
    xv = x.values
    if np.any(xv <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    return x.tape._record(np.log(xv), (x.node_id,), lambda g: (g / xv,))


def sqrt(x: DiffArray) -> DiffArray:
    xv = x.values
    if np.any(xv < 0.0):
        raise ValueError("sqrt requires non-negative inputs")
    y = np.sqrt(xv)
    return x.tape._record(y, (x.node_id,), lambda g: (g * 0.5 / y,))


def clamp(x: DiffArray, lo: float, hi: float) -> DiffArray:
    """Clip to [lo, hi]; gradient passes through strictly inside the interval."""
    xv = x.values
    if np.any(xv == lo) or np.any(xv == hi):
        x.tape.at_kink = True
    inside = (xv > lo) & (xv < hi)
    x.tape.kink_signature.append(inside.copy())
    return x.tape._record(np.clip(xv, lo, hi), (x.node_id,), lambda g: (g * inside,))


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> DiffArray:
    """Cross-correlate (H, W, C) input with a (kh, kw, C, C') kernel.

    Output spatial extent is floor((H + 2*padding - kh) / stride) + 1 per
    axis. Gradient rules are recorded for both input and kernel.
    """
    tape = _tape_of(x, kernel)
    xv, kv = _values(x), _values(kernel)
    if xv.ndim != 3 or kv.ndim != 4:
        raise ValueError(f"conv2d expects (H,W,C) input and (kh,kw,C,C') kernel, got {xv.shape}, {kv.shape}")
    if xv.shape[2] != kv.shape[2]:
        raise ValueError(f"channel mismatch: input has {xv.shape[2]}, kernel expects {kv.shape[2]}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w, c = xv.shape
    kh, kw, _, co = kv.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError("kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    if padding:
        xp = np.zeros((hp, wp, c))
        xp[padding : padding + h, padding : padding + w] = xv
    else:
        xp = xv
    sr, sc, sd = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(ho, wo, kh, kw, c),
        strides=(sr * stride, sc * stride, sr, sc, sd),
        writeable=False,
    )
    cols = windows.reshape(ho * wo, kh * kw * c).copy()
    kmat = kv.reshape(kh * kw * c, co)
    out = (cols @ kmat).reshape(ho, wo, co)

    parents, grads = [], []
    if isinstance(x, DiffArray):

        def grad_input(g):
            gcols = (g.reshape(ho * wo, co) @ kmat.T).reshape(ho, wo, kh, kw, c)
            gxp = np.zeros((hp, wp, c))
            for i in range(kh):
                for j in range(kw):
                    gxp[i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
            if padding:
                return gxp[padding : padding + h, padding : padding + w]
            return gxp

        parents.append(x.node_id)
        grads.append(grad_input)
    if isinstance(kernel, DiffArray):
        parents.append(kernel.node_id)
        grads.append(lambda g: (cols.T @ g.reshape(ho * wo, co)).reshape(kv.shape))
    return tape._record(out, tuple(parents), lambda g: tuple(fn(g) for fn in grads))


def upsample_nearest(x: DiffArray, factor: int = 2) -> DiffArray:
    """Nearest-neighbor upsampling of an (H, W, C) array by an integer factor."""
    h, w, c = x.values.shape
    out = x.values.repeat(factor, axis=0).repeat(factor, axis=1)

    def vjp(g):
        return (g.reshape(h, factor, w, factor, c).sum(axis=(1, 3)),)

    return x.tape._record(out, (x.node_id,), vjp)


def grid_pool_sum(x: DiffArray, factor: int) -> DiffArray:
    """Sum-pool an (H, W) array over non-overlapping factor x factor blocks."""
    h, w = x.values.shape
    if h % factor or w % factor:
        raise ValueError(f"pool factor {factor} does not divide extents {(h, w)}")
    hg, wg = h // factor, w // factor
    out = x.values.reshape(hg, factor, wg, factor).sum(axis=(1, 3))

    def vjp(g):
        return (np.kron(g, np.ones((factor, factor))),)

    return x.tape._record(out, (x.node_id,), vjp)


def reduce_sum(x: DiffArray) -> DiffArray:
    """Total sum as a scalar node; gradient broadcasts one to every element."""
    shape = x.values.shape
    out = np.asarray(x.values.sum())
    return x.tape._record(out, (x.node_id,), lambda g: (np.broadcast_to(g, shape).copy(),))


def l1_diff(a: DiffArray, b) -> DiffArray:
    """Sum of elementwise absolute differences against a constant array.

    Subgradient convention sign(0) = 0; an exact zero residual marks the
    tape as at a kink.
    """
    bv = _values(b)
    if a.values.shape != bv.shape:
        raise ValueError(f"shape mismatch: {a.values.shape} vs {bv.shape}")
    r = a.values - bv
    if np.any(r == 0.0):
        a.tape.at_kink = True
    s = np.sign(r)
    a.tape.kink_signature.append(s)
    out = np.asarray(np.abs(r).sum())
    return a.tape._record(out, (a.node_id,), lambda g: (g * s,))


class Gradients:
    """Gradient store produced by one backward pass."""

    def __init__(self, tape: Tape, grads: list):
        self._tape = tape
        self._grads = grads

    def wrt(self, x: DiffArray) -> np.ndarray:
        """Gradient of the seeded scalar with respect to ``x`` (zeros if unreached)."""
        if x.tape is not self._tape:
            raise ValueError("array does not belong to this tape")
        g = self._grads[x.node_id]
        if g is None:
            return np.zeros(self._tape._shapes[x.node_id])
        return g


def backward(tape: Tape, seed: DiffArray) -> Gradients:
    """Reverse-accumulate gradients of a scalar seed over the whole tape.

    Each call re-seeds from scratch; nothing accumulates across calls.
    """
    if seed.tape is not tape:
        raise ValueError("seed does not belong to this tape")
    if seed.values.ndim != 0:
        raise ValueError(f"backward seed must be scalar, got shape {seed.values.shape}")
    grads: list = [None] * len(tape)
    grads[seed.node_id] = np.asarray(1.0)
    for nid in range(seed.node_id, -1, -1):
        g = grads[nid]
        if g is None or tape._vjps[nid] is None:
            continue
        for pid, pg in zip(tape._parents[nid], tape._vjps[nid](g)):
            # Accumulation always rebinds (never mutates), so views are safe.
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    return Gradients(tape, grads)


@dataclass
class GradCheckResult:
    """Outcome of comparing an analytic gradient against central differences."""

    max_rel_error: float
    at_kink: bool
    kink_coords: list[int] = field(default_factory=list)
    errors: np.ndarray | None = None

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(fn, point, step: float = 1e-5, coords=None) -> GradCheckResult:
    """Check ``fn``'s gradient at ``point`` against central finite differences.

    ``fn`` maps a DiffArray to a scalar DiffArray; a fresh tape is built for
    every evaluation. Relative errors use max(|analytic|, |numeric|, 1e-8)
    as denominator. A coordinate is flagged and excluded from the reported
    maximum when its difference stencil is invalid: either an evaluation
    lands exactly on a subgradient point, or the two perturbed evaluations
    fall on different sides of some kink (detected via the tapes' kink
    signatures), where central differences do not estimate the derivative.
    ``at_kink`` reports whether the base point itself sits on a kink.
    ``coords`` restricts probing to the given flat indices (default: all).
    """
    x0 = np.asarray(point, dtype=np.float64)

    def evaluate(x):
        tape = Tape()
        p = new_param(tape, x)
        y = fn(p)
        if not isinstance(y, DiffArray) or y.values.ndim != 0:
            raise ValueError("grad_check needs a scalar-valued function")
        val = float(y.values)
        if not math.isfinite(val):
            raise ValueError("function evaluated to a non-finite value")
        return val, tape, p, y

    f0, tape0, p0, y0 = evaluate(x0)
    analytic = backward(tape0, y0).wrt(p0).ravel()
    at_kink = tape0.at_kink

    flat = x0.ravel()
    errors = np.full(flat.size, np.nan)
    kink_coords: list[int] = []
    worst = 0.0
    for i in range(flat.size) if coords is None else coords:
        xp = flat.copy()
        xp[i] += step
        fp, tp, _, _ = evaluate(xp.reshape(x0.shape))
        xm = flat.copy()
        xm[i] -= step
        fm, tm, _, _ = evaluate(xm.reshape(x0.shape))
        straddles = len(tp.kink_signature) != len(tm.kink_signature) or any(
            not np.array_equal(a, b)
            for a, b in zip(tp.kink_signature, tm.kink_signature)
        )
        if at_kink or tp.at_kink or tm.at_kink or straddles:
            kink_coords.append(i)
            continue
        numeric = (fp - fm) / (2.0 * step)
        rel = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
        errors[i] = rel
        worst = max(worst, rel)
    return GradCheckResult(worst, at_kink, kink_coords, errors)
