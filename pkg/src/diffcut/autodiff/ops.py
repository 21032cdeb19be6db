"""Differentiable array primitives.

Every function accepts plain numpy arrays or :class:`Var` inputs. With no Var
among the inputs it is a thin wrapper over numpy and records nothing, so the
taped and untaped code paths share the exact same floating-point operations.
"""

from __future__ import annotations

import numpy as np

from diffcut.autodiff.tape import Var, tape_of, value


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (the inverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _shape(x):
    return np.shape(value(x))


def _unary(x, fwd, dfwd):
    """Elementwise op with derivative ``dfwd(x, out)``."""
    xv = value(x)
    out = fwd(xv)
    tape = tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        return (g * dfwd(xv, out),)

    return tape.record(out, (x,), vjp)


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record(out, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record(out, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g):
        return (
            unbroadcast(g * bv, sa) if isinstance(a, Var) else None,
            unbroadcast(g * av, sb) if isinstance(b, Var) else None,
        )

    return tape.record(out, (a, b), vjp)


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g):
        return (
            unbroadcast(g / bv, sa) if isinstance(a, Var) else None,
            unbroadcast(-g * out / bv, sb) if isinstance(b, Var) else None,
        )

    return tape.record(out, (a, b), vjp)


def neg(x):
    return _unary(x, np.negative, lambda xv, out: -1.0)


def power(x, p: float):
    return _unary(x, lambda xv: xv**p, lambda xv, out: p * xv ** (p - 1))


def square(x):
    return _unary(x, np.square, lambda xv, out: 2.0 * xv)


def sqrt(x):
    return _unary(x, np.sqrt, lambda xv, out: 0.5 / out)


def exp(x):
    return _unary(x, np.exp, lambda xv, out: out)


def log(x):
    return _unary(x, np.log, lambda xv, out: 1.0 / xv)


def tanh(x):
    return _unary(x, np.tanh, lambda xv, out: 1.0 - out * out)


def cos(x):
    return _unary(x, np.cos, lambda xv, out: -np.sin(xv))


def sin(x):
    return _unary(x, np.sin, lambda xv, out: np.cos(xv))


def sigmoid(x):
    return _unary(x, lambda xv: 1.0 / (1.0 + np.exp(-xv)), lambda xv, out: out * (1.0 - out))


def relu(x):
    """``max(x, 0)``; the derivative at exactly 0 is taken as 0."""
    return _unary(x, lambda xv: np.maximum(xv, 0.0), lambda xv, out: (xv > 0.0).astype(float))


def absolute(x):
    """``|x|`` with subgradient 0 at 0."""
    return _unary(x, np.abs, lambda xv, out: np.sign(xv))


def smooth_abs(x, eps: float):
    """``sqrt(x**2 + eps**2)``, a differentiable stand-in for ``|x|``."""
    return _unary(x, lambda xv: np.sqrt(xv * xv + eps * eps), lambda xv, out: xv / out)


def where(cond, a, b):
    """Select elementwise; ``cond`` is a constant boolean array."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    return tape.record(
        out,
        (a, b),
        lambda g: (unbroadcast(np.where(cond, g, 0.0), sa), unbroadcast(np.where(cond, 0.0, g), sb)),
    )


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    tape = tape_of(x)
    if tape is None:
        return out
    shape = np.shape(xv)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return tape.record(out, (x,), vjp)


def mean(x, axis=None):
    n = np.size(value(x)) if axis is None else np.shape(value(x))[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def dot_rows(a, b):
    """Row-wise inner product over the last axis."""
    av, bv = value(a), value(b)
    out = np.sum(av * bv, axis=-1)
    tape = tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def vjp(g):
        g = np.asarray(g)[..., None]
        return (
            unbroadcast(g * bv, sa) if isinstance(a, Var) else None,
            unbroadcast(g * av, sb) if isinstance(b, Var) else None,
        )

    return tape.record(out, (a, b), vjp)


def norm_rows(x):
    """Euclidean norm over the last axis; the gradient at a zero row is 0."""
    xv = value(x)
    out = np.sqrt(np.sum(xv * xv, axis=-1))
    tape = tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        safe = np.where(out > 0.0, out, 1.0)
        scale = np.where(out > 0.0, np.asarray(g) / safe, 0.0)
        return (scale[..., None] * xv,)

    return tape.record(out, (x,), vjp)


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    tape = tape_of(a, b)
    if tape is None:
        return out
    na, nb = np.ndim(av), np.ndim(bv)

    def vjp(g):
        g = np.asarray(g)
        if na == 1 and nb == 1:
            ga, gb = g * bv, g * av
        elif nb == 1:
            ga = g[..., None] * bv
            gb = np.einsum("...nm,...n->m", av, g)
        elif na == 1:
            ga = bv @ g
            gb = np.multiply.outer(av, g)
        else:
            ga = g @ np.swapaxes(bv, -1, -2)
            gb = np.swapaxes(av, -1, -2) @ g
        return unbroadcast(ga, np.shape(av)), unbroadcast(gb, np.shape(bv))

    return tape.record(out, (a, b), vjp)


def getitem(x, key):
    xv = value(x)
    out = xv[key]
    tape = tape_of(x)
    if tape is None:
        return out
    shape = np.shape(xv)

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return tape.record(out, (x,), vjp)


def scatter_rows(idx: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[k]] += rows[k]`` for plain arrays, in a fixed summation order."""
    rows = np.asarray(rows, dtype=float)
    flat = rows.reshape(len(idx), -1)
    out = np.empty((n, flat.shape[1]))
    for c in range(flat.shape[1]):
        out[:, c] = np.bincount(idx, weights=flat[:, c], minlength=n)
    return out.reshape((n,) + rows.shape[1:])


def take_rows(x, idx):
    """``x[idx]`` along the first axis with a bincount-based adjoint."""
    idx = np.asarray(idx)
    xv = value(x)
    out = xv[idx]
    tape = tape_of(x)
    if tape is None:
        return out
    n = np.shape(xv)[0]
    flat_idx = idx.ravel()

    def vjp(g):
        g = np.asarray(g).reshape((flat_idx.size,) + np.shape(xv)[1:])
        return (scatter_rows(flat_idx, g, n),)

    return tape.record(out, (x,), vjp)


def add_rows(rows, idx, n: int):
    """Scatter-add ``rows`` into an ``n``-row array at ``idx``."""
    idx = np.asarray(idx)
    rv = value(rows)
    out = scatter_rows(idx, rv, n)
    tape = tape_of(rows)
    if tape is None:
        return out
    return tape.record(out, (rows,), lambda g: (np.asarray(g)[idx],))


def combine(x, idx: np.ndarray, w: np.ndarray):
    """Weighted row combination ``out[s] = sum_k w[s, k] * x[idx[s, k]]``."""
    xv = value(x)
    out = np.einsum("sk,skc->sc", w, xv[idx])
    tape = tape_of(x)
    if tape is None:
        return out
    n = np.shape(xv)[0]
    flat_idx = idx.ravel()

    def vjp(g):
        contrib = w[:, :, None] * np.asarray(g)[:, None, :]
        return (scatter_rows(flat_idx, contrib.reshape(-1, contrib.shape[-1]), n),)

    return tape.record(out, (x,), vjp)


def distribute(f, idx: np.ndarray, w: np.ndarray, n: int):
    """Adjoint of :func:`combine`: ``out[idx[s, k]] += w[s, k] * f[s]``."""
    fv = value(f)
    contrib = w[:, :, None] * fv[:, None, :]
    out = scatter_rows(idx.ravel(), contrib.reshape(-1, fv.shape[-1]), n)
    tape = tape_of(f)
    if tape is None:
        return out
    return tape.record(out, (f,), lambda g: (np.einsum("sk,skc->sc", w, np.asarray(g)[idx]),))


def reshape(x, shape):
    xv = value(x)
    out = np.reshape(xv, shape)
    tape = tape_of(x)
    if tape is None:
        return out
    s = np.shape(xv)
    return tape.record(out, (x,), lambda g: (np.reshape(g, s),))


def stack(xs, axis: int = 0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    tape = tape_of(*xs)
    if tape is None:
        return out

    def vjp(g):
        parts = np.moveaxis(np.asarray(g), axis, 0)
        return tuple(unbroadcast(parts[k], np.shape(vals[k])) for k in range(len(vals)))

    return tape.record(out, tuple(xs), vjp)


def concatenate(xs, axis: int = 0):
    vals = [np.atleast_1d(value(x)) for x in xs]
    out = np.concatenate(vals, axis=axis)
    tape = tape_of(*xs)
    if tape is None:
        return out
    splits = np.cumsum([np.shape(v)[axis] for v in vals])[:-1]
    shapes = [np.shape(value(x)) for x in xs]

    def vjp(g):
        parts = np.split(np.asarray(g), splits, axis=axis)
        return tuple(np.reshape(p, s) for p, s in zip(parts, shapes))

    return tape.record(out, tuple(xs), vjp)


def broadcast_to(x, shape):
    xv = value(x)
    out = np.broadcast_to(xv, shape)
    tape = tape_of(x)
    if tape is None:
        return out
    s = np.shape(xv)
    return tape.record(out, (x,), lambda g: (unbroadcast(g, s),))


def logsumexp(x, beta: float = 1.0):
    """``log(sum(exp(beta * x))) / beta`` over all entries, computed stably."""
    xv = np.asarray(value(x), dtype=float)
    m = np.max(xv)
    e = np.exp(beta * (xv - m))
    s = np.sum(e)
    out = m + np.log(s) / beta
    tape = tape_of(x)
    if tape is None:
        return out
    return tape.record(out, (x,), lambda g: (g * e / s,))


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    av, bv = value(a), value(b)
    pick_a = av >= bv
    return where(pick_a, a, b) if tape_of(a, b) is not None else np.maximum(av, bv)
