"""Reverse-mode differentiation tape over numpy arrays.

A :class:`Tape` stores nodes in creation order. Every node carries its primal
value, its parent nodes and a vector-Jacobian product closure. Because a node
can only be created after its parents, reversed creation order is a valid
reverse topological order, which is what :meth:`Tape.backward` walks.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

DEFAULT_MEMORY_BUDGET = 4 * 2**30


class TapeMemoryError(RuntimeError):
    """Raised when a tape grows past its memory budget."""

    def __init__(self, step: int, nbytes: int, budget: int) -> None:
        super().__init__(
            f"tape memory budget exceeded at simulation step {step}: "
            f"{nbytes} bytes recorded, budget {budget} bytes"
        )
        self.step = step
        self.nbytes = nbytes
        self.budget = budget


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index", "parents", "vjp", "n_outputs", "name")

    # let numpy defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, tape: "Tape", parents=(), vjp=None, n_outputs=0, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.vjp = vjp
        self.n_outputs = n_outputs
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    @property
    def size(self):
        return np.size(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.shape}, index={self.index})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, p):
        return _ops().power(self, p)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __getitem__(self, key):
        return _ops().getitem(self, key)


_OPS = None


def _ops():
    global _OPS
    if _OPS is None:
        from diffcut.autodiff import ops

        _OPS = ops
    return _OPS


def value(x):
    """Primal value of a Var, or ``x`` itself."""
    return x.value if isinstance(x, Var) else x


def is_var(x) -> bool:
    return isinstance(x, Var)


def tape_of(*xs) -> "Tape | None":
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _accumulate(current, g):
    if current is None:
        return g
    return current + g


class Gradients:
    """Result of a backward pass, indexed by Var."""

    def __init__(self, tape: "Tape", grads: list) -> None:
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise ValueError("variable belongs to a different tape")
        g = self._grads[var.index]
        if g is None:
            return np.zeros_like(np.asarray(var.value, dtype=float))
        return np.asarray(g, dtype=float).reshape(np.shape(var.value))

    def get(self, var, default=None):
        if not isinstance(var, Var):
            return default
        return self[var]


class Tape:
    """Linear record of differentiable operations.

    ``memory_budget`` bounds the number of bytes held by recorded primal values;
    exceeding it raises :class:`TapeMemoryError` carrying ``self.step``, which
    simulation loops keep up to date.
    """

    def __init__(self, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> None:
        self.nodes: list[Var] = []
        self.nbytes = 0
        self.memory_budget = memory_budget
        self.step = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, node: Var) -> Var:
        node.index = len(self.nodes)
        self.nodes.append(node)
        v = node.value
        if isinstance(v, tuple):
            self.nbytes += sum(np.asarray(a).nbytes for a in v)
        else:
            self.nbytes += np.asarray(v).nbytes
        if self.nbytes > self.memory_budget:
            raise TapeMemoryError(self.step, self.nbytes, self.memory_budget)
        return node

    def leaf(self, val, name: str | None = None) -> Var:
        """Register an input whose gradient is wanted."""
        return self._push(Var(np.array(val, dtype=float), self, name=name))

    def record(self, val, parents: Sequence, vjp: Callable) -> Var:
        """Record ``val = op(*parents)``.

        ``vjp(g)`` must return one cotangent (or None) per parent.
        """
        return self._push(Var(val, self, tuple(parents), vjp))

    def record_multi(self, vals: Sequence, parents: Sequence, vjp: Callable) -> tuple:
        """Record an operation with several outputs.

        ``vjp(gs)`` receives a list with one cotangent (or None) per output.
        """
        pack = self._push(Var(tuple(vals), self, tuple(parents), vjp, n_outputs=len(vals)))
        outs = []
        for k, v in enumerate(vals):
            outs.append(self._push(Var(v, self, (pack,), _select(k))))
        return tuple(outs)

    def backward(self, seeds: Var | Mapping[Var, np.ndarray] | Iterable) -> Gradients:
        """Accumulate cotangents from ``seeds`` back to every node.

        ``seeds`` is a scalar Var (seeded with 1), a mapping from Var to
        cotangent, or an iterable of ``(Var, cotangent)`` pairs.
        """
        grads: list = [None] * len(self.nodes)
        if isinstance(seeds, Var):
            items = [(seeds, np.ones_like(np.asarray(seeds.value, dtype=float)))]
        elif isinstance(seeds, Mapping):
            items = list(seeds.items())
        else:
            items = list(seeds)
        for var, g in items:
            if var.tape is not self:
                raise ValueError("seed variable belongs to a different tape")
            g = np.broadcast_to(np.asarray(g, dtype=float), np.shape(var.value))
            grads[var.index] = _accumulate(grads[var.index], g)

        for node in reversed(self.nodes):
            g = grads[node.index]
            if g is None or node.vjp is None:
                continue
            if node.n_outputs:
                g = list(g)
            parent_grads = node.vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if parent is None or pg is None or not isinstance(parent, Var):
                    continue
                if parent.n_outputs:
                    k, gk = pg
                    slot = grads[parent.index]
                    if slot is None:
                        slot = [None] * parent.n_outputs
                        grads[parent.index] = slot
                    slot[k] = _accumulate(slot[k], gk)
                else:
                    grads[parent.index] = _accumulate(grads[parent.index], pg)
        return Gradients(self, grads)


def _select(k: int):
    def vjp(g):
        return ((k, g),)

    return vjp
