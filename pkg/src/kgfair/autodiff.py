"""Minimal reverse-mode differentiation over 2-D arrays.

Only the handful of operations the encoder needs are provided: dense
matmul, ReLU, row-vector bias, sparse neighbour aggregation with optionally
learnable per-edge coefficients, row gathers, row-wise dot products and the
two training losses.  No broadcasting beyond the row-vector bias.

Leaf tensors accumulate gradients across ``backward`` calls; call
``zero_grad`` between optimisation steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyInput, IndexOutOfRange, NonFiniteInput, ShapeMismatch


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.isfinite(a).all():
        raise NonFiniteInput(f"non-finite values in {what}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward=None):
        a = np.asarray(data)
        if a.dtype.kind != "f":
            a = a.astype(np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(-1, 1)
        elif a.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {a.shape}")
        _check_finite(a, name or "tensor")
        self.data = a
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate ``grad`` (ones for a 1x1 output) back to every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# dense ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor(np.where(mask, x.data, 0.0).astype(x.data.dtype), _parents=(x,), _backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor(a.data + b.data, _parents=(a, b), _backward=lambda g: (g, g))


def add_n(terms: Sequence[Tensor]) -> Tensor:
    if not terms:
        raise EmptyInput("add_n of no tensors")
    for t in terms[1:]:
        _same_shape(terms[0], t, "add_n")
    total = terms[0].data.copy()
    for t in terms[1:]:
        total += t.data
    return Tensor(total, _parents=tuple(terms), _backward=lambda g: (g,) * len(terms))


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    if b.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"add_rowvec: bias {b.shape} for input {x.shape}")

    def backward(g):
        return g, g.sum(axis=0, keepdims=True)

    return Tensor(x.data + b.data, _parents=(x, b), _backward=backward)


def gather_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if len(idx) and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexOutOfRange(f"gather_rows: index outside [0, {x.shape[0]})")

    def backward(g):
        scatter = sp.csr_matrix((np.ones(len(idx), dtype=g.dtype), (idx, np.arange(len(idx)))),
                                shape=(x.shape[0], len(idx)))
        return (np.asarray(scatter @ g),)

    return Tensor(x.data[idx], _parents=(x,), _backward=backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[0]:
        raise IndexOutOfRange(f"slice_rows: [{start}, {stop}) outside {x.shape[0]} rows")

    def backward(g):
        out = np.zeros_like(x.data)
        out[start:stop] = g
        return (out,)

    return Tensor(x.data[start:stop], _parents=(x,), _backward=backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise EmptyInput("concat_rows of no tensors")
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise ShapeMismatch("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor(np.concatenate([p.data for p in parts], axis=0), _parents=tuple(parts), _backward=backward)


def rowwise_dot(a: Tensor, b: Tensor) -> Tensor:
    """``(n, d), (n, d) -> (n, 1)`` of per-row inner products."""
    _same_shape(a, b, "rowwise_dot")

    def backward(g):
        return g * b.data, g * a.data

    return Tensor(np.einsum("ij,ij->i", a.data, b.data).reshape(-1, 1), _parents=(a, b), _backward=backward)


def pair_dot(a: Tensor, b: Tensor, rows, cols) -> Tensor:
    """``(n, 1)`` column of ``<a[rows[k]], b[cols[k]]>``.

    Equivalent to gathering both sides and taking row-wise dots, but computed
    through the full ``a @ b.T`` table, which is much cheaper when many pairs
    share few distinct rows.
    """
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch(f"pair_dot: {a.shape} vs {b.shape}")
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    if rows.shape != cols.shape:
        raise ShapeMismatch("pair_dot: rows and cols lengths differ")
    na, nb = a.shape[0], b.shape[0]
    if len(rows) and (rows.min() < 0 or rows.max() >= na or cols.min() < 0 or cols.max() >= nb):
        raise IndexOutOfRange("pair_dot: index out of range")
    table = a.data @ b.data.T

    def backward(g):
        flat = np.bincount(rows * nb + cols, weights=g[:, 0], minlength=na * nb)
        gt = flat.reshape(na, nb).astype(g.dtype, copy=False)
        return gt @ b.data, gt.T @ a.data

    return Tensor(table[rows, cols].reshape(-1, 1), _parents=(a, b), _backward=backward)


def reshape(x: Tensor, rows: int, cols: int) -> Tensor:
    if rows * cols != x.data.size:
        raise ShapeMismatch(f"reshape {x.shape} -> {(rows, cols)}")
    return Tensor(x.data.reshape(rows, cols), _parents=(x,), _backward=lambda g: (g.reshape(x.shape),))


# --------------------------------------------------------------------------
# sparse neighbour aggregation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseAgg:
    """``out[dst[k]] += coeff[k] * source[src[k]]`` for every pair ``k``.

    Pairs are stored sorted by destination so the CSR layout matches pair
    order; per-pair arrays handed to :func:`spmm` must follow ``src``/``dst``
    as stored here, not as passed in.
    """

    n_dst: int
    n_src: int
    src: np.ndarray
    dst: np.ndarray
    coeff: np.ndarray
    indptr: np.ndarray = field(repr=False)

    @classmethod
    def from_pairs(cls, n_dst: int, n_src: int, src, dst, coeff) -> "SparseAgg":
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        coeff = np.asarray(coeff, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(coeff)):
            raise ShapeMismatch("src, dst and coeff lengths differ")
        if len(src):
            if src.min() < 0 or src.max() >= n_src:
                raise IndexOutOfRange(f"source index outside [0, {n_src})")
            if dst.min() < 0 or dst.max() >= n_dst:
                raise IndexOutOfRange(f"destination index outside [0, {n_dst})")
        _check_finite(coeff, "aggregation coefficients")
        if (coeff <= 0).any():
            raise ValueError("aggregation coefficients must be positive")
        order = np.lexsort((src, dst))
        src, dst, coeff = src[order], dst[order], coeff[order]
        indptr = np.zeros(n_dst + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n_dst), out=indptr[1:])
        for a in (src, dst, coeff, indptr):
            a.setflags(write=False)
        return cls(n_dst, n_src, src, dst, coeff, indptr)

    def __len__(self):
        return len(self.src)

    def matrix(self, coeff: np.ndarray | None = None) -> sp.csr_matrix:
        data = self.coeff if coeff is None else coeff
        return sp.csr_matrix((data, self.src, self.indptr), shape=(self.n_dst, self.n_src))


def spmm(agg: SparseAgg, source: Tensor, coeff: Tensor | None = None) -> Tensor:
    """Aggregate source rows into destinations.

    ``coeff`` (shape ``(len(agg), 1)``) replaces the stored coefficients and
    receives ``dot(out_grad[dst], source[src])`` in the backward pass.
    """
    if source.shape[0] != agg.n_src:
        raise IndexOutOfRange(f"spmm: source has {source.shape[0]} rows, aggregation expects {agg.n_src}")
    _check_finite(source.data, "spmm source")
    if coeff is not None and coeff.shape != (len(agg), 1):
        raise ShapeMismatch(f"spmm: coeff shape {coeff.shape}, expected {(len(agg), 1)}")
    values = agg.coeff if coeff is None else coeff.data[:, 0]
    mat = agg.matrix(values.astype(source.data.dtype, copy=False))
    out = np.asarray(mat @ source.data)

    def backward(g):
        gs = np.asarray(mat.T @ g) if source.requires_grad else None
        gc = None
        if coeff is not None and coeff.requires_grad:
            gc = np.einsum("ij,ij->i", g[agg.dst], source.data[agg.src]).reshape(-1, 1)
        return gs, gc

    parents = (source,) if coeff is None else (source, coeff)
    return Tensor(out, _parents=parents, _backward=backward)


def edge_scale(base: np.ndarray, weights: Tensor, index: np.ndarray) -> Tensor:
    """Per-pair coefficients ``base[k] * w[index[k]]``, with ``w = 1`` where ``index[k] < 0``."""
    base = np.asarray(base, dtype=weights.data.dtype).reshape(-1)
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    if base.shape != index.shape:
        raise ShapeMismatch("edge_scale: base and index lengths differ")
    if weights.shape[1] != 1:
        raise ShapeMismatch(f"edge_scale: weights must be a column, got {weights.shape}")
    if len(index) and index.max() >= weights.shape[0]:
        raise IndexOutOfRange("edge_scale: weight index out of range")
    hit = index >= 0
    scale = np.ones_like(base)
    scale[hit] = weights.data[index[hit], 0]

    def backward(g):
        gw = np.zeros_like(weights.data)
        np.add.at(gw[:, 0], index[hit], g[hit, 0] * base[hit])
        return (gw,)

    return Tensor((base * scale).reshape(-1, 1), _parents=(weights,), _backward=backward)


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def margin_ranking_loss(pos: Tensor, neg: Tensor, margin: float = 1.0) -> Tensor:
    """Mean over positives of ``sum_k max(0, margin - pos + neg_k)``.

    ``pos`` is ``(n, 1)``, ``neg`` is ``(n, K)``.  Subgradient at the kink is 0.
    """
    if pos.shape[1] != 1 or neg.shape[0] != pos.shape[0]:
        raise ShapeMismatch(f"margin_ranking_loss: pos {pos.shape}, neg {neg.shape}")
    n = pos.shape[0]
    if n == 0 or neg.shape[1] == 0:
        raise EmptyInput("margin_ranking_loss needs at least one positive and one negative")
    viol = margin - pos.data + neg.data
    active = (viol > 0).astype(pos.data.dtype)
    value = np.where(viol > 0, viol, 0.0).sum() / n

    def backward(g):
        scale = g[0, 0] / n
        return -scale * active.sum(axis=1, keepdims=True), scale * active

    return Tensor(np.array([[value]], dtype=pos.data.dtype), _parents=(pos, neg), _backward=backward)


def mean_squared_diff_loss(s0: Tensor, s1: Tensor) -> Tensor:
    """``(1/n) * sum (s0 - s1)^2`` over two equal-length column vectors."""
    _same_shape(s0, s1, "mean_squared_diff_loss")
    n = s0.data.size
    if n == 0:
        raise EmptyInput("mean_squared_diff_loss of empty vectors")
    diff = s0.data - s1.data

    def backward(g):
        d = (2.0 * g[0, 0] / n) * diff
        return d, -d

    return Tensor(np.array([[np.dot(diff.ravel(), diff.ravel()) / n]], dtype=s0.data.dtype),
                  _parents=(s0, s1), _backward=backward)


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    worst: tuple[int, tuple[int, int]] | None

    def ok(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def finite_difference_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                            eps: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn(*inputs)`` with central differences.

    Relative error per entry is ``|a - n| / max(|a|, |n|, floor * max(1, |f|))``.
    The floor keeps entries that are negligible next to the function value
    (where central differences are dominated by round-off) from producing
    spurious failures.  Inputs are perturbed in place and restored.
    """
    for t in inputs:
        t.zero_grad()
        if not t.data.flags.c_contiguous or not t.data.flags.writeable:
            t.data = np.array(t.data, order="C")
    out = fn(*inputs)
    out.backward()
    scale = floor * max(1.0, abs(out.item()))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst_err, worst_at, per_input = 0.0, None, []
    for k, t in enumerate(inputs):
        err_k = 0.0
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            fp = fn(*inputs).item()
            flat[idx] = orig - eps
            fm = fn(*inputs).item()
            flat[idx] = orig
            num = (fp - fm) / (2 * eps)
            a = analytic[k].reshape(-1)[idx]
            err = abs(a - num) / max(abs(a), abs(num), scale)
            if err > err_k:
                err_k = err
            if err > worst_err:
                worst_err, worst_at = err, (k, np.unravel_index(idx, t.shape))
        per_input.append(err_k)
    for t in inputs:
        t.zero_grad()
    return GradCheckReport(worst_err, per_input, worst_at)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(state: AdamState, params: dict[str, np.ndarray],
                grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One bias-corrected Adam step, updating ``params`` in place.

    Parameters without an entry in ``grads`` are left alone.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(grads):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ShapeMismatch(f"adam: {name} param {p.shape} vs grad {g.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        _check_finite(p, f"parameter {name}")
    return params
