"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Graph` is a dynamic tape: every operation appends a node, so the
recorded order is already topological and :meth:`Graph.backward` is a single
reverse sweep.  Tensors are plain row-major ``float64`` arrays (0-d scalars,
vectors, matrices); there is no broadcasting beyond tensor-vs-scalar, so any
other shape mismatch raises immediately and wiring bugs surface at the call
site instead of as silently wrong gradients.

Elementwise ``maximum`` routes the full subgradient to its first argument on
exact ties.  Each maximum node also records its branch pattern, which
:func:`grad_check` uses to detect coordinates whose finite-difference probe
crossed a kink (those are reported separately instead of polluting the error
statistic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(ValueError):
    """Graph-level contract violation, e.g. backward from a non-scalar."""


class Tensor:
    """One node of a differentiation graph.

    ``values`` is the forward result, ``grad`` an optional accumulator of the
    same shape.  Repeated ``backward()`` calls on the same graph keep adding
    into ``grad`` (two calls yield exactly twice the gradient).
    """

    __slots__ = ("values", "grad", "node_id")

    def __init__(self, values: np.ndarray, node_id: int):
        self.values = values
        self.grad: np.ndarray | None = None
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(id={self.node_id}, shape={self.shape})"


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    return arr


class Graph:
    """Dynamic tape of operations plus the RNG used by stochastic ops."""

    def __init__(self, seed: int | None = None):
        self._tape: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._next_id = 0
        self.rng = np.random.default_rng(seed)
        self._branches: list[np.ndarray] = []

    # ------------------------------------------------------------------ infra

    def tensor(self, values) -> Tensor:
        """Create a leaf tensor (copies its input)."""
        t = Tensor(_as_array(values), self._next_id)
        self._next_id += 1
        return t

    def _node(self, values: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
        out = Tensor(values, self._next_id)
        self._next_id += 1
        self._tape.append((out, inputs, backward))
        return out

    def branch_signature(self) -> bytes:
        """Packed branch pattern of every maximum node, in tape order."""
        if not self._branches:
            return b""
        return b"".join(np.packbits(b.ravel()).tobytes() for b in self._branches)

    # ------------------------------------------------------------- arithmetic

    @staticmethod
    def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
        if a.shape != b.shape:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")

    def _ewise(self, a: Tensor, b, op: str):
        """Common precondition handling for elementwise ops: equal shapes or scalar b."""
        if isinstance(b, Tensor):
            self._check_same_shape(a, b, op)
            return b.values, b
        return float(b), None

    def add(self, a: Tensor, b) -> Tensor:
        bv, bt = self._ewise(a, b, "add")
        inputs = (a, bt) if bt is not None else (a,)

        def backward(g):
            return (g, g) if bt is not None else (g,)

        return self._node(a.values + bv, inputs, backward)

    def sub(self, a: Tensor, b) -> Tensor:
        bv, bt = self._ewise(a, b, "sub")
        inputs = (a, bt) if bt is not None else (a,)

        def backward(g):
            return (g, -g) if bt is not None else (g,)

        return self._node(a.values - bv, inputs, backward)

    def mul(self, a: Tensor, b) -> Tensor:
        bv, bt = self._ewise(a, b, "mul")
        inputs = (a, bt) if bt is not None else (a,)
        av = a.values

        def backward(g):
            if bt is not None:
                return (g * bv, g * av)
            return (g * bv,)

        return self._node(av * bv, inputs, backward)

    def maximum(self, a: Tensor, b) -> Tensor:
        """Elementwise max; on exact ties the full subgradient goes to ``a``."""
        bv, bt = self._ewise(a, b, "maximum")
        take_a = a.values >= bv
        self._branches.append(take_a)
        inputs = (a, bt) if bt is not None else (a,)

        def backward(g):
            ga = g * take_a
            if bt is not None:
                return (ga, g * ~take_a)
            return (ga,)

        return self._node(np.maximum(a.values, bv), inputs, backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)

        def backward(g):
            return (g * c,)

        return self._node(a.values * c, (a,), backward)

    # ------------------------------------------------------------ linear maps

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.values.ndim != 2 or b.values.ndim != 2:
            raise ShapeError(f"matmul: operands must be 2-d, got {a.shape} and {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner extents of {a.shape} and {b.shape} disagree")
        av, bv = a.values, b.values

        def backward(g):
            return (g @ bv.T, av.T @ g)

        return self._node(av @ bv, (a, b), backward)

    def tile_rows(self, v: Tensor, m: int) -> Tensor:
        """Explicitly replicate a vector into ``m`` rows (no silent broadcasting)."""
        if v.values.ndim != 1:
            raise ShapeError(f"tile_rows: expected a vector, got shape {v.shape}")

        def backward(g):
            return (g.sum(axis=0),)

        return self._node(np.tile(v.values, (m, 1)), (v,), backward)

    # ------------------------------------------------------------ structure

    def concat(self, parts: list[Tensor]) -> Tensor:
        """Concatenate along the last axis."""
        if not parts:
            raise ShapeError("concat: no operands")
        lead = parts[0].shape[:-1]
        for p in parts[1:]:
            if p.shape[:-1] != lead:
                raise ShapeError(
                    f"concat: leading extents differ: {parts[0].shape} vs {p.shape}"
                )
        widths = [p.shape[-1] for p in parts]
        offsets = np.cumsum([0] + widths)

        def backward(g):
            return tuple(
                g[..., offsets[i]: offsets[i + 1]] for i in range(len(widths))
            )

        return self._node(
            np.concatenate([p.values for p in parts], axis=-1), tuple(parts), backward
        )

    def slice(self, a: Tensor, axis: int, start: int, stop: int) -> Tensor:
        if not 0 <= axis < a.values.ndim:
            raise ShapeError(f"slice: axis {axis} invalid for shape {a.shape}")
        extent = a.shape[axis]
        if not (0 <= start <= stop <= extent):
            raise ShapeError(
                f"slice: range [{start}, {stop}) out of bounds for extent {extent}"
            )
        index = tuple(
            slice(start, stop) if ax == axis else slice(None)
            for ax in range(a.values.ndim)
        )
        shape = a.shape

        def backward(g):
            out = np.zeros(shape)
            out[index] = g
            return (out,)

        return self._node(a.values[index].copy(), (a,), backward)

    # ------------------------------------------------------------ nonlinear

    def sigmoid(self, a: Tensor) -> Tensor:
        s = expit(a.values)

        def backward(g):
            return (g * s * (1.0 - s),)

        return self._node(s, (a,), backward)

    def tanh(self, a: Tensor) -> Tensor:
        t = np.tanh(a.values)

        def backward(g):
            return (g * (1.0 - t * t),)

        return self._node(t, (a,), backward)

    def dropout(self, a: Tensor, rate: float, mode: str) -> Tensor:
        """Inverted dropout; identity (and RNG-free) in infer mode or at rate 0."""
        if not 0.0 <= rate < 1.0:
            raise GraphError(f"dropout rate {rate} outside [0, 1)")
        if mode not in ("train", "infer"):
            raise GraphError(f"unknown mode {mode!r}")
        if mode == "infer" or rate == 0.0:
            return a
        keep = (self.rng.random(a.shape) >= rate) / (1.0 - rate)

        def backward(g):
            return (g * keep,)

        return self._node(a.values * keep, (a,), backward)

    # ------------------------------------------------------------ reductions

    def sum_all(self, a: Tensor) -> Tensor:
        shape = a.shape

        def backward(g):
            return (np.full(shape, float(g)),)

        return self._node(np.asarray(a.values.sum()), (a,), backward)

    def mean_all(self, a: Tensor) -> Tensor:
        shape = a.shape
        n = a.size

        def backward(g):
            return (np.full(shape, float(g) / n),)

        return self._node(np.asarray(a.values.mean()), (a,), backward)

    # ------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(node) into ``grad`` of every node that feeds it."""
        if loss.size != 1:
            raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
        for out, inputs, bfn in reversed(self._tape):
            g = pending.pop(out.node_id, None)
            if g is None:
                continue
            out.grad = g if out.grad is None else out.grad + g
            for t, gi in zip(inputs, bfn(g)):
                if gi is None:
                    continue
                acc = pending.get(t.node_id)
                pending[t.node_id] = gi if acc is None else acc + gi
        for out, inputs, _ in self._tape:
            for t in inputs:
                g = pending.pop(t.node_id, None)
                if g is not None:
                    t.grad = g if t.grad is None else t.grad + g
        # a bare leaf used directly as the loss
        g = pending.pop(loss.node_id, None)
        if g is not None:
            loss.grad = g if loss.grad is None else loss.grad + g


@dataclass
class GradCheckResult:
    """Outcome of comparing backward() against central finite differences."""

    max_rel_error: float
    n_coords: int
    kink_coords: int

    def __repr__(self) -> str:
        return (
            f"GradCheckResult(max_rel_error={self.max_rel_error:.3e}, "
            f"n_coords={self.n_coords}, kink_coords={self.kink_coords})"
        )


def grad_check(build, points: dict[str, np.ndarray], eps: float = 1e-6,
               seed: int = 0) -> GradCheckResult:
    """Check the analytic gradient of ``build`` at ``points``.

    ``build(graph, leaves)`` must construct and return a scalar loss from the
    dict of leaf tensors.  The graph is rebuilt (with the same RNG seed, so
    stochastic ops repeat their draws) for every one of the ``2 * n_coords``
    central-difference probes.  Coordinates whose probe flipped a maximum
    branch sit on a subgradient kink; they are excluded from the error
    maximum and counted in ``kink_coords``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    points = {k: np.array(v, dtype=np.float64) for k, v in points.items()}

    def run(values: dict[str, np.ndarray], want_grad: bool):
        g = Graph(seed=seed)
        leaves = {k: g.tensor(v) for k, v in values.items()}
        loss = build(g, leaves)
        if want_grad:
            g.backward(loss)
            return loss, leaves, g.branch_signature()
        return float(loss.values), g.branch_signature()

    _, leaves, base_sig = run(points, want_grad=True)
    analytic = {
        k: (np.zeros_like(points[k]) if leaves[k].grad is None else leaves[k].grad)
        for k in points
    }

    max_rel = 0.0
    n_coords = 0
    kinks = 0
    for name, arr in points.items():
        flat = arr.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            n_coords += 1
            orig = flat[i]
            flat[i] = orig + eps
            f_plus, sig_plus = run(points, want_grad=False)
            flat[i] = orig - eps
            f_minus, sig_minus = run(points, want_grad=False)
            flat[i] = orig
            if sig_plus != base_sig or sig_minus != base_sig:
                kinks += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(a_flat[i] - numeric) / (abs(numeric) + 1e-8)
            max_rel = max(max_rel, rel)
    return GradCheckResult(max_rel_error=max_rel, n_coords=n_coords, kink_coords=kinks)
