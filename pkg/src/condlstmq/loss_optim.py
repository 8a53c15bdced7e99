"""Pinball (quantile) loss, the 9-quantile training objective, and Adam.

The training loss averages the pinball loss over the forecast horizon, the
nine quantiles 0.1 .. 0.9, and the batch, so its magnitude does not depend on
the horizon or batch size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, ShapeError, Tensor

# Forecast quantiles: i/10 for i = 1..9.
QUANTILES = np.arange(1, 10) / 10.0

N_QUANTILES = len(QUANTILES)


def pinball(q: float, y: float, yhat: float) -> float:
    """Pinball loss max(q*e, (q-1)*e) with e = y - yhat; zero iff y == yhat."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile q={q} outside (0, 1)")
    e = y - yhat
    return max(q * e, (q - 1.0) * e)


def pinball_array(q: float, y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    """Vectorized pinball loss."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile q={q} outside (0, 1)")
    e = np.asarray(y, dtype=float) - np.asarray(yhat, dtype=float)
    return np.maximum(q * e, (q - 1.0) * e)


def avg_quantile_loss(target: np.ndarray, preds: np.ndarray) -> float:
    """Mean-over-horizon pinball loss averaged over the nine quantiles.

    ``target`` has shape ``[horizon]``, ``preds`` shape ``[horizon, 9]`` with
    the quantile axis ordered 0.1 .. 0.9.
    """
    target = np.asarray(target, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if preds.ndim != 2 or preds.shape[1] != N_QUANTILES:
        raise ShapeError(f"preds must be [horizon x 9], got {preds.shape}")
    if target.shape != (preds.shape[0],):
        raise ShapeError(
            f"target shape {target.shape} does not match horizon {preds.shape[0]}"
        )
    per_q = [
        pinball_array(q, target, preds[:, i]).mean() for i, q in enumerate(QUANTILES)
    ]
    return float(np.mean(per_q))


def batch_quantile_loss(targets: np.ndarray, preds: np.ndarray) -> float:
    """Vectorized mean of :func:`avg_quantile_loss` over a batch.

    ``targets`` is ``[n, horizon]`` and ``preds`` ``[n, horizon, 9]``; equals
    the mean of the per-sample losses by linearity.
    """
    targets = np.asarray(targets, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if preds.shape != targets.shape + (N_QUANTILES,):
        raise ShapeError(
            f"preds shape {preds.shape} does not match targets {targets.shape}"
        )
    e = targets[:, :, None] - preds
    pin = np.maximum(QUANTILES * e, (QUANTILES - 1.0) * e)
    return float(pin.mean())


def quantile_loss_graph(g: Graph, heads: list[Tensor], target: np.ndarray) -> Tensor:
    """Differentiable batch loss: heads[i] is the [batch x horizon] forecast at q_i."""
    if len(heads) != N_QUANTILES:
        raise ShapeError(f"expected {N_QUANTILES} quantile heads, got {len(heads)}")
    y = g.tensor(np.asarray(target, dtype=float))
    total = None
    for q, head in zip(QUANTILES, heads):
        e = g.sub(y, head)
        pin = g.maximum(g.scale(e, q), g.scale(e, q - 1.0))
        m = g.mean_all(pin)
        total = m if total is None else g.add(total, m)
    return g.scale(total, 1.0 / N_QUANTILES)


@dataclass
class AdamState:
    """First/second moment estimates mirroring one set of named parameters."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(arrays: dict[str, np.ndarray], learning_rate: float) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    state.m = {k: np.zeros_like(a) for k, a in arrays.items()}
    state.v = {k: np.zeros_like(a) for k, a in arrays.items()}
    return state


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    """Scale all gradients in place so their global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm > 0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor


def adam_step(arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One Adam update, in place on ``arrays``.

    Raises on non-finite gradients, naming the offending parameter.
    """
    for name in arrays:
        g = grads[name]
        if g.shape != arrays[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} of shape {arrays[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, theta in arrays.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
