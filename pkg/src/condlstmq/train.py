"""Training loop, train/validation split, and JSON checkpoints.

A run is fully determined by (data, config, seed): parameter init, epoch
shuffles, and dropout masks all derive from one seed sequence, and batch
gradients are accumulated in fixed sample order.  Validation always runs
with dropout disabled.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .data import (CountyPanel, StandardizationStats, WindowSample, collate,
                   make_windows)
from .loss_optim import (batch_quantile_loss, clip_gradients, init_adam,
                         adam_step, quantile_loss_graph)
from .model import (KIND_COND, KIND_PSEUDO, ModelConfig, ModelParams,
                    collect_gradients, expected_shapes, forward_batch,
                    forward_graph, init_params)

CHECKPOINT_VERSION = 1


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainReport:
    seed: int
    kind: str
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [
            {"epoch": e.epoch, "train_loss": e.train_loss,
             "val_loss": e.val_loss, "seconds": e.seconds}
            for e in self.epochs
        ]


def save_train_report(path: str, report: TrainReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.rows(), f, indent=2)
        f.write("\n")


def split_train_val(panel: CountyPanel, history: int = 7, horizon: int = 14,
                    holdout_days: int = 21,
                    ) -> tuple[list[WindowSample], list[WindowSample]]:
    """Split windows so no target day is shared between the two sets.

    Training windows have their target entirely before the final
    ``holdout_days`` span; validation windows sit entirely inside it.  With
    ``holdout_days == history + horizon`` that is exactly one validation
    window per county.
    """
    n = panel.n_dates
    cut = n - holdout_days
    if cut < history + horizon:
        raise ValueError(
            f"holdout of {holdout_days} days leaves no training window "
            f"in a {n}-day panel"
        )
    date_idx = {d: i for i, d in enumerate(panel.dates)}
    samples = make_windows(panel, history, horizon)
    train = [s for s in samples if date_idx[s.onset_date] + horizon <= cut]
    val = [s for s in samples if date_idx[s.onset_date] - history >= cut]
    if not train or not val:
        raise ValueError(
            f"split produced {len(train)} training and {len(val)} validation "
            f"samples; the panel is too short for holdout {holdout_days}"
        )
    return train, val


def evaluate_loss(params: ModelParams, config: ModelConfig, hist: np.ndarray,
                  cat: np.ndarray, tgt: np.ndarray,
                  chunk: int = 4096) -> float:
    """Mean quantile loss in infer mode (dropout disabled)."""
    total = 0.0
    n = hist.shape[0]
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        preds = forward_batch(params, config, hist[lo:hi], cat[lo:hi])
        total += batch_quantile_loss(tgt[lo:hi], preds) * (hi - lo)
    return total / n


def train(train_samples: list[WindowSample], val_samples: list[WindowSample],
          config: ModelConfig, kind: str = KIND_COND,
          seed: int | None = None) -> tuple[ModelParams, TrainReport]:
    """Minibatch Adam on the averaged quantile loss for a fixed epoch count."""
    if not train_samples or not val_samples:
        raise ValueError("training and validation sample sets must be nonempty")
    seed = config.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    s_init, s_shuffle, s_dropout = ss.spawn(3)
    params = init_params(config, seed=s_init, kind=kind)
    hist, cat, tgt = collate(train_samples)
    vhist, vcat, vtgt = collate(val_samples)
    shuffle_rng = np.random.default_rng(s_shuffle)
    dropout_rng = np.random.default_rng(s_dropout)
    state = init_adam(params.arrays, config.learning_rate)
    report = TrainReport(seed=seed, kind=kind, config=config.to_dict())
    n = hist.shape[0]
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        running = 0.0
        for bi, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo: lo + config.batch_size]
            g = Graph(seed=int(dropout_rng.integers(0, 2 ** 63)))
            heads, pt = forward_graph(g, params, hist[idx], cat[idx],
                                      config, "train")
            loss = quantile_loss_graph(g, heads, tgt[idx])
            value = float(loss.values)
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {bi}"
                )
            g.backward(loss)
            grads = collect_gradients(pt)
            if config.clip_norm > 0:
                clip_gradients(grads, config.clip_norm)
            adam_step(params.arrays, grads, state)
            running += value * len(idx)
        val_loss = evaluate_loss(params, config, vhist, vcat, vtgt)
        report.epochs.append(EpochStats(
            epoch=epoch,
            train_loss=running / n,
            val_loss=val_loss,
            seconds=time.perf_counter() - t0,
        ))
    return params, report


# ----------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    kind: str
    config: ModelConfig
    params: ModelParams
    stats: StandardizationStats
    train_date_range: tuple[str, str]
    version: int = CHECKPOINT_VERSION

    def digest(self) -> str:
        """Content hash of the parameter arrays (stable across save/load)."""
        h = hashlib.sha256()
        for name, arr in self.params.arrays.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:12]


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    doc = {
        "version": ckpt.version,
        "kind": ckpt.kind,
        "config": ckpt.config.to_dict(),
        "stats": ckpt.stats.to_dict(),
        "train_date_range": list(ckpt.train_date_range),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in ckpt.params.arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)
        f.write("\n")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {version!r} "
            f"(expected {CHECKPOINT_VERSION})"
        )
    kind = doc["kind"]
    if kind not in (KIND_COND, KIND_PSEUDO):
        raise ValueError(f"unknown model kind {kind!r} in checkpoint")
    config = ModelConfig.from_dict(doc["config"])
    expected = expected_shapes(config, kind)
    if set(doc["params"]) != set(expected):
        raise ValueError(
            f"checkpoint parameters {sorted(doc['params'])} do not match "
            f"the expected set {sorted(expected)}"
        )
    arrays: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        entry = doc["params"][name]
        if tuple(entry["shape"]) != shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {entry['shape']}, "
                f"expected {list(shape)}"
            )
        arrays[name] = np.asarray(entry["data"], dtype=float).reshape(shape)
    return Checkpoint(
        kind=kind,
        config=config,
        params=ModelParams(kind=kind, arrays=arrays),
        stats=StandardizationStats.from_dict(doc["stats"]),
        train_date_range=tuple(doc["train_date_range"]),
        version=version,
    )


def checkpoint_from_training(params: ModelParams, config: ModelConfig,
                             stats: StandardizationStats,
                             train_date_range: tuple[str, str]) -> Checkpoint:
    return Checkpoint(kind=params.kind, config=config, params=params,
                      stats=stats, train_date_range=train_date_range)
