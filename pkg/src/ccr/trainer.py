"""Adapter fine-tuning on paragraph triplets with a max-margin triplet loss.

The loss is L = max(D+ - D- + alpha, 0) with D+/- the squared Euclidean
distances between the adapted anchor and positive/negative embeddings.
Optimization is Adam with linear warmup followed by linear decay; the best
checkpoint is selected by validation Pearson against title-similarity pseudo
ground truth.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .backends import AdapterParams, EmbeddingBackend, EmbeddingSource, apply_adapter_batch
from .errors import ConfigError, DataError, NumericalError
from .pairing import Triplet
from .stats import pearson, spearman

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripletLossConfig:
    margin_alpha: float = 5.0  # 0 reproduces the margin-free form

    def __post_init__(self):
        if self.margin_alpha < 0:
            raise ConfigError(f"margin_alpha must be >= 0, got {self.margin_alpha}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    warmup_epochs: int = 1
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be >= 0")
        if self.warmup_epochs > self.epochs:
            raise ConfigError(f"warmup_epochs {self.warmup_epochs} > epochs {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass(frozen=True)
class ValidationReport:
    pearson: float
    spearman: float
    n_pairs: int
    epoch: int
    mean_loss: float | None = None  # None for the epoch-0 baseline


def triplet_loss(
    anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray, config: TripletLossConfig
) -> float:
    """max(D+ - D- + margin, 0) with squared-Euclidean distances."""
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negative = np.asarray(negative, dtype=np.float64)
    if not (anchor.shape == positive.shape == negative.shape):
        raise DataError(
            f"dimension mismatch: {anchor.shape}, {positive.shape}, {negative.shape}"
        )
    d_pos = float(np.sum((anchor - positive) ** 2))
    d_neg = float(np.sum((anchor - negative) ** 2))
    return max(d_pos - d_neg + config.margin_alpha, 0.0)


def triplet_loss_grad(
    anchor_raw: np.ndarray,
    pos_raw: np.ndarray,
    neg_raw: np.ndarray,
    params: AdapterParams,
    config: TripletLossConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (dW, db) of the triplet loss through the affine adapter.

    Inactive triplets (loss exactly 0) yield zero gradients. db is identically
    zero because the bias cancels in every pairwise difference.
    """
    loss, dW, db, _ = _batch_loss_grad(
        params,
        np.asarray([anchor_raw], dtype=np.float64),
        np.asarray([pos_raw], dtype=np.float64),
        np.asarray([neg_raw], dtype=np.float64),
        config,
    )
    return dW, db


def _batch_loss_grad(params, A, P, N, config):
    """Summed loss and gradients over a triplet batch (vectorized)."""
    if not (A.shape == P.shape == N.shape) or A.shape[1] != params.dim_in:
        raise DataError(f"batch shape mismatch: {A.shape}, {P.shape}, {N.shape}")
    FA = apply_adapter_batch(params, A)
    FP = apply_adapter_batch(params, P)
    FN = apply_adapter_batch(params, N)
    U = FA - FP
    V = FA - FN
    margins = np.sum(U * U, axis=1) - np.sum(V * V, axis=1) + config.margin_alpha
    active = margins > 0.0
    losses = np.where(active, margins, 0.0)
    act = active.astype(np.float64)[:, None]
    ga = 2.0 * (U - V) * act
    gp = -2.0 * U * act
    gn = 2.0 * V * act
    dW = ga.T @ A + gp.T @ P + gn.T @ N
    db = (ga + gp + gn).sum(axis=0)
    return float(losses.sum()), dW, db, losses


class AdamOptimizer:
    """Adam over the adapter parameters, with per-call learning rate."""

    def __init__(self, params: AdapterParams, cfg: TrainConfig):
        self.cfg = cfg
        self.mW = np.zeros_like(params.W)
        self.vW = np.zeros_like(params.W)
        self.mb = np.zeros_like(params.b)
        self.vb = np.zeros_like(params.b)
        self.t = 0

    def step(self, params: AdapterParams, dW: np.ndarray, db: np.ndarray, lr: float) -> None:
        b1, b2, eps = self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps
        self.t += 1
        for grad, m, v, target in ((dW, self.mW, self.vW, params.W), (db, self.mb, self.vb, params.b)):
            m *= b1
            m += (1 - b1) * grad
            v *= b2
            v += (1 - b2) * grad**2
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            target -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_at_step(step: int, total_steps: int, warm_steps: int, lr0: float) -> float:
    """Linear warmup from 0 over warm_steps, then linear decay toward 0."""
    if step < warm_steps:
        return lr0 * (step + 1) / warm_steps
    if total_steps == warm_steps:
        return lr0
    return lr0 * (total_steps - step) / (total_steps - warm_steps)


def _validate(params, source, valid_pairs, epoch, mean_loss=None) -> ValidationReport:
    ids_i = [p[0] for p in valid_pairs]
    ids_j = [p[1] for p in valid_pairs]
    gt = [float(p[2]) for p in valid_pairs]
    Fi = apply_adapter_batch(params, source.vectors(ids_i))
    Fj = apply_adapter_batch(params, source.vectors(ids_j))
    preds = _row_cosines(Fi, Fj)
    return ValidationReport(
        pearson=pearson(preds, gt),
        spearman=spearman(preds, gt),
        n_pairs=len(valid_pairs),
        epoch=epoch,
        mean_loss=mean_loss,
    )


def _row_cosines(A: np.ndarray, B: np.ndarray) -> list[float]:
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DataError("zero-norm embedding in cosine computation")
    return [float(x) for x in np.clip(np.sum(A * B, axis=1) / (na * nb), -1.0, 1.0)]


def train_adapter(
    triplets: Sequence[Triplet],
    backend: EmbeddingBackend | EmbeddingSource,
    train_cfg: TrainConfig,
    loss_cfg: TripletLossConfig,
    valid_pairs: Sequence[tuple[str, str, float]],
    texts: Mapping[str, str] | None = None,
) -> tuple[AdapterParams, list[ValidationReport]]:
    """Fine-tune an identity-initialized adapter on triplets.

    `backend` may be an EmbeddingSource or a raw backend (then `texts` must map
    paragraph ids to their texts). Returns the checkpoint with the best
    validation Pearson (ties broken by Spearman; the epoch-0 identity baseline
    competes too) along with one ValidationReport per epoch.
    """
    if not triplets:
        raise DataError("empty triplet list")
    if not valid_pairs:
        raise DataError("empty validation pair list")
    if isinstance(backend, EmbeddingSource):
        source = backend
    else:
        source = EmbeddingSource(backend=backend, texts=texts)

    A = source.vectors([t.anchor_id for t in triplets])
    P = source.vectors([t.positive_id for t in triplets])
    N = source.vectors([t.negative_id for t in triplets])
    dim = A.shape[1]
    params = AdapterParams.identity(dim)

    reports = [_validate(params, source, valid_pairs, epoch=0)]
    best = params.copy()
    best_key = (reports[0].pearson, reports[0].spearman)

    n = len(triplets)
    steps_per_epoch = math.ceil(n / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    warm_steps = steps_per_epoch * train_cfg.warmup_epochs
    optimizer = AdamOptimizer(params, train_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                batch_loss, dW, db, _ = _batch_loss_grad(params, A[idx], P[idx], N[idx], loss_cfg)
            if not (np.isfinite(batch_loss) and np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
                raise NumericalError(
                    f"non-finite loss or gradient at epoch {epoch}, step {step} "
                    f"(batch_loss={batch_loss}); try a smaller learning rate"
                )
            optimizer.step(params, dW, db, lr_at_step(step, total_steps, warm_steps, train_cfg.learning_rate))
            loss_sum += batch_loss
            step += 1
        report = _validate(params, source, valid_pairs, epoch, mean_loss=loss_sum / n)
        reports.append(report)
        key = (report.pearson, report.spearman)
        if key > best_key:
            best_key = key
            best = params.copy()
    return best, reports


DEFAULT_SWEEP_GRID: dict[str, list] = {
    "batch_size": [16, 32],
    "warmup_epochs": [1, 2, 3],
    "learning_rate": [1e-6, 1e-5, 2e-5],
}


def expand_grid(grid: Mapping[str, Sequence], base: TrainConfig | None = None) -> list[TrainConfig]:
    """Cartesian product of grid values over TrainConfig fields, in stable order."""
    if not grid:
        raise DataError("empty sweep grid")
    base = base or TrainConfig()
    names = list(grid)
    configs = []
    for combo in itertools.product(*(grid[name] for name in names)):
        configs.append(replace(base, **dict(zip(names, combo))))
    return configs


def sweep(
    train_fn: Callable[[TrainConfig], tuple[AdapterParams, list[ValidationReport]]],
    grid: Mapping[str, Sequence] | Sequence[TrainConfig],
    base: TrainConfig | None = None,
) -> list[tuple[TrainConfig, ValidationReport]]:
    """Evaluate every grid point and return (config, best report) rows sorted by
    validation Pearson descending (ties by Spearman)."""
    if isinstance(grid, Mapping):
        configs = expand_grid(grid, base)
    else:
        configs = list(grid)
        if not configs:
            raise DataError("empty sweep grid")
    rows = []
    for cfg in configs:
        _, reports = train_fn(cfg)
        best = max(reports, key=lambda r: (r.pearson, r.spearman))
        rows.append((cfg, best))
    rows.sort(key=lambda row: (-row[1].pearson, -row[1].spearman))
    return rows


def write_train_log(reports: Sequence[ValidationReport], path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for rep in reports:
            fh.write(
                json.dumps(
                    {
                        "epoch": rep.epoch,
                        "mean_loss": rep.mean_loss,
                        "pearson": rep.pearson,
                        "spearman": rep.spearman,
                    }
                )
                + "\n"
            )
