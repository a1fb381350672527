"""Margin ranking loss over (query, positive, negatives) and plain SGD training.

    L = sum_j max(d2(q, p) + m - d2(q, n_j), 0)

with ``d2`` the squared Euclidean distance between unit embeddings. When the
query has been composited with a layout this is the augmented objective; the
formula is unchanged.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .augment import LayoutRecord
from .embed import EmbedderParams, embed_features, extract_features, init_params, normalize_rows
from .manifest import GeoImage
from .mining import EpochTriplets, Gallery, MiningConfig, build_epoch_triplets
from .parallel import feature_matrix
from .rng import stage_rng

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class LossConfig:
    margin: float = 0.1
    learning_rate: float = 0.01
    epochs: int = 5
    batch_size: int = 16
    n_negatives: int = 10
    pool_size: int = 1000
    positive_radius: float = 10.0
    negative_radius: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def mining(self) -> MiningConfig:
        return MiningConfig(self.positive_radius, self.negative_radius, self.pool_size, self.n_negatives)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    skipped: int
    checksum: str


@dataclass
class TrainReport:
    initial_checksum: str
    epochs: list[EpochStats] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "skipped", "checksum"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.mean_loss), e.skipped, e.checksum])


def triplet_loss(d2_qp: float, d2_qn, m: float = 0.1) -> float:
    """Sum of hinge terms ``max(d2_qp + m - d2_qn[j], 0)``."""
    x = d2_qp + m - np.asarray(d2_qn, dtype=np.float64)
    return float(np.maximum(x, 0.0).sum())


def loss_and_grad(W: np.ndarray, f_q: np.ndarray, f_p: np.ndarray, f_n: np.ndarray,
                  m: float = 0.1) -> tuple[float, np.ndarray]:
    """Loss of one triplet in feature space and its gradient with respect to ``W``.

    Backpropagates through ``e = u / |u|`` with ``u = W.T f``. The hinge
    subgradient at zero is taken as zero, and so is the gradient through a
    zero-vector fallback embedding (it is constant).
    """
    X = np.vstack([f_q, f_p, np.atleast_2d(f_n)])
    U = X @ W
    norms = np.sqrt(np.einsum("ij,ij->i", U, U))
    E, zero = normalize_rows(U)
    eq, ep, en = E[0], E[1], E[2:]
    dqp = eq - ep
    dqn = eq - en
    x = dqp @ dqp + m - np.einsum("ij,ij->i", dqn, dqn)
    active = x > 0.0
    loss = float(x[active].sum())
    gE = np.zeros_like(E)
    if active.any():
        k = int(active.sum())
        gE[0] = 2.0 * (en[active] - ep).sum(axis=0)
        gE[1] = -2.0 * k * dqp
        gE[2:][active] = 2.0 * dqn[active]
    radial = np.einsum("ij,ij->i", E, gE)
    gU = (gE - radial[:, None] * E) / np.where(zero, 1.0, norms)[:, None]
    gU[zero] = 0.0
    return loss, X.T @ gU


def loss_gradient(params: EmbedderParams, q_img, p_img, n_imgs: Sequence, m: float = 0.1) -> np.ndarray:
    """Gradient of the triplet loss w.r.t. ``params.W`` for raw (already augmented) images."""
    fq = extract_features(q_img)
    fp = extract_features(p_img)
    fn = np.array([extract_features(im) for im in n_imgs])
    return loss_and_grad(params.W, fq, fp, fn, m)[1]


def sgd_epoch(params: EmbedderParams, batch: EpochTriplets, gallery_feats: np.ndarray,
              id_to_pos: dict[int, int], config: LossConfig) -> float:
    """One pass over the triplets in order; updates ``params.W`` in place, returns mean loss."""
    losses = []
    trips = batch.triplets
    for start in range(0, len(trips), config.batch_size):
        grad = np.zeros_like(params.W)
        chunk = trips[start:start + config.batch_size]
        for t in chunk:
            fq = batch.query_features[t.query_id]
            fp = gallery_feats[id_to_pos[t.positive_id]]
            fn = gallery_feats[[id_to_pos[i] for i in t.negative_ids]]
            loss, g = loss_and_grad(params.W, fq, fp, fn, config.margin)
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite loss/gradient at query {t.query_id}")
            losses.append(loss)
            grad += g
        params.W -= config.learning_rate * grad / len(chunk)
    return float(np.mean(losses)) if losses else 0.0


def train(queries: Sequence[GeoImage], gallery: Sequence[GeoImage], layouts: Sequence[LayoutRecord] | None,
          config: LossConfig, params: EmbedderParams | None = None,
          gallery_features: np.ndarray | None = None,
          on_epoch: Callable[[int, EpochTriplets], None] | None = None) -> tuple[EmbedderParams, TrainReport]:
    """Train the linear map with per-epoch re-mining.

    Each epoch: re-embed the gallery with the current parameters, pair every
    query with a seeded random layout (none if ``layouts`` is empty), mine
    triplets, then run SGD over them in query order. Everything derives from
    ``config.seed``.
    """
    if not gallery:
        raise ValueError("empty gallery")
    params = init_params(config.seed) if params is None else params.copy()
    report = TrainReport(params.checksum())
    if gallery_features is None:
        gallery_features = feature_matrix(gallery)
    g = Gallery([it.id for it in gallery], [it.location for it in gallery])
    id_to_pos = {int(i): p for p, i in enumerate(g.ids)}
    for epoch in range(config.epochs):
        g.set_embeddings(embed_features(params, gallery_features))
        rng = stage_rng(config.seed, f"train/epoch{epoch}")
        batch = build_epoch_triplets(queries, layouts, g, params, config.mining(), rng)
        if on_epoch is not None:
            on_epoch(epoch, batch)
        mean_loss = sgd_epoch(params, batch, gallery_features, id_to_pos, config)
        if not np.isfinite(mean_loss):
            raise TrainingDiverged(f"epoch {epoch}: mean loss {mean_loss}")
        stats = EpochStats(epoch, mean_loss, batch.skipped, params.checksum())
        log.info("epoch %d: loss %.5f, %d triplets, %d skipped", epoch, mean_loss,
                 len(batch.triplets), batch.skipped)
        report.epochs.append(stats)
    return params, report


def config_dict(config: LossConfig) -> dict:
    return asdict(config)
