"""Contrastive pretraining: paired-view InfoNCE over a small encoder.

All losses here (and the unlearning objectives built on top of them) are
functions of the pairwise feature dot-product matrix P = Z Z^T, with Z the
(n, d) feature stack.  PairTerms accumulates per-term contributions to
dLoss/dP and converts once at the end via dLoss/dZ = (G + G^T) Z, which
keeps every objective inside one gradient scheme that finite differences
can check.

Feature stacking convention: a batch of B positive pairs becomes a
(2B, d) stack where row i and row B+i are the two views of sample i.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import seeds
from .datagen import AugmentorConfig, LabeledDataset, Splits, paired_views_for_ids
from .diffcore import (
    EncoderNet,
    LossFn,
    OptState,
    init_encoder,
    loss_and_grads,
    sgd_momentum_step,
)
from .errors import ConfigurationError, NumericError


@dataclass
class ContrastiveConfig:
    temperature: float = 0.5
    batch_size: int = 128
    epochs: int = 200
    base_lr: float = 0.06
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.base_lr < 0:
            raise ConfigurationError("base_lr must be >= 0")


class PairTerms:
    """Accumulates loss terms over P = Z Z^T and their dLoss/dP.

    Index arrays passed to add_log_sum_exp must contain unique rows;
    gradient scatter relies on it.  add_pair_mean tolerates duplicates.
    """

    def __init__(self, feats: np.ndarray):
        z = np.asarray(feats, dtype=np.float64)
        if z.ndim != 2:
            raise ConfigurationError("feature stack must be 2-d")
        self.z = z
        self.p = z @ z.T
        self.g = np.zeros_like(self.p)
        self.value = 0.0

    def add_pair_mean(self, rows_a, rows_b, coeff: float, tau: float | None = None) -> None:
        """coeff * mean over pairs of P[a, b], divided by tau when given."""
        rows_a = np.asarray(rows_a, dtype=np.int64)
        rows_b = np.asarray(rows_b, dtype=np.int64)
        if rows_a.shape != rows_b.shape or rows_a.ndim != 1 or rows_a.size == 0:
            raise ConfigurationError("pair index arrays must be equal-length and non-empty")
        scale = 1.0 if tau is None else 1.0 / tau
        vals = self.p[rows_a, rows_b]
        self.value += coeff * scale * float(vals.mean())
        per = coeff * scale / rows_a.size
        np.add.at(self.g, (rows_a, rows_b), per)

    def add_log_sum_exp(
        self,
        anchor_rows,
        pool_rows,
        coeff: float,
        tau: float,
        exclude_pool_pos=None,
    ) -> None:
        """coeff * mean over anchors of log sum_k exp(P[a, pool_k]/tau).

        exclude_pool_pos[i] >= 0 drops that pool position from anchor i's
        sum (the anchor's own view).  Uses max-subtraction so identical
        similarities cancel exactly.
        """
        anchor_rows = np.asarray(anchor_rows, dtype=np.int64)
        pool_rows = np.asarray(pool_rows, dtype=np.int64)
        if anchor_rows.size == 0 or pool_rows.size == 0:
            raise ConfigurationError("log-sum-exp needs non-empty anchors and pool")
        if tau <= 0:
            raise ConfigurationError("temperature must be > 0")
        s = self.p[np.ix_(anchor_rows, pool_rows)] / tau
        if exclude_pool_pos is not None:
            exclude_pool_pos = np.asarray(exclude_pool_pos, dtype=np.int64)
            which = np.nonzero(exclude_pool_pos >= 0)[0]
            s[which, exclude_pool_pos[which]] = -np.inf
        m = s.max(axis=1)
        if not np.all(np.isfinite(m)):
            raise ConfigurationError("an anchor's similarity pool is empty")
        e = np.exp(s - m[:, None])
        tot = e.sum(axis=1)
        lse = m + np.log(tot)
        self.value += coeff * float(lse.mean())
        w = e / tot[:, None]
        self.g[np.ix_(anchor_rows, pool_rows)] += (coeff / (anchor_rows.size * tau)) * w

    def result(self) -> tuple[float, np.ndarray]:
        dz = (self.g + self.g.T) @ self.z
        return self.value, dz


def _check_paired_stack(feats: np.ndarray, allow_singleton: bool) -> int:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] % 2 != 0 or feats.shape[0] == 0:
        raise ConfigurationError("paired stack must have a positive even row count")
    b = feats.shape[0] // 2
    if b == 1 and not allow_singleton:
        raise ConfigurationError(
            "a single positive pair has no negatives; pass allow_singleton=True "
            "to accept the degenerate zero loss"
        )
    return b


def info_nce_with_grads(
    feats, temperature: float, allow_singleton: bool = False
) -> tuple[float, np.ndarray]:
    """Paired-view InfoNCE over a (2B, d) stack: mean over all 2B anchors of
    -s(a, partner)/tau + log sum_{k != a} exp(s(a, k)/tau).  Returns the
    value and its gradient w.r.t. the stack."""
    feats = np.asarray(feats, dtype=np.float64)
    b = _check_paired_stack(feats, allow_singleton)
    if temperature <= 0:
        raise ConfigurationError("temperature must be > 0")
    n = 2 * b
    anchors = np.arange(n)
    partners = (anchors + b) % n
    acc = PairTerms(feats)
    acc.add_pair_mean(anchors, partners, coeff=-1.0, tau=temperature)
    acc.add_log_sum_exp(anchors, anchors, coeff=1.0, tau=temperature,
                        exclude_pool_pos=anchors)
    return acc.result()


def info_nce_batch(feats, temperature: float, allow_singleton: bool = False) -> float:
    return info_nce_with_grads(feats, temperature, allow_singleton)[0]


def info_nce_loss_fn(temperature: float, allow_singleton: bool = False) -> LossFn:
    return lambda z: info_nce_with_grads(z, temperature, allow_singleton)


def batch_chunks(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive id chunks; a trailing single-element chunk is dropped
    because one pair cannot form a contrastive batch."""
    if batch_size < 2:
        raise ConfigurationError("batch_size must be >= 2")
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if chunks and len(chunks[-1]) < 2:
        chunks.pop()
    return chunks


def steps_per_epoch(n_ids: int, batch_size: int) -> int:
    return len(batch_chunks(np.arange(n_ids), batch_size))


def pretrain(
    data: LabeledDataset,
    splits: Splits,
    cfg: ContrastiveConfig,
    arch,
    aug: AugmentorConfig,
) -> EncoderNet:
    """SGD(momentum, cosine schedule) on InfoNCE over the train split.
    epochs=0 returns the freshly initialized encoder untouched."""
    return pretrain_on_ids(data, splits.train, cfg, arch, aug)


def pretrain_on_ids(
    data: LabeledDataset,
    ids: np.ndarray,
    cfg: ContrastiveConfig,
    arch,
    aug: AugmentorConfig,
) -> EncoderNet:
    """Contrastive training restricted to an explicit id set (exact
    retraining passes the retain ids here)."""
    arch = [int(d) for d in arch]
    if arch[0] != data.dim:
        raise ConfigurationError(
            f"architecture input dim {arch[0]} does not match data dim {data.dim}"
        )
    if aug.is_identity:
        warnings.warn("identity augmentation: positive pairs are exact copies, "
                      "contrastive training signal is degenerate")
    net = init_encoder(arch, seed=(cfg.seed, seeds.NET_INIT))
    if cfg.epochs == 0:
        return net
    if len(ids) < 2:
        raise ConfigurationError("train split needs at least 2 samples")
    spe = steps_per_epoch(len(ids), cfg.batch_size)
    opt = OptState(
        base_lr=cfg.base_lr,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        total_steps=cfg.epochs * spe,
    )
    loss_fn = info_nce_loss_fn(cfg.temperature)
    for epoch in range(cfg.epochs):
        perm = seeds.stream_rng(cfg.seed, seeds.SHUFFLE_MAIN, epoch).permutation(ids)
        for step, chunk in enumerate(batch_chunks(perm, cfg.batch_size)):
            xs, ys = paired_views_for_ids(data, chunk, aug, cfg.seed, epoch)
            loss, grads = loss_and_grads(net, np.vstack([xs, ys]), loss_fn)
            if not np.isfinite(loss) or not grads.all_finite():
                raise NumericError(f"non-finite loss/grads at epoch {epoch} step {step}")
            sgd_momentum_step(net, grads, opt)
    return net
