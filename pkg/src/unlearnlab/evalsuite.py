"""White-box and black-box evaluation of an unlearned encoder.

White-box: replayed paired views of the unlearn set give a per-sample
forgetting score (alignment drop between the encoder before and after
unlearning), a full cross-sample alignment matrix, and the gap matrix
between the two; off-diagonal statistics feed a two-sample location test
computed from summary statistics alone.

Black-box: membership inference from view-alignment scores
(encoder-level) and from classifier confidence (probe-level), plus
retain/test/unlearn accuracies of a linear probe and gap summaries
against the retraining gold standard.

The t-test p-value comes from a hand-rolled regularized incomplete beta
function (continued fraction, absolute error well under 1e-8), so the
package needs no stats dependency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeds
from .datagen import AugmentorConfig, LabeledDataset, Splits, augment_views
from .diffcore import (
    DenseLayer,
    EncoderNet,
    LossFn,
    OptState,
    encoder_forward,
    init_encoder,
    loss_and_grads,
    sgd_momentum_step,
)
from .errors import ConfigurationError, NumericError

# --- result types ---------------------------------------------------------------


@dataclass
class AlignmentMatrix:
    """values[i, j] = <x-view feature of row i, y-view feature of col j>."""

    values: np.ndarray
    row_ids: np.ndarray
    col_ids: np.ndarray


@dataclass
class AlignmentGapMatrix:
    """Alignment before minus after; diagonal holds per-sample forgetting."""

    values: np.ndarray
    row_ids: np.ndarray
    col_ids: np.ndarray
    provenance: tuple[str, str] = ("before", "after")


@dataclass
class SummaryStats:
    mean: float
    std: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("summary stats need n >= 1")
        if self.std < 0:
            raise ConfigurationError("std must be >= 0")

    @classmethod
    def from_values(cls, values) -> "SummaryStats":
        v = np.asarray(values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ConfigurationError("cannot summarize an empty sample")
        std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        return cls(mean=float(v.mean()), std=std, n=int(v.size))


@dataclass
class TTestResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 1.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr < 0 or self.batch_size < 1:
            raise ConfigurationError("bad probe hyperparameters")


@dataclass
class EvalReport:
    fs: float
    emia: float
    cmia: float
    ra: float
    ta: float
    ua: float
    runtime_seconds: float = 0.0

    def metrics(self) -> dict[str, float]:
        """Persisted metrics; runtime stays out so reports are replayable."""
        return {
            "fs": self.fs, "emia": self.emia, "cmia": self.cmia,
            "ra": self.ra, "ta": self.ta, "ua": self.ua,
        }


@dataclass
class GapReport:
    gaps: dict[str, float]
    avg_gap: float
    agp: float


# --- replayed views and alignment ------------------------------------------------


def paired_unlearn_views(
    data: LabeledDataset, unlearn_ids, aug: AugmentorConfig, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """One frozen positive pair per unlearn sample, replayable from the
    seed alone (own stream, independent of training epochs)."""
    ids = np.asarray(unlearn_ids, dtype=np.int64)
    if ids.size == 0:
        raise ConfigurationError("need at least one unlearn id")
    rows = data.rows_for(ids)
    xs = np.empty((ids.size, data.dim))
    ys = np.empty((ids.size, data.dim))
    for k, (sid, row) in enumerate(zip(ids, rows)):
        views = augment_views(
            data.samples[row], aug, 2, seeds.stream_rng(seed, seeds.AUDIT_VIEWS, int(sid))
        )
        xs[k], ys[k] = views[0], views[1]
    return xs, ys


def _check_unit_features(z: np.ndarray, what: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ConfigurationError(f"{what} must be a non-empty 2-d array")
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ConfigurationError(f"{what} rows must be unit-norm features")
    return z


def alignment_matrix(feats_x, feats_y, row_ids=None, col_ids=None) -> AlignmentMatrix:
    """Cross-view cosine table from unit-norm feature rows."""
    zx = _check_unit_features(feats_x, "x-view features")
    zy = _check_unit_features(feats_y, "y-view features")
    if zx.shape[1] != zy.shape[1]:
        raise ConfigurationError("feature dims differ between views")
    row_ids = np.arange(zx.shape[0]) if row_ids is None else np.asarray(row_ids, dtype=np.int64)
    col_ids = np.arange(zy.shape[0]) if col_ids is None else np.asarray(col_ids, dtype=np.int64)
    if row_ids.shape != (zx.shape[0],) or col_ids.shape != (zy.shape[0],):
        raise ConfigurationError("id arrays must align with feature rows")
    return AlignmentMatrix(np.clip(zx @ zy.T, -1.0, 1.0), row_ids, col_ids)


def alignment_gap(before: AlignmentMatrix, after: AlignmentMatrix,
                  provenance: tuple[str, str] = ("before", "after")) -> AlignmentGapMatrix:
    if before.values.shape != after.values.shape:
        raise ConfigurationError("alignment matrices have different shapes")
    if not (np.array_equal(before.row_ids, after.row_ids)
            and np.array_equal(before.col_ids, after.col_ids)):
        raise ConfigurationError("alignment matrices cover different ids")
    return AlignmentGapMatrix(
        before.values - after.values, before.row_ids.copy(), before.col_ids.copy(),
        provenance,
    )


def forgetting_score_from_features(bx, by, ax, ay) -> tuple[float, np.ndarray]:
    """Mean and per-sample drop in positive-pair alignment between two
    encodings of the same replayed views."""
    bx = _check_unit_features(bx, "before x")
    by = _check_unit_features(by, "before y")
    ax = _check_unit_features(ax, "after x")
    ay = _check_unit_features(ay, "after y")
    if not (bx.shape == by.shape and ax.shape == ay.shape and bx.shape[0] == ax.shape[0]):
        raise ConfigurationError("feature blocks must be row-aligned")
    before = np.clip(np.sum(bx * by, axis=1), -1.0, 1.0)
    after = np.clip(np.sum(ax * ay, axis=1), -1.0, 1.0)
    per = before - after
    return float(per.mean()), per


def forgetting_score(
    before_enc: EncoderNet,
    after_enc: EncoderNet,
    data: LabeledDataset,
    unlearn_ids,
    aug: AugmentorConfig,
    seed: int,
) -> tuple[float, np.ndarray]:
    xs, ys = paired_unlearn_views(data, unlearn_ids, aug, seed)
    return forgetting_score_from_features(
        encoder_forward(before_enc, xs), encoder_forward(before_enc, ys),
        encoder_forward(after_enc, xs), encoder_forward(after_enc, ys),
    )


def neg_alignment_stats(gap: AlignmentGapMatrix, mode: str = "full") -> SummaryStats:
    """Summary of cross-sample (off-diagonal) gap entries.  mode='full'
    uses all n(n-1) entries; mode='upper' only the upper triangle, for
    audits where each unordered pair may be counted once."""
    v = gap.values
    if v.shape[0] != v.shape[1]:
        raise ConfigurationError("off-diagonal stats need a square gap matrix")
    if v.shape[0] < 2:
        raise ConfigurationError("need at least 2 samples for cross-sample stats")
    if mode == "full":
        mask = ~np.eye(v.shape[0], dtype=bool)
        vals = v[mask]
    elif mode == "upper":
        iu = np.triu_indices(v.shape[0], k=1)
        vals = v[iu]
    else:
        raise ConfigurationError("mode must be 'full' or 'upper'")
    return SummaryStats.from_values(vals)


# --- two-sample location test from summary statistics ----------------------------

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_BETACF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the regularized incomplete beta (modified
    Lentz iteration)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_TINY:
        d = _BETACF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_TINY:
            d = _BETACF_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETACF_TINY:
            c = _BETACF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ConfigurationError("beta parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ConfigurationError("x must be in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # continued fraction converges fast on one side of the mean; mirror otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def welch_ttest(a: SummaryStats, b: SummaryStats) -> TTestResult:
    """Two-sided unequal-variance location test computed from summary
    statistics only.  Identical degenerate groups (both std 0, equal
    means) return t=0, p=1 by convention."""
    if a.n < 2 or b.n < 2:
        raise ConfigurationError("both groups need n >= 2")
    va = (a.std * a.std) / a.n
    vb = (b.std * b.std) / b.n
    denom = va + vb
    if denom == 0.0:
        if a.mean == b.mean:
            return TTestResult(0.0, float(a.n + b.n - 2), 1.0)
        raise ConfigurationError("zero variance in both groups with unequal means")
    t = (a.mean - b.mean) / math.sqrt(denom)
    df = denom * denom / (va * va / (a.n - 1) + vb * vb / (b.n - 1))
    x = df / (df + t * t)
    p = reg_inc_beta(0.5 * df, 0.5, x)
    p = min(1.0, max(p, 5e-324))
    return TTestResult(float(t), float(df), float(p))


# --- membership inference ---------------------------------------------------------


def fit_threshold(member_scores, nonmember_scores) -> tuple[float, float]:
    """Decision threshold maximizing training accuracy of the rule
    'member iff score > threshold'.  Candidates are midpoints between
    adjacent distinct pooled scores plus sentinels beyond both ends; ties
    resolve to the lowest threshold.  Returns (threshold, accuracy)."""
    ms = np.sort(np.asarray(member_scores, dtype=np.float64).ravel())
    ns = np.sort(np.asarray(nonmember_scores, dtype=np.float64).ravel())
    if ms.size == 0 or ns.size == 0:
        raise ConfigurationError("both score sets must be non-empty")
    pooled = np.unique(np.concatenate([ms, ns]))
    cands = np.concatenate(
        [[pooled[0] - 1.0], (pooled[:-1] + pooled[1:]) / 2.0, [pooled[-1] + 1.0]]
    )
    members_above = ms.size - np.searchsorted(ms, cands, side="right")
    nonmembers_at_or_below = np.searchsorted(ns, cands, side="right")
    acc = (members_above + nonmembers_at_or_below) / (ms.size + ns.size)
    k = int(np.argmax(acc))  # first max = lowest candidate
    return float(cands[k]), float(acc[k])


def mi_alignment_scores(
    enc: EncoderNet,
    data: LabeledDataset,
    ids,
    aug: AugmentorConfig,
    seed: int,
    n_views: int = 10,
) -> np.ndarray:
    """Per-sample mean pairwise cosine across n stochastic views (C(n,2)
    pairs; 45 for the default 10 views)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        raise ConfigurationError("need at least one id to score")
    if n_views < 2:
        raise ConfigurationError("n_views must be >= 2")
    rows = data.rows_for(ids)
    blocks = [
        augment_views(data.samples[row], aug, n_views,
                      seeds.stream_rng(seed, seeds.MI_VIEWS, int(sid)))
        for sid, row in zip(ids, rows)
    ]
    z = encoder_forward(enc, np.vstack(blocks)).reshape(ids.size, n_views, -1)
    sims = np.einsum("nad,nbd->nab", z, z)
    iu, ju = np.triu_indices(n_views, k=1)
    return np.clip(sims[:, iu, ju], -1.0, 1.0).mean(axis=1)


def _member_sample(splits: Splits, seed: int, tag: int) -> np.ndarray:
    if len(splits.test) == 0:
        raise ConfigurationError("membership inference needs a test split")
    if len(splits.retain) < len(splits.test):
        raise ConfigurationError("retain split smaller than test split")
    rng = seeds.stream_rng(seed, tag)
    return np.sort(rng.choice(splits.retain, size=len(splits.test), replace=False))


def encoder_mi_efficacy(
    enc: EncoderNet,
    data: LabeledDataset,
    splits: Splits,
    aug: AugmentorConfig,
    seed: int,
    n_views: int = 10,
) -> float:
    """Train the view-alignment membership attack on retain-vs-test scores,
    then report the fraction of unlearn samples it calls non-members."""
    members = _member_sample(splits, seed, seeds.MI_MEMBERS)
    m = mi_alignment_scores(enc, data, members, aug, seed, n_views)
    n = mi_alignment_scores(enc, data, splits.test, aug, seed, n_views)
    thr, _ = fit_threshold(m, n)
    u = mi_alignment_scores(enc, data, splits.unlearn, aug, seed, n_views)
    return float(np.mean(u <= thr))


# --- linear probe ------------------------------------------------------------------


def softmax_xent_loss_fn(labels: np.ndarray, num_classes: int) -> LossFn:
    """Mean cross-entropy over logits, stable log-sum-exp form."""
    labels = np.asarray(labels, dtype=np.int64)

    def fn(logits):
        n = logits.shape[0]
        if labels.shape != (n,):
            raise ConfigurationError("labels do not align with the logit batch")
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        tot = e.sum(axis=1, keepdims=True)
        lse = (m + np.log(tot)).ravel()
        nll = float(np.mean(lse - logits[np.arange(n), labels]))
        g = e / tot
        g[np.arange(n), labels] -= 1.0
        return nll, g / n

    return fn


def _plain_chunks(n: int, size: int) -> list[np.ndarray]:
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def linear_probe(
    enc: EncoderNet,
    data: LabeledDataset,
    ids,
    num_classes: int,
    cfg: ProbeConfig,
) -> EncoderNet:
    """Multinomial linear head trained with SGD on frozen features."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size < 2:
        raise ConfigurationError("probe training needs at least 2 samples")
    if num_classes < 2:
        raise ConfigurationError("need at least 2 classes")
    labels = data.labels_for(ids)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ConfigurationError("labels out of range for num_classes")
    feats = encoder_forward(enc, data.samples_for(ids))
    head = init_encoder([feats.shape[1], num_classes],
                        seed=(cfg.seed, seeds.PROBE_INIT), normalize_output=False)
    if cfg.epochs == 0:
        return head
    spe = len(_plain_chunks(ids.size, cfg.batch_size))
    opt = OptState(base_lr=cfg.lr, momentum=cfg.momentum,
                   weight_decay=cfg.weight_decay, total_steps=cfg.epochs * spe)
    for epoch in range(cfg.epochs):
        perm = seeds.stream_rng(cfg.seed, seeds.PROBE_SHUFFLE, epoch).permutation(ids.size)
        for chunk in _plain_chunks(ids.size, cfg.batch_size):
            take = perm[chunk]
            loss_fn = softmax_xent_loss_fn(labels[take], num_classes)
            loss, grads = loss_and_grads(head, feats[take], loss_fn)
            if not np.isfinite(loss) or not grads.all_finite():
                raise NumericError(f"non-finite probe loss at epoch {epoch}")
            sgd_momentum_step(head, grads, opt)
    return head


def _accuracy(enc: EncoderNet, head: EncoderNet, data: LabeledDataset, ids) -> float:
    feats = encoder_forward(enc, data.samples_for(ids))
    logits = encoder_forward(head, feats)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == data.labels_for(ids)) * 100.0)


def classifier_metrics(
    enc: EncoderNet, head: EncoderNet, data: LabeledDataset, splits: Splits
) -> tuple[float, float, float]:
    """(retain, test, unlearn) accuracies in percent."""
    if len(splits.test) == 0:
        raise ConfigurationError("classifier metrics need a test split")
    return (
        _accuracy(enc, head, data, splits.retain),
        _accuracy(enc, head, data, splits.test),
        _accuracy(enc, head, data, splits.unlearn),
    )


def confidence_scores(enc: EncoderNet, head: EncoderNet, data: LabeledDataset, ids) -> np.ndarray:
    """Max softmax probability per sample under the probe."""
    feats = encoder_forward(enc, data.samples_for(ids))
    logits = encoder_forward(head, feats)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return (e.max(axis=1) / e.sum(axis=1))


def cmia_efficacy(
    enc: EncoderNet, head: EncoderNet, data: LabeledDataset, splits: Splits, seed: int
) -> float:
    """Confidence-threshold membership attack; fraction of unlearn samples
    classified as non-members."""
    members = _member_sample(splits, seed, seeds.MI_MEMBERS)
    m = confidence_scores(enc, head, data, members)
    n = confidence_scores(enc, head, data, splits.test)
    thr, _ = fit_threshold(m, n)
    u = confidence_scores(enc, head, data, splits.unlearn)
    return float(np.mean(u <= thr))


# --- gap summaries and uniformity ---------------------------------------------------


def gap_report(candidate: dict[str, float], reference: dict[str, float]) -> GapReport:
    """Absolute metric gaps to a reference run, their mean, and the mean
    percentage gap relative to the reference values."""
    keys = sorted(set(candidate) & set(reference))
    if not keys:
        raise ConfigurationError("no common metrics to compare")
    gaps = {k: abs(float(candidate[k]) - float(reference[k])) for k in keys}
    avg_gap = float(np.mean([gaps[k] for k in keys]))
    pct = []
    for k in keys:
        ref = float(reference[k])
        if ref == 0.0:
            warnings.warn(f"metric {k!r} has zero reference; omitted from percentage gap")
            continue
        pct.append(100.0 * gaps[k] / abs(ref))
    agp = float(np.mean(pct)) if pct else float("nan")
    return GapReport(gaps=gaps, avg_gap=avg_gap, agp=agp)


def uniformity_angles(feats) -> tuple[np.ndarray, float]:
    """For 2-d unit features: 18-bin angle histogram over [-pi, pi] and the
    Kolmogorov-Smirnov statistic against the uniform angle law."""
    z = np.asarray(feats, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != 2 or z.shape[0] == 0:
        raise ConfigurationError("uniformity check needs non-empty (n, 2) features")
    angles = np.arctan2(z[:, 1], z[:, 0])
    counts, _ = np.histogram(angles, bins=18, range=(-np.pi, np.pi))
    s = np.sort(angles)
    n = s.size
    cdf = (s + np.pi) / (2.0 * np.pi)
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(0, n) / n)
    return counts, float(max(upper, lower))


# --- one-call report ------------------------------------------------------------------


def full_report(
    candidate: EncoderNet,
    before: EncoderNet,
    data: LabeledDataset,
    splits: Splits,
    aug: AugmentorConfig,
    probe_cfg: ProbeConfig,
    seed: int,
) -> EvalReport:
    """Forgetting score of candidate vs the pre-unlearning encoder, both
    membership attacks, and probe accuracies."""
    import time

    t0 = time.perf_counter()
    fs, _ = forgetting_score(before, candidate, data, splits.unlearn, aug, seed)
    num_classes = int(data.labels.max()) + 1
    head = linear_probe(candidate, data, splits.retain, num_classes, probe_cfg)
    ra, ta, ua = classifier_metrics(candidate, head, data, splits)
    emia = encoder_mi_efficacy(candidate, data, splits, aug, seed)
    cmia = cmia_efficacy(candidate, head, data, splits, seed)
    return EvalReport(
        fs=fs, emia=emia, cmia=cmia, ra=ra, ta=ta, ua=ua,
        runtime_seconds=time.perf_counter() - t0,
    )
