"""Training objectives with hand-written gradients.

Every loss returns a :class:`LossReport` whose ``grads`` mapping holds the
derivative of ``value`` with respect to each named input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

EPS = 1e-6


class EmptySample(ValueError):
    pass


@dataclass
class DetectionTargets:
    """Ground truth at map resolution.

    ``cls_label`` holds +1 (text), -1 (background) or 0 (ignore);
    ``reg_target`` is ``(4, H, W)`` and only meaningful where the label is +1.
    """

    cls_label: np.ndarray
    reg_target: np.ndarray

    def __post_init__(self):
        if self.reg_target.shape != (4, *self.cls_label.shape):
            raise ValueError("target shapes disagree")

    @property
    def positive(self) -> np.ndarray:
        return self.cls_label > 0


@dataclass
class LossReport:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    info: dict = field(default_factory=dict)


@dataclass
class LabeledPair:
    i: int
    j: int
    label: int
    v_i: np.ndarray
    v_j: np.ndarray

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a pair needs two distinct candidates")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def _ceil(x: float) -> int:
    # guard against 0.3 * 3 == 0.8999999999999999
    return math.ceil(round(x, 9))


def ohem_sample(
    scores: np.ndarray,
    labels: np.ndarray,
    neg_ratio: float = 3,
    hard_frac: float = 0.3,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Boolean mask of pixels entering the classification loss.

    All positives are used. ``neg_ratio`` negatives per positive are drawn;
    ``ceil(hard_frac * n_neg)`` of them are the highest-loss negatives (ties
    by flat pixel index) and the rest are uniform over the remaining ones.
    With no positives, ``neg_ratio`` negatives are drawn (at least one).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    flat_s, flat_l = scores.ravel(), labels.ravel()
    pos = np.flatnonzero(flat_l > 0)
    neg = np.flatnonzero(flat_l < 0)
    n_neg = min(int(_ceil(neg_ratio * max(len(pos), 1))), len(neg))
    n_neg = max(n_neg, min(1, len(neg)))
    n_hard = min(_ceil(hard_frac * n_neg), n_neg)
    neg_loss = np.maximum(0.0, 1.0 + flat_s[neg])
    order = np.lexsort((neg, -neg_loss))
    hard = neg[order[:n_hard]]
    rest = neg[order[n_hard:]]
    easy = rng.choice(rest, size=n_neg - n_hard, replace=False) if n_neg > n_hard else rest[:0]
    mask = np.zeros(flat_s.shape, dtype=bool)
    mask[pos] = True
    mask[hard] = True
    mask[easy] = True
    return mask.reshape(scores.shape)


def cls_loss_ohem(
    scores: np.ndarray,
    labels: np.ndarray,
    neg_ratio: float = 3,
    hard_frac: float = 0.3,
    rng: np.random.Generator | None = None,
    sample_mask: np.ndarray | None = None,
) -> LossReport:
    """Pixel-wise hinge loss ``max(0, 1 - y * score)`` over an OHEM sample.

    ``labels`` holds +1 (text), -1 (background) and 0 (ignore). Pass
    ``sample_mask`` to reuse a previous sample (e.g. for gradient checks).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if sample_mask is None:
        sample_mask = ohem_sample(scores, labels, neg_ratio, hard_frac, rng)
    sample_mask = sample_mask & (labels != 0)
    n = int(sample_mask.sum())
    grad = np.zeros_like(scores)
    if n == 0:
        return LossReport(0.0, {"scores": grad}, {"sampled": sample_mask})
    y = labels.astype(float)
    margin = 1.0 - y * scores
    active = sample_mask & (margin > 0)
    value = float(margin[active].sum() / n)
    grad[active] = -y[active] / n
    return LossReport(value, {"scores": grad}, {"sampled": sample_mask, "n_sampled": n})


def iou_reg_loss(pred: np.ndarray, target: np.ndarray, valid: np.ndarray) -> LossReport:
    """UnitBox-style ``-ln(IoU)`` averaged over valid pixels.

    ``pred`` and ``target`` have shape ``(4, ...)`` with the distances to the
    left, top, right and bottom sides measured from the same interior point.
    Predictions below ``EPS`` are clamped (zero gradient there).
    """
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    valid = np.asarray(valid, dtype=bool)
    grad = np.zeros_like(pred)
    n = int(valid.sum())
    if n == 0:
        return LossReport(0.0, {"pred": grad}, {"n_valid": 0})
    p = pred[:, valid]
    t = target[:, valid]
    pc = np.maximum(p, EPS)
    pl, pt, pr, pb = pc
    tl, tt, tr, tb = t
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    iw = np.minimum(pl, tl) + np.minimum(pr, tr)
    ih = np.minimum(pt, tt) + np.minimum(pb, tb)
    inter = iw * ih
    union = area_p + area_t - inter
    value = float(np.sum(np.log(union) - np.log(inter)) / n)

    # d/dp of -ln I + ln U
    d_iw = np.stack([pl < tl, pr < tr]).astype(float)  # d iw / d(l, r)
    d_ih = np.stack([pt < tt, pb < tb]).astype(float)  # d ih / d(t, b)
    g = np.empty_like(pc)
    for k, (dI_part, d_area) in enumerate(
        [
            (d_iw[0] * ih, pt + pb),
            (d_ih[0] * iw, pl + pr),
            (d_iw[1] * ih, pt + pb),
            (d_ih[1] * iw, pl + pr),
        ]
    ):
        g[k] = -dI_part / inter + (d_area - dI_part) / union
    g *= (p >= EPS)
    grad[:, valid] = g / n
    return LossReport(value, {"pred": grad}, {"n_valid": n})


def contrastive_terms(vi: np.ndarray, vj: np.ndarray, labels: np.ndarray):
    """Vectorized contrastive loss over pairs.

    Returns per-pair loss ``J`` and gradients ``(dJ/dvi, dJ/dvj)``. For a
    negative pair with zero distance the gradient is taken as 0.
    """
    vi = np.atleast_2d(np.asarray(vi, dtype=float))
    vj = np.atleast_2d(np.asarray(vj, dtype=float))
    lab = np.asarray(labels, dtype=float).reshape(-1)
    diff = vi - vj
    dist = np.sqrt(np.sum(diff * diff, axis=1))
    hinge = np.maximum(0.0, 1.0 - dist)
    J = lab * dist**2 + (1 - lab) * hinge**2
    coef = 2.0 * lab
    safe = dist > 0
    neg_coef = np.zeros_like(dist)
    neg_coef[safe] = -2.0 * hinge[safe] / dist[safe]
    coef = coef + (1 - lab) * neg_coef
    gi = coef[:, None] * diff
    return J, gi, -gi


def contrastive(v_i, v_j, label: int) -> LossReport:
    """Contrastive loss of a single pair with Euclidean distance and margin 1."""
    J, gi, gj = contrastive_terms(v_i, v_j, [label])
    return LossReport(float(J[0]), {"v_i": gi[0], "v_j": gj[0]})


def contrastive_pair(pair: LabeledPair) -> LossReport:
    return contrastive(pair.v_i, pair.v_j, pair.label)


@dataclass
class PairSample:
    indices: np.ndarray
    neg_fraction: float


def sample_pairs(
    labels: np.ndarray,
    R: int = 1024,
    alpha: float = 0.6,
    rng: np.random.Generator | None = None,
) -> PairSample:
    """Draw at most ``R`` pairs aiming for ``ceil(alpha * R)`` negatives.

    When one class runs short the other fills the gap. Indices come back
    sorted.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise EmptySample("no pairs to sample from")
    neg = np.flatnonzero(labels == 0)
    pos = np.flatnonzero(labels == 1)
    want_neg = _ceil(alpha * R)
    n_neg = min(want_neg, len(neg))
    n_pos = min(R - n_neg, len(pos))
    n_neg = min(R - n_pos, len(neg))
    pick = np.concatenate(
        [rng.choice(neg, size=n_neg, replace=False), rng.choice(pos, size=n_pos, replace=False)]
    ).astype(int)
    pick.sort()
    frac = n_neg / len(pick)
    if n_neg != want_neg or n_pos != R - want_neg:
        logger.debug("pair sample short: %d neg / %d pos (target %d / %d)", n_neg, n_pos, want_neg, R - want_neg)
    return PairSample(pick, frac)


def uniform_pairs(n: int, R: int = 1024, rng: np.random.Generator | None = None) -> PairSample:
    """Class-blind sample used when pair reweighting is switched off."""
    rng = np.random.default_rng(0) if rng is None else rng
    if n == 0:
        raise EmptySample("no pairs to sample from")
    pick = np.sort(rng.choice(n, size=min(n, R), replace=False))
    return PairSample(pick, float("nan"))


def emb_loss(embeddings: np.ndarray, pairs: np.ndarray, labels: np.ndarray) -> LossReport:
    """Mean contrastive loss over sampled pairs.

    ``embeddings`` is ``(M, D)``; ``pairs`` is ``(K, 2)`` of row indices.
    Gradients of vectors that appear in several pairs are summed.
    """
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise EmptySample("empty pair sample")
    emb = np.asarray(embeddings, dtype=float)
    J, gi, gj = contrastive_terms(emb[pairs[:, 0]], emb[pairs[:, 1]], labels)
    k = len(pairs)
    grad = np.zeros_like(emb)
    np.add.at(grad, pairs[:, 0], gi / k)
    np.add.at(grad, pairs[:, 1], gj / k)
    return LossReport(float(J.sum() / k), {"embeddings": grad}, {"n_pairs": k})


def total_loss(
    cls: LossReport,
    reg: LossReport,
    emb: LossReport,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> LossReport:
    """``L_cls + lambda1 * L_reg + lambda2 * L_emb``; gradients keyed by part."""
    grads = {}
    for prefix, rep, w in (("cls", cls, 1.0), ("reg", reg, lambda1), ("emb", emb, lambda2)):
        for name, g in rep.grads.items():
            grads[f"{prefix}.{name}"] = w * g
    value = cls.value + lambda1 * reg.value + lambda2 * emb.value
    parts = {"cls": cls.value, "reg": reg.value, "emb": emb.value}
    return LossReport(float(value), grads, {"parts": parts})
