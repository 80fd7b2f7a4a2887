"""One optimization step: forward, supervision, losses, backward, update."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import PipelineConfig
from .decode import bilinear_weights, decode_candidates, nms, boxes_of
from .geometry import iou_matrix
from .losses import (
    LossReport,
    cls_loss_ohem,
    emb_loss,
    iou_reg_loss,
    ohem_sample,
    sample_pairs,
    total_loss,
    uniform_pairs,
)
from .model import Network, NetOutput, SGDMomentum, render_targets
from .pairing import BACKGROUND, pair_labels, rknn_pairs
from .synthdata import Scene
from .weaksup import Annotation, build_weak_targets

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    """A training image with either exact char boxes or only word annotations."""

    image: np.ndarray
    words: list[Annotation]
    char_boxes: np.ndarray | None = None
    char_groups: np.ndarray | None = None

    @property
    def has_chars(self) -> bool:
        return self.char_boxes is not None and len(self.char_boxes) > 0

    @classmethod
    def from_scene(cls, scene: Scene, precise: bool) -> "Sample":
        if precise:
            return cls(scene.image, scene.words, scene.char_boxes, scene.char_groups)
        return cls(scene.image, scene.words)


@dataclass
class FrozenSample:
    """Everything in a loss evaluation that does not vary smoothly with the
    parameters: targets, the OHEM sample, the embedding sampling points and
    the chosen pairs. Reusing it makes the loss a deterministic function of
    the network outputs (needed for finite-difference checks)."""

    labels: np.ndarray
    reg_target: np.ndarray
    sample_mask: np.ndarray
    emb_index: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None
    pairs: np.ndarray | None = None
    pair_labels: np.ndarray | None = None


@dataclass
class StepResult:
    loss: LossReport
    out: NetOutput
    d_score: np.ndarray
    d_offset_raw: np.ndarray
    d_emb: np.ndarray
    frozen: FrozenSample


def _supervision(sample: Sample, maps, cfg: PipelineConfig):
    """Char boxes, group ids and ignore regions for one image."""
    preds = nms(decode_candidates(maps, cfg.t1), cfg.nms) if (not sample.has_chars or cfg.emb_background) else []
    if sample.has_chars:
        boxes, groups = np.asarray(sample.char_boxes, float), np.asarray(sample.char_groups, int)
        ignore = [a.boundary for a in sample.words if a.ignore]
    else:
        weak = build_weak_targets(
            sample.words,
            boxes_of(preds),
            np.array([p.score for p in preds]),
            cfg.t1,
            cfg.t2,
        )
        boxes, groups, ignore = weak.boxes, weak.groups, weak.ignore_regions
    return boxes, groups, ignore, preds


def _background_boxes(preds, boxes, cfg: PipelineConfig) -> np.ndarray:
    """Confident predictions that match no supervised char."""
    if not cfg.emb_background or not preds:
        return np.zeros((0, 4))
    pb = boxes_of([p for p in preds if p.score > cfg.s])
    if len(pb) == 0:
        return pb
    if len(boxes):
        pb = pb[iou_matrix(pb, boxes).max(axis=1) <= 0.5]
    return pb[: cfg.max_background]


def freeze_sample(out: NetOutput, batch: Sequence[Sample], cfg: PipelineConfig, rng: np.random.Generator) -> FrozenSample:
    """Build targets for a batch from the current outputs and draw all samples."""
    stride = cfg.stride
    b, h, w = out.score.shape
    labels = np.zeros((b, h, w), dtype=np.int8)
    reg_t = np.zeros((4, b, h, w))
    centers_per_image, pair_list = [], []
    offset = 0
    for i, sample in enumerate(batch):
        boxes, groups, ignore, preds = _supervision(sample, out.maps(i, stride), cfg)
        tg = render_targets(boxes, (h, w), stride, cfg.shrink, ignore)
        labels[i] = tg.cls_label
        reg_t[:, i] = tg.reg_target
        bg = _background_boxes(preds, boxes, cfg)
        all_boxes = np.concatenate([boxes.reshape(-1, 4), bg])
        all_groups = np.concatenate([groups, np.full(len(bg), BACKGROUND)]).astype(int)
        if len(all_boxes) < 2:
            continue
        centers = np.stack([(all_boxes[:, 0] + all_boxes[:, 2]) / 2, (all_boxes[:, 1] + all_boxes[:, 3]) / 2], 1)
        sizes = np.stack([all_boxes[:, 2] - all_boxes[:, 0], all_boxes[:, 3] - all_boxes[:, 1]], 1)
        pairs = rknn_pairs(centers, sizes, cfg.k, cfg.beta)
        if len(pairs):
            pair_list.append((pairs + offset, pair_labels(pairs, all_groups)))
        centers_per_image.append((i, centers, sizes))
        offset += len(all_boxes)

    mask = ohem_sample(out.score, labels, cfg.neg_ratio, cfg.hard_frac, rng)
    frozen = FrozenSample(labels, reg_t, mask)
    if not pair_list:
        return frozen
    # bilinear sampling points of the embedding map at char centers
    parts = []
    for i, centers, sizes in centers_per_image:
        if cfg.emb_jitter > 0:
            # inference samples at predicted centers, which are off by a fraction of the box
            centers = centers + rng.uniform(-cfg.emb_jitter, cfg.emb_jitter, centers.shape) * sizes
        ys, xs, wt, _ = bilinear_weights(centers[:, 0] / stride, centers[:, 1] / stride, (h, w))
        parts.append((np.full(ys.shape, i), ys, xs, wt))
    frozen.emb_index = tuple(np.concatenate([p[k] for p in parts]) for k in range(4))
    pairs = np.concatenate([p for p, _ in pair_list])
    plabels = np.concatenate([lab for _, lab in pair_list])
    if cfg.reweighting:
        pick = sample_pairs(plabels, cfg.R, cfg.alpha, rng).indices
    else:
        pick = uniform_pairs(len(pairs), cfg.R, rng).indices
    frozen.pairs, frozen.pair_labels = pairs[pick], plabels[pick]
    return frozen


def loss_from_outputs(out: NetOutput, frozen: FrozenSample, cfg: PipelineConfig) -> StepResult:
    labels = frozen.labels
    cls = cls_loss_ohem(out.score, labels, sample_mask=frozen.sample_mask)
    reg = iou_reg_loss(np.moveaxis(out.offsets, -1, 0), frozen.reg_target, labels > 0)

    d_emb = np.zeros_like(out.emb)
    emb = LossReport(0.0, {}, {"n_pairs": 0})
    if frozen.pairs is not None and len(frozen.pairs):
        ib, iy, ix, wt = frozen.emb_index
        vecs = np.einsum("nkd,nk->nd", out.emb[ib, iy, ix], wt)
        emb = emb_loss(vecs, frozen.pairs, frozen.pair_labels)
        np.add.at(d_emb, (ib, iy, ix), wt[..., None] * emb.grads["embeddings"][:, None, :])
        emb.info["neg_fraction"] = float(1.0 - frozen.pair_labels.mean())
    emb.grads = {"embeddings": d_emb}

    total = total_loss(cls, reg, emb, cfg.lambda1, cfg.lambda2)
    d_score = total.grads["cls.scores"]
    d_offset_raw = np.moveaxis(total.grads["reg.pred"], 0, -1) * out.offsets
    total.info["n_pos"] = int((labels > 0).sum())
    total.info["n_pairs"] = emb.info.get("n_pairs", 0)
    return StepResult(total, out, d_score, d_offset_raw, total.grads["emb.embeddings"], frozen)


def compute_loss(
    net: Network,
    batch: Sequence[Sample],
    cfg: PipelineConfig,
    rng: np.random.Generator | None = None,
    frozen: FrozenSample | None = None,
) -> StepResult:
    """Total loss of a batch and its derivatives w.r.t. the raw network outputs.

    Pass ``frozen`` (from a previous result) to skip target construction and
    sampling; ``rng`` is then unused.
    """
    out = net.forward(np.stack([s.image for s in batch]))
    if frozen is None:
        frozen = freeze_sample(out, batch, cfg, rng)
    return loss_from_outputs(out, frozen, cfg)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Trainer:
    """Owns the network, optimizer state and RNG; deterministic given the seed."""

    def __init__(self, cfg: PipelineConfig, net: Network | None = None):
        self.cfg = cfg
        self.net = net or Network(cfg.net_config(), seed=cfg.seed)
        self.opt = SGDMomentum(self.net.params, cfg.momentum, cfg.weight_decay)
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.step_count = 0

    def train_step(self, batch: Sequence[Sample], lr: float | None = None) -> LossReport:
        lr = self.cfg.lr_at(self.step_count) if lr is None else lr
        res = compute_loss(self.net, batch, self.cfg, self.rng)
        grads = self.net.backward(res.out, res.d_score, res.d_offset_raw, res.d_emb)
        res.loss.info["grad_norm"] = clip_grads(grads, self.cfg.grad_clip)
        self.opt.step(self.net.params, grads, lr)
        self.step_count += 1
        res.loss.info["lr"] = lr
        return res.loss

    def compose_batch(self, scenes: Sequence[Scene]) -> list[Sample]:
        """Draw a batch; with mixing on, the first half keeps exact char boxes."""
        n = min(self.cfg.batch_size, len(scenes))
        idx = self.rng.choice(len(scenes), size=n, replace=False)
        n_precise = n // 2 if self.cfg.mixing else 0
        return [Sample.from_scene(scenes[j], precise=k < n_precise) for k, j in enumerate(idx)]

    def fit(
        self,
        scenes: Sequence[Scene],
        steps: int | None = None,
        callback: Callable[[int, LossReport], None] | None = None,
    ) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        log = []
        for _ in range(steps):
            rep = self.train_step(self.compose_batch(scenes))
            row = {
                "step": self.step_count,
                "lr": rep.info["lr"],
                "total": rep.value,
                **rep.info["parts"],
            }
            log.append(row)
            if callback is not None:
                callback(self.step_count, rep)
        return log


def write_loss_log(path, rows: Sequence[dict]) -> None:
    cols = ["step", "lr", "total", "cls", "reg", "emb"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in rows:
            wr.writerow([r["step"], repr(float(r["lr"]))] + [f"{float(r[c]):.8f}" for c in cols[2:]])
