"""Inference: maps -> candidates -> local pairs -> groups -> boundaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryMode, format_boundary
from .clustering import TextGroup, cut_and_group, embedding_distances, filter_short
from .config import PipelineConfig
from .decode import CharCandidate, PredictionMaps, decode_candidates, extract_embeddings, nms
from .model import Network
from .pairing import rknn_pairs


@dataclass
class Detection:
    candidates: list[CharCandidate]
    pairs: np.ndarray
    emb_dist: np.ndarray
    groups: list[TextGroup] = field(default_factory=list)

    @property
    def boundaries(self) -> list[np.ndarray]:
        return [g.boundary for g in self.groups]


def candidates_from_maps(maps: PredictionMaps, s: float, t_nms: float = 0.5) -> list[CharCandidate]:
    return extract_embeddings(maps, nms(decode_candidates(maps, s), t_nms))


def local_pairs(cands: list[CharCandidate], k: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    if len(cands) < 2:
        return np.zeros((0, 2), dtype=int), np.zeros(0)
    centers = np.array([[c.cx, c.cy] for c in cands])
    sizes = np.array([[c.w, c.h] for c in cands])
    pairs = rknn_pairs(centers, sizes, k, beta)
    emb = np.array([c.embedding for c in cands])
    return pairs, embedding_distances(emb, pairs)


def group_candidates(
    cands: list[CharCandidate],
    pairs: np.ndarray,
    emb_dist: np.ndarray,
    d: float,
    cfg: PipelineConfig,
    mode: BoundaryMode | str | None = None,
) -> list[TextGroup]:
    mode = BoundaryMode(mode or cfg.boundary)
    groups = cut_and_group(len(cands), pairs, emb_dist, d)
    groups = filter_short(groups, cfg.min_chars, cfg.short_word_removal)
    for g in groups:
        g.boundary = format_boundary([cands[i] for i in g.members], mode, cfg.seg_chars)
    return groups


def detect_from_maps(
    maps: PredictionMaps,
    cfg: PipelineConfig,
    s: float | None = None,
    d: float | None = None,
    mode: BoundaryMode | str | None = None,
) -> Detection:
    s = cfg.s if s is None else s
    d = cfg.d if d is None else d
    cands = candidates_from_maps(maps, s, cfg.nms)
    pairs, dist = local_pairs(cands, cfg.k, cfg.beta)
    groups = group_candidates(cands, pairs, dist, d, cfg, mode)
    return Detection(cands, pairs, dist, groups)


class Detector:
    def __init__(self, net: Network, cfg: PipelineConfig):
        self.net = net
        self.cfg = cfg

    def maps(self, image: np.ndarray) -> PredictionMaps:
        return self.net.predict(image)

    def detect(self, image: np.ndarray, s=None, d=None, mode=None) -> Detection:
        return detect_from_maps(self.maps(image), self.cfg, s, d, mode)
