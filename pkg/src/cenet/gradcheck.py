"""Finite-difference verification of every analytic gradient.

Each check draws a random instance, compares the analytic gradient with
central differences and reports the maximum relative error over the
checked coordinates. Coordinates whose +-h perturbation crosses a
non-differentiable point (hinge, min, ReLU) are skipped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import PipelineConfig
from .losses import (
    cls_loss_ohem,
    contrastive,
    emb_loss,
    iou_reg_loss,
    ohem_sample,
    total_loss,
)
from .model import Network
from .synthdata import SceneSpec, generate_scene
from .training import Sample, compute_loss

logger = logging.getLogger(__name__)

H = 1e-4
LOSS_TOL = 1e-4
NET_TOL = 1e-3
# below this magnitude both gradients count as zero
ABS_FLOOR = 1e-7


@dataclass
class CheckResult:
    name: str
    seed: int
    max_rel_error: float
    n_checked: int
    n_skipped: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tol


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), ABS_FLOOR)


def _fd_check(
    name: str,
    seed: int,
    x: np.ndarray,
    f: Callable[[], float],
    analytic: np.ndarray,
    coords,
    signature: Callable[[], object] | None = None,
    tol: float = LOSS_TOL,
    h: float = H,
) -> CheckResult:
    """Central differences on ``x`` (modified in place and restored)."""
    # ``signature`` describes the state left by the latest ``f()`` call
    worst, n_ok, n_skip = 0.0, 0, 0
    f()
    base_sig = signature() if signature else None
    for idx in coords:
        orig = x[idx]
        x[idx] = orig + h
        fp = f()
        sp = signature() if signature else None
        x[idx] = orig - h
        fm = f()
        sm = signature() if signature else None
        x[idx] = orig
        if signature and not (_same(sp, base_sig) and _same(sm, base_sig)):
            n_skip += 1
            continue
        worst = max(worst, rel_error(float(analytic[idx]), (fp - fm) / (2 * h)))
        n_ok += 1
    return CheckResult(name, seed, worst, n_ok, n_skip, tol)


def _same(a, b) -> bool:
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def _all_coords(shape):
    return list(np.ndindex(*shape))


def _some_coords(shape, n: int, rng: np.random.Generator):
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [np.unravel_index(int(k), shape) for k in np.sort(flat)]


# -- individual checks -------------------------------------------------------

def check_cls(seed: int, corrupt: float = 0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    scores = rng.uniform(-2, 2, size=(16, 16))
    labels = rng.choice([-1, 1, 0], size=(16, 16), p=[0.8, 0.15, 0.05]).astype(np.int8)
    mask = ohem_sample(scores, labels, 3, 0.3, np.random.default_rng(seed))
    rep = cls_loss_ohem(scores, labels, sample_mask=mask)
    g = rep.grads["scores"] * (1 + corrupt)

    def f():
        return cls_loss_ohem(scores, labels, sample_mask=mask).value

    def sig():
        return (1.0 - labels * scores) > 0

    return _fd_check("cls_ohem", seed, scores, f, g, _all_coords(scores.shape), sig)


def check_iou(seed: int, corrupt: float = 0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.5, 3.0, size=(4, 8, 8))
    pred = rng.uniform(0.3, 3.5, size=(4, 8, 8))
    valid = rng.random((8, 8)) < 0.6
    g = iou_reg_loss(pred, target, valid).grads["pred"] * (1 + corrupt)

    def f():
        return iou_reg_loss(pred, target, valid).value

    def sig():
        return pred < target

    return _fd_check("iou_reg", seed, pred, f, g, _all_coords(pred.shape), sig)


def check_contrastive(seed: int, corrupt: float = 0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    d = 8
    vi = rng.normal(0, 0.3, size=d)
    vj = vi + rng.normal(0, 0.2, size=d)
    label = int(seed % 2)
    rep = contrastive(vi, vj, label)
    worst, n, skip = 0.0, 0, 0
    for v, key in ((vi, "v_i"), (vj, "v_j")):
        r = _fd_check(
            "contrastive",
            seed,
            v,
            lambda: contrastive(vi, vj, label).value,
            rep.grads[key] * (1 + corrupt),
            _all_coords(v.shape),
            lambda: np.linalg.norm(vi - vj) < 1.0,
        )
        worst, n, skip = max(worst, r.max_rel_error), n + r.n_checked, skip + r.n_skipped
    return CheckResult("contrastive", seed, worst, n, skip, LOSS_TOL)


def _emb_instance(rng, m=24, k=64, d=8):
    emb = rng.normal(0, 0.4, size=(m, d))
    pairs = []
    while len(pairs) < k:
        i, j = sorted(rng.choice(m, size=2, replace=False))
        pairs.append((i, j))
    labels = rng.integers(0, 2, size=k)
    return emb, np.array(pairs), labels


def check_emb(seed: int, corrupt: float = 0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    emb, pairs, labels = _emb_instance(rng)
    g = emb_loss(emb, pairs, labels).grads["embeddings"] * (1 + corrupt)

    def sig():
        return np.linalg.norm(emb[pairs[:, 0]] - emb[pairs[:, 1]], axis=1) < 1.0

    return _fd_check("emb_loss", seed, emb, lambda: emb_loss(emb, pairs, labels).value, g, _all_coords(emb.shape), sig)


def check_total(seed: int, corrupt: float = 0.0) -> CheckResult:
    """Weighted sum of all three losses against its three inputs."""
    rng = np.random.default_rng(seed)
    scores = rng.uniform(-2, 2, size=(8, 8))
    labels = rng.choice([-1, 1], size=(8, 8), p=[0.7, 0.3]).astype(np.int8)
    mask = ohem_sample(scores, labels, 3, 0.3, np.random.default_rng(seed))
    target = rng.uniform(0.5, 3.0, size=(4, 8, 8))
    pred = rng.uniform(0.3, 3.5, size=(4, 8, 8))
    emb, pairs, plabels = _emb_instance(rng, m=12, k=20)
    l1, l2 = rng.uniform(0.2, 2.0, size=2)

    def run():
        return total_loss(
            cls_loss_ohem(scores, labels, sample_mask=mask),
            iou_reg_loss(pred, target, labels > 0),
            emb_loss(emb, pairs, plabels),
            l1,
            l2,
        )

    rep = run()

    def sig():
        return (
            (1.0 - labels * scores) > 0,
            pred < target,
            np.linalg.norm(emb[pairs[:, 0]] - emb[pairs[:, 1]], axis=1) < 1.0,
        )

    results = [
        _fd_check("total", seed, x, lambda: run().value, rep.grads[key] * (1 + corrupt), _all_coords(x.shape), sig)
        for x, key in ((scores, "cls.scores"), (pred, "reg.pred"), (emb, "emb.embeddings"))
    ]
    return CheckResult(
        "total",
        seed,
        max(r.max_rel_error for r in results),
        sum(r.n_checked for r in results),
        sum(r.n_skipped for r in results),
        LOSS_TOL,
    )


def _network_signature(res) -> tuple:
    """Activation pattern of every ReLU plus the loss-level kinks."""
    sig = []
    for entry in res.out.cache:
        kind = entry[0]
        if kind == "conv_relu":
            sig.append(entry[3] > 0)
        elif kind == "rcu":
            sig.extend([entry[2] > 0, entry[4] > 0])
        elif kind == "out":
            sig.append(entry[3] > 0)
    fr = res.frozen
    sig.append((1.0 - fr.labels * res.out.score) > 0)
    sig.append(np.moveaxis(res.out.offsets, -1, 0) < fr.reg_target)
    if fr.pairs is not None:
        ib, iy, ix, wt = fr.emb_index
        v = np.einsum("nkd,nk->nd", res.out.emb[ib, iy, ix], wt)
        sig.append(np.linalg.norm(v[fr.pairs[:, 0]] - v[fr.pairs[:, 1]], axis=1) < 1.0)
    return tuple(sig)


def check_network(seed: int, per_layer: int = 5, corrupt: float = 0.0) -> CheckResult:
    """Backprop through the whole net vs finite differences of the batch loss."""
    cfg = PipelineConfig(emb_background=False, seed=seed)
    spec = SceneSpec(height=32, width=32, n_words=(1, 1), chars_per_word=(3, 3), layouts=("straight",),
                     char_width=(6.0, 8.0), char_height=(8.0, 10.0), spacing=(1.0, 2.0), rotation=(-5.0, 5.0))
    batch = [Sample.from_scene(generate_scene(spec, seed * 7 + i), precise=True) for i in range(2)]
    net = Network(cfg.net_config(), seed=seed)
    rng = np.random.default_rng(seed)
    res = compute_loss(net, batch, cfg, rng)
    grads = net.backward(res.out, res.d_score, res.d_offset_raw, res.d_emb)
    frozen = res.frozen
    state = {}

    def f():
        state["res"] = compute_loss(net, batch, cfg, frozen=frozen)
        return state["res"].loss.value

    def sig():
        return _network_signature(state["res"])

    worst, n_ok, n_skip = 0.0, 0, 0
    pick = np.random.default_rng(seed + 1000)
    for name in sorted(net.params):
        p = net.params[name]
        r = _fd_check(
            "network",
            seed,
            p,
            f,
            grads[name] * (1 + corrupt),
            _some_coords(p.shape, per_layer, pick),
            sig,
            tol=NET_TOL,
            h=1e-5,
        )
        worst, n_ok, n_skip = max(worst, r.max_rel_error), n_ok + r.n_checked, n_skip + r.n_skipped
    return CheckResult("network", seed, worst, n_ok, n_skip, NET_TOL)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "cls_ohem": check_cls,
    "iou_reg": check_iou,
    "contrastive": check_contrastive,
    "emb_loss": check_emb,
    "total": check_total,
    "network": check_network,
}


def run_all(seeds, names=None, corrupt: dict[str, float] | None = None) -> list[CheckResult]:
    """Run the selected checks over ``seeds``. ``corrupt`` scales an analytic
    gradient by ``1 + eps`` to confirm the harness catches errors."""
    corrupt = corrupt or {}
    out = []
    for name in names or CHECKS:
        for seed in seeds:
            r = CHECKS[name](seed, corrupt=corrupt.get(name, 0.0))
            logger.info("%s seed=%d max_rel=%.2e checked=%d skipped=%d", name, seed, r.max_rel_error, r.n_checked, r.n_skipped)
            out.append(r)
    return out
