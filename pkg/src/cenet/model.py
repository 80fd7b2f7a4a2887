"""Small convolutional detector with a detection head and an embedding head.

Everything is plain numpy in NHWC layout with hand-written backward passes.
The trunk downsamples by 2 per stage until the output stride is reached;
each head stacks residual conv units (no normalization) and ends in a 1x1
convolution. The detection head emits a raw confidence score and four raw
offsets; confidence is squashed with a sigmoid, offsets with ``exp``.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .decode import PredictionMaps
from .geometry import rasterize_polygon
from .losses import DetectionTargets

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass
class NetConfig:
    in_channels: int = 3
    stride: int = 4
    trunk: tuple[int, ...] = (8, 16, 32, 32)
    head_width: int = 32
    rcu_blocks: int = 2
    emb_dim: int = 16
    head_init: str = "he"  # "he" or "zero" for the final 1x1 layers

    def __post_init__(self):
        self.trunk = tuple(int(c) for c in self.trunk)
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError("stride must be a power of two")
        if self.emb_dim < 2:
            raise ValueError("emb_dim must be >= 2")
        n_down = int(np.log2(self.stride))
        if n_down > len(self.trunk):
            raise ValueError("not enough trunk stages to reach the stride")

    @property
    def stage_strides(self) -> list[int]:
        n_down = int(np.log2(self.stride))
        return [2 if k < n_down else 1 for k in range(len(self.trunk))]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- 3x3 convolution, padding 1 -------------------------------------------

def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def im2col(x: np.ndarray, stride: int) -> np.ndarray:
    b, h, w, c = x.shape
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, ho, wo, 9, c), dtype=x.dtype)
    for k, (dy, dx) in enumerate(product(range(3), range(3))):
        cols[:, :, :, k, :] = xp[:, dy : dy + stride * (ho - 1) + 1 : stride, dx : dx + stride * (wo - 1) + 1 : stride]
    return cols.reshape(b * ho * wo, 9 * c)


def col2im(dcols: np.ndarray, x_shape: tuple, stride: int) -> np.ndarray:
    b, h, w, c = x_shape
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    dcols = dcols.reshape(b, ho, wo, 9, c)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for k, (dy, dx) in enumerate(product(range(3), range(3))):
        dxp[:, dy : dy + stride * (ho - 1) + 1 : stride, dx : dx + stride * (wo - 1) + 1 : stride] += dcols[:, :, :, k]
    return dxp[:, 1:-1, 1:-1]


def conv3x3(x, w, b, stride=1):
    """``w`` is ``(9 * C_in, C_out)``. Returns output and a backward cache."""
    cols = im2col(x, stride)
    n, ho, wo = x.shape[0], _out_size(x.shape[1], stride), _out_size(x.shape[2], stride)
    y = (cols @ w + b).reshape(n, ho, wo, -1)
    return y, (cols, x.shape, stride)


def conv3x3_backward(dy, w, cache):
    cols, x_shape, stride = cache
    d2 = dy.reshape(-1, dy.shape[-1])
    dw = cols.T @ d2
    db = d2.sum(axis=0)
    dx = col2im(d2 @ w.T, x_shape, stride)
    return dx, dw, db


# -- network ----------------------------------------------------------------

@dataclass
class NetOutput:
    score: np.ndarray  # (B, h, w) raw confidence
    offset_raw: np.ndarray  # (B, h, w, 4)
    emb: np.ndarray  # (B, h, w, D)
    cache: list = field(default_factory=list, repr=False)

    @property
    def conf(self) -> np.ndarray:
        return sigmoid(self.score)

    @property
    def offsets(self) -> np.ndarray:
        return np.exp(self.offset_raw)

    def maps(self, i: int, stride: int) -> PredictionMaps:
        return PredictionMaps(
            sigmoid(self.score[i]),
            np.moveaxis(np.exp(self.offset_raw[i]), -1, 0),
            np.moveaxis(self.emb[i], -1, 0),
            stride,
        )


class Network:
    def __init__(self, cfg: NetConfig | None = None, seed: int = 0):
        self.cfg = cfg or NetConfig()
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        c_in = self.cfg.in_channels
        for k, c_out in enumerate(self.cfg.trunk):
            self._conv(f"trunk.{k}", c_in, c_out, rng)
            c_in = c_out
        for head, n_out in (("det", 5), ("emb", self.cfg.emb_dim)):
            width = self.cfg.head_width
            self._conv(f"{head}.in", c_in, width, rng)
            for r in range(self.cfg.rcu_blocks):
                self._conv(f"{head}.rcu{r}.a", width, width, rng)
                self._conv(f"{head}.rcu{r}.b", width, width, rng, gain=0.1)
            std = 0.0 if self.cfg.head_init == "zero" else np.sqrt(1.0 / width)
            self.params[f"{head}.out.w"] = rng.normal(0.0, std, size=(width, n_out))
            self.params[f"{head}.out.b"] = np.zeros(n_out)

    def _conv(self, name, c_in, c_out, rng, gain=1.0):
        std = gain * np.sqrt(2.0 / (9 * c_in))
        self.params[f"{name}.w"] = rng.normal(0.0, std, size=(9 * c_in, c_out))
        self.params[f"{name}.b"] = np.zeros(c_out)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[-1] != self.cfg.in_channels:
            raise ShapeError(f"expected (B, H, W, {self.cfg.in_channels}) input, got {x.shape}")
        if x.shape[1] % self.cfg.stride or x.shape[2] % self.cfg.stride:
            raise ShapeError(f"image size {x.shape[1:3]} not divisible by stride {self.cfg.stride}")
        return x

    def forward(self, x: np.ndarray) -> NetOutput:
        p = self.params
        x = self.check_input(x)
        cache = []
        h = x
        for k, s in enumerate(self.cfg.stage_strides):
            a, c = conv3x3(h, p[f"trunk.{k}.w"], p[f"trunk.{k}.b"], s)
            h = np.maximum(a, 0.0)
            cache.append(("conv_relu", f"trunk.{k}", c, a))
        shared = h
        outs = {}
        for head in ("det", "emb"):
            a, c = conv3x3(shared, p[f"{head}.in.w"], p[f"{head}.in.b"])
            cache.append(("conv", f"{head}.in", c))
            h = a
            for r in range(self.cfg.rcu_blocks):
                z1 = np.maximum(h, 0.0)
                a1, c1 = conv3x3(z1, p[f"{head}.rcu{r}.a.w"], p[f"{head}.rcu{r}.a.b"])
                z2 = np.maximum(a1, 0.0)
                a2, c2 = conv3x3(z2, p[f"{head}.rcu{r}.b.w"], p[f"{head}.rcu{r}.b.b"])
                cache.append(("rcu", f"{head}.rcu{r}", h, c1, a1, c2))
                h = h + a2
            z = np.maximum(h, 0.0)
            out = z @ p[f"{head}.out.w"] + p[f"{head}.out.b"]
            cache.append(("out", f"{head}.out", z, h))
            outs[head] = out
        det = outs["det"]
        return NetOutput(det[..., 0], det[..., 1:5], outs["emb"], cache)

    def backward(self, out: NetOutput, d_score, d_offset_raw, d_emb) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its derivatives w.r.t. the raw outputs."""
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        cache = list(out.cache)
        n_trunk = len(self.cfg.trunk)
        trunk_cache, head_cache = cache[:n_trunk], cache[n_trunk:]
        per_head = len(head_cache) // 2
        d_out = {
            "det": np.concatenate([d_score[..., None], d_offset_raw], axis=-1),
            "emb": d_emb,
        }
        d_shared = 0.0
        for hi, head in enumerate(("det", "emb")):
            entries = head_cache[hi * per_head : (hi + 1) * per_head]
            _, name, z, pre = entries[-1]
            g = d_out[head]
            g2 = g.reshape(-1, g.shape[-1])
            grads[f"{name}.w"] += z.reshape(-1, z.shape[-1]).T @ g2
            grads[f"{name}.b"] += g2.sum(axis=0)
            dh = (g @ p[f"{name}.w"].T) * (pre > 0)
            for entry in reversed(entries[1:-1]):
                _, rname, h_in, c1, a1, c2 = entry
                dz2, dw, db = conv3x3_backward(dh, p[f"{rname}.b.w"], c2)
                grads[f"{rname}.b.w"] += dw
                grads[f"{rname}.b.b"] += db
                da1 = dz2 * (a1 > 0)
                dz1, dw, db = conv3x3_backward(da1, p[f"{rname}.a.w"], c1)
                grads[f"{rname}.a.w"] += dw
                grads[f"{rname}.a.b"] += db
                dh = dh + dz1 * (h_in > 0)
            _, iname, c = entries[0]
            dx, dw, db = conv3x3_backward(dh, p[f"{iname}.w"], c)
            grads[f"{iname}.w"] += dw
            grads[f"{iname}.b"] += db
            d_shared = d_shared + dx
        dh = d_shared
        for _, name, c, a in reversed(trunk_cache):
            da = dh * (a > 0)
            dh, dw, db = conv3x3_backward(da, p[f"{name}.w"], c)
            grads[f"{name}.w"] += dw
            grads[f"{name}.b"] += db
        return grads

    def predict(self, image: np.ndarray) -> PredictionMaps:
        out = self.forward(image)
        return out.maps(0, self.cfg.stride)

    def predict_batch(self, images: np.ndarray) -> list[PredictionMaps]:
        out = self.forward(images)
        return [out.maps(i, self.cfg.stride) for i in range(out.score.shape[0])]


# -- optimizer ---------------------------------------------------------------

class SGDMomentum:
    """``v = mu * v + g + wd * p``; ``p -= lr * v``."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float = 0.9, weight_decay: float = 0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        for k in params:
            v = self.velocity[k]
            v *= self.momentum
            v += grads[k]
            if self.weight_decay:
                v += self.weight_decay * params[k]
            params[k] -= lr * v


# -- targets -----------------------------------------------------------------

def _cell_range(lo: float, hi: float, stride: float, n: int) -> tuple[int, int]:
    a = max(int(np.ceil(lo / stride - 1e-9)), 0)
    b = min(int(np.floor(hi / stride + 1e-9)), n - 1)
    return a, b


def render_targets(
    boxes: np.ndarray,
    shape: tuple[int, int],
    stride: int = 4,
    shrink: float = 0.5,
    ignore_regions=(),
) -> DetectionTargets:
    """Rasterize character boxes into classification/regression targets.

    Cell ``(x, y)`` sits at image point ``(x * stride, y * stride)``. Cells in
    the box shrunk by ``shrink`` per axis around its center are positive and
    regress the distances to the four box sides (in map units); the rest of
    the box is ignored. Later boxes overwrite earlier ones. A box whose
    shrunk core contains no cell still gets its nearest in-box cell.
    """
    h, w = shape
    labels = -np.ones((h, w), dtype=np.int8)
    reg = np.zeros((4, h, w))
    for poly in ignore_regions:
        labels[rasterize_polygon(np.asarray(poly) / stride, (h, w), offset=(-0.5, -0.5))] = 0
    for x0, y0, x1, y1 in np.asarray(boxes, dtype=float).reshape(-1, 4):
        if x1 <= x0 or y1 <= y0:
            continue
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        ax, bx = _cell_range(x0, x1, stride, w)
        ay, by = _cell_range(y0, y1, stride, h)
        if ax <= bx and ay <= by:
            labels[ay : by + 1, ax : bx + 1] = 0
        hw, hh = (x1 - x0) * shrink / 2, (y1 - y0) * shrink / 2
        sx0, sx1 = _cell_range(cx - hw, cx + hw, stride, w)
        sy0, sy1 = _cell_range(cy - hh, cy + hh, stride, h)
        if sx0 > sx1 or sy0 > sy1:
            gx = int(np.clip(np.rint(cx / stride), 0, w - 1))
            gy = int(np.clip(np.rint(cy / stride), 0, h - 1))
            if not (x0 < gx * stride < x1 and y0 < gy * stride < y1):
                continue
            sx0 = sx1 = gx
            sy0 = sy1 = gy
        xs = np.arange(sx0, sx1 + 1) * stride
        ys = np.arange(sy0, sy1 + 1) * stride
        labels[sy0 : sy1 + 1, sx0 : sx1 + 1] = 1
        reg[0, sy0 : sy1 + 1, sx0 : sx1 + 1] = ((xs - x0) / stride)[None, :]
        reg[1, sy0 : sy1 + 1, sx0 : sx1 + 1] = ((ys - y0) / stride)[:, None]
        reg[2, sy0 : sy1 + 1, sx0 : sx1 + 1] = ((x1 - xs) / stride)[None, :]
        reg[3, sy0 : sy1 + 1, sx0 : sx1 + 1] = ((y1 - ys) / stride)[:, None]
    return DetectionTargets(labels, reg)


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(path, net: Network, extra: dict | None = None) -> None:
    """``.npz`` with one array per parameter plus a JSON header entry.

    Zip entries carry a fixed timestamp so equal weights give equal bytes.
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "net": asdict(net.cfg),
        "shapes": {k: list(v.shape) for k, v in net.params.items()},
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update(net.params)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def load_checkpoint(path) -> tuple[Network, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        net = Network(NetConfig(**meta["net"]))
        for k, shape in meta["shapes"].items():
            arr = data[k]
            if list(arr.shape) != shape:
                raise ShapeError(f"{k}: header says {shape}, file has {list(arr.shape)}")
            net.params[k] = arr.astype(float)
    return net, meta.get("extra", {})
