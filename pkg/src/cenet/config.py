"""Flat ``key = value`` configuration with ``include`` support.

Every tunable constant of the pipeline is a named key. Lines starting with
``#`` are comments; ``include other.cfg`` pulls in another file (relative
to the including file), later keys overriding earlier ones.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import NetConfig

# (s, d) pairs used on the public benchmarks
THRESHOLD_PRESETS = {
    "icdar15": (0.35, 0.38),
    "icdar13": (0.4, 0.45),
    "td500": (0.4, 0.3),
    "totaltext": (0.4, 0.38),
}


@dataclass
class PipelineConfig:
    # network
    in_channels: int = 3
    stride: int = 4
    trunk: tuple[int, ...] = (8, 16, 32, 32)
    head_width: int = 32
    rcu_blocks: int = 2
    emb_dim: int = 16
    # detection loss
    neg_ratio: float = 3.0
    hard_frac: float = 0.3
    lambda1: float = 1.0
    lambda2: float = 1.0
    shrink: float = 0.5
    # embedding loss
    R: int = 1024
    alpha: float = 0.6
    reweighting: bool = True
    emb_background: bool = True
    max_background: int = 32
    emb_jitter: float = 0.0  # uniform shift of embedding sample points, in box sizes
    # weak supervision
    t1: float = 0.2
    t2: float = 0.5
    mixing: bool = True
    # pairs and post-processing
    k: int = 5
    beta: float = 5.0
    s: float = 0.35
    d: float = 0.38
    nms: float = 0.5
    min_chars: int = 2
    short_word_removal: bool = True
    boundary: str = "poly"
    seg_chars: int = 5
    # optimization
    lr: float = 1e-3
    steps: int = 3000
    lr_drop_at: int = 2000
    lr_decay: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    batch_size: int = 8
    seed: int = 0

    def net_config(self) -> NetConfig:
        return NetConfig(
            in_channels=self.in_channels,
            stride=self.stride,
            trunk=self.trunk,
            head_width=self.head_width,
            rcu_blocks=self.rcu_blocks,
            emb_dim=self.emb_dim,
        )

    def lr_at(self, step: int) -> float:
        return self.lr * (self.lr_decay if step >= self.lr_drop_at else 1.0)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def parse_value(raw: str, default):
    """Coerce ``raw`` to the type of ``default``."""
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [x.strip() for x in raw.split(",") if x.strip()]
        kind = type(default[0]) if default else str
        return tuple(kind(x) for x in items)
    return raw


def read_key_values(path, _seen=None) -> dict[str, str]:
    path = Path(path).resolve()
    # ancestors only, so a file may be included twice from different branches
    seen = frozenset() if _seen is None else _seen
    if path in seen:
        raise ValueError(f"include cycle at {path}")
    seen = seen | {path}
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("include "):
                out.update(read_key_values(path.parent / line[len("include ") :].strip(), seen))
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def apply_key_values(obj, values: dict[str, str], strict: bool = True):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, raw in values.items():
        if key not in known:
            if strict:
                raise KeyError(f"unknown config key {key!r}")
            continue
        changes[key] = parse_value(raw, getattr(obj, key))
    return dataclasses.replace(obj, **changes)


def load_config(path=None, **overrides) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        cfg = apply_key_values(cfg, read_key_values(path))
    return cfg.replace(**overrides) if overrides else cfg


def default_seed(explicit: int | None) -> int:
    if explicit is not None:
        return explicit
    return int(os.environ.get("CENET_SEED", "0"))
