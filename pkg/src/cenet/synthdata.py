"""Deterministic synthetic scenes with character- and word-level ground truth.

Glyphs are solid colored blocks with a notch, laid along straight, circular
or wavy baselines. Each word has its own color. Every scene carries exact
character boxes, word polygons (two offset chains around the baseline) and
transcript lengths.
"""

from __future__ import annotations

import colorsys
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .geometry import BoxAA, point_segment_distance, points_in_polygon, rasterize_polygon
from .weaksup import Annotation, read_annotations, write_annotations


class PlacementFailure(RuntimeError):
    pass


LAYOUTS = ("straight", "arc", "wavy")


@dataclass
class SceneSpec:
    height: int = 128
    width: int = 128
    n_words: tuple[int, int] = (1, 3)
    chars_per_word: tuple[int, int] = (3, 5)
    layouts: tuple[str, ...] = ("straight", "arc")
    char_width: tuple[float, float] = (6.0, 11.0)
    char_height: tuple[float, float] = (9.0, 13.0)
    spacing: tuple[float, float] = (2.0, 4.0)
    rotation: tuple[float, float] = (-15.0, 15.0)
    arc_radius: tuple[float, float] = (40.0, 80.0)
    wave_amplitude: tuple[float, float] = (0.15, 0.35)
    wave_period: tuple[float, float] = (30.0, 50.0)
    noise: float = 0.04
    margin: float = 1.0
    word_gap: int = 8
    distractors: int = 0
    max_tries: int = 400

    def __post_init__(self):
        bad = set(self.layouts) - set(LAYOUTS)
        if bad:
            raise ValueError(f"unknown layouts {sorted(bad)}")


@dataclass
class CharTruth:
    box: BoxAA
    group_id: int


@dataclass
class Scene:
    image: np.ndarray
    chars: list[CharTruth]
    words: list[Annotation]
    baselines: list[dict] = field(default_factory=list)

    @property
    def char_boxes(self) -> np.ndarray:
        return np.array([c.box.as_array() for c in self.chars]).reshape(-1, 4)

    @property
    def char_groups(self) -> np.ndarray:
        return np.array([c.group_id for c in self.chars], dtype=int)


def _baseline(layout: str, length: float, rng: np.random.Generator, spec: SceneSpec):
    """Sample a baseline and return ``(points_fn, angle_fn, params)``.

    Both functions take arc length(s) measured from the word start.
    """
    theta0 = np.deg2rad(rng.uniform(*spec.rotation))
    if layout == "straight":
        params = {"layout": layout, "theta0": theta0}

        def pts(s):
            s = np.asarray(s, dtype=float)
            return np.stack([s * np.cos(theta0), s * np.sin(theta0)], axis=-1)

        def ang(s):
            return np.full(np.shape(s), theta0)

    elif layout == "arc":
        radius = rng.uniform(*spec.arc_radius)
        kappa = rng.choice([-1.0, 1.0]) / radius
        # center the arc on the chosen rotation so the word stays readable
        theta0 = theta0 - kappa * length / 2
        params = {"layout": layout, "theta0": theta0, "kappa": kappa, "radius": radius}

        def pts(s):
            s = np.asarray(s, dtype=float)
            a = theta0 + kappa * s
            return np.stack(
                [(np.sin(a) - np.sin(theta0)) / kappa, (np.cos(theta0) - np.cos(a)) / kappa], axis=-1
            )

        def ang(s):
            return theta0 + kappa * np.asarray(s, dtype=float)

    else:
        amp = rng.uniform(*spec.wave_amplitude)
        period = rng.uniform(*spec.wave_period)
        phase = rng.uniform(0, 2 * np.pi)
        params = {"layout": layout, "theta0": theta0, "amp": amp, "period": period, "phase": phase}
        lo = -length
        grid = np.linspace(lo, 2 * length, int(3 * length / 0.05) + 1)
        a_grid = theta0 + amp * np.sin(2 * np.pi * grid / period + phase)
        mid = (a_grid[1:] + a_grid[:-1]) / 2
        ds = np.diff(grid)
        xy = np.zeros((len(grid), 2))
        xy[1:, 0] = np.cumsum(np.cos(mid) * ds)
        xy[1:, 1] = np.cumsum(np.sin(mid) * ds)
        xy -= np.array([np.interp(0.0, grid, xy[:, 0]), np.interp(0.0, grid, xy[:, 1])])

        def pts(s):
            s = np.asarray(s, dtype=float)
            return np.stack([np.interp(s, grid, xy[:, 0]), np.interp(s, grid, xy[:, 1])], axis=-1)

        def ang(s):
            return theta0 + amp * np.sin(2 * np.pi * np.asarray(s, dtype=float) / period + phase)

    return pts, ang, params


def _rotated_rect(cx, cy, w, h, a) -> np.ndarray:
    u = np.array([np.cos(a), np.sin(a)])
    n = np.array([-np.sin(a), np.cos(a)])
    c = np.array([cx, cy])
    return np.array(
        [c - u * w / 2 - n * h / 2, c + u * w / 2 - n * h / 2, c + u * w / 2 + n * h / 2, c - u * w / 2 + n * h / 2]
    )


def _word_geometry(layout: str, rng: np.random.Generator, spec: SceneSpec):
    n = int(rng.integers(spec.chars_per_word[0], spec.chars_per_word[1] + 1))
    widths = rng.uniform(*spec.char_width, size=n)
    heights = rng.uniform(*spec.char_height, size=n)
    gaps = rng.uniform(*spec.spacing, size=max(n - 1, 0))
    s = np.empty(n)
    s[0] = widths[0] / 2
    for k in range(1, n):
        s[k] = s[k - 1] + widths[k - 1] / 2 + gaps[k - 1] + widths[k] / 2
    length = s[-1] + widths[-1] / 2
    pts, ang, params = _baseline(layout, length, rng, spec)
    centers = pts(s)
    angles = ang(s)
    glyphs = [_rotated_rect(*centers[k], widths[k], heights[k], angles[k]) for k in range(n)]
    boxes = [BoxAA.bounding(g) for g in glyphs]

    # band half-thickness and end padding that contain every char box
    half, pad0, pad1 = 0.0, 0.0, 0.0
    for k, b in enumerate(boxes):
        u = np.array([np.cos(angles[k]), np.sin(angles[k])])
        nrm = np.array([-u[1], u[0]])
        rel = b.corners() - centers[k]
        half = max(half, float(np.abs(rel @ nrm).max()))
        along = rel @ u + s[k]
        pad0 = max(pad0, float(-along.min()))
        pad1 = max(pad1, float(along.max() - length))
    half += spec.margin
    pad0 += spec.margin
    pad1 += spec.margin
    corners = np.concatenate([b.corners() for b in boxes])
    for _ in range(40):
        polygon = _band(layout, pts, ang, n, length, half, pad0, pad1)
        if layout == "straight" or points_in_polygon(corners, polygon).all():
            break
        # the band normal turns under a char on curved baselines
        half += 0.25
        pad0 += 0.25
        pad1 += 0.25
    return {
        "n": n,
        "centers": centers,
        "angles": angles,
        "widths": widths,
        "heights": heights,
        "glyphs": glyphs,
        "boxes": boxes,
        "polygon": polygon,
        "params": params,
        "arc_s": s,
    }


def _band(layout, pts, ang, n, length, half, pad0, pad1) -> np.ndarray:
    if layout == "straight":
        samples = np.array([-pad0, length + pad1])
    else:
        m = max(n + 1, int(np.ceil((length + pad0 + pad1) / 4.0)) + 1)
        samples = np.linspace(-pad0, length + pad1, m)
    mid = pts(samples)
    a = ang(samples)
    nrm = np.stack([-np.sin(a), np.cos(a)], axis=1)
    top = mid - nrm * half
    bottom = mid + nrm * half
    if layout != "straight":
        # closed-form arc points need extra room for the chord sag between samples
        sag = _max_sag(top, pts, ang, samples, -half) + _max_sag(bottom, pts, ang, samples, half)
        top = mid - nrm * (half + sag)
        bottom = mid + nrm * (half + sag)
    return np.concatenate([top, bottom[::-1]])


def _max_sag(chain, pts, ang, samples, offset) -> float:
    """Largest distance between a dense offset curve and its sampled chord."""
    dense = np.linspace(samples[0], samples[-1], 8 * len(samples))
    a = ang(dense)
    curve = pts(dense) + np.stack([-np.sin(a), np.cos(a)], axis=1) * offset
    d = np.min([point_segment_distance(curve, chain[i], chain[i + 1]) for i in range(len(chain) - 1)], axis=0)
    return float(d.max())


def _shift(word: dict, delta: np.ndarray) -> dict:
    out = dict(word)
    out["centers"] = word["centers"] + delta
    out["glyphs"] = [g + delta for g in word["glyphs"]]
    out["boxes"] = [
        BoxAA(b.x_min + delta[0], b.y_min + delta[1], b.x_max + delta[0], b.y_max + delta[1]) for b in word["boxes"]
    ]
    out["polygon"] = word["polygon"] + delta
    return out


def _word_colors(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    hues = (rng.uniform() + np.arange(n) / max(n, 1) + rng.uniform(-0.05, 0.05, size=n)) % 1.0
    return [
        np.array(colorsys.hsv_to_rgb(h, rng.uniform(0.6, 1.0), rng.uniform(0.8, 1.0)))
        for h in rng.permutation(hues)
    ]


def _render_glyph(img: np.ndarray, glyph: np.ndarray, color: np.ndarray, notch: tuple[int, float], ss: int = 2):
    """Paint a rotated block with a rectangular notch, ``ss x ss`` supersampled."""
    h_img, w_img = img.shape[:2]
    lo = np.clip(np.floor(glyph.min(axis=0)).astype(int), 0, [w_img, h_img])
    hi = np.clip(np.ceil(glyph.max(axis=0)).astype(int) + 1, 0, [w_img, h_img])
    if np.any(hi <= lo):
        return
    origin = glyph[0]
    ex = glyph[1] - glyph[0]
    ey = glyph[3] - glyph[0]
    w, h = np.hypot(*ex), np.hypot(*ey)
    u, n = ex / w, ey / h
    offs = (np.arange(ss) + 0.5) / ss
    ys, xs = np.mgrid[lo[1] : hi[1], lo[0] : hi[0]]
    cover = np.zeros(ys.shape)
    side, pos = notch
    for oy in offs:
        for ox in offs:
            p = np.stack([xs + ox - origin[0], ys + oy - origin[1]], axis=-1)
            a, b = p @ u, p @ n
            inside = (a >= 0) & (a <= w) & (b >= 0) & (b <= h)
            nw, nh = w / 3, h / 3
            if side == 0:  # top
                cut = (a >= pos * (w - nw)) & (a <= pos * (w - nw) + nw) & (b <= nh)
            elif side == 1:  # bottom
                cut = (a >= pos * (w - nw)) & (a <= pos * (w - nw) + nw) & (b >= h - nh)
            elif side == 2:  # left
                cut = (b >= pos * (h - nh)) & (b <= pos * (h - nh) + nh) & (a <= nw)
            else:  # right
                cut = (b >= pos * (h - nh)) & (b <= pos * (h - nh) + nh) & (a >= w - nw)
            cover += inside & ~cut
    cover /= ss * ss
    region = img[lo[1] : hi[1], lo[0] : hi[0]]
    region[:] = region * (1 - cover[..., None]) + color * cover[..., None]


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.0, 0.3, size=3)
    tilt = rng.uniform(-0.1, 0.1, size=(2, 3))
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    img = base + (xx[..., None] / spec.width) * tilt[0] + (yy[..., None] / spec.height) * tilt[1]
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec: SceneSpec, seed: int) -> Scene:
    """Render one scene; raises :class:`PlacementFailure` when words do not fit."""
    rng = np.random.default_rng(seed)
    n_words = int(rng.integers(spec.n_words[0], spec.n_words[1] + 1))
    img = _background(spec, rng)
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    placed = []
    for _ in range(n_words):
        for _attempt in range(spec.max_tries):
            layout = str(rng.choice(list(spec.layouts)))
            word = _word_geometry(layout, rng, spec)
            lo, hi = word["polygon"].min(axis=0), word["polygon"].max(axis=0)
            room = np.array([spec.width, spec.height]) - 2.0 - (hi - lo)
            if np.any(room <= 0):
                continue
            delta = 1.0 + rng.uniform(0, room) - lo
            word = _shift(word, delta)
            mask = rasterize_polygon(word["polygon"], (spec.height, spec.width))
            if np.any(mask & occupied):
                continue
            occupied |= ndimage.binary_dilation(mask, iterations=spec.word_gap)
            placed.append(word)
            break
        else:
            raise PlacementFailure(f"could not place word {len(placed) + 1} of {n_words} after {spec.max_tries} tries")

    colors = _word_colors(len(placed), rng)
    chars, words, baselines = [], [], []
    for gid, (word, color) in enumerate(zip(placed, colors)):
        for k, glyph in enumerate(word["glyphs"]):
            notch = (int(rng.integers(0, 4)), float(rng.uniform(0, 1)))
            _render_glyph(img, glyph, color, notch)
            chars.append(CharTruth(word["boxes"][k], gid))
        transcript = "".join(rng.choice(list(string.ascii_uppercase), size=word["n"]))
        words.append(Annotation(word["polygon"], word["n"], gid, transcript=transcript))
        baselines.append({**word["params"], "centers": word["centers"], "arc_s": word["arc_s"]})

    for _ in range(spec.distractors):
        _add_distractor(img, occupied, rng)
    if spec.noise > 0:
        img = img + rng.normal(0.0, spec.noise, size=img.shape)
    return Scene(np.clip(img, 0.0, 1.0), chars, words, baselines)


def _add_distractor(img: np.ndarray, occupied: np.ndarray, rng: np.random.Generator) -> None:
    """Draw a ring that does not overlap any word."""
    h, w = occupied.shape
    for _ in range(20):
        r = rng.uniform(3, 7)
        cx, cy = rng.uniform(r, w - r), rng.uniform(r, h - r)
        yy, xx = np.mgrid[0:h, 0:w]
        dist = np.hypot(xx + 0.5 - cx, yy + 0.5 - cy)
        ring = (dist <= r) & (dist >= r - 2)
        if np.any(ring & occupied):
            continue
        img[ring] = np.array(colorsys.hsv_to_rgb(rng.uniform(), 0.8, 0.9))
        return


def save_scene(scene: Scene, out_dir, name: str, fmt: str = "png") -> dict[str, Path]:
    """Write ``name.png`` (or ``.pgm``), ``name.txt`` and ``name.chars.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pixels = np.round(np.clip(scene.image, 0, 1) * 255).astype(np.uint8)
    if fmt == "pgm":
        img_path = out / f"{name}.pgm"
        Image.fromarray(np.round(pixels.mean(axis=2)).astype(np.uint8), mode="L").save(img_path)
    else:
        img_path = out / f"{name}.png"
        Image.fromarray(pixels, mode="RGB").save(img_path)
    ann_path = out / f"{name}.txt"
    write_annotations(ann_path, scene.words)
    char_path = out / f"{name}.chars.txt"
    with open(char_path, "w", encoding="utf-8") as fh:
        for c in scene.chars:
            cx, cy = c.box.center
            fh.write(f"{cx:.4f},{cy:.4f},{c.box.width:.4f},{c.box.height:.4f},{c.group_id}\n")
    return {"image": img_path, "annotations": ann_path, "chars": char_path}


def load_image(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img.convert("RGB"), dtype=float) / 255.0
    return arr


def read_chars(path) -> list[CharTruth]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            cx, cy, w, h, gid = line.split(",")
            out.append(CharTruth(BoxAA.from_center(float(cx), float(cy), float(w), float(h)), int(gid)))
    return out


def load_scene(image_path) -> Scene:
    """Read a scene written by :func:`save_scene` (sidecars optional)."""
    image_path = Path(image_path)
    stem = image_path.with_suffix("")
    ann = Path(f"{stem}.txt")
    chars = Path(f"{stem}.chars.txt")
    words = read_annotations(ann) if ann.exists() else []
    truth = read_chars(chars) if chars.exists() else []
    return Scene(load_image(image_path), truth, words)


def list_scene_images(data_dir) -> list[Path]:
    d = Path(data_dir)
    return sorted(p for p in d.iterdir() if p.suffix in (".png", ".pgm"))
