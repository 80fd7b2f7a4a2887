"""Command-line entry point.

Subcommands: ``synth``, ``train``, ``infer``, ``eval``, ``search`` and
``losscheck``. Machine-readable results go to stdout or files; logs go to
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .boundary import BoundaryMode, read_boundaries, write_boundaries
from .clustering import write_groups_json
from .config import PipelineConfig, apply_key_values, default_seed, read_key_values
from .decode import write_candidates_jsonl
from .eval import grid_search, match_regions, scene_report, write_heatmap_csv, write_report
from .gradcheck import CHECKS, run_all
from .model import load_checkpoint, save_checkpoint
from .pipeline import Detector
from .synthdata import PlacementFailure, SceneSpec, generate_scene, list_scene_images, load_image, load_scene, save_scene
from .training import Trainer, write_loss_log
from .weaksup import read_annotations

logger = logging.getLogger("cenet")


class CliError(Exception):
    pass


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene seed derived from a dataset seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SceneSpec()
    if args.spec:
        spec = apply_key_values(spec, read_key_values(args.spec))
    seed = default_seed(args.seed)
    out = Path(args.out)
    for i in range(args.count):
        try:
            scene = generate_scene(spec, scene_seed(seed, i))
        except PlacementFailure as exc:
            raise CliError(f"scene {i}: {exc}") from exc
        save_scene(scene, out, f"scene_{i:05d}", fmt=args.format)
    logger.info("wrote %d scenes to %s", args.count, out)
    return 0


# -- train -------------------------------------------------------------------

def _train_config(args) -> PipelineConfig:
    """Config file, then --set overrides, then flags. The seed comes from
    --seed, else the config file, else CENET_SEED."""
    values = read_key_values(args.config) if args.config else {}
    values.update(parse_overrides(args.set))
    cfg = apply_key_values(PipelineConfig(), values)
    changes = {}
    if args.seed is not None or "seed" not in values:
        changes["seed"] = default_seed(args.seed)
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.no_mixing:
        changes["mixing"] = False
    if args.no_reweighting:
        changes["reweighting"] = False
    if args.emb_off:
        changes["lambda2"] = 0.0
    return cfg.replace(**changes)


def cmd_train(args) -> int:
    cfg = _train_config(args)
    paths = list_scene_images(args.data)
    if not paths:
        raise CliError(f"no images in {args.data}")
    scenes = [load_scene(p) for p in paths]
    logger.info("training on %d scenes for %d steps (seed %d)", len(scenes), cfg.steps, cfg.seed)
    trainer = Trainer(cfg)

    def progress(step, rep):
        if step % max(cfg.steps // 20, 1) == 0:
            logger.info("step %d loss %.4f %s", step, rep.value, {k: round(v, 4) for k, v in rep.info["parts"].items()})

    rows = trainer.fit(scenes, callback=progress)
    save_checkpoint(args.out, trainer.net, {"config": cfg.to_text()})
    log_path = args.log or str(Path(args.out).with_suffix(".loss.csv"))
    write_loss_log(log_path, rows)
    logger.info("checkpoint %s, loss log %s", args.out, log_path)
    return 0


# -- infer -------------------------------------------------------------------

def load_detector(checkpoint, config=None, overrides=None) -> Detector:
    net, extra = load_checkpoint(checkpoint)
    cfg = PipelineConfig()
    if "config" in extra:
        values = {}
        for line in extra["config"].splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
        cfg = apply_key_values(cfg, values, strict=False)
    if config:
        cfg = apply_key_values(cfg, read_key_values(config))
    if overrides:
        cfg = apply_key_values(cfg, overrides)
    return Detector(net, cfg)


def pad_to_stride(image: np.ndarray, stride: int) -> np.ndarray:
    h, w = image.shape[:2]
    ph, pw = -h % stride, -w % stride
    if ph or pw:
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)))
    return image


def collect_images(items) -> list[Path]:
    out = []
    for item in items:
        p = Path(item)
        out.extend(list_scene_images(p) if p.is_dir() else [p])
    return out


def draw_overlay(image: np.ndarray, polys, path) -> None:
    pixels = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    im = Image.fromarray(pixels, mode="RGB")
    draw = ImageDraw.Draw(im)
    for p in polys:
        pts = [tuple(map(float, v)) for v in p]
        draw.line(pts + [pts[0]], fill=(255, 0, 0), width=1)
    im.save(path)


_WORKER: dict = {}


def _init_infer_worker(checkpoint, overrides):
    _WORKER["det"] = load_detector(checkpoint, overrides=overrides)


def _infer_one(job):
    path, out_dir, s, d, mode, overlay, extras = job
    det = _WORKER["det"]
    image = load_image(path)
    res = det.detect(pad_to_stride(image, det.cfg.stride), s, d, mode)
    stem = Path(path).stem
    out = Path(out_dir)
    polys = res.boundaries
    write_boundaries(out / f"{stem}.txt", polys)
    if extras:
        write_candidates_jsonl(out / f"{stem}.cands.jsonl", res.candidates)
        write_groups_json(out / f"{stem}.groups.json", res.groups)
    if overlay:
        draw_overlay(image, polys, out / f"{stem}.overlay.png")
    return stem, len(res.candidates), len(polys)


def _run_jobs(fn, jobs, n_jobs, init, initargs):
    if n_jobs <= 1:
        init(*initargs)
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(n_jobs, initializer=init, initargs=initargs) as pool:
        return list(pool.map(fn, jobs))


def cmd_infer(args) -> int:
    overrides = parse_overrides(args.set)
    det = load_detector(args.checkpoint, overrides=overrides)
    s = det.cfg.s if args.s is None else args.s
    d = det.cfg.d if args.d is None else args.d
    mode = BoundaryMode(args.mode or det.cfg.boundary).value
    images = collect_images(args.images)
    if not images:
        raise CliError("no input images")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), args.out, s, d, mode, args.overlay, args.extras) for p in images]
    results = _run_jobs(_infer_one, jobs, args.jobs, _init_infer_worker, (args.checkpoint, overrides))
    for stem, n_c, n_g in results:
        logger.info("%s: %d candidates, %d regions", stem, n_c, n_g)
    return 0


# -- eval --------------------------------------------------------------------

def gt_files(gt_dir) -> dict[str, Path]:
    return {p.name[: -len(".txt")]: p for p in Path(gt_dir).glob("*.txt") if not p.name.endswith(".chars.txt")}


def _eval_one(job):
    stem, pred_path, gt_path, t_iou = job
    gts = [a.boundary for a in read_annotations(gt_path) if not a.ignore]
    preds = read_boundaries(pred_path) if pred_path is not None and Path(pred_path).exists() else []
    return stem, match_regions(preds, gts, t_iou)


def _noop():
    pass


def cmd_eval(args) -> int:
    gts = gt_files(args.gt)
    if not gts:
        raise CliError(f"no ground truth files in {args.gt}")
    jobs = [(stem, str(Path(args.pred) / f"{stem}.txt"), str(p), args.t_iou) for stem, p in sorted(gts.items())]
    results = _run_jobs(_eval_one, jobs, args.jobs, _noop, ())
    report = scene_report([r[0] for r in results], [r[1] for r in results])
    write_report(report, args.json, args.csv)
    json.dump(report["aggregate"], sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


# -- search ------------------------------------------------------------------

def parse_grid(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise CliError("empty grid")
    return vals


def cmd_search(args) -> int:
    det = load_detector(args.checkpoint, overrides=parse_overrides(args.set))
    paths = list_scene_images(args.data)
    if not paths:
        raise CliError(f"no images in {args.data}")
    maps, gts = [], []
    for p in paths:
        maps.append(det.maps(pad_to_stride(load_image(p), det.cfg.stride)))
        gts.append([a.boundary for a in read_annotations(p.with_suffix(".txt")) if not a.ignore])
    res = grid_search(maps, gts, parse_grid(args.s_grid), parse_grid(args.d_grid), det.cfg, args.t_iou)
    if args.heatmap:
        write_heatmap_csv(args.heatmap, res.table)
    json.dump({"s": res.s, "d": res.d, "f_measure": res.f_measure}, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")
    return 0


# -- losscheck ---------------------------------------------------------------

def cmd_losscheck(args) -> int:
    seed = default_seed(args.seed)
    names = args.only.split(",") if args.only else None
    if names:
        unknown = set(names) - set(CHECKS)
        if unknown:
            raise CliError(f"unknown checks {sorted(unknown)}")
    corrupt = {}
    for item in args.inject or []:
        name, _, eps = item.partition("=")
        corrupt[name] = float(eps or 1e-2)
    results = run_all(range(seed, seed + args.seeds), names, corrupt)
    ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{status} {r.name} seed={r.seed} max_rel_error={r.max_rel_error:.3e} tol={r.tol:.0e} checked={r.n_checked} skipped={r.n_skipped}")
    return 0 if ok else 1


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cenet", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene corpus")
    p.add_argument("--spec", help="key = value scene spec file")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("png", "pgm"), default="png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a scene directory")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="loss log CSV (default: <out stem>.loss.csv)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-mixing", action="store_true", help="all samples weakly supervised")
    p.add_argument("--no-reweighting", action="store_true", help="uniform pair sampling")
    p.add_argument("--emb-off", action="store_true", help="set lambda2 = 0")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect text regions in images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+", help="image files or directories")
    p.add_argument("--out", required=True)
    p.add_argument("--s", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--mode", choices=[m.value for m in BoundaryMode])
    p.add_argument("--overlay", action="store_true", help="also write PNG overlays")
    p.add_argument("--extras", action="store_true", help="also write candidates and groups")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted boundaries against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--t-iou", type=float, default=0.5)
    p.add_argument("--json")
    p.add_argument("--csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="grid-search the s and d thresholds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--s-grid", default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--d-grid", default="0.2,0.3,0.4,0.5,0.6,0.8")
    p.add_argument("--t-iou", type=float, default=0.5)
    p.add_argument("--heatmap", help="CSV of F over the grid")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("losscheck", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
    p.add_argument("--only", help="comma-separated check names")
    p.add_argument("--inject", action="append", metavar="NAME[=EPS]", help="corrupt a gradient to test the harness")
    p.set_defaults(func=cmd_losscheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
