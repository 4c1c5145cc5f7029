"""Command-line entry points.

Subcommands: gen, train, eval, ipm, gradcheck, sweep, ablate. Every
command accepts --config (JSON) and --seed; flags override the file.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .bevgrid import BevGrid, argmax_map, load_bev, save_bev
from .config import ExperimentConfig
from .density import save_depth_pgm
from .errors import (BevRenderError, ConfigurationError, DataError,
                     NoSupervisionError, NumericError)
from .evalbaseline import ipm_warp, metrics_report
from .geometry import compose_relative_pose, load_poses, save_poses
from .imageio import labels_to_rgb, read_pgm, write_ppm
from .lossgrad import LossConfig, finite_diff_check
from .renderer import render_patch
from .scenesim import (Scene, Sequence, gt_bev, load_scene_json, make_sequence,
                       render_depth_image, save_labels, save_scene_json,
                       generate_scene)
from .trainer import (FrameOffsetPolicy, PerFrameFields, ReferenceShadowFields,
                      TrainResult, inverse_frequency_weights,
                      make_supervision_instance, train_bev)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scale", choices=["desk", "paper"], default=None)


def _load_config(args, overrides: dict | None = None) -> ExperimentConfig:
    return ExperimentConfig.load(args.config, overrides, scale=args.scale)


def _load_dataset(data_dir: Path):
    """Read the artifacts written by gen back into scene + sequence."""
    scene = load_scene_json(data_dir / "scene.json")
    cfg = ExperimentConfig.load(data_dir / "config.json")
    intr = cfg.intrinsics()
    poses = load_poses(data_dir / "poses.txt")
    segs = []
    for i in range(len(poses)):
        segs.append(read_pgm(data_dir / f"seg_{i:03d}.pgm").astype(np.uint8))
    return scene, Sequence(poses, intr, segs), cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    seed = cfg.resolved_seed(args.seed)
    if args.difficulty:
        cfg.doc["scene"]["difficulty"] = args.difficulty
    if args.frames:
        cfg.doc["sequence"]["frames"] = args.frames
    if args.corruption is not None:
        cfg.doc["sequence"]["corruption_rate"] = args.corruption
    cfg.doc["seed"] = seed

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = generate_scene(int(cfg.doc["scene"]["seed"]) + seed,
                           cfg.doc["scene"]["difficulty"])
    intr = cfg.intrinsics()
    render_cfg = cfg.render_config()
    seq_cfg = cfg.doc["sequence"]
    rng = np.random.default_rng(seed)
    seq = make_sequence(scene, intr, int(seq_cfg["frames"]),
                        float(seq_cfg["step_m"]), render_cfg.z_far,
                        yaw_rate=float(seq_cfg["yaw_rate"]),
                        corruption_rate=float(seq_cfg["corruption_rate"]),
                        rng=rng)
    palette = scene.palette()

    save_scene_json(out / "scene.json", scene)
    save_poses(out / "poses.txt", seq.poses)
    for i, (pose, seg) in enumerate(zip(seq.poses, seq.seg_images)):
        save_labels(out / f"seg_{i:03d}.pgm", seg, palette,
                    out / f"seg_{i:03d}.ppm")
        depth = render_depth_image(scene, pose, intr, render_cfg.z_far,
                                   render_cfg.z_near)
        save_depth_pgm(out / f"depth_{i:03d}.pgm", depth)
    r = int(cfg.doc["reference"])
    bev_gt = gt_bev(scene, cfg.bev_spec(), seq.poses[r])
    save_labels(out / "gt_bev.pgm", bev_gt, palette, out / "gt_bev.ppm")
    cfg.save(out / "config.json")
    print(f"wrote {len(seq)} frames to {out}")
    return 0


def _build_fields(name: str, scene: Scene, seq: Sequence, r: int, render_cfg,
                  sigma_solid: float):
    if name == "per_frame":
        return PerFrameFields(scene, seq, render_cfg, sigma_solid)
    return ReferenceShadowFields(scene, seq, r, render_cfg, sigma_solid)


def _loss_config(cfg: ExperimentConfig, scene: Scene, bev_gt: np.ndarray) -> LossConfig:
    loss_doc = cfg.doc["loss"]
    if loss_doc.get("class_weights"):
        weights = np.asarray(loss_doc["class_weights"], dtype=np.float64)
    else:
        weights = inverse_frequency_weights(bev_gt, scene.bev_class_count)
    return LossConfig(weights, float(loss_doc["epsilon"]))


def _run_training(cfg: ExperimentConfig, scene: Scene, seq: Sequence,
                  seed: int) -> tuple[TrainResult, np.ndarray]:
    r = int(cfg.doc["reference"])
    render_cfg = cfg.render_config()
    spec = cfg.bev_spec()
    bev_gt = gt_bev(scene, spec, seq.poses[r])
    loss_cfg = _loss_config(cfg, scene, bev_gt)
    fields = _build_fields(cfg.field_policy(), scene, seq, r, render_cfg,
                           float(cfg.doc["sigma_solid"]))
    rng = np.random.default_rng(seed)
    result = train_bev(seq, r, fields, cfg.policy(), spec, render_cfg,
                       cfg.train_config(seed), loss_cfg, rng)
    return result, bev_gt


def _write_history(path, result: TrainResult) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mean_loss", "kept_ray_fraction"])
        for i, (loss, kf) in enumerate(zip(result.losses, result.kept_fractions)):
            writer.writerow([i, "" if loss is None else f"{loss:.17g}",
                             f"{kf:.17g}"])


def cmd_train(args) -> int:
    data = Path(args.data)
    scene, seq, cfg = _load_dataset(data)
    if args.config:
        cfg = ExperimentConfig.load(args.config, scale=args.scale)
    for key, val in (("iterations", args.iterations),
                     ("patches_total", args.patches)):
        if val is not None:
            cfg.doc["train"][key] = val
    if args.no_future:
        cfg.doc["policy"]["enabled_future"] = False
    if args.field:
        cfg.doc["field"] = args.field
    seed = cfg.resolved_seed(args.seed)
    threads = args.threads if args.threads is not None else int(cfg.doc["threads"])
    kernels.set_num_threads(threads)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result, _ = _run_training(cfg, scene, seq, seed)
    save_bev(out / "bev.bin", result.grid)
    labels = argmax_map(result.grid)
    write_ppm(out / "bev_argmax.ppm", labels_to_rgb(labels, scene.palette()))
    _write_history(out / "loss.csv", result)

    if args.trace:
        r = int(cfg.doc["reference"])
        k = min(r + 1, len(seq) - 1)
        field = _build_fields(cfg.field_policy(), scene, seq, r,
                              cfg.render_config(),
                              float(cfg.doc["sigma_solid"])).field_for_frame(k)
        k_to_r = compose_relative_pose(seq.poses[k], seq.poses[r])
        render_cfg = cfg.render_config()
        origin = ((seq.intr.width - render_cfg.patch_size) // 2,
                  seq.intr.height - render_cfg.patch_size - 1)
        patch = render_patch(result.grid, k_to_r, seq.intr, field, origin,
                             render_cfg, np.random.default_rng(seed))
        with open(args.trace, "w", encoding="ascii") as fh:
            json.dump(patch.trace(), fh, indent=1)
            fh.write("\n")

    done = sum(1 for v in result.losses if v is not None)
    print(f"trained {done}/{len(result.losses)} iterations, "
          f"{result.sec_per_iter:.3f} s/iter")
    return 0


def _grid_labels(path: Path) -> np.ndarray:
    if path.suffix == ".bin":
        return argmax_map(load_bev(path))
    return read_pgm(path).astype(np.uint8)


def cmd_eval(args) -> int:
    scene = load_scene_json(args.scene)
    pred = _grid_labels(Path(args.pred))
    gt = read_pgm(args.gt).astype(np.uint8)
    names = [c.name for c in scene.classes[:scene.bev_class_count]]
    report = metrics_report(pred, gt, scene.void_class, names)
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mIoU {report['miou']:.4f} over {report['evaluated_cells']} cells")
    return 0


def cmd_ipm(args) -> int:
    data = Path(args.data)
    scene, seq, cfg = _load_dataset(data)
    r = int(cfg.doc["reference"])
    spec = cfg.bev_spec()
    warped = ipm_warp(seq.seg_images[r], seq.intr, scene.ground_y,
                      args.pitch, spec, scene.void_class)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_labels(out / "ipm_bev.pgm", warped, scene.palette(), out / "ipm_bev.ppm")
    print(f"warped frame {r} to {out / 'ipm_bev.pgm'}")
    return 0


def cmd_gradcheck(args) -> int:
    data = Path(args.data)
    scene, seq, cfg = _load_dataset(data)
    seed = cfg.resolved_seed(args.seed)
    kernels.set_num_threads(args.threads or int(cfg.doc["threads"]))
    r = int(cfg.doc["reference"])
    spec = cfg.bev_spec()
    bev_gt = gt_bev(scene, spec, seq.poses[r])
    loss_cfg = _loss_config(cfg, scene, bev_gt)
    logits = None
    if args.grid:
        grid = load_bev(args.grid)
        if grid.logits.shape[:2] != (spec.rows, spec.cols):
            raise DataError("grid file does not match the configured layout")
        logits = grid.logits
    fields = _build_fields(cfg.field_policy(), scene, seq, r,
                           cfg.render_config(), float(cfg.doc["sigma_solid"]))
    rng = np.random.default_rng(seed)
    instance = make_supervision_instance(
        seq, r, fields, cfg.policy(), spec, cfg.render_config(),
        args.patches, int(cfg.doc["train"]["patch_size"]), loss_cfg, rng,
        logits=logits)
    report = finite_diff_check(instance, args.probes, args.step_h, rng)
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"max_rel_err {report['max_rel_err']:.3e} over {report['probes']} probes")
    return 0


def cmd_sweep(args) -> int:
    data = Path(args.data)
    scene, seq, cfg = _load_dataset(data)
    if args.iterations is not None:
        cfg.doc["train"]["iterations"] = args.iterations
    kernels.set_num_threads(args.threads or int(cfg.doc["threads"]))
    base_seed = cfg.resolved_seed(args.seed)
    values = [int(v) if args.axis != "tau" else float(v)
              for v in args.values.split(",")]
    names = [c.name for c in scene.classes[:scene.bev_class_count]]
    gt = read_pgm(data / "gt_bev.pgm").astype(np.uint8)

    rows = []
    for value in values:
        for s in range(args.seeds):
            run_cfg = ExperimentConfig(json.loads(json.dumps(cfg.doc)))
            if args.axis == "patches":
                run_cfg.doc["train"]["patches_total"] = value
            elif args.axis == "m":
                run_cfg.doc["render"]["m"] = value
            else:
                run_cfg.doc["render"]["tau"] = value
            result, _ = _run_training(run_cfg, scene, seq, base_seed + s)
            report = metrics_report(argmax_map(result.grid), gt,
                                    scene.void_class, names)
            rows.append([value, base_seed + s, f"{report['miou']:.17g}",
                         f"{result.sec_per_iter:.17g}"])
            print(f"{args.axis}={value} seed={base_seed + s} "
                  f"miou={report['miou']:.4f} "
                  f"sec_per_iter={result.sec_per_iter:.3f}")
    with open(args.out, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "seed", "miou", "sec_per_iter"])
        writer.writerows(rows)
    return 0


_ABLATE_RUNS = (
    ("adjacent_only", False, "per_frame"),
    ("reference_shadow", True, "reference_shadow"),
    ("full", True, "per_frame"),
)


def cmd_ablate(args) -> int:
    data = Path(args.data)
    scene, seq, cfg = _load_dataset(data)
    if args.iterations is not None:
        cfg.doc["train"]["iterations"] = args.iterations
    kernels.set_num_threads(args.threads or int(cfg.doc["threads"]))
    seed = cfg.resolved_seed(args.seed)
    names = [c.name for c in scene.classes[:scene.bev_class_count]]
    gt = read_pgm(data / "gt_bev.pgm").astype(np.uint8)

    rows = []
    for label, future, field_name in _ABLATE_RUNS:
        run_cfg = ExperimentConfig(json.loads(json.dumps(cfg.doc)))
        run_cfg.doc["policy"]["enabled_future"] = future
        run_cfg.doc["field"] = field_name
        result, _ = _run_training(run_cfg, scene, seq, seed)
        report = metrics_report(argmax_map(result.grid), gt,
                                scene.void_class, names)
        rows.append([label, int(future), field_name,
                     f"{report['miou']:.17g}",
                     int(result.coverage.sum())])
    with open(args.out, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "future_frames", "field", "miou",
                         "supervised_cells"])
        writer.writerows(rows)
    print(f"{'run':<18} {'future':<7} {'field':<17} {'miou':<8} cells")
    for label, future, field_name, miou, cells in rows:
        print(f"{label:<18} {future:<7} {field_name:<17} "
              f"{float(miou):<8.4f} {cells}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevrender",
        description="Train and evaluate top-down class grids by volumetric "
                    "rendering of perspective segmentations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--difficulty", choices=["flat", "static", "occlusion"])
    p.add_argument("--frames", type=int)
    p.add_argument("--corruption", type=float, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="optimize a grid on generated data")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--patches", type=int)
    p.add_argument("--no-future", action="store_true")
    p.add_argument("--field", choices=["per_frame", "reference_shadow"])
    p.add_argument("--threads", type=int)
    p.add_argument("--trace", type=Path, default=None,
                   help="dump a per-ray JSON trace of one patch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a grid against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, help="bev.bin or label .pgm")
    p.add_argument("--gt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", default="metrics.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ipm", help="flat-ground warp baseline")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pitch", type=float, default=0.0)
    p.set_defaults(func=cmd_ipm)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="gradcheck.json")
    p.add_argument("--probes", type=int, default=100)
    p.add_argument("--step-h", type=float, default=1e-3)
    p.add_argument("--patches", type=int, default=8)
    p.add_argument("--grid", type=Path, default=None)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train/eval across one axis")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--axis", choices=["patches", "tau", "m"], required=True)
    p.add_argument("--values", required=True, help="comma-separated")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--iterations", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="run the three supervision variants")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="ablate.csv")
    p.add_argument("--iterations", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
