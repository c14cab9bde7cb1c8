"""Command-line pipeline: detection, dataset building, training,
inference, and the evaluation suites.

Every subcommand is a pure function of its inputs, the config file, and
the seed; reruns write byte-identical artifacts.  Exit codes: 0 success,
2 configuration problem, 3 unreadable or malformed data.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import tensor as T
from .checkpoint import load_checkpoint, load_model_checkpoint
from .config import config_to_dict, load_config
from .errors import ConfigError, SpeculensError
from .geometry import (
    evaluate_pair,
    pair_seed,
    read_correspondences_csv,
    read_intrinsics,
    read_pose_file,
    relative_pose,
    select_pairs,
)
from .gradcheck import check_gradients
from .highlight import detect_sequence
from .imaging import load_frames, load_masks, write_frame_png, write_mask_png
from .metrics import MetricReport, delta_summary, disparity_errors, DisparityPair, write_report_csv
from .model import Generator, ModelConfig, loss_hole, loss_valid
from .pseudo_gt import (
    build_pseudo_gt,
    read_manifest,
    read_video_sample,
    split_dataset,
    write_manifest,
    write_video_sample,
)
from .trainer import evaluate_checkpoint, frames_to_batch, inpaint_video, masks_to_batch, train

SEED_ENV = "SPECULENS_SEED"
OUT_ENV = "SPECULENS_OUT"


def _resolve_out(out):
    out = Path(out)
    root = os.environ.get(OUT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_info(out, command, cfg):
    info = {
        "command": command,
        "version": __version__,
        "config": config_to_dict(cfg),
    }
    with open(out / "run_info.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _generator_from_checkpoint(path):
    """Build the generator the checkpoint was saved from, using its own
    config echo."""
    tensors, _, config = load_checkpoint(path)
    gen = Generator(ModelConfig.from_dict(config["model"]))
    gen.load_state({
        name[len("gen."):]: arr
        for name, arr in tensors.items()
        if name.startswith("gen.")
    })
    return gen


# -- subcommands ----------------------------------------------------------


def cmd_detect(cfg, args, out):
    frames = load_frames(args.frames)
    masks = detect_sequence(frames, cfg.detector)
    for i, mask in enumerate(masks):
        write_mask_png(out / f"{i:06d}.png", mask)
    print(f"wrote {len(masks)} masks to {out}")


def _video_dirs(root):
    root = Path(root)
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not subdirs:
        raise ConfigError(f"{root} has no video subdirectories")
    return subdirs


def cmd_pseudo_gt(cfg, args, out):
    pg = cfg.pseudo_gt
    samples = []
    for vdir in _video_dirs(args.frames):
        frames = load_frames(vdir)
        masks = load_masks(Path(args.masks) / vdir.name)
        samples.append(
            build_pseudo_gt(
                frames,
                masks,
                offset=pg.offset,
                dilate_kernel=pg.dilate_kernel,
                dilate_iterations=pg.dilate_iterations,
                video_id=vdir.name,
            )
        )
    if len(samples) >= 2:
        splits = split_dataset(samples, pg.split_fraction, seed=cfg.seed)
    else:
        # Too small to hold anything out; the lone clip serves both roles.
        print("single video: using it for both train and test", file=sys.stderr)
        samples[0].split = "train"
        splits = {"train": samples, "test": samples}
    for sample in samples:
        write_video_sample(out, sample)
    write_manifest(out, {
        "train": [s.video_id for s in splits["train"]],
        "test": [s.video_id for s in splits["test"]],
    })
    print(
        f"wrote {len(samples)} videos to {out} "
        f"({len(splits['train'])} train / {len(splits['test'])} test)"
    )


def _split_videos(data_root, split):
    manifest = read_manifest(data_root)
    ids = []
    for name in ("train", "test") if split == "all" else (split,):
        for vid in manifest[name]:
            if vid not in ids:
                ids.append(vid)
    return [read_video_sample(data_root, vid) for vid in ids]


def cmd_train(cfg, args, out):
    videos = _split_videos(args.data, "train")
    tc = cfg.train.to_train_config(
        cfg.model, cfg.seed, cfg.pseudo_gt.random_masks(cfg.seed)
    )
    result = train(tc, videos, out)
    print(
        f"trained {result.iterations} iterations; "
        f"last checkpoint {result.last_checkpoint}"
    )


def cmd_inpaint(cfg, args, out):
    gen = _generator_from_checkpoint(args.checkpoint)
    mask_source = args.mask_source or cfg.eval.mask_source
    attr = "orig_masks" if mask_source == "orig" else "trans_masks"
    for video in _split_videos(args.data, args.split):
        frames = inpaint_video(
            gen,
            video.frames,
            getattr(video, attr),
            cfg.eval.sampling,
            cfg.eval.single_frame,
        )
        vdir = out / video.video_id
        vdir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames):
            write_frame_png(vdir / f"{i:06d}.png", frame)
    print(f"inpainted with {mask_source} masks into {out}")


def cmd_eval_psnr(cfg, args, out):
    gen = _generator_from_checkpoint(args.checkpoint)
    videos = _split_videos(args.data, args.split)
    report = evaluate_checkpoint(
        gen,
        videos,
        cfg.eval.sampling,
        single_frame_mode=cfg.eval.single_frame,
    )
    write_report_csv(out / "psnr_report.csv", report)
    print(
        f"PSNR_mean {report.summary['psnr_mean']:.3f} dB over "
        f"{report.counts['videos']} videos"
    )


def _pose_rows(cfg, pairs, corrs_dir, poses, intrinsics):
    rows = []
    skipped = 0
    for idx, (i, j) in enumerate(pairs):
        path = Path(corrs_dir) / f"pair_{idx:06d}.csv"
        r_gt, t_gt = relative_pose(poses[i], poses[j])
        try:
            corrs = read_correspondences_csv(path)
            ransac = cfg.geometry.ransac(pair_seed(cfg.seed, idx))
            result = evaluate_pair(corrs, intrinsics, r_gt, t_gt, ransac)
        except (OSError, SpeculensError) as exc:
            print(f"pair {i}-{j}: skipped ({exc})", file=sys.stderr)
            skipped += 1
            continue
        rows.append({
            "pair": f"{i}-{j}",
            "rte": result.get("rte"),
            "rre": result["rre"],
            "inliers": result["n_inliers"],
        })
    return rows, skipped


def _pose_report(rows, skipped):
    rre = [r["rre"] for r in rows]
    rte = [r["rte"] for r in rows if r["rte"] is not None]
    summary = {"pairs": len(rows), "skipped": skipped}
    if rre:
        summary["rre_median"] = float(np.median(rre))
    if rte:
        summary["rte_median"] = float(np.median(rte))
    return MetricReport(summary=summary, counts={}, rows=rows)


def cmd_eval_pose(cfg, args, out):
    poses = read_pose_file(args.poses)
    intrinsics = read_intrinsics(args.intrinsics)
    pairs = select_pairs(len(poses), cfg.geometry.pair_window)
    rows, skipped = _pose_rows(cfg, pairs, args.corrs, poses, intrinsics)
    write_report_csv(out / "pose_report.csv", _pose_report(rows, skipped),
                     id_field="pair")
    if args.corrs_inpainted:
        rows_inp, skipped_inp = _pose_rows(
            cfg, pairs, args.corrs_inpainted, poses, intrinsics
        )
        write_report_csv(
            out / "pose_report_inpainted.csv",
            _pose_report(rows_inp, skipped_inp),
            id_field="pair",
        )
        by_pair = {r["pair"]: r for r in rows}
        delta_rows = []
        for metric in ("rte", "rre"):
            orig_vals, inp_vals = [], []
            for r in rows_inp:
                o = by_pair.get(r["pair"])
                if o is None or o[metric] is None or r[metric] is None:
                    continue
                orig_vals.append(o[metric])
                inp_vals.append(r[metric])
            if orig_vals:
                delta_rows.append(
                    {"metric": metric, **delta_summary(orig_vals, inp_vals)}
                )
        write_report_csv(
            out / "pose_delta.csv",
            MetricReport(summary={"pairs": len(rows_inp)}, rows=delta_rows),
            id_field="metric",
        )
    print(f"evaluated {len(rows)} pairs ({skipped} skipped)")


def _load_optional(dir_path, name):
    if dir_path is None:
        return None
    return np.load(Path(dir_path) / name)


def cmd_eval_disparity(cfg, args, out):
    gt_dir = Path(args.gt)
    names = sorted(p.name for p in gt_dir.glob("*.npy"))
    if not names:
        raise ConfigError(f"{gt_dir} has no .npy disparity maps")
    conditions = [True] + ([False] if args.occlusion else [])
    sums = {
        inc: {"orig": {"bad3": 0.0, "rms": 0.0, "epe": 0.0},
              "inp": {"bad3": 0.0, "rms": 0.0, "epe": 0.0}}
        for inc in conditions
    }
    for name in names:
        gt = np.load(gt_dir / name)
        valid = _load_optional(args.valid, name)
        occluded = _load_optional(args.occlusion, name)
        for key, est_dir in (("orig", args.est), ("inp", args.est_inpainted)):
            pair = DisparityPair(
                est=np.load(Path(est_dir) / name),
                gt=gt,
                valid=valid,
                occluded=occluded,
            )
            for inc in conditions:
                errs = disparity_errors(pair, include_occluded=inc)
                for k in ("bad3", "rms", "epe"):
                    sums[inc][key][k] += errs[k]
    rows = []
    n = len(names)
    for inc in conditions:
        o, p = sums[inc]["orig"], sums[inc]["inp"]
        rows.append({
            "experiment": args.experiment,
            "modality": args.modality,
            "occluded": "included" if inc else "excluded",
            "bad3_delta": o["bad3"] / n - p["bad3"] / n,
            "rms_delta": o["rms"] / n - p["rms"] / n,
            "epe_delta": o["epe"] / n - p["epe"] / n,
        })
    report = MetricReport(summary={"frames": n}, rows=rows)
    write_report_csv(out / "disparity_report.csv", report,
                     id_field="experiment")
    print(f"evaluated {n} disparity maps")


def cmd_gradcheck(cfg, args, out):
    rng = np.random.default_rng(cfg.seed)
    model = cfg.model
    gen = Generator(model, rng=np.random.default_rng(cfg.seed + 1))
    k = 2
    fs = model.frame_size
    frames = frames_to_batch([rng.random((fs, fs, 3)) for _ in range(k)])
    masks_np = []
    for _ in range(k):
        m = np.zeros((fs, fs))
        m[fs // 4 : fs // 2, fs // 4 : fs // 2] = 1.0
        masks_np.append(m)
    masks = masks_to_batch(masks_np)
    target = T.as_tensor(frames)

    def loss_fn():
        pred = gen.forward(frames, masks)
        return loss_hole(target, pred, masks) + loss_valid(target, pred, masks)

    errors = check_gradients(loss_fn, gen.params, eps=args.eps)
    rows = [
        {"param": name, "rel_error": err}
        for name, err in sorted(errors.items())
    ]
    worst = max(errors.values())
    report = MetricReport(summary={"max_rel_error": worst}, rows=rows)
    write_report_csv(out / "gradcheck_report.csv", report, id_field="param")
    print(f"max relative gradient error {worst:.3e} over {len(rows)} tensors")


# -- argument plumbing ----------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="speculens",
        description="Specular-highlight video inpainting and evaluation.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, **arguments):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="pipeline TOML")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--float64",
            action="store_true",
            help="run all tensor math in 64-bit",
        )
        for flag, kw in arguments.items():
            p.add_argument(f"--{flag.replace('_', '-')}", **kw)
        p.set_defaults(func=func)
        return p

    command("detect", cmd_detect, frames={"required": True})
    command(
        "pseudo-gt",
        cmd_pseudo_gt,
        frames={"required": True, "help": "root of per-video frame dirs"},
        masks={"required": True, "help": "root of per-video mask dirs"},
    )
    command("train", cmd_train, data={"required": True})
    command(
        "inpaint",
        cmd_inpaint,
        data={"required": True},
        checkpoint={"required": True},
        mask_source={"choices": ["orig", "trans"], "default": None},
        split={"choices": ["train", "test", "all"], "default": "test"},
    )
    command(
        "eval-psnr",
        cmd_eval_psnr,
        data={"required": True},
        checkpoint={"required": True},
        split={"choices": ["train", "test", "all"], "default": "test"},
    )
    command(
        "eval-pose",
        cmd_eval_pose,
        poses={"required": True},
        intrinsics={"required": True},
        corrs={"required": True, "help": "dir of pair_%06d.csv files"},
        corrs_inpainted={"default": None},
    )
    command(
        "eval-disparity",
        cmd_eval_disparity,
        gt={"required": True},
        est={"required": True},
        est_inpainted={"required": True},
        occlusion={"default": None},
        valid={"default": None},
        experiment={"default": "experiment"},
        modality={"default": "disparity"},
    )
    command("gradcheck", cmd_gradcheck, eps={"type": float, "default": 1e-5})
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if SEED_ENV in os.environ:
            try:
                cfg = replace(cfg, seed=int(os.environ[SEED_ENV]))
            except ValueError:
                raise ConfigError(
                    f"{SEED_ENV} must be an integer, got "
                    f"{os.environ[SEED_ENV]!r}"
                )
        out = _resolve_out(args.out)
        _write_run_info(out, args.command, cfg)
        if args.float64:
            with T.using_dtype(np.float64):
                args.func(cfg, args, out)
        else:
            args.func(cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, SpeculensError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
