"""Scaled-down end-to-end checks of the package's core behaviors.

Each test covers one headline property, prints a single summary line with
the measured numbers, and fails loudly if the property does not hold.
Everything here is seeded; reruns print identical numbers.
"""

import json
import time
import warnings

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from test_model import attention_oracle, random_head

from speculens import cli
from speculens import geometry as G
from speculens import metrics as mx
from speculens import model as M
from speculens import tensor as T
from speculens.checkpoint import load_model_checkpoint
from speculens.gradcheck import check_gradients
from speculens.imaging import write_frame_png, write_mask_png
from speculens.highlight import DetectorConfig, detect_specular
from speculens.model import (
    Generator,
    LossWeights,
    ModelConfig,
    SamplingConfig,
    loss_adv_generator,
    loss_hole,
    loss_valid,
    total_loss,
)
from speculens.pseudo_gt import VideoSample, build_pseudo_gt, translate_and_clean
from speculens.trainer import (
    TrainConfig,
    evaluate_checkpoint,
    frames_to_batch,
    masks_to_batch,
    train,
)


def _line(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def block_texture(rng, size=24, cell=4):
    """Piecewise-constant random texture; content survives the 4x encoder
    downsampling, so holes are recoverable from other frames exactly."""
    g = size // cell
    return np.kron(rng.random((g, g, 3)), np.ones((cell, cell, 1)))


SMALL = ModelConfig(
    frame_size=24, enc_widths=(6, 8), channels=8, layers=1,
    heads=((3, 3), (1, 1)), disc_widths=(4, 6),
)


# -- attention ------------------------------------------------------------


def test_attention_matches_oracle_on_500_instances():
    rng = np.random.default_rng(501)
    t0 = time.perf_counter()
    worst_out = 0.0
    worst_row = 0.0
    with T.using_dtype(np.float64):
        for _ in range(500):
            k = int(rng.integers(1, 4))
            c = int(rng.choice([2, 4]))
            hf = int(rng.choice([2, 4]))
            wf = int(rng.choice([2, 4]))
            r1 = int(rng.choice([d for d in (1, 2, 4) if hf % d == 0]))
            r2 = int(rng.choice([d for d in (1, 2, 4) if wf % d == 0]))
            valid = (rng.random((k, hf, wf)) > 0.4).astype(np.float64)
            if not valid.any():
                valid[0, 0, 0] = 1.0
            feats = rng.standard_normal((k, c, hf, wf))
            weights = random_head(rng, c)
            got, alpha = M.head_attention(
                T.Tensor(feats), valid, r1, r2,
                *(T.Tensor(w) for w in weights), return_weights=True
            )
            want, _ = attention_oracle(feats, valid, r1, r2, *weights)
            worst_out = max(worst_out, float(np.max(np.abs(got.numpy() - want))))
            a = alpha.numpy()
            worst_row = max(worst_row, float(np.max(np.abs(a.sum(axis=1) - 1.0))))
            ok_cols = M.patch_validity(valid, r1, r2)
            assert np.all(a[:, ~ok_cols.astype(bool)] == 0.0)
    dt = time.perf_counter() - t0
    _line(
        "attention correctness",
        worst_out < 1e-10 and worst_row < 1e-6 and dt < 60.0,
        f"max |impl-oracle| {worst_out:.2e} (tol 1e-10), "
        f"max |row sum - 1| {worst_row:.2e} (tol 1e-6), "
        f"masked columns exactly zero, {dt:.1f}s (< 60s)",
    )


# -- gradients ------------------------------------------------------------


def test_generator_gradients_match_finite_differences():
    t0 = time.perf_counter()
    with T.using_dtype(np.float64):
        rng = np.random.default_rng(9)
        micro = ModelConfig(
            frame_size=12, enc_widths=(3, 4), channels=4, layers=1,
            heads=((3, 3), (1, 1)), disc_widths=(3, 4),
        )
        gen = Generator(micro, rng=np.random.default_rng(10))
        frames = frames_to_batch([rng.random((12, 12, 3)) for _ in range(2)])
        mask = np.zeros((12, 12))
        mask[3:7, 3:7] = 1.0
        masks = masks_to_batch([mask, np.roll(mask, 4, axis=1)])
        target = T.as_tensor(frames)

        def loss_fn():
            pred = gen.forward(frames, masks)
            return loss_hole(target, pred, masks) + loss_valid(target, pred, masks)

        errors = check_gradients(loss_fn, gen.params, eps=1e-5)
    worst = max(errors.values())
    dt = time.perf_counter() - t0
    _line(
        "gradient fidelity",
        worst < 1e-4 and dt < 300.0,
        f"max relative error {worst:.2e} over {len(errors)} parameter "
        f"tensors (tol 1e-4), {dt:.1f}s (< 300s)",
    )


# -- losses ---------------------------------------------------------------


def test_loss_identities():
    with T.using_dtype(np.float64):
        rng = np.random.default_rng(2)
        y = rng.random((2, 3, 8, 8))
        m = np.zeros((2, 1, 8, 8))
        m[:, :, 2:6, 2:6] = 1.0
        y_t = T.as_tensor(y)
        same_hole = loss_hole(y_t, T.as_tensor(y.copy()), m).item()
        same_valid = loss_valid(y_t, T.as_tensor(y.copy()), m).item()

        pred = T.as_tensor(y + 0.2 * m - 0.05 * (1.0 - m))
        lh = loss_hole(y_t, pred, m)
        lv = loss_valid(y_t, pred, m)
        la = loss_adv_generator(T.as_tensor(np.full((2, 1, 3, 3), -0.3)))
        total = total_loss((lh, lv, la), LossWeights()).item()
    # constant errors of 0.2 / 0.05 plus a -0.3 critic score, combined
    # with weights (1, 1, 0.01): 0.2 + 0.05 + 0.01*0.3
    err = abs(total - 0.253)
    _line(
        "loss identities",
        same_hole == 0.0 and same_valid == 0.0 and err < 1e-12,
        f"identical frames give hole {same_hole} and valid {same_valid} "
        f"(exact), weighted total off by {err:.1e} (tol 1e-12)",
    )


# -- pseudo ground truth --------------------------------------------------


def test_translated_masks_stay_disjoint():
    rng = np.random.default_rng(14)
    offset = (10, 0)
    cfg = DetectorConfig()
    violating = 0
    checked = 0
    nonempty = 0
    for _ in range(3):
        frames = []
        masks = []
        for _ in range(4):
            frame = np.full((48, 48, 3), 0.35)
            frame += rng.normal(0.0, 0.03, frame.shape)
            # a few saturated blobs, some wider than the offset
            for _ in range(int(rng.integers(1, 4))):
                cy, cx = rng.integers(8, 40, 2)
                r = int(rng.integers(3, 7))
                yy, xx = np.ogrid[:48, :48]
                frame[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 1.0
            frame = np.clip(frame, 0.0, 1.0)
            frames.append(frame)
            masks.append(detect_specular(frame, cfg))
        sample = build_pseudo_gt(frames, masks, offset=offset, dilate_kernel=5)
        for orig in sample.orig_masks:
            pre = translate_and_clean(orig, offset)
            violating += int(np.sum((pre > 0.5) & (orig > 0.5)))
            checked += 1
            nonempty += int((pre > 0.5).any())
    _line(
        "pseudo-GT soundness",
        violating == 0 and nonempty > 0,
        f"{violating} overlapping pixels across {checked} pre-dilation "
        f"translated masks ({nonempty} non-empty)",
    )


# -- temporal ablation ----------------------------------------------------


def test_temporal_window_recovers_occluded_frame(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(123)
    tex = block_texture(rng)
    video = VideoSample(
        frames=[tex.copy(), tex.copy()],
        orig_masks=[np.ones((24, 24)), np.zeros((24, 24))],
        trans_masks=[np.ones((24, 24)), np.zeros((24, 24))],
        video_id="occluded",
    )
    sampling = SamplingConfig(neighbor_radius=1, distant_stride=4)
    tc = TrainConfig(
        preset="S_C", max_iterations=400, clip_length=2, sampling=sampling,
        seed=11, eval_every=400, lr=2e-3, model=SMALL,
    )
    result = train(tc, [video], tmp_path)
    gen = Generator(SMALL)
    load_model_checkpoint(result.last_checkpoint, gen)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        multi = evaluate_checkpoint(gen, [video], sampling)
        single = evaluate_checkpoint(
            gen, [video], sampling, single_frame_mode=True
        )
    gap = multi.summary["psnr_mean"] - single.summary["psnr_mean"]
    dt = time.perf_counter() - t0
    _line(
        "temporal-recovery ablation",
        gap >= 3.0 and dt < 1200.0,
        f"multi-frame {multi.summary['psnr_mean']:.2f} dB vs single-frame "
        f"{single.summary['psnr_mean']:.2f} dB, gap {gap:.2f} dB (>= 3), "
        f"{dt:.0f}s (< 1200s)",
    )


# -- toy overfit ----------------------------------------------------------


def test_toy_clip_overfit(tmp_path):
    rng = np.random.default_rng(7)
    tex = block_texture(rng)
    positions = [(4, 4), (12, 12), (4, 12), (12, 4),
                 (8, 8), (4, 8), (12, 8), (8, 4)]
    masks = []
    for r, c in positions:
        m = np.zeros((24, 24))
        m[r:r + 8, c:c + 8] = 1.0
        masks.append(m)
    video = VideoSample(
        frames=[tex.copy() for _ in range(8)],
        orig_masks=masks, trans_masks=masks, video_id="toy",
    )
    sampling = SamplingConfig(neighbor_radius=2, distant_stride=4)
    tc = TrainConfig(
        preset="S_C", max_iterations=1000, clip_length=8, sampling=sampling,
        seed=3, eval_every=1000, lr=2e-3, model=SMALL,
    )
    result = train(tc, [video], tmp_path)
    gen = Generator(SMALL)
    load_model_checkpoint(result.last_checkpoint, gen)
    report = evaluate_checkpoint(gen, [video], sampling)
    psnr = report.summary["psnr_mean"]

    hole = np.loadtxt(result.log_path, delimiter=",", skiprows=1, usecols=1)
    windows = hole.reshape(-1, 50).mean(axis=1)
    decreasing = bool(np.all(np.diff(windows) < 0))
    _line(
        "toy overfit",
        psnr >= 25.0 and decreasing,
        f"masked PSNR {psnr:.2f} dB after {tc.max_iterations} iterations "
        f"(>= 25), {len(windows)} window-50 hole-loss means strictly "
        f"decreasing: {decreasing}",
    )


# -- relative pose --------------------------------------------------------

POSE_INTR = G.CameraIntrinsics(fx=1200.0, fy=1200.0, cx=640.0, cy=480.0)


def _pose_scene(rng, n, max_degrees=10.0):
    angle = np.radians(rng.uniform(0.0, max_degrees))
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    r = Rotation.from_rotvec(angle * axis).as_matrix()
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    pts = rng.uniform([-1.5, -1.1, 3.0], [1.5, 1.1, 6.0], size=(n, 3))
    x1 = pts[:, :2] / pts[:, 2:]
    in2 = pts @ r.T + t
    x2 = in2[:, :2] / in2[:, 2:]
    return r, t, x1, x2


def test_relative_pose_solver():
    t0 = time.perf_counter()

    rng = np.random.default_rng(20)
    worst_e = worst_rre = worst_rte = 0.0
    for _ in range(100):
        r, t, x1, x2 = _pose_scene(rng, 5, max_degrees=12.0)
        e_true = G.essential_from_pose(r, t)
        e_true /= np.linalg.norm(e_true)
        best = None
        for e in G.five_point_essential(x1, x2):
            en = e / np.linalg.norm(e)
            d = min(np.linalg.norm(en - e_true), np.linalg.norm(en + e_true))
            if best is None or d < best[0]:
                best = (d, e)
        worst_e = max(worst_e, best[0])
        pose = G.recover_pose(best[1], x1, x2)
        worst_rre = max(worst_rre, G.rre(pose.rotation, r))
        worst_rte = max(worst_rte, G.rte(pose.translation, t))

    rng = np.random.default_rng(20)
    rres, rtes = [], []
    for k in range(25):
        r, t, x1, x2 = _pose_scene(rng, 300)
        p1 = x1 * 1200.0 + [640.0, 480.0] + rng.normal(0.0, 0.25, x1.shape)
        p2 = x2 * 1200.0 + [640.0, 480.0] + rng.normal(0.0, 0.25, x2.shape)
        out = rng.choice(300, size=60, replace=False)
        p2[out] = rng.uniform([0.0, 0.0], [1280.0, 960.0], (60, 2))
        corrs = [G.Correspondence(*a, *b) for a, b in zip(p1, p2)]
        cfg = G.RansacConfig(
            threshold=1e-3, seed=G.pair_seed(20, k), refit=True
        )
        e, inliers = G.ransac_essential(corrs, POSE_INTR, cfg)
        a1, a2 = G.corrs_to_arrays([corrs[i] for i in inliers])
        n1 = (a1 - [640.0, 480.0]) / 1200.0
        n2 = (a2 - [640.0, 480.0]) / 1200.0
        pose = G.recover_pose(e, n1, n2)
        rres.append(G.rre(pose.rotation, r))
        rtes.append(G.rte(pose.translation, t))
    med_rre = float(np.median(rres))
    med_rte = float(np.median(rtes))
    dt = time.perf_counter() - t0
    _line(
        "five-point solver",
        worst_e < 1e-6 and worst_rre < 1e-4 and worst_rte < 1e-4
        and med_rre < 0.1 and med_rte < 0.5 and dt < 120.0,
        f"noiseless worst: E {worst_e:.2e} (tol 1e-6), RRE {worst_rre:.2e}, "
        f"RTE {worst_rte:.2e} deg (tol 1e-4); noisy 0.25px/20% outliers "
        f"medians: RRE {med_rre:.4f} (< 0.1), RTE {med_rte:.4f} deg (< 0.5); "
        f"{dt:.1f}s (< 120s)",
    )


# -- metric arithmetic ----------------------------------------------------


def test_metric_arithmetic():
    y = np.zeros((4, 4, 3))
    y_hat = np.full((4, 4, 3), 16.0 / 255.0)
    m = np.ones((4, 4))
    mse = mx.masked_mse(y, y_hat, m)
    psnr_a = mx.psnr_from_mse(256.0)
    psnr_b = mx.psnr_from_mse(104.719)

    pair = mx.DisparityPair(
        est=np.array([[0.0, 2.0], [4.0, 6.0]]),
        gt=np.zeros((2, 2)),
    )
    d = mx.disparity_errors(pair)

    ds = mx.delta_summary([2.0, 4.0, 6.0, 8.0], [1.0, 3.0, 5.0, 7.0])
    zero = mx.delta_summary([1.0, 2.0], [1.0, 2.0])
    zeros_ok = all(
        zero[k] == 0.0 for k in ("mean_delta", "min_delta", "max_delta",
                                 "median_delta", "iqr_delta")
    )

    pairs = G.select_pairs(735, 20)
    ok = (
        mse == 256.0
        and psnr_a == 24.04840395556061
        and psnr_b == 27.930548745421277
        and d["epe"] == 3.0
        and d["rms"] == np.sqrt(14.0)
        and d["bad3"] == 0.5
        and ds["mean_delta"] == 1.0
        and ds["median_delta"] == 1.0
        and ds["iqr_delta"] == 0.0
        and ds["mean_delta_percent"] == 20.0
        and zeros_ok
        and len(pairs) == 715
    )
    _line(
        "metric arithmetic",
        ok,
        f"MSE {mse}, PSNR(256) {psnr_a}, PSNR(104.719) {psnr_b}, "
        f"EPE {d['epe']} RMS {d['rms']:.6f} bad3 {d['bad3']}, "
        f"delta mean {ds['mean_delta']} ({ds['mean_delta_percent']}%), "
        f"{len(pairs)} pairs from 735 frames (all exact)",
    )


# -- determinism ----------------------------------------------------------

PIPELINE_CONFIG = """\
seed = 7

[pseudo_gt]
offset = [6, 0]
dilate_kernel = 3
split_fraction = 0.5
brush_width = 4
max_step = 2.0

[model]
frame_size = 24
enc_widths = [4, 6]
channels = 4
layers = 1
heads = [[3, 3], [1, 1]]
disc_widths = [3, 4]

[train]
preset = "S_C"
max_iterations = 4
clip_length = 3
eval_every = 4
lr = 1e-3
neighbor_radius = 1
distant_stride = 2

[eval]
neighbor_radius = 1
distant_stride = 2

[geometry]
threshold = 2e-3
refit = false
pair_window = 2
"""


def _cli(args):
    assert cli.main([str(a) for a in args]) == 0


def _write_pose_bench(d):
    corrs = d / "corrs"
    corrs.mkdir(parents=True)
    rng = np.random.default_rng(11)
    mats = []
    for k in range(4):
        m = np.eye(4)
        m[:3, :3] = Rotation.from_rotvec(
            0.05 * k * np.array([0.3, 1.0, 0.2])
        ).as_matrix()
        m[:3, 3] = [0.4 * k, 0.1 * k, 0.05 * k]
        mats.append(m)
    with open(d / "poses.txt", "w") as fh:
        for m in mats:
            fh.write(" ".join(repr(float(v)) for v in m.reshape(-1)) + "\n")
    (d / "intrinsics.txt").write_text("500.0 500.0 320.0 240.0\n")
    points = rng.uniform([-1.0, -1.0, 4.0], [1.0, 1.0, 8.0], (80, 3))
    for idx, (i, j) in enumerate(G.select_pairs(4, 2)):
        with open(corrs / f"pair_{idx:06d}.csv", "w") as fh:
            fh.write("x1,y1,x2,y2\n")
            for pt in points:
                row = []
                for m in (mats[i], mats[j]):
                    x = m[:3, :3].T @ (pt - m[:3, 3])
                    row += [float(500.0 * x[0] / x[2] + 320.0),
                            float(500.0 * x[1] / x[2] + 240.0)]
                fh.write(",".join(repr(v) for v in row) + "\n")


def _run_toy_pipeline(root, tag):
    out = root / tag
    cfg = root / "config.toml"
    _cli(["pseudo-gt", "--config", cfg, "--out", out / "dataset", "--float64",
          "--frames", root / "raw_frames", "--masks", root / "raw_masks"])
    _cli(["train", "--config", cfg, "--out", out / "train", "--float64",
          "--data", out / "dataset"])
    _cli(["eval-psnr", "--config", cfg, "--out", out / "psnr", "--float64",
          "--data", out / "dataset",
          "--checkpoint", out / "train" / "ckpt" / "iter_00000004.bin"])
    _cli(["eval-pose", "--config", cfg, "--out", out / "pose", "--float64",
          "--poses", root / "bench" / "poses.txt",
          "--intrinsics", root / "bench" / "intrinsics.txt",
          "--corrs", root / "bench" / "corrs"])
    return {
        "manifest.json": out / "dataset" / "manifest.json",
        "loss_log.csv": out / "train" / "loss_log.csv",
        "psnr_report.csv": out / "psnr" / "psnr_report.csv",
        "pose_report.csv": out / "pose" / "pose_report.csv",
    }


def test_pipeline_rerun_bit_identical(tmp_path):
    (tmp_path / "config.toml").write_text(PIPELINE_CONFIG)
    rng = np.random.default_rng(3)
    for vid in ("vid_a", "vid_b"):
        fdir = tmp_path / "raw_frames" / vid
        mdir = tmp_path / "raw_masks" / vid
        fdir.mkdir(parents=True)
        mdir.mkdir(parents=True)
        base = block_texture(rng)
        for i in range(3):
            write_frame_png(fdir / f"{i:06d}.png",
                            np.clip(base + 0.02 * i, 0.0, 1.0))
            mask = np.zeros((24, 24))
            mask[10:14, 4:8] = 1.0
            write_mask_png(mdir / f"{i:06d}.png", mask)
    _write_pose_bench(tmp_path / "bench")

    first = _run_toy_pipeline(tmp_path, "run1")
    second = _run_toy_pipeline(tmp_path, "run2")
    differing = [
        name for name in first
        if first[name].read_bytes() != second[name].read_bytes()
    ]
    _line(
        "determinism",
        not differing,
        f"{len(first)} pipeline outputs byte-identical across reruns"
        + (f"; differing: {differing}" if differing else ""),
    )
