"""Adversarial training loop, experiment presets, and checkpoint-driven
evaluation.

Presets encode the four experiments: S_R trains from scratch on random
stroke masks, S_C from scratch on translated specular masks, T_C continues
an S_R checkpoint on translated masks, and T_C_NT is T_C restricted to a
single input frame (no temporal context).  One discriminator step and one
generator step per iteration, constant learning rate.
"""

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_model_checkpoint, save_model_checkpoint
from .errors import ConfigError, TrainingDivergedError, UndefinedMetricError
from .metrics import MetricReport, masked_mse, masked_psnr
from .model import (
    Discriminator,
    Generator,
    LossWeights,
    ModelConfig,
    SamplingConfig,
    composite,
    loss_adv_generator,
    loss_discriminator,
    loss_hole,
    loss_valid,
    total_loss,
    window_indices,
)
from .pseudo_gt import RandomMaskConfig, random_continuous_masks

PRESETS = ("S_R", "S_C", "T_C", "T_C_NT")

LOG_COLUMNS = ("iteration", "L_hole", "L_valid", "L_adv", "L_D_real", "L_D_fake")


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "S_R"
    init_checkpoint: str = ""
    max_iterations: int = 200
    batch: int = 1
    clip_length: int = 8
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    eval_every: int = 100
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    model: ModelConfig = field(default_factory=ModelConfig)
    random_masks: RandomMaskConfig = field(default_factory=RandomMaskConfig)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset '{self.preset}', expected one of {PRESETS}"
            )
        if self.needs_init and not self.init_checkpoint:
            raise ConfigError(
                f"preset {self.preset} continues an S_R run and needs init_checkpoint"
            )
        if self.clip_length < 1:
            raise ConfigError(f"clip_length must be >= 1, got {self.clip_length}")
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")

    @property
    def needs_init(self):
        return self.preset in ("T_C", "T_C_NT")

    @property
    def mask_source(self):
        return "random" if self.preset == "S_R" else "trans"

    @property
    def single_frame_mode(self):
        return self.preset == "T_C_NT"

    @property
    def effective_sampling(self):
        # No-temporal preset also drops the neighbor radius.
        if self.preset == "T_C_NT":
            return replace(self.sampling, neighbor_radius=0)
        return self.sampling


def frames_to_batch(frames):
    """List of (H, W, 3) frames -> (K, 3, H, W)."""
    return np.stack([np.transpose(f, (2, 0, 1)) for f in frames])


def masks_to_batch(masks):
    """List of (H, W) masks -> (K, 1, H, W)."""
    return np.stack([m[None] for m in masks])


def sample_training_window(frames, masks, t_center, sampling, single_frame_mode=False):
    """Assemble the (X, M, Y) arrays for one window; Y is the clean target.

    t_center is 0-based within the clip; neighbors clamp at the ends and
    the union with the distant stride set is deduplicated.
    """
    idx = window_indices(len(frames), t_center, sampling, single_frame_mode)
    x = frames_to_batch([frames[i] for i in idx])
    m = masks_to_batch([masks[i] for i in idx])
    return idx, x, m, x


@dataclass
class TrainResult:
    log_path: Path
    checkpoints: list
    last_checkpoint: Path
    iterations: int


def _pick_clip(rng, video, clip_length):
    n = len(video.frames)
    length = min(clip_length, n)
    start = int(rng.integers(0, n - length + 1))
    return start, length


def train(config, videos, out_dir):
    """Run the adversarial loop; returns paths of the log and checkpoints.

    ``videos`` is a list of VideoSample with frames and (for the *_C
    presets) translated masks.  Aborts with the last good checkpoint on a
    non-finite loss.
    """
    if not videos:
        raise ConfigError("no training videos")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "ckpt"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.csv"

    rng = np.random.default_rng(config.seed)
    gen = Generator(config.model, rng=np.random.default_rng(config.seed + 1))
    disc = Discriminator(config.model, rng=np.random.default_rng(config.seed + 2))
    if config.needs_init:
        load_model_checkpoint(config.init_checkpoint, gen, disc)
    opt_g = T.Adam(gen.params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    opt_d = T.Adam(disc.params, lr=config.lr, beta1=config.beta1, beta2=config.beta2)

    sampling = config.effective_sampling
    checkpoints = []
    last_ckpt = None

    def write_checkpoint(step):
        path = ckpt_dir / f"iter_{step:08d}.bin"
        save_model_checkpoint(
            path, gen, disc, step, extra_config={"preset": config.preset}
        )
        checkpoints.append(path)
        return path

    def clip_masks(video, start, length):
        if config.mask_source == "trans":
            return video.trans_masks[start : start + length]
        h, w = video.frames[0].shape[:2]
        mask_cfg = replace(
            config.random_masks, seed=int(rng.integers(0, 2**63 - 1))
        )
        return random_continuous_masks(length, h, w, mask_cfg)

    with open(log_path, "w", encoding="utf-8", newline="") as log:
        log.write(",".join(LOG_COLUMNS) + "\n")
        for step in range(1, config.max_iterations + 1):
            batch_windows = []
            for _ in range(config.batch):
                video = videos[int(rng.integers(0, len(videos)))]
                start, length = _pick_clip(rng, video, config.clip_length)
                masks = clip_masks(video, start, length)
                frames = video.frames[start : start + length]
                t_center = int(rng.integers(0, length))
                _, x, m, y = sample_training_window(
                    frames, masks, t_center, sampling, config.single_frame_mode
                )
                batch_windows.append((x, m, y))

            # Generator forward once per clip; both steps reuse the graph.
            fakes = [gen.forward(x, m) for x, m, _ in batch_windows]

            opt_d.zero_grad()
            inv_b = 1.0 / config.batch
            d_real_terms = []
            d_fake_terms = []
            for (x, m, y), fake in zip(batch_windows, fakes):
                d_real = disc.forward(y)
                d_fake = disc.forward(fake.detach())
                d_real_terms.append(T.relu(1.0 - d_real).mean())
                d_fake_terms.append(T.relu(1.0 + d_fake).mean())
            l_d_real = sum(t * inv_b for t in d_real_terms)
            l_d_fake = sum(t * inv_b for t in d_fake_terms)
            (l_d_real + l_d_fake).backward()
            opt_d.step()

            opt_g.zero_grad()
            holes = []
            valids = []
            advs = []
            for (x, m, y), fake in zip(batch_windows, fakes):
                holes.append(loss_hole(y, fake, m))
                valids.append(loss_valid(y, fake, m))
                advs.append(loss_adv_generator(disc.forward(fake)))
            l_hole = sum(t * inv_b for t in holes)
            l_valid = sum(t * inv_b for t in valids)
            l_adv = sum(t * inv_b for t in advs)
            total_loss((l_hole, l_valid, l_adv), config.loss_weights).backward()
            opt_g.step()

            row = [
                float(step),
                l_hole.item(),
                l_valid.item(),
                l_adv.item(),
                l_d_real.item(),
                l_d_fake.item(),
            ]
            if not all(np.isfinite(v) for v in row):
                log.write(f"{step}," + ",".join(repr(v) for v in row[1:]) + "\n")
                raise TrainingDivergedError(
                    f"non-finite loss at iteration {step}",
                    last_checkpoint=last_ckpt,
                )
            log.write(f"{step}," + ",".join(repr(v) for v in row[1:]) + "\n")
            if step % config.eval_every == 0:
                last_ckpt = write_checkpoint(step)

    if last_ckpt is None or checkpoints[-1].name != f"iter_{config.max_iterations:08d}.bin":
        last_ckpt = write_checkpoint(config.max_iterations)
    return TrainResult(
        log_path=log_path,
        checkpoints=checkpoints,
        last_checkpoint=last_ckpt,
        iterations=config.max_iterations,
    )


def inpaint_video(gen, frames, masks, sampling, single_frame_mode=False):
    """Inpaint every frame via its own window; returns composited frames
    as (H, W, 3) arrays."""
    out = []
    for t in range(len(frames)):
        idx, x, m, _ = sample_training_window(
            frames, masks, t, sampling, single_frame_mode
        )
        pred = gen.forward(x, m).numpy()
        pos = idx.index(t)
        pred_frame = np.transpose(pred[pos], (1, 2, 0))
        comp = composite(
            frames[t][None], masks[t][None, ..., None], pred_frame[None]
        )[0]
        out.append(comp)
    return out


def evaluate_checkpoint(
    generator, test_videos, sampling=SamplingConfig(), single_frame_mode=False,
    mask_attr="trans_masks",
):
    """Masked PSNR/MSE with the two-level average: frames within a video
    first, then an unweighted mean across videos.

    Frames whose mask is empty are skipped; a video with no usable frame
    is skipped with a warning.
    """
    if not test_videos:
        raise UndefinedMetricError("no test videos to evaluate")
    rows = []
    total_frames = 0
    for vi, video in enumerate(test_videos):
        masks = getattr(video, mask_attr)
        psnrs, mses = [], []
        for t, (frame, mask) in enumerate(zip(video.frames, masks)):
            if mask.sum() == 0:
                continue
            idx, x, m, _ = sample_training_window(
                video.frames, masks, t, sampling, single_frame_mode
            )
            pred = gen_forward_frame(generator, x, m, idx.index(t))
            comp = mask[..., None] * pred + (1.0 - mask[..., None]) * frame
            mses.append(masked_mse(frame, comp, mask))
            psnrs.append(masked_psnr(frame, comp, mask))
        vid_id = video.video_id or f"video{vi}"
        if not psnrs:
            warnings.warn(
                f"video '{vid_id}' has no frames with nonempty masks; skipped",
                RuntimeWarning,
            )
            continue
        rows.append(
            {
                "id": vid_id,
                "psnr": float(np.mean(psnrs)),
                "mse": float(np.mean(mses)),
                "frames": len(psnrs),
            }
        )
        total_frames += len(psnrs)
    if not rows:
        raise UndefinedMetricError("every test video had empty masks")
    return MetricReport(
        summary={
            "psnr_mean": float(np.mean([r["psnr"] for r in rows])),
            "mse_mean": float(np.mean([r["mse"] for r in rows])),
        },
        counts={"videos": len(rows), "frames": total_frames},
        rows=rows,
    )


def gen_forward_frame(generator, x, m, pos):
    pred = generator.forward(x, m).numpy()
    return np.transpose(pred[pos], (1, 2, 0))
