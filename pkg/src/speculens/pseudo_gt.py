"""Pseudo-ground-truth construction by mask translation.

The trick: a detected specular mask is shifted onto clean texture and the
shifted copy becomes the training hole.  Every pixel under the shifted mask
has a known true value (it was specular-free), so the original frame is a
valid reconstruction target there.  Overlap with the original mask is
removed before dilation; dilation then covers the dark rims around
highlights and may touch the original mask again, which is accepted.
"""

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError
from .imaging import dilate, load_frames, load_masks, write_frame_png, write_mask_png


@dataclass
class VideoSample:
    """One clip with its detected and translated masks."""

    frames: list
    orig_masks: list
    trans_masks: list
    split: str = ""
    video_id: str = ""


@dataclass(frozen=True)
class RandomMaskConfig:
    strokes_per_frame: int = 2
    brush_width: int = 24
    max_step: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.strokes_per_frame < 1:
            raise ParameterError(
                f"strokes_per_frame must be >= 1, got {self.strokes_per_frame}"
            )
        if self.brush_width < 1:
            raise ParameterError(f"brush_width must be >= 1, got {self.brush_width}")
        if self.max_step < 0:
            raise ParameterError(f"max_step must be >= 0, got {self.max_step}")


def translate_and_clean(mask, offset):
    """Shift a mask by (dx, dy) and remove any overlap with the original.

    Pixels shifted off the image are dropped.  The result is disjoint from
    the input by construction, for every mask and offset.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-d, got rank {mask.ndim}")
    h, w = mask.shape
    dx, dy = int(offset[0]), int(offset[1])
    if abs(dx) >= w or abs(dy) >= h:
        raise ParameterError(
            f"offset ({dx}, {dy}) moves everything out of a {w}x{h} mask"
        )
    shifted = np.zeros_like(mask)
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    shifted[dst_y, dst_x] = mask[src_y, src_x]
    return np.where(mask > 0.5, 0.0, shifted).astype(mask.dtype)


def build_pseudo_gt(
    frames,
    orig_masks,
    offset=(32, 0),
    dilate_kernel=9,
    dilate_iterations=1,
    video_id="",
):
    """Assemble a VideoSample: trans mask = dilate(translate \\ orig).

    Warns when more than half the translated masks come out empty, which
    usually means the offset is too small for the highlight sizes at hand.
    """
    frames = list(frames)
    orig_masks = list(orig_masks)
    if len(frames) != len(orig_masks):
        raise DimensionError(
            f"{len(frames)} frames but {len(orig_masks)} masks"
        )
    trans = []
    n_empty = 0
    for m in orig_masks:
        t = translate_and_clean(m, offset)
        if not (t > 0.5).any():
            n_empty += 1
        trans.append(dilate(t, kernel=dilate_kernel, iterations=dilate_iterations))
    if frames and n_empty * 2 > len(frames):
        warnings.warn(
            f"{n_empty}/{len(frames)} translated masks are empty; "
            f"offset {tuple(offset)} may be too small",
            RuntimeWarning,
        )
    return VideoSample(
        frames=frames, orig_masks=orig_masks, trans_masks=trans, video_id=video_id
    )


def _stamp_segment(mask, p0, p1, radius):
    # All pixels within `radius` of the segment p0-p1.
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    d = p1 - p0
    seg_len2 = float(d @ d)
    if seg_len2 == 0.0:
        dist2 = (xx - p0[0]) ** 2 + (yy - p0[1]) ** 2
    else:
        t = ((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        dist2 = (xx - (p0[0] + t * d[0])) ** 2 + (yy - (p0[1] + t * d[1])) ** 2
    mask[dist2 <= radius * radius] = 1.0


def random_continuous_masks(n_frames, height, width, cfg):
    """Seeded stroke masks whose shapes drift slowly across frames.

    Each stroke is a polyline stamped with a round brush; between
    consecutive frames every control point moves by at most cfg.max_step
    pixels (Euclidean), so the hole is temporally continuous rather than
    independent noise per frame.
    """
    if n_frames < 1:
        raise ParameterError(f"need at least 1 frame, got {n_frames}")
    rng = np.random.default_rng(cfg.seed)
    strokes = []
    for _ in range(cfg.strokes_per_frame):
        n_pts = int(rng.integers(3, 6))
        pts = np.column_stack(
            [rng.uniform(0, width - 1, n_pts), rng.uniform(0, height - 1, n_pts)]
        )
        strokes.append(pts)
    radius = cfg.brush_width / 2.0
    masks = []
    for t in range(n_frames):
        if t > 0:
            for pts in strokes:
                angles = rng.uniform(0.0, 2.0 * np.pi, len(pts))
                steps = rng.uniform(0.0, cfg.max_step, len(pts))
                pts[:, 0] = np.clip(pts[:, 0] + steps * np.cos(angles), 0, width - 1)
                pts[:, 1] = np.clip(pts[:, 1] + steps * np.sin(angles), 0, height - 1)
        m = np.zeros((height, width), dtype=np.float64)
        for pts in strokes:
            for i in range(len(pts) - 1):
                _stamp_segment(m, pts[i], pts[i + 1], radius)
        masks.append(m)
    return masks


def split_dataset(videos, test_fraction, seed=0):
    """Deterministic train/test partition.

    ``test_fraction`` is the test:train ratio (a 0.087 split of 373 clips
    gives 30 test against 343 train, i.e. 30 is 8.7% of 343).  Each side
    keeps at least one video; original order is preserved within splits.
    """
    videos = list(videos)
    n = len(videos)
    if n < 2:
        raise ParameterError(f"need at least 2 videos to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n_test = int(round(n * test_fraction / (1.0 + test_fraction)))
    n_test = min(max(n_test, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train, test = [], []
    for i, v in enumerate(videos):
        side = test if i in test_idx else train
        side.append(v)
        if isinstance(v, VideoSample):
            v.split = "test" if i in test_idx else "train"
    return {"train": train, "test": test}


# -- disk layout ----------------------------------------------------------
#
#   <root>/<video_id>/frames/000000.png ...
#   <root>/<video_id>/masks_orig/000000.png ...
#   <root>/<video_id>/masks_trans/000000.png ...
#   <root>/manifest.json


def write_video_sample(root, sample):
    if not sample.video_id:
        raise ParameterError("sample needs a video_id to be written")
    base = Path(root) / sample.video_id
    for sub in ("frames", "masks_orig", "masks_trans"):
        (base / sub).mkdir(parents=True, exist_ok=True)
    for i, (f, mo, mt) in enumerate(
        zip(sample.frames, sample.orig_masks, sample.trans_masks)
    ):
        write_frame_png(base / "frames" / f"{i:06d}.png", f)
        write_mask_png(base / "masks_orig" / f"{i:06d}.png", mo)
        write_mask_png(base / "masks_trans" / f"{i:06d}.png", mt)


def read_video_sample(root, video_id):
    base = Path(root) / video_id
    return VideoSample(
        frames=load_frames(base / "frames"),
        orig_masks=load_masks(base / "masks_orig"),
        trans_masks=load_masks(base / "masks_trans"),
        video_id=video_id,
    )


def write_manifest(root, manifest):
    path = Path(root) / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(root):
    with open(Path(root) / "manifest.json", encoding="utf-8") as f:
        return json.load(f)
