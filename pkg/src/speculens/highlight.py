"""Specular-highlight segmentation from chromatic cues.

Two rules, OR-ed: a pixel is specular if it is saturated in every channel,
or if its intensity stands well above the local median while its channels
stay nearly balanced (the achromatic excess a specular lobe adds on top of
body reflection).  Tiny connected components are discarded because they
destabilize the mask-translation step downstream.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ParameterError

# |R-G|+|G-B|+|B-R| must stay below this fraction of 3*I to count as
# achromatic.
BALANCE_FRACTION = 0.15


@dataclass(frozen=True)
class DetectorConfig:
    saturation_threshold: float = 0.95
    chroma_ratio_threshold: float = 1.35
    local_window: int = 31
    min_component_area: int = 4

    def __post_init__(self):
        if self.saturation_threshold <= 0.0:
            raise ParameterError(
                f"saturation_threshold must be > 0, got {self.saturation_threshold}"
            )
        if self.chroma_ratio_threshold <= 0.0:
            raise ParameterError(
                f"chroma_ratio_threshold must be > 0, got {self.chroma_ratio_threshold}"
            )
        if self.local_window < 1 or self.local_window % 2 == 0:
            raise ParameterError(
                f"local_window must be a positive odd size, got {self.local_window}"
            )
        if self.min_component_area < 0:
            raise ParameterError(
                f"min_component_area must be >= 0, got {self.min_component_area}"
            )


def detect_specular(frame, cfg=DetectorConfig()):
    """Segment specular pixels of one [0,1] RGB frame.

    Returns a float64 {0,1} mask.  Deterministic: same frame and config
    give a bit-identical mask.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DimensionError(f"frame must be (H, W, 3), got {frame.shape}")

    saturated = frame.min(axis=2) >= cfg.saturation_threshold

    intensity = frame.mean(axis=2)
    local_median = ndimage.median_filter(
        intensity, size=cfg.local_window, mode="reflect"
    )
    excess = intensity > cfg.chroma_ratio_threshold * local_median
    r, g, b = frame[..., 0], frame[..., 1], frame[..., 2]
    imbalance = np.abs(r - g) + np.abs(g - b) + np.abs(b - r)
    achromatic = imbalance < BALANCE_FRACTION * 3.0 * intensity

    mask = saturated | (excess & achromatic)
    mask = _drop_small_components(mask, cfg.min_component_area)
    return mask.astype(np.float64)


def _drop_small_components(mask, min_area):
    if min_area <= 1 or not mask.any():
        return mask
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return mask
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def detect_sequence(frames, cfg=DetectorConfig()):
    """Per-frame detection; stateless, so a constant clip gives constant
    masks."""
    frames = list(frames)
    if not frames:
        raise ParameterError("detect_sequence needs at least one frame")
    return [detect_specular(f, cfg) for f in frames]
