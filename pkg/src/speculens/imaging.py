"""Frame/mask I/O, center-crop-and-resize, and binary morphology.

Frames travel through the pipeline as float64 (H, W, 3) arrays in [0, 1],
masks as float64 (H, W) arrays in {0, 1} with 1 marking a specular (or
otherwise occluded) pixel.  On disk frames are 8-bit RGB PNG/PPM and masks
8-bit grayscale PNG with values {0, 255}.
"""

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError, ParameterError

IMAGE_SUFFIXES = (".png", ".ppm")


def load_frame(path):
    """Read one image as float64 RGB in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read image '{path}': {exc}") from exc
    return arr.astype(np.float64) / 255.0


def load_mask(path):
    """Read one grayscale mask; any value >= 128 counts as masked."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise OSError(f"cannot read mask '{path}': {exc}") from exc
    return (arr >= 128).astype(np.float64)


def _listed(dir_path):
    d = Path(dir_path)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: '{d}'")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_frames(dir_path):
    """All PNG/PPM frames in a directory, lexicographic order.

    An empty directory gives an empty list; frames of unequal size are a
    dimension error (the pipeline assumes one geometry per clip).
    """
    frames = []
    for p in _listed(dir_path):
        f = load_frame(p)
        if frames and f.shape != frames[0].shape:
            raise DimensionError(
                f"frame '{p.name}' is {f.shape[1]}x{f.shape[0]}, expected "
                f"{frames[0].shape[1]}x{frames[0].shape[0]} like the first frame"
            )
        frames.append(f)
    return frames


def load_masks(dir_path):
    masks = []
    for p in _listed(dir_path):
        m = load_mask(p)
        if masks and m.shape != masks[0].shape:
            raise DimensionError(
                f"mask '{p.name}' is {m.shape[1]}x{m.shape[0]}, expected "
                f"{masks[0].shape[1]}x{masks[0].shape[0]} like the first mask"
            )
        masks.append(m)
    return masks


def resize_bilinear(img, out_h, out_w):
    """Bilinear resample with half-pixel-centered sampling and edge clamp.

    Interpolation is written in lerp form (a + f*(b-a)) so constant images
    and identity resizes come back bit-exact.
    """
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise DimensionError("cannot resize an empty image")

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(src).astype(np.int64)
        frac = src - lo
        lo = np.clip(lo, 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    if img.ndim == 3:
        fx = fx[None, :, None]
        fy = fy[:, None, None]
    else:
        fx = fx[None, :]
        fy = fy[:, None]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a + fx * (b - a)
    bot = c + fx * (d - c)
    return top + fy * (bot - top)


def square_crop_resize(frame, out=288):
    """Center-crop to the largest square, then bilinear resize to out×out."""
    h, w = frame.shape[:2]
    if h < 1 or w < 1:
        raise DimensionError("cannot crop an empty frame")
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    crop = frame[top : top + side, left : left + side]
    if side == out:
        return crop.copy()
    return resize_bilinear(crop, out, out)


def ellipse_kernel(ksize):
    """Disk structuring element inscribed in a ksize×ksize box.

    Even sizes have no center pixel, so they are promoted to the next odd
    size (8 -> 9).  The boundary is inclusive: dx² + dy² <= r² with
    r = (ksize-1)/2.
    """
    if ksize < 1:
        raise ParameterError(f"kernel size must be >= 1, got {ksize}")
    if ksize % 2 == 0:
        ksize += 1
    r = ksize // 2
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def dilate(mask, kernel=9, iterations=1):
    """Binary dilation, `iterations` times.

    ``kernel`` is either an odd size for the default disk element or an
    explicit 2-d boolean array.  iterations=0 is the identity.
    """
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}")
    if np.ndim(mask) != 2:
        raise DimensionError(f"mask must be 2-d, got rank {np.ndim(mask)}")
    if isinstance(kernel, (int, np.integer)):
        kernel = ellipse_kernel(int(kernel))
    else:
        kernel = np.asarray(kernel, dtype=bool)
        if kernel.ndim != 2:
            raise DimensionError(f"kernel must be 2-d, got rank {kernel.ndim}")
    mask = np.asarray(mask)
    if iterations == 0:
        return mask.copy()
    out = ndimage.binary_dilation(mask > 0.5, structure=kernel, iterations=iterations)
    return out.astype(mask.dtype)


def _quantize(frame):
    # Round half up: 0.5 -> 128.
    return np.clip(np.floor(frame * 255.0 + 0.5), 0, 255).astype(np.uint8)


def write_frame_png(path, frame):
    """Write a [0,1] RGB frame as 8-bit PNG, rounding half-up."""
    if np.ndim(frame) != 3 or frame.shape[2] != 3:
        raise DimensionError(f"frame must be (H, W, 3), got {np.shape(frame)}")
    try:
        Image.fromarray(_quantize(np.asarray(frame)), "RGB").save(path)
    except OSError as exc:
        raise OSError(f"cannot write frame '{path}': {exc}") from exc


def write_frame_ppm(path, frame):
    """Same quantization as the PNG writer, binary P6 container."""
    if np.ndim(frame) != 3 or frame.shape[2] != 3:
        raise DimensionError(f"frame must be (H, W, 3), got {np.shape(frame)}")
    arr = _quantize(np.asarray(frame))
    h, w = arr.shape[:2]
    try:
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(arr.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write frame '{path}': {exc}") from exc


def write_mask_png(path, mask):
    """Write a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    if np.ndim(mask) != 2:
        raise DimensionError(f"mask must be 2-d, got rank {np.ndim(mask)}")
    arr = np.where(np.asarray(mask) > 0.5, 255, 0).astype(np.uint8)
    try:
        Image.fromarray(arr, "L").save(path)
    except OSError as exc:
        raise OSError(f"cannot write mask '{path}': {exc}") from exc
