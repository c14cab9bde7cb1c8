"""Masked fidelity metrics, disparity error metrics, delta summaries.

All image metrics work on the 8-bit scale (differences multiplied by 255)
so magnitudes line up with the usual PSNR/MSE reporting for uint8 imagery.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ParameterError, UndefinedMetricError

PSNR_CAP_DB = 100.0


@dataclass
class MetricReport:
    """Named scalar metrics plus the per-item rows they aggregate."""

    summary: dict
    counts: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)


def _check_pair(y, y_hat, mask):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise DimensionError(f"frame shapes differ: {y.shape} vs {y_hat.shape}")
    if mask.shape != y.shape[:2]:
        raise DimensionError(
            f"mask shape {mask.shape} does not match frame spatial size {y.shape[:2]}"
        )
    return y, y_hat, mask


def masked_mse(y, y_hat, mask):
    """Mean squared 8-bit-scale error over masked pixels, all channels.

    Frames are (H, W, 3) in [0,1], mask is (H, W) in {0,1}.  An empty mask
    has no defined value and raises.
    """
    y, y_hat, mask = _check_pair(y, y_hat, mask)
    n = mask.sum()
    if n == 0:
        raise UndefinedMetricError("masked_mse: mask selects no pixels")
    diff = (y - y_hat) * 255.0
    return float((diff * diff * mask[..., None]).sum() / (n * y.shape[-1]))


def psnr_from_mse(mse):
    """10·log10(255²/MSE), capped at 100 dB (zero error included)."""
    if mse < 0:
        raise ParameterError(f"MSE cannot be negative, got {mse}")
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(255.0**2 / mse), PSNR_CAP_DB))


def masked_psnr(y, y_hat, mask):
    return psnr_from_mse(masked_mse(y, y_hat, mask))


@dataclass
class DisparityPair:
    """Estimated vs ground-truth disparity with validity/occlusion masks."""

    est: np.ndarray
    gt: np.ndarray
    valid: np.ndarray = None
    occluded: np.ndarray = None

    def __post_init__(self):
        self.est = np.asarray(self.est, dtype=np.float64)
        self.gt = np.asarray(self.gt, dtype=np.float64)
        if self.est.shape != self.gt.shape:
            raise DimensionError(
                f"disparity shapes differ: {self.est.shape} vs {self.gt.shape}"
            )
        self.valid = (
            np.ones(self.est.shape, dtype=bool)
            if self.valid is None
            else np.asarray(self.valid) > 0.5
        )
        self.occluded = (
            np.zeros(self.est.shape, dtype=bool)
            if self.occluded is None
            else np.asarray(self.occluded) > 0.5
        )
        for name, m in (("valid", self.valid), ("occluded", self.occluded)):
            if m.shape != self.est.shape:
                raise DimensionError(
                    f"{name} mask shape {m.shape} does not match {self.est.shape}"
                )


def disparity_errors(pair, include_occluded=True):
    """EPE / RMS / bad3 over evaluable pixels.

    Evaluable = valid, and not occluded unless include_occluded.  bad3 is
    the fraction with absolute error strictly above 3 px.
    """
    use = pair.valid if include_occluded else (pair.valid & ~pair.occluded)
    if not use.any():
        raise UndefinedMetricError("disparity_errors: no evaluable pixels")
    d = pair.est[use] - pair.gt[use]
    return {
        "epe": float(np.abs(d).mean()),
        "rms": float(np.sqrt((d * d).mean())),
        "bad3": float((np.abs(d) > 3.0).mean()),
    }


def delta_summary(values_orig, values_inp):
    """Paired before/after statistics, delta = orig − inp.

    Positive deltas mean the second series improved on the first.
    Percentiles use linear interpolation.  mean_delta_percent is omitted
    when mean_orig is zero.
    """
    orig = np.asarray(values_orig, dtype=np.float64)
    inp = np.asarray(values_inp, dtype=np.float64)
    if orig.size == 0:
        raise ParameterError("delta_summary: empty input")
    if orig.shape != inp.shape:
        raise DimensionError(
            f"paired lists differ in length: {orig.shape} vs {inp.shape}"
        )
    d = orig - inp
    p25, p50, p75 = np.percentile(d, [25, 50, 75])
    out = {
        "mean_orig": float(orig.mean()),
        "mean_inp": float(inp.mean()),
        "mean_delta": float(d.mean()),
        "min_delta": float(d.min()),
        "max_delta": float(d.max()),
        "p25_delta": float(p25),
        "median_delta": float(p50),
        "p75_delta": float(p75),
        "iqr_delta": float(p75 - p25),
    }
    if out["mean_orig"] != 0.0:
        out["mean_delta_percent"] = 100.0 * out["mean_delta"] / out["mean_orig"]
    return out


def write_report_csv(path, report, id_field="id"):
    """One row per item plus a final summary row.

    Column set = id column + the union of metric names, in first-seen
    order.  Floats are written with repr so identical runs produce
    byte-identical files.
    """
    columns = [id_field]
    for row in report.rows:
        for key in row:
            if key != id_field and key not in columns:
                columns.append(key)
    for key in report.summary:
        if key not in columns:
            columns.append(key)

    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        return "" if v is None else str(v)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in report.rows:
            writer.writerow([fmt(row.get(c)) for c in columns])
        summary_row = {id_field: "summary", **report.summary}
        writer.writerow([fmt(summary_row.get(c)) for c in columns])
