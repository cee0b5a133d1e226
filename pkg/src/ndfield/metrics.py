"""Benchmark-grade evaluation: BadPix thresholds, MSE x100, row profiles."""

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS = (0.01, 0.03, 0.07)


@dataclass
class MetricsReport:
    scene: str
    badpix: dict            # threshold -> percentage
    mse100: float
    pixel_count: int

    def to_json(self, extra=None):
        payload = {"scene": self.scene,
                   "badpix": {f"{t:g}": v for t, v in self.badpix.items()},
                   "mse100": self.mse100,
                   "pixel_count": self.pixel_count}
        if extra:
            payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)


def _residuals(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"disparity map shapes differ: {pred.shape} "
                         f"vs {gt.shape}")
    valid = pred.valid & gt.valid
    diff = (pred.values.astype(np.float64)
            - gt.values.astype(np.float64))[valid]
    return diff, int(valid.sum())


def badpix(pred, gt, t):
    """Percentage of mutually-valid pixels with |pred - gt| > t."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    diff, count = _residuals(pred, gt)
    if count == 0:
        raise ValueError("no mutually valid pixels")
    return 100.0 * float((np.abs(diff) > t).sum()) / count


def mse100(pred, gt):
    """100 x mean squared disparity error over mutually-valid pixels."""
    diff, count = _residuals(pred, gt)
    if count == 0:
        raise ValueError("no mutually valid pixels")
    return 100.0 * float((diff * diff).mean())


def profile_line(dmap, row):
    """One row of the map as (column, value) pairs, for profile plots."""
    H, W = dmap.shape
    if not 0 <= row < H:
        raise IndexError(f"row {row} outside [0, {H})")
    return [(c, float(dmap.values[row, c])) for c in range(W)]


def evaluate(pred, gt, thresholds=DEFAULT_THRESHOLDS, scene=""):
    diff, count = _residuals(pred, gt)
    if count == 0:
        raise ValueError("no mutually valid pixels")
    return MetricsReport(
        scene=scene,
        badpix={float(t): 100.0 * float((np.abs(diff) > t).sum()) / count
                for t in thresholds},
        mse100=100.0 * float((diff * diff).mean()),
        pixel_count=count)
