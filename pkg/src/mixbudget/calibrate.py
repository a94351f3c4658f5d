"""Post-hoc and training-time confidence calibration.

Three methods, each governed by one scalar: temperature scaling of
logits, smoothing of predicted distributions, and smoothing of training
targets. The scalar is tuned by bisection so that the mean entropy of the
calibrated distributions matches a reference entropy (typically the mean
entropy of the human label distributions).

All entropies here are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import entropy_rows
from .model import softmax

METHODS = ("temp_scaling", "pred_smoothing", "train_smoothing")

TEMP_LO, TEMP_HI = 1e-3, 1e3
TUNE_TOL = 1e-3  # nats
TUNE_MAX_ITER = 200


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationConfig:
    method: str
    scalar: float | None = None          # temperature, or smoothing mass
    target_entropy: float | None = None  # nats; None = derive from gold dists

    def __post_init__(self):
        if self.method not in METHODS:
            raise CalibrationError(f"unknown calibration method {self.method!r}")


def temp_scale(logits, T: float) -> np.ndarray:
    """softmax(logits / T). Argmax-preserving for every T > 0."""
    if T <= 0:
        raise CalibrationError(f"temperature must be positive, got {T}")
    return softmax(np.asarray(logits, dtype=np.float64) / T)


def _smooth_rows(dists: np.ndarray, alpha_s: float) -> np.ndarray:
    top = np.max(dists, axis=-1)
    if np.any(alpha_s > top + 1e-12):
        raise CalibrationError(
            f"smoothing mass {alpha_s} exceeds an entry's largest mass {top.min()}"
        )
    out = dists + alpha_s / dists.shape[-1]
    out[np.arange(len(dists)), np.argmax(dists, axis=-1)] -= alpha_s
    return out


def pred_smooth(dist, alpha_s: float) -> np.ndarray:
    """Move ``alpha_s`` probability mass off the largest entry and spread
    it equally over all labels (the largest entry included), conserving
    total mass exactly."""
    if not 0.0 <= alpha_s <= 1.0:
        raise CalibrationError("smoothing mass must lie in [0, 1]")
    d = np.asarray(dist, dtype=np.float64)
    squeeze = d.ndim == 1
    out = _smooth_rows(np.atleast_2d(d), alpha_s)
    return out[0] if squeeze else out


def train_smooth(target, alpha_s: float) -> np.ndarray:
    """Same arithmetic as pred_smooth, applied to a training target whose
    gold label is its (unique) argmax."""
    t = np.asarray(target, dtype=np.float64)
    rows = np.atleast_2d(t)
    if rows.shape[-1] > 1:
        top2 = np.sort(rows, axis=-1)[:, -2:]
        if np.any(top2[:, 1] - top2[:, 0] < 1e-12):
            raise CalibrationError("target has no unique gold label")
    return pred_smooth(target, alpha_s)


@dataclass
class TuneResult:
    scalar: float
    achieved_entropy: float
    warning: bool = False  # set when the target entropy was unattainable


def mean_entropy(dists) -> float:
    return float(np.mean(entropy_rows(np.atleast_2d(np.asarray(dists, dtype=np.float64)))))


def _assert_monotone_in_temperature(logits: np.ndarray) -> None:
    # empirical guard before bisection: mean entropy must not decrease in T
    values = [mean_entropy(temp_scale(logits, T)) for T in (1.0, 2.0, 5.0, 10.0, 100.0)]
    if any(b < a - 1e-9 for a, b in zip(values, values[1:])):
        raise CalibrationError("mean entropy is not monotone in temperature on this input")


def tune_entropy_match(
    method: str,
    values,
    target_entropy: float,
    tol: float = TUNE_TOL,
    max_iter: int = TUNE_MAX_ITER,
) -> TuneResult:
    """Find the scalar whose calibrated mean entropy matches
    ``target_entropy`` within ``tol`` nats.

    ``values`` are logits for temp_scaling, and distributions for the
    smoothing methods (predictions for pred_smoothing, training targets
    for train_smoothing). Mean entropy is monotone in the scalar over the
    search interval, so bisection converges; if the target lies outside
    the attainable range, the nearer boundary is returned with
    ``warning`` set.
    """
    V = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if V.size == 0:
        raise CalibrationError("cannot tune on an empty prediction set")
    k = V.shape[-1]
    if not 0.0 <= target_entropy <= np.log(k) + 1e-9:
        raise CalibrationError(f"target entropy must lie in [0, ln {k}]")

    if method == "temp_scaling":
        _assert_monotone_in_temperature(V)
        lo, hi = TEMP_LO, TEMP_HI
        calibrated = lambda s: mean_entropy(temp_scale(V, s))
    elif method in ("pred_smoothing", "train_smoothing"):
        lo = 0.0
        hi = float(np.min(np.max(V, axis=-1)))  # largest jointly feasible mass
        calibrated = lambda s: mean_entropy(_smooth_rows(V, s))
    else:
        raise CalibrationError(f"unknown calibration method {method!r}")

    e_lo, e_hi = calibrated(lo), calibrated(hi)
    if target_entropy <= e_lo:
        return TuneResult(lo, e_lo, warning=e_lo - target_entropy > tol)
    if target_entropy >= e_hi:
        return TuneResult(hi, e_hi, warning=target_entropy - e_hi > tol)

    # bisect the bracket to convergence rather than stopping at the first
    # scalar inside tol, so fixed points are recovered tightly
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if calibrated(mid) < target_entropy:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    scalar = 0.5 * (lo + hi)
    achieved = calibrated(scalar)
    return TuneResult(scalar, achieved, warning=abs(achieved - target_entropy) > tol)
