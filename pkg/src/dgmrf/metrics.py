"""Point and probabilistic scores for Gaussian predictive distributions."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


def _select(truth, mean, test_mask):
    truth = np.asarray(truth, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if test_mask is None:
        test_mask = np.ones(truth.shape, dtype=bool)
    test_mask = np.broadcast_to(np.asarray(test_mask, dtype=bool).reshape(
        test_mask.shape + (1,) * (truth.ndim - np.ndim(test_mask))), truth.shape)
    if not test_mask.any():
        raise ValueError("no test pixels to score")
    return truth[test_mask], mean[test_mask], test_mask


def point_scores(truth, mean, test_mask=None):
    """Mean absolute error and root mean squared error over the test pixels."""
    y, mu, _ = _select(truth, mean, test_mask)
    err = y - mu
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2)))


def crps_gaussian(y, mu, sd):
    """Closed-form CRPS of ``N(mu, sd^2)`` at ``y``, elementwise."""
    y, mu, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mu, sd)))
    if np.any(sd <= 0):
        raise ValueError("predictive standard deviation must be positive")
    z = (y - mu) / sd
    return sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - INV_SQRT_PI)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def interval_score(y, mu, sd, alpha=0.05):
    """Interval score of the central ``1 - alpha`` Gaussian interval, elementwise.

    Penalties apply only strictly outside the interval.
    """
    _check_alpha(alpha)
    y, mu, sd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (y, mu, sd)))
    if np.any(sd <= 0):
        raise ValueError("predictive standard deviation must be positive")
    half = norm.ppf(1.0 - alpha / 2.0) * sd
    lo, hi = mu - half, mu + half
    return (hi - lo) + (2.0 / alpha) * (lo - y) * (y < lo) + (2.0 / alpha) * (y - hi) * (y > hi)


def coverage(truth, mean, sd, test_mask=None, alpha=0.05):
    """Fraction of test pixels inside the central ``1 - alpha`` interval."""
    _check_alpha(alpha)
    y, mu, mask = _select(truth, mean, test_mask)
    s = np.asarray(sd, dtype=float)[mask]
    return float(np.mean(np.abs(y - mu) <= norm.ppf(1.0 - alpha / 2.0) * s))


@dataclass
class ScoreReport:
    MAE: float
    RMSE: float
    CRPS: float
    INT: float
    CVG: float
    n: int


def score_report(truth, mean, sd, test_mask=None, alpha=0.05):
    y, mu, mask = _select(truth, mean, test_mask)
    s = np.asarray(sd, dtype=float)[mask]
    mae, rmse = point_scores(y, mu)
    return ScoreReport(
        MAE=mae,
        RMSE=rmse,
        CRPS=float(np.mean(crps_gaussian(y, mu, s))),
        INT=float(np.mean(interval_score(y, mu, s, alpha))),
        CVG=coverage(y, mu, s, alpha=alpha),
        n=int(y.size),
    )


COLUMNS = ("model", "seed", "MAE", "RMSE", "CRPS", "INT", "CVG", "n")


def write_report(path, rows):
    """Write ``(model, seed, ScoreReport)`` rows; with several rows append mean and sd rows."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for model, seed, rep in rows:
            d = asdict(rep)
            writer.writerow([model, seed] + [repr(float(d[k])) for k in COLUMNS[2:7]] + [d["n"]])
        if len(rows) > 1:
            table = np.array([[getattr(rep, k) for k in COLUMNS[2:7]] for _, _, rep in rows])
            label = rows[0][0]
            n = rows[0][2].n
            writer.writerow([label, "mean"] + [repr(float(v)) for v in table.mean(axis=0)] + [n])
            writer.writerow([label, "sd"] + [repr(float(v)) for v in table.std(axis=0, ddof=1)] + [n])
