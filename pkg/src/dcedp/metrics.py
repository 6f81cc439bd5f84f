"""Evaluation battery: segmented temporal-TV statistics, line profiles,
column-time cut matrices, and regression/Bland-Altman agreement of fitted
tubular-flow values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TVReport:
    method: str
    contrast_mean: float
    contrast_std: float
    background_mean: float
    background_std: float
    norm_factor: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AgreementReport:
    r_squared: float
    slope: float
    intercept: float
    mean_diff: float            # convention: a - b
    loa_low: float              # mean_diff - 1.96 sd
    loa_high: float             # mean_diff + 1.96 sd
    frac_within_loa: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def voxel_temporal_tv(X: np.ndarray) -> np.ndarray:
    """Per-voxel sum of complex-modulus temporal differences."""
    return np.sum(np.abs(np.diff(X, axis=0)), axis=0)


def tv_report(X: np.ndarray, labels: np.ndarray, method: str = "",
              reference_first_frame: np.ndarray | None = None) -> TVReport:
    """Temporal-TV statistics over the contrast region (all labels > 0) and
    the background, after first-frame baseline matching against a reference.
    """
    norm = 1.0
    if reference_first_frame is not None:
        own = float(np.mean(np.abs(X[0])))
        ref = float(np.mean(np.abs(reference_first_frame)))
        if own > 0:
            norm = ref / own
    tv = voxel_temporal_tv(norm * X)
    contrast = labels > 0
    background = ~contrast
    if not contrast.any() or not background.any():
        raise ValueError("need at least one voxel in each of contrast/background")
    return TVReport(
        method=method,
        contrast_mean=float(tv[contrast].mean()),
        contrast_std=float(tv[contrast].std()),
        background_mean=float(tv[background].mean()),
        background_std=float(tv[background].std()),
        norm_factor=norm,
    )


def line_profile(X: np.ndarray, t: int, start: tuple[float, float],
                 end: tuple[float, float]) -> np.ndarray:
    """|image| sampled by nearest voxel along the rasterized segment."""
    img = np.abs(X[t])
    r0, c0 = start
    r1, c1 = end
    steps = int(max(abs(r1 - r0), abs(c1 - c0))) + 1
    rows = np.rint(np.linspace(r0, r1, steps)).astype(int)
    cols = np.rint(np.linspace(c0, c1, steps)).astype(int)
    return img[rows, cols]


def cut_matrix(X: np.ndarray, col: int) -> np.ndarray:
    """Temporal signal of one vertical voxel column: (rows, T) magnitude array."""
    return np.abs(X[:, :, col]).T


def agreement(f_a, f_b) -> AgreementReport:
    """Linear regression of b on a plus Bland-Altman of the differences a - b."""
    a = np.asarray(f_a, dtype=float)
    b = np.asarray(f_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length 1-D collections of >= 2 values")

    var_a = np.sum((a - a.mean()) ** 2)
    if var_a > 0:
        slope = float(np.sum((a - a.mean()) * (b - b.mean())) / var_a)
        intercept = float(b.mean() - slope * a.mean())
    else:
        slope, intercept = 0.0, float(b.mean())
    ss_res = float(np.sum((b - (slope * a + intercept)) ** 2))
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res < 1e-30 else 0.0

    diff = a - b
    mean_diff = float(diff.mean())
    sd = float(diff.std(ddof=1))
    lo, hi = mean_diff - 1.96 * sd, mean_diff + 1.96 * sd
    within = float(np.mean((diff >= lo) & (diff <= hi)))
    return AgreementReport(r_squared=float(np.clip(r2, 0.0, 1.0)), slope=slope,
                           intercept=intercept, mean_diff=mean_diff,
                           loa_low=lo, loa_high=hi, frac_within_loa=within)
