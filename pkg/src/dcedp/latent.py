"""Piecewise-linear latent input design from quick adjoint reconstructions.

The per-frame magnitude images are stacked, mean-centered, and decomposed by
SVD; thresholding the leading projection splits the scan into contrast
phases. Each phase becomes one segment of a connected piecewise-linear curve
in R^m: a random unit orientation per segment, points placed equidistantly,
and each segment starting at its predecessor's end point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kspace
from .kspace import CoilSet, KSpaceFrames

PHASE_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    projections: np.ndarray      # (S, T), ordered by descending singular value
    singular_values: np.ndarray  # (S,)

    @property
    def n_frames(self) -> int:
        return self.projections.shape[1]


@dataclass(frozen=True)
class PhaseClustering:
    boundaries: tuple[int, ...]  # 1-based frame indices, first = 1, last = T
    n_frames: int

    def __post_init__(self):
        b = self.boundaries
        if b[0] != 1 or b[-1] != self.n_frames:
            raise ValueError("boundaries must start at 1 and end at T")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise ValueError("boundaries must be strictly increasing")

    @property
    def n_phases(self) -> int:
        return len(self.boundaries) - 1


@dataclass(frozen=True, eq=False)
class LatentSeq:
    z: np.ndarray               # (T, m)
    boundaries: tuple[int, ...]
    directions: np.ndarray      # (P, m) unit orientations
    origin: np.ndarray          # (m,) = z_1
    segment_length: float
    seed: int

    @property
    def m(self) -> int:
        return self.z.shape[1]


def feature_map(X: np.ndarray, n_components: int = 5) -> FeatureMap:
    """Top singular projections of the mean-centered magnitude image stack."""
    T = X.shape[0]
    if T < n_components:
        raise ValueError(f"need at least {n_components} frames, got {T}")
    mat = np.abs(X.reshape(T, -1)).T.astype(float)     # (n^2, T)
    mat -= mat.mean(axis=1, keepdims=True)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    proj = s[:n_components, None] * vt[:n_components]  # rows are w_s^T X
    return FeatureMap(projections=proj, singular_values=s[:n_components])


def _smooth3(v: np.ndarray) -> np.ndarray:
    padded = np.concatenate([v[:1], v, v[-1:]])
    return (padded[:-2] + padded[1:-1] + padded[2:]) / 3.0


def _uniform_tail(start: int, T: int, n_intervals: int) -> list[int]:
    """Interior boundaries splitting [start, T] into n_intervals even pieces."""
    return [start + round((T - start) * (i + 1) / n_intervals)
            for i in range(n_intervals - 1)]


def cluster_phases(fm: FeatureMap, n_phases: int = 5) -> PhaseClustering:
    """Threshold crossings of the leading projection; uniform fallback.

    The projection is sign-fixed so its late-scan mean exceeds the early-scan
    mean (contrast arrives, signal rises), lightly smoothed, and min-max
    normalized; boundaries are the first crossings of evenly spaced
    thresholds. Missing or out-of-order crossings trigger an even split of
    the remaining frame range. Every phase keeps at least 2 frames.
    """
    T = fm.n_frames
    if T < 2 * n_phases:
        raise ValueError(f"need at least {2 * n_phases} frames for {n_phases} phases")
    v = fm.projections[0].astype(float).copy()
    half = T // 2
    if v[half:].mean() < v[:half].mean():
        v = -v
    v = _smooth3(v)
    span = v.max() - v.min()
    thresholds = [(i + 1) / n_phases for i in range(n_phases - 1)]

    bounds = [1]
    if span > 0:
        v = (v - v.min()) / span
        for j, thr in enumerate(thresholds):
            hit = np.nonzero(v >= thr)[0]
            c = int(hit[0]) + 1 if hit.size else None
            lo = bounds[-1] + 1
            hi = T - (len(thresholds) - j)  # room for later boundaries
            if c is None or c < lo or c > hi:
                bounds.extend(_uniform_tail(bounds[-1], T, n_phases - j))
                break
            bounds.append(c)
    else:
        bounds.extend(_uniform_tail(1, T, n_phases))
    bounds.append(T)
    return PhaseClustering(boundaries=tuple(bounds), n_frames=T)


def design_latent(clust: PhaseClustering, m: int, segment_length: float,
                  seed: int, mu_z: float = 0.0, mu_alpha: float = 0.0) -> LatentSeq:
    """Connected equi-length segments with equidistant points per phase.

    A segment's orientation is a random unit vector; interior points of phase
    i sit at fractions idx/(t_{i+1}-t_i) along it, and the next segment starts
    at the previous end point. Deterministic under the seed.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if segment_length <= 0:
        raise ValueError("segment_length must be > 0")
    rng = np.random.default_rng(seed)
    T = clust.n_frames
    b = clust.boundaries
    z = np.empty((T, m))
    tmp_z = mu_z + rng.standard_normal(m)
    z[0] = tmp_z
    directions = np.empty((clust.n_phases, m))
    for i in range(clust.n_phases):
        alpha = mu_alpha + rng.standard_normal(m)
        alpha /= np.linalg.norm(alpha)
        directions[i] = alpha
        span = b[i + 1] - b[i]
        for idx in range(1, span + 1):
            z[b[i] - 1 + idx] = tmp_z + alpha * (segment_length * idx / span)
        tmp_z = tmp_z + alpha * segment_length
    return LatentSeq(z=z, boundaries=b, directions=directions, origin=z[0].copy(),
                     segment_length=segment_length, seed=seed)


def build_latent_pipeline(k: KSpaceFrames, coils: CoilSet, m: int = 32,
                          segment_length: float = 1.0, seed: int = 0,
                          n_components: int = 5, n_phases: int = 5) -> LatentSeq:
    """i-NUFFT per frame -> feature map -> phase clustering -> latent curve."""
    X = np.stack([kspace.inufft(k.frames[t], coils, k.trajectories[t])
                  for t in range(k.n_frames)])
    fm = feature_map(X, n_components)
    clust = cluster_phases(fm, n_phases)
    return design_latent(clust, m, segment_length, seed)
