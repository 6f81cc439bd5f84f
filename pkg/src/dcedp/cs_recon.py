"""Temporal-TV regularized least-squares reconstruction.

Objective per sequence X = {x_t}:

    sum_t ||F C x_t - k_t||^2 + lam * sum_t sum_p sqrt(|x_{t+1}(p)-x_t(p)|^2 + eps^2)

solved with Fletcher-Reeves nonlinear conjugate gradient and Armijo
backtracking. lam = 0 short-circuits to the per-frame density-compensated
adjoint (i-NUFFT) reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kspace
from .kspace import CoilSet, KSpaceFrames


@dataclass(frozen=True)
class CSConfig:
    lam: float
    n_iters: int = 24
    tv_eps: float | None = None      # None: 1e-7 * mean |i-NUFFT|
    max_backtracks: int = 20
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if self.tv_eps is not None and self.tv_eps <= 0:
            raise ValueError("tv_eps must be > 0")


@dataclass(frozen=True, eq=False)
class CSResult:
    images: np.ndarray            # (T, n, n) complex
    objectives: list[float]       # objective after init and each iteration
    converged: bool               # False when the line search gave up early
    lam: float
    tv_eps: float


def temporal_tv(X: np.ndarray) -> float:
    """Exact temporal total variation: sum of complex-modulus frame differences."""
    return float(np.sum(np.abs(np.diff(X, axis=0))))


def smoothed_temporal_tv(X: np.ndarray, eps: float) -> float:
    d = np.diff(X, axis=0)
    return float(np.sum(np.sqrt(np.abs(d) ** 2 + eps**2)))


def _tv_gradient(X: np.ndarray, eps: float) -> np.ndarray:
    d = np.diff(X, axis=0)
    scale = d / np.sqrt(np.abs(d) ** 2 + eps**2)
    g = np.zeros_like(X)
    g[:-1] -= scale
    g[1:] += scale
    return g


def cs_objective(X: np.ndarray, k: KSpaceFrames, coils: CoilSet,
                 lam: float, eps: float) -> float:
    data = 0.0
    for t in range(k.n_frames):
        resid = kspace.forward(X[t], coils, k.trajectories[t]) - k.frames[t]
        data += float(np.sum(np.abs(resid) ** 2))
    return data + lam * smoothed_temporal_tv(X, eps)


def cs_gradient(X: np.ndarray, k: KSpaceFrames, coils: CoilSet,
                lam: float, eps: float) -> np.ndarray:
    g = np.empty_like(X)
    for t in range(k.n_frames):
        resid = kspace.forward(X[t], coils, k.trajectories[t]) - k.frames[t]
        g[t] = 2.0 * kspace.adjoint(resid, coils, k.trajectories[t])
    if lam > 0:
        g += lam * _tv_gradient(X, eps)
    return g


def _inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.real(np.vdot(a, b)))


def inufft_seq(k: KSpaceFrames, coils: CoilSet) -> np.ndarray:
    return np.stack([kspace.inufft(k.frames[t], coils, k.trajectories[t])
                     for t in range(k.n_frames)])


def reconstruct_cs(k: KSpaceFrames, coils: CoilSet, cfg: CSConfig) -> CSResult:
    """Nonlinear CG with restarts; the objective never increases across iterations."""
    x0 = inufft_seq(k, coils)
    if cfg.lam == 0:
        return CSResult(images=x0, objectives=[], converged=True,
                        lam=0.0, tv_eps=0.0)

    eps = cfg.tv_eps if cfg.tv_eps is not None else 1e-7 * float(np.mean(np.abs(x0)))
    X = x0
    f = cs_objective(X, k, coils, cfg.lam, eps)
    objectives = [f]
    g = cs_gradient(X, k, coils, cfg.lam, eps)
    d = -g
    converged = True

    def curvature_step(X, d):
        # Newton-like first guess: quadratic data curvature along d plus a
        # Gauss-Newton bound on the smoothed-TV curvature (which blows up
        # like 1/eps near temporally flat points; ignoring it makes the
        # backtracking start absurdly far out at large lam)
        num = -_inner(g, d)
        den = 0.0
        for t in range(k.n_frames):
            den += 2.0 * float(np.sum(
                np.abs(kspace.forward(d[t], coils, k.trajectories[t])) ** 2))
        if cfg.lam > 0:
            dx = np.diff(X, axis=0)
            dd = np.diff(d, axis=0)
            den += cfg.lam * float(np.sum(
                np.abs(dd) ** 2 / np.sqrt(np.abs(dx) ** 2 + eps**2)))
        return num / den if den > 0 else 1.0

    for _ in range(cfg.n_iters):
        if _inner(g, d) >= 0:
            d = -g  # restart on a non-descent direction
        slope = _inner(g, d)
        alpha = curvature_step(X, d)
        accepted = False
        for attempt in range(2):
            a = alpha
            for _ in range(cfg.max_backtracks):
                f_new = cs_objective(X + a * d, k, coils, cfg.lam, eps)
                if f_new <= f + cfg.ls_c1 * a * slope:
                    accepted = True
                    break
                a *= cfg.ls_shrink
            if accepted:
                break
            # steepest-descent restart, then one more line-search round
            d = -g
            slope = _inner(g, d)
            alpha = curvature_step(X, d)
        if not accepted:
            converged = False
            break
        X = X + a * d
        f = f_new
        objectives.append(f)
        g_new = cs_gradient(X, k, coils, cfg.lam, eps)
        beta = _inner(g_new, g_new) / max(_inner(g, g), 1e-300)
        d = -g_new + beta * d
        g = g_new

    return CSResult(images=X, objectives=objectives, converged=converged,
                    lam=cfg.lam, tv_eps=eps)
