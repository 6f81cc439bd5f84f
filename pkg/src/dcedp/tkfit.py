"""Concentration extraction and 2-compartment model fitting.

Region signals are averaged over masks, converted to concentration through
the inverse spoiled-GRE map (baseline from the pre-injection frames), and
fitted to C_AIF * h with bounded Levenberg-Marquardt plus deterministic
multi-start. The convolution discretization is shared with the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinetics import TKParams, tissue_concentration_values, tk_jacobian
from .phantom import ConcentrationCurve, signal_to_concentration


@dataclass(frozen=True)
class ConversionParams:
    """Everything needed to turn ROI signal means into concentration curves."""

    dt: float
    injection_delay: float
    tr: float = 0.00356
    flip_deg: float = 12.0
    relaxivity: float = 4.5


@dataclass(frozen=True)
class FitBounds:
    fp: tuple[float, float] = (0.0, 0.2)    # 1/s
    tp: tuple[float, float] = (1.0, 60.0)   # s
    ft: tuple[float, float] = (0.0, 0.2)    # 1/s
    tt: tuple[float, float] = (10.0, 600.0)  # s

    def lower(self) -> np.ndarray:
        return np.array([self.fp[0], self.tp[0], self.ft[0], self.tt[0]])

    def upper(self) -> np.ndarray:
        return np.array([self.fp[1], self.tp[1], self.ft[1], self.tt[1]])


@dataclass(frozen=True, eq=False)
class FitResult:
    params: TKParams
    residual_norm: float
    converged: bool
    iterations: int
    gfr: float

    def as_dict(self) -> dict:
        return {
            "fp": self.params.fp, "tp": self.params.tp,
            "ft": self.params.ft, "tt": self.params.tt,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "gfr": self.gfr,
        }


def roi_curves(X: np.ndarray, labels: np.ndarray, names: tuple[str, ...],
               t1_by_region: dict[str, float], conv: ConversionParams
               ) -> dict[str, ConcentrationCurve]:
    """Per-region mean |signal| converted to concentration.

    The baseline is the mean over frames acquired strictly before the
    injection (frame 0 alone when the injection starts at t = 0).
    """
    T = X.shape[0]
    times = np.arange(T) * conv.dt
    pre = times < conv.injection_delay
    if not pre.any():
        pre = np.zeros(T, dtype=bool)
        pre[0] = True
    out: dict[str, ConcentrationCurve] = {}
    for i, name in enumerate(names):
        mask = labels == i + 1
        if not mask.any():
            raise ValueError(f"region {name!r} has an empty mask")
        sig = np.abs(X[:, mask]).mean(axis=1)
        baseline = sig[pre].mean()
        c, _ = signal_to_concentration(sig, baseline, t1_by_region[name],
                                       conv.tr, conv.flip_deg, conv.relaxivity)
        out[name] = ConcentrationCurve(c, conv.dt)
    return out


def model_forward(aif: ConcentrationCurve, tk: TKParams) -> ConcentrationCurve:
    """C_AIF * h on the frame grid; same discretization as the simulator."""
    return ConcentrationCurve(tissue_concentration_values(aif.values, tk, aif.dt),
                              aif.dt)


def _clip(x: np.ndarray, bounds: FitBounds) -> np.ndarray:
    return np.clip(x, bounds.lower(), bounds.upper())


def _levenberg_marquardt(aif: np.ndarray, y: np.ndarray, dt: float,
                         x0: np.ndarray, bounds: FitBounds,
                         grad_tol: float = 1e-8, step_tol: float = 1e-10,
                         max_iter: int = 200) -> tuple[np.ndarray, float, bool, int]:
    x = _clip(x0, bounds)

    def resid(p):
        return tissue_concentration_values(aif, TKParams(*p), dt) - y

    r = resid(x)
    cost = float(r @ r)
    J = tk_jacobian(aif, TKParams(*x), dt)
    jtj = J.T @ J
    mu = 1e-3 * max(jtj.diagonal().max(), 1e-30)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        if np.abs(g).max() < grad_tol:
            converged = True
            break
        diag = np.maximum(jtj.diagonal(), 1e-12 * max(jtj.diagonal().max(), 1e-30))
        accepted = False
        for _ in range(30):
            try:
                delta = np.linalg.solve(jtj + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            cand = _clip(x + delta, bounds)
            step = cand - x
            if np.linalg.norm(step) < step_tol:
                converged = True
                accepted = True
                x = cand
                break
            rc = resid(cand)
            cc = float(rc @ rc)
            if cc < cost:
                x, r, cost = cand, rc, cc
                J = tk_jacobian(aif, TKParams(*x), dt)
                jtj = J.T @ J
                mu = max(mu * 0.5, 1e-14)
                accepted = True
                break
            mu *= 4.0
        if converged or not accepted:
            break
    return x, float(np.sqrt(cost)), converged, it


_START_FACTORS = (0.25, 0.5, 2.0, 4.0)  # log-spaced perturbations of the init


def fit(aif: ConcentrationCurve, c_kidney: ConcentrationCurve,
        init: TKParams | None = None, bounds: FitBounds | None = None,
        parenchyma_volume: float = 1.0) -> FitResult:
    """Bounded LM with multi-start; best residual wins, ties by start index."""
    if not np.any(aif.values != 0):
        raise ValueError("AIF is identically zero; the model is unidentifiable")
    if aif.values.size != c_kidney.values.size:
        raise ValueError("aif and c_kidney must share the frame grid")
    if aif.dt != c_kidney.dt:
        raise ValueError("aif and c_kidney must share the frame spacing")
    bounds = bounds or FitBounds()
    init = init or TKParams(fp=0.05, tp=8.0, ft=0.01, tt=120.0)
    x0 = init.as_array()
    starts = [x0] + [x0 * f for f in _START_FACTORS]

    best: tuple[np.ndarray, float, bool, int] | None = None
    for s in starts:
        got = _levenberg_marquardt(aif.values, c_kidney.values, aif.dt, s, bounds)
        if best is None or got[1] < best[1]:
            best = got
    x, rnorm, converged, iters = best
    tk = TKParams(*x)
    return FitResult(params=tk, residual_norm=rnorm, converged=converged,
                     iterations=iters, gfr=tk.ft * parenchyma_volume)
