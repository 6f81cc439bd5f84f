"""Two-compartment tracer-kinetic model shared by the simulator and the fitter.

The kidney impulse response is

    h(t) = F_P exp(-t/T_P) + (F_T/T_P) [exp(-t/T_P) * exp(-t/T_T)](t)

and tissue concentration is C_kidney = C_AIF * h, where every ``*`` is the
same causal left-endpoint Riemann-sum convolution on the frame grid. The
simulator and the fitter both call into this module so the discretization
is identical on both sides.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TKParams:
    """Separable 2-compartment parameters.

    fp: plasma flow (1/s), tp: plasma transit time (s),
    ft: tubular flow (1/s), tt: tubular transit time (s).
    """

    fp: float
    tp: float
    ft: float
    tt: float

    def __post_init__(self):
        if self.fp < 0 or self.ft < 0:
            raise ValueError(f"flows must be >= 0, got fp={self.fp}, ft={self.ft}")
        if self.tp <= 0 or self.tt <= 0:
            raise ValueError(f"transit times must be > 0, got tp={self.tp}, tt={self.tt}")

    def as_array(self) -> np.ndarray:
        return np.array([self.fp, self.tp, self.ft, self.tt], dtype=float)


def conv_causal(f: np.ndarray, g: np.ndarray, dt: float) -> np.ndarray:
    """Causal convolution dt * sum_{i<=j} f[i] g[j-i], truncated to len(f)."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    return dt * np.convolve(f, g)[: f.size]


def impulse_response(tk: TKParams, n_frames: int, dt: float) -> np.ndarray:
    """h(t) sampled at t = 0, dt, ..., (n_frames-1) dt."""
    t = np.arange(n_frames) * dt
    e_p = np.exp(-t / tk.tp)
    e_t = np.exp(-t / tk.tt)
    return tk.fp * e_p + (tk.ft / tk.tp) * conv_causal(e_p, e_t, dt)


def tissue_concentration_values(aif: np.ndarray, tk: TKParams, dt: float) -> np.ndarray:
    """C_kidney(t) = (C_AIF * h)(t) on the frame grid."""
    aif = np.asarray(aif, dtype=float)
    h = impulse_response(tk, aif.size, dt)
    return conv_causal(aif, h, dt)


def tk_jacobian(aif: np.ndarray, tk: TKParams, dt: float) -> np.ndarray:
    """Analytic d(model)/d(fp, tp, ft, tt), shape (T, 4).

    The model is linear in fp and ft; the transit-time columns follow from
    d/dT exp(-t/T) = exp(-t/T) * t / T^2 pushed through the convolutions.
    """
    aif = np.asarray(aif, dtype=float)
    T = aif.size
    t = np.arange(T) * dt
    e_p = np.exp(-t / tk.tp)
    e_t = np.exp(-t / tk.tt)
    de_p = e_p * t / tk.tp**2
    de_t = e_t * t / tk.tt**2
    ee = conv_causal(e_p, e_t, dt)

    dh_fp = e_p
    dh_ft = ee / tk.tp
    dh_tp = tk.fp * de_p + tk.ft * (conv_causal(de_p, e_t, dt) / tk.tp - ee / tk.tp**2)
    dh_tt = (tk.ft / tk.tp) * conv_causal(e_p, de_t, dt)

    cols = [conv_causal(aif, dh, dt) for dh in (dh_fp, dh_tp, dh_ft, dh_tt)]
    return np.stack(cols, axis=1)
