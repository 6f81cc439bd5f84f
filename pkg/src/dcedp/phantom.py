"""Dynamic contrast-enhanced kidney phantom.

A handful of elliptical compartments (aorta, cortex, medulla, pelvis) on a
static background. Each compartment's contrast-agent concentration follows
the 2-compartment kinetic model driven by a population-style arterial input
function, and voxel signals come from the spoiled-GRE steady-state equation.
A smooth polynomial phase map makes the images genuinely complex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinetics import TKParams, tissue_concentration_values


@dataclass(frozen=True, eq=False)
class ConcentrationCurve:
    """Contrast-agent concentration (mM) per frame."""

    values: np.ndarray
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class AIFShape:
    """Population AIF: gamma-variate bolus + recirculation bump + slow washout."""

    peak: float = 6.0          # mM, first-pass peak
    peak_time: float = 15.0    # s after injection
    sharpness: float = 20.0    # gamma-variate exponent of the bolus
    recirc_frac: float = 0.18  # recirculation bump relative to the bolus peak
    recirc_time: float = 48.0  # s after injection
    recirc_sharpness: float = 14.0
    washout_amp: float = 1.1   # mM, slow tail
    washout_rise: float = 25.0  # s
    washout_decay: float = 220.0  # s


@dataclass(frozen=True)
class RegionSpec:
    """One elliptical compartment: geometry in voxel units, T1 in seconds."""

    name: str
    center: tuple[float, float]  # (row, col)
    axes: tuple[float, float]    # (row semi-axis, col semi-axis)
    t1_baseline: float
    tk: TKParams | None = None   # None: region carries the AIF directly (aorta)


@dataclass(frozen=True)
class PhantomSpec:
    grid_size: int = 64
    n_frames: int = 55
    frame_dt: float = 3.3           # s
    injection_delay: float = 20.0   # s
    regions: tuple[RegionSpec, ...] = ()
    background_t1: float = 0.8      # s
    tr: float = 0.00356             # s
    flip_deg: float = 12.0
    relaxivity: float = 1.0         # 1/(mM s)
    m0: float = 1.0
    aif: AIFShape = field(default_factory=AIFShape)
    phase_amplitude: float = 0.4    # rad, scale of the static phase polynomial
    noise_seed: int = 1234

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if self.frame_dt <= 0:
            raise ValueError("frame_dt must be > 0")
        if self.injection_delay < 0:
            raise ValueError("injection_delay must be >= 0")

    @property
    def frame_times(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_dt

    @property
    def injection_frame(self) -> int:
        """Index of the first frame at or after the injection."""
        return int(math.ceil(self.injection_delay / self.frame_dt - 1e-12))


@dataclass(frozen=True, eq=False)
class GroundTruthSeq:
    images: np.ndarray              # (T, n, n) complex128
    region_masks: np.ndarray        # (n, n) int labels, 0 = background
    region_names: tuple[str, ...]   # label i+1 -> region_names[i]
    aif: ConcentrationCurve
    region_curves: dict[str, ConcentrationCurve]
    spec: PhantomSpec


def default_regions() -> tuple[RegionSpec, ...]:
    """Desk-scale layout on a 64-grid: aorta plus three kidney compartments."""
    return (
        RegionSpec("aorta", center=(16.0, 14.0), axes=(5.0, 5.0), t1_baseline=1.6),
        RegionSpec("cortex", center=(40.0, 20.0), axes=(10.0, 7.0), t1_baseline=1.2,
                   tk=TKParams(fp=0.05, tp=6.0, ft=0.012, tt=120.0)),
        RegionSpec("medulla", center=(40.0, 38.0), axes=(8.0, 6.0), t1_baseline=1.2,
                   tk=TKParams(fp=0.02, tp=10.0, ft=0.008, tt=180.0)),
        RegionSpec("pelvis", center=(40.0, 53.0), axes=(6.0, 5.0), t1_baseline=1.2,
                   tk=TKParams(fp=0.008, tp=14.0, ft=0.003, tt=300.0)),
    )


def default_spec(**overrides) -> PhantomSpec:
    overrides.setdefault("regions", default_regions())
    return PhantomSpec(**overrides)


def make_aif(spec: PhantomSpec) -> ConcentrationCurve:
    """Arterial input function on the frame grid; zero strictly before injection."""
    if spec.n_frames * spec.frame_dt <= spec.injection_delay:
        raise ValueError(
            f"no post-injection frames: T*dt = {spec.n_frames * spec.frame_dt:.1f}s "
            f"<= injection_delay = {spec.injection_delay:.1f}s"
        )
    a = spec.aif
    ts = spec.frame_times - spec.injection_delay

    def gamma_variate(t, peak, tpk, alpha):
        out = np.zeros_like(t)
        pos = t > 0
        x = t[pos] / tpk
        out[pos] = peak * x**alpha * np.exp(alpha * (1.0 - x))
        return out

    bolus = gamma_variate(ts, a.peak, a.peak_time, a.sharpness)
    recirc = gamma_variate(ts, a.recirc_frac * a.peak, a.recirc_time, a.recirc_sharpness)
    tail = np.zeros_like(ts)
    pos = ts > 0
    tail[pos] = a.washout_amp * (1.0 - np.exp(-ts[pos] / a.washout_rise)) * np.exp(
        -ts[pos] / a.washout_decay
    )
    return ConcentrationCurve(bolus + recirc + tail, spec.frame_dt)


def tissue_concentration(aif: ConcentrationCurve, tk: TKParams) -> ConcentrationCurve:
    """Kidney-compartment concentration C_AIF * h, left-endpoint Riemann sum."""
    return ConcentrationCurve(tissue_concentration_values(aif.values, tk, aif.dt), aif.dt)


def gre_signal(c, t1_baseline, tr, fa_deg, relaxivity, m0):
    """Spoiled-GRE steady-state signal at concentration c (mM).

    1/T1 = 1/t1_baseline + relaxivity*c; returns
    m0 sin(fa) (1 - E1) / (1 - cos(fa) E1) with E1 = exp(-tr/T1).
    Monotonically increasing in c. Vectorized over c.
    """
    if t1_baseline <= 0:
        raise ValueError("t1_baseline must be > 0")
    if tr <= 0:
        raise ValueError("tr must be > 0")
    if not 0 < fa_deg < 90:
        raise ValueError("flip angle must be in (0, 90) degrees")
    if relaxivity <= 0:
        raise ValueError("relaxivity must be > 0")
    c = np.asarray(c, dtype=float)
    r1 = 1.0 / t1_baseline + relaxivity * c
    e1 = np.exp(-tr * r1)
    fa = math.radians(fa_deg)
    sig = m0 * math.sin(fa) * (1.0 - e1) / (1.0 - math.cos(fa) * e1)
    return sig if sig.ndim else float(sig)


def signal_to_concentration(signal, baseline_signal, t1_baseline, tr, fa_deg, relaxivity):
    """Algebraic inverse of gre_signal.

    The effective m0 is recovered from the baseline signal at c = 0, so a
    global intensity scale on (signal, baseline_signal) cancels. Returns
    (concentration, clamped) where clamped flags signals below baseline that
    were mapped to c = 0. Signals at or above the flip-angle-dependent
    supremum m0 sin(fa) are rejected.
    """
    signal = np.asarray(signal, dtype=float)
    scalar = signal.ndim == 0
    signal = np.atleast_1d(signal)
    fa = math.radians(fa_deg)
    sin_a, cos_a = math.sin(fa), math.cos(fa)
    e1b = math.exp(-tr / t1_baseline)
    m0 = baseline_signal * (1.0 - cos_a * e1b) / (sin_a * (1.0 - e1b))
    sup = m0 * sin_a
    if np.any(signal >= sup):
        raise ValueError(
            f"signal >= attainable supremum m0*sin(fa) = {sup:.6g}; not invertible"
        )
    clamped = signal < baseline_signal
    e1 = (m0 * sin_a - signal) / (m0 * sin_a - signal * cos_a)
    t1 = -tr / np.log(e1)
    c = (1.0 / t1 - 1.0 / t1_baseline) / relaxivity
    c[clamped] = 0.0
    if scalar:
        return float(c[0]), bool(clamped[0])
    return c, clamped


def region_mask(spec: PhantomSpec, region: RegionSpec) -> np.ndarray:
    n = spec.grid_size
    rows, cols = np.mgrid[0:n, 0:n]
    cy, cx = region.center
    ay, ax = region.axes
    return ((rows - cy) / ay) ** 2 + ((cols - cx) / ax) ** 2 <= 1.0


def _phase_map(spec: PhantomSpec) -> np.ndarray:
    """Smooth static phase: second-order polynomial with seeded coefficients."""
    n = spec.grid_size
    rng = np.random.default_rng(spec.noise_seed)
    coef = rng.normal(0.0, spec.phase_amplitude, size=6)
    u = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(u, u, indexing="xy")
    return coef[0] + coef[1] * X + coef[2] * Y + coef[3] * X * Y + coef[4] * X**2 + coef[5] * Y**2


def render_phantom(spec: PhantomSpec) -> GroundTruthSeq:
    """Render the full dynamic complex image sequence plus masks and curves."""
    n, T = spec.grid_size, spec.n_frames
    aif = make_aif(spec)

    masks = [region_mask(spec, reg) for reg in spec.regions]
    overlap = np.zeros((n, n), dtype=int)
    for m in masks:
        overlap += m
    if np.any(overlap > 1):
        raise ValueError("region geometry overlaps; compartment masks must be disjoint")
    labels = np.zeros((n, n), dtype=int)
    for i, m in enumerate(masks):
        labels[m] = i + 1

    curves: dict[str, ConcentrationCurve] = {}
    conc = np.zeros((len(spec.regions), T))
    for i, reg in enumerate(spec.regions):
        curve = aif if reg.tk is None else tissue_concentration(aif, reg.tk)
        curves[reg.name] = curve
        conc[i] = curve.values

    images = np.empty((T, n, n), dtype=np.complex128)
    phase = np.exp(1j * _phase_map(spec))
    bg_signal = gre_signal(0.0, spec.background_t1, spec.tr, spec.flip_deg,
                           spec.relaxivity, spec.m0)
    for t in range(T):
        frame = np.full((n, n), bg_signal)
        for i, reg in enumerate(spec.regions):
            frame[masks[i]] = gre_signal(conc[i, t], reg.t1_baseline, spec.tr,
                                         spec.flip_deg, spec.relaxivity, spec.m0)
        images[t] = frame * phase

    return GroundTruthSeq(
        images=images,
        region_masks=labels,
        region_names=tuple(reg.name for reg in spec.regions),
        aif=aif,
        region_curves=curves,
        spec=spec,
    )
