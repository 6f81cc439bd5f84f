"""Experiment configuration: one declarative YAML file drives the pipeline.

Unknown keys are rejected so typos fail loudly. `desk` and `paper-scale`
presets are built in; a config file overrides preset fields selectively.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .cs_recon import CSConfig
from .dip import NetSpec, TrainConfig, paper_scale_netspec
from .kinetics import TKParams
from .phantom import AIFShape, PhantomSpec, RegionSpec, default_regions
from .tkfit import FitBounds


class ConfigError(RuntimeError):
    """Invalid or unresolvable configuration."""


@dataclass(frozen=True)
class AcquisitionConfig:
    n_coils: int = 4
    coil_seed: int = 3
    spokes_per_frame: int = 13
    noise_sigma: float = 0.02
    noise_seed: int = 7
    normalize_kspace: bool = True
    # solver-side data units: k is divided by kspace_scale_factor * mean|k|.
    # The regularization grid is calibrated against this convention; the
    # factor sets how strongly a given lambda weights the temporal-TV term.
    kspace_scale_factor: float = 10.0

    def __post_init__(self):
        if self.n_coils < 1 or self.spokes_per_frame < 1:
            raise ConfigError("n_coils and spokes_per_frame must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.kspace_scale_factor <= 0:
            raise ConfigError("kspace_scale_factor must be > 0")


@dataclass(frozen=True)
class LatentConfig:
    m: int = 32
    segment_length: float = 1.0
    seed: int = 5
    n_components: int = 5
    n_phases: int = 5


@dataclass(frozen=True)
class TKFitConfig:
    init: TKParams = field(default_factory=lambda: TKParams(0.05, 8.0, 0.01, 120.0))
    bounds: FitBounds = field(default_factory=FitBounds)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "desk-default"
    phantom: PhantomSpec = field(default_factory=lambda: PhantomSpec(regions=default_regions()))
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    methods: tuple[str, ...] = ("inufft", "cs:0.00125", "cs:0.0125", "dip")
    cs_iters: int = 24
    latent: LatentConfig = field(default_factory=LatentConfig)
    net: NetSpec = field(default_factory=NetSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=8, learning_rate=2e-3, optimizer="adam",
        max_epochs=500, min_epochs=120, stop_rel_change=1e-3))
    tk_fit: TKFitConfig = field(default_factory=TKFitConfig)

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("method list must be non-empty")
        for m in self.methods:
            parse_method(m)
        if self.net.out_size != self.phantom.grid_size:
            raise ConfigError(
                f"net out_size {self.net.out_size} != phantom grid {self.phantom.grid_size}")
        if self.latent.m != self.net.latent_dim:
            raise ConfigError(
                f"latent m {self.latent.m} != net latent_dim {self.net.latent_dim}")

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_method(spec: str) -> tuple[str, float | None]:
    """'inufft' | 'cs:<lambda>' | 'dip' -> (kind, lambda)."""
    if spec == "inufft":
        return "inufft", None
    if spec == "dip":
        return "dip", None
    if spec.startswith("cs:"):
        try:
            lam = float(spec[3:])
        except ValueError as e:
            raise ConfigError(f"bad method {spec!r}: {e}") from None
        if lam < 0:
            raise ConfigError(f"bad method {spec!r}: lambda must be >= 0")
        return "cs", lam
    raise ConfigError(f"unknown method {spec!r}")


PAPER_LAMBDA_GRID = (0.0, 0.00125, 0.0125, 0.125, 1.25)


def desk_preset() -> ExperimentConfig:
    return ExperimentConfig()


def paper_scale_preset() -> ExperimentConfig:
    """Full-scale settings: n=224, 34 spokes/frame, |B|=16, lr 1e-4, >=2000 epochs."""
    return ExperimentConfig(
        name="paper-scale",
        phantom=PhantomSpec(grid_size=224, regions=_scaled_regions(224)),
        acquisition=AcquisitionConfig(spokes_per_frame=34),
        net=paper_scale_netspec(),
        train=TrainConfig(batch_size=16, learning_rate=1e-4, optimizer="gd",
                          max_epochs=5000, min_epochs=2000, stop_rel_change=1e-3),
    )


def _scaled_regions(n: int) -> tuple[RegionSpec, ...]:
    s = n / 64.0
    return tuple(
        RegionSpec(r.name, (r.center[0] * s, r.center[1] * s),
                   (r.axes[0] * s, r.axes[1] * s), r.t1_baseline, r.tk)
        for r in default_regions()
    )


PRESETS = {"desk": desk_preset, "paper-scale": paper_scale_preset}


def _build(cls, data, path=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or cls.__name__}: expected a mapping")
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"{path or cls.__name__}: unknown keys {sorted(unknown)}")
    return data


def _region_from(d: dict, idx: int) -> RegionSpec:
    d = dict(_build(RegionSpec, d, f"regions[{idx}]"))
    if "tk" in d and d["tk"] is not None:
        d["tk"] = TKParams(**d["tk"])
    d["center"] = tuple(d["center"])
    d["axes"] = tuple(d["axes"])
    return RegionSpec(**d)


def load_config(path: str | Path | None = None,
                preset: str = "desk") -> ExperimentConfig:
    """Build a config from a preset, then apply overrides from a YAML file."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset]()
    if path is None:
        return base
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if raw is None:
        return base
    raw = _build(ExperimentConfig, raw, "config")

    kwargs: dict = {}
    try:
        if "name" in raw:
            kwargs["name"] = str(raw["name"])
        if "phantom" in raw:
            pd = dict(_build(PhantomSpec, raw["phantom"], "phantom"))
            if "regions" in pd:
                pd["regions"] = tuple(_region_from(r, i)
                                      for i, r in enumerate(pd["regions"]))
            else:
                pd["regions"] = base.phantom.regions
            if "aif" in pd:
                pd["aif"] = AIFShape(**_build(AIFShape, pd["aif"], "phantom.aif"))
            kwargs["phantom"] = PhantomSpec(**{**_spec_dict(base.phantom), **pd})
        if "acquisition" in raw:
            kwargs["acquisition"] = AcquisitionConfig(**{
                **asdict(base.acquisition),
                **_build(AcquisitionConfig, raw["acquisition"], "acquisition")})
        if "methods" in raw:
            kwargs["methods"] = tuple(str(m) for m in raw["methods"])
        if "cs_iters" in raw:
            kwargs["cs_iters"] = int(raw["cs_iters"])
        if "latent" in raw:
            kwargs["latent"] = LatentConfig(**{
                **asdict(base.latent), **_build(LatentConfig, raw["latent"], "latent")})
        if "net" in raw:
            nd = dict(_build(NetSpec, raw["net"], "net"))
            if "stage_blocks" in nd:
                nd["stage_blocks"] = tuple(nd["stage_blocks"])
            kwargs["net"] = NetSpec(**{**_spec_dict(base.net), **nd})
        if "train" in raw:
            kwargs["train"] = TrainConfig(**{
                **asdict(base.train), **_build(TrainConfig, raw["train"], "train")})
        if "tk_fit" in raw:
            td = _build(TKFitConfig, raw["tk_fit"], "tk_fit")
            init = TKParams(**td["init"]) if "init" in td else base.tk_fit.init
            bounds = FitBounds(**{k: tuple(v) for k, v in td["bounds"].items()}) \
                if "bounds" in td else base.tk_fit.bounds
            kwargs["tk_fit"] = TKFitConfig(init=init, bounds=bounds)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None

    merged = {
        "name": base.name, "phantom": base.phantom, "acquisition": base.acquisition,
        "methods": base.methods, "cs_iters": base.cs_iters, "latent": base.latent,
        "net": base.net, "train": base.train, "tk_fit": base.tk_fit,
    }
    merged.update(kwargs)
    try:
        return ExperimentConfig(**merged)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from None


def _spec_dict(obj) -> dict:
    d = dict(obj.__dict__)
    return d


def cs_config(cfg: ExperimentConfig, lam: float) -> CSConfig:
    return CSConfig(lam=lam, n_iters=cfg.cs_iters)
