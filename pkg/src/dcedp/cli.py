"""Command-line pipeline: simulate, recon, fit, evaluate, report.

Every command is driven by one experiment config (preset plus optional YAML
overrides) and writes artifacts with provenance sidecars. Identical configs
and seeds give byte-identical outputs. Exit codes: 0 ok, 2 config error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, cs_recon, kspace
from .artifacts import DataError, load_array, save_array
from .config import (
    ConfigError,
    ExperimentConfig,
    cs_config,
    load_config,
    parse_method,
)
from .cs_recon import reconstruct_cs, temporal_tv
from .dip import TrainingDiverged, reconstruct_dip, save_checkpoint, train, init_params
from .kspace import CoilSet, KSpaceFrames, frame_trajectories, make_coils
from .latent import build_latent_pipeline
from .metrics import agreement, cut_matrix, line_profile, tv_report
from .phantom import render_phantom
from .tkfit import ConversionParams, fit, roi_curves


def _provenance(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.config_hash(), "config_name": cfg.name,
            "tool_version": __version__, **extra}


def _method_slug(method: str) -> str:
    return method.replace(":", "_")


def cmd_simulate(cfg: ExperimentConfig, out: Path) -> dict[str, Path]:
    out = Path(out)
    gt = render_phantom(cfg.phantom)
    n = cfg.phantom.grid_size
    coils = make_coils(n, cfg.acquisition.n_coils, cfg.acquisition.coil_seed)
    acq = kspace.simulate_acquisition(gt, coils, cfg.acquisition.spokes_per_frame,
                                      cfg.acquisition.noise_sigma,
                                      cfg.acquisition.noise_seed)
    paths = {}
    paths["ground_truth"] = save_array(
        out / "ground_truth.arr", gt.images,
        _provenance(cfg,
                    region_masks=gt.region_masks.tolist(),
                    region_names=list(gt.region_names),
                    t1_baselines={r.name: r.t1_baseline for r in cfg.phantom.regions},
                    aif=gt.aif.values.tolist(),
                    region_curves={k: v.values.tolist()
                                   for k, v in gt.region_curves.items()},
                    frame_dt=cfg.phantom.frame_dt,
                    injection_delay=cfg.phantom.injection_delay))
    paths["coils"] = save_array(out / "coils.arr", coils.maps,
                                _provenance(cfg, seed=cfg.acquisition.coil_seed))
    tr0 = acq.trajectories[0]
    paths["kspace"] = save_array(
        out / "kspace.arr", acq.frames,
        _provenance(cfg, n=n, c=coils.n_coils,
                    sp=cfg.acquisition.spokes_per_frame,
                    T=cfg.phantom.n_frames, n_readout=tr0.n_readout,
                    golden_angle=tr0.golden_angle,
                    noise_sigma=cfg.acquisition.noise_sigma,
                    seed=cfg.acquisition.noise_seed))
    return paths


def _load_acquisition(out: Path) -> tuple[KSpaceFrames, CoilSet, dict]:
    frames, meta = load_array(Path(out) / "kspace.arr")
    if meta is None:
        raise DataError(f"{out}/kspace.arr.json: sidecar missing")
    for key in ("n", "sp", "T", "golden_angle", "n_readout"):
        if key not in meta:
            raise DataError(f"{out}/kspace.arr.json: missing field {key!r}")
    coil_maps, _ = load_array(Path(out) / "coils.arr")
    trajs = frame_trajectories(
        meta["T"], meta["sp"], grid_size=meta["n"],
        golden_angle=meta["golden_angle"],
        readout_oversampling=meta["n_readout"] // meta["n"])
    k = KSpaceFrames(frames=frames, trajectories=trajs,
                     noise_sigma=meta.get("noise_sigma", 0.0),
                     seed=meta.get("seed", 0))
    return k, CoilSet(maps=coil_maps), meta


def _normalized(k: KSpaceFrames, enabled: bool,
                factor: float = 1.0) -> tuple[KSpaceFrames, float]:
    if not enabled:
        return k, 1.0
    scale = factor * float(np.mean(np.abs(k.frames)))
    if scale == 0:
        return k, 1.0
    return KSpaceFrames(frames=k.frames / scale, trajectories=k.trajectories,
                        noise_sigma=k.noise_sigma, seed=k.seed), scale


def run_method(cfg: ExperimentConfig, k: KSpaceFrames, coils: CoilSet,
               method: str, checkpoint_dir: Path | None = None
               ) -> tuple[np.ndarray, dict]:
    """Reconstruct with one method on normalized data; output in input units."""
    kind, lam = parse_method(method)
    kn, scale = _normalized(k, cfg.acquisition.normalize_kspace,
                            cfg.acquisition.kspace_scale_factor)
    log: dict = {"method": method, "kspace_scale": scale}
    if kind == "inufft" or (kind == "cs" and lam == 0.0):
        X = cs_recon.inufft_seq(kn, coils)
    elif kind == "cs":
        res = reconstruct_cs(kn, coils, cs_config(cfg, lam))
        X = res.images
        log.update(objectives=res.objectives, converged=res.converged,
                   tv_eps=res.tv_eps)
    else:
        z = build_latent_pipeline(kn, coils, m=cfg.latent.m,
                                  segment_length=cfg.latent.segment_length,
                                  seed=cfg.latent.seed,
                                  n_components=cfg.latent.n_components,
                                  n_phases=cfg.latent.n_phases)
        train_cfg = cfg.train
        if checkpoint_dir is not None:
            train_cfg = type(cfg.train)(**{**asdict(cfg.train),
                                           "checkpoint_dir": str(checkpoint_dir)})
        params, trace = train(kn, coils, z.z, cfg.net, train_cfg)
        X = reconstruct_dip(params, cfg.net, z.z)
        log.update(loss_trace=trace, epochs=params.epoch,
                   latent={"m": cfg.latent.m,
                           "segment_length": cfg.latent.segment_length,
                           "seed": cfg.latent.seed,
                           "boundaries": list(z.boundaries)})
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / "final.ckpt", params, cfg.net)
    return scale * X, log


def cmd_recon(cfg: ExperimentConfig, out: Path, method: str) -> Path:
    out = Path(out)
    k, coils, _ = _load_acquisition(out)
    X, log = run_method(cfg, k, coils, method)
    slug = _method_slug(method)
    path = save_array(out / f"recon_{slug}.arr", X, _provenance(cfg, **log))
    return path


def _conversion(cfg: ExperimentConfig) -> ConversionParams:
    p = cfg.phantom
    return ConversionParams(dt=p.frame_dt, injection_delay=p.injection_delay,
                            tr=p.tr, flip_deg=p.flip_deg, relaxivity=p.relaxivity)


def _gt_meta(out: Path) -> tuple[np.ndarray, dict]:
    gt_images, meta = load_array(Path(out) / "ground_truth.arr")
    if meta is None:
        raise DataError(f"{out}/ground_truth.arr.json: sidecar missing")
    return gt_images, meta


def cmd_fit(cfg: ExperimentConfig, out: Path, recon_path: Path) -> Path:
    out = Path(out)
    recon, recon_meta = load_array(recon_path)
    _, meta = _gt_meta(out)
    labels = np.asarray(meta["region_masks"])
    names = tuple(meta["region_names"])
    t1s = meta["t1_baselines"]
    curves = roi_curves(recon, labels, names, t1s, _conversion(cfg))
    aif = curves["aorta"]
    rows = []
    for reg in cfg.phantom.regions:
        if reg.tk is None:
            continue
        volume = float(np.sum(labels == 1 + names.index(reg.name)))
        res = fit(aif, curves[reg.name], init=cfg.tk_fit.init,
                  bounds=cfg.tk_fit.bounds, parenchyma_volume=volume)
        rows.append({"scan": cfg.name, "region": reg.name, **res.as_dict()})
    method = recon_meta.get("method", recon_path.stem) if recon_meta else recon_path.stem
    slug = _method_slug(method)
    json_path = out / f"fit_{slug}.json"
    with open(json_path, "w") as f:
        json.dump(rows, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(out / f"fit_{slug}.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return json_path


def cmd_evaluate(cfg: ExperimentConfig, out: Path,
                 recon_paths: list[Path]) -> Path:
    """TV reports plus plot-ready curve/cut/profile bundles, one per method."""
    out = Path(out)
    gt_images, meta = _gt_meta(out)
    labels = np.asarray(meta["region_masks"])
    names = tuple(meta["region_names"])
    t1s = meta["t1_baselines"]
    aif_true = np.asarray(meta["aif"])
    aorta_label = 1 + names.index("aorta")
    aorta_col = int(np.round(np.argwhere(labels == aorta_label)[:, 1].mean()))
    row_mid = labels.shape[0] // 2

    reference = None
    tv_rows = []
    curve_cols: dict[str, np.ndarray] = {"ground_truth_aif": aif_true}
    for path in recon_paths:
        recon, recon_meta = load_array(path)
        method = recon_meta.get("method", Path(path).stem) if recon_meta else Path(path).stem
        if reference is None:
            reference = np.abs(recon[0])
        rep = tv_report(recon, labels, method=method, reference_first_frame=reference)
        tv_rows.append(rep.as_dict())
        curves = roi_curves(recon, labels, names, t1s, _conversion(cfg))
        curve_cols[f"{_method_slug(method)}_aif"] = curves["aorta"].values
        np.savetxt(out / f"cut_{_method_slug(method)}.csv",
                   cut_matrix(recon, aorta_col), delimiter=",")
        prof = line_profile(recon, recon.shape[0] // 2, (row_mid, 0),
                            (row_mid, labels.shape[1] - 1))
        np.savetxt(out / f"profile_{_method_slug(method)}.csv", prof, delimiter=",")

    tv_path = out / "tv_report.csv"
    with open(tv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(tv_rows[0].keys()))
        writer.writeheader()
        writer.writerows(tv_rows)
    with open(out / "aif_curves.csv", "w", newline="") as f:
        writer = csv.writer(f)
        keys = list(curve_cols.keys())
        writer.writerow(["frame"] + keys)
        for t in range(aif_true.size):
            writer.writerow([t] + [curve_cols[key][t] for key in keys])
    return tv_path


REPORT_METRICS = ("background_tv", "contrast_tv", "aif_peak_ratio", "nrmse")
AGREEMENT_REFERENCE = "cs:0.0125"


def cmd_report(cfg: ExperimentConfig, out: Path) -> Path:
    """End-to-end run: simulate, reconstruct every configured method, fit,
    evaluate, and write one summary with a row per method per metric."""
    out = Path(out)
    cmd_simulate(cfg, out)
    k, coils, _ = _load_acquisition(out)
    gt_images, meta = _gt_meta(out)
    labels = np.asarray(meta["region_masks"])
    names = tuple(meta["region_names"])
    t1s = meta["t1_baselines"]
    aif_true = np.asarray(meta["aif"])

    recon_paths = []
    fts: dict[str, list[float]] = {}
    rows = []
    reference_frame = np.abs(gt_images[0])
    for method in cfg.methods:
        slug = _method_slug(method)
        X, log = run_method(cfg, k, coils, method)
        recon_paths.append(save_array(out / f"recon_{slug}.arr", X,
                                      _provenance(cfg, **log)))
        fit_path = cmd_fit(cfg, out, recon_paths[-1])
        with open(fit_path) as f:
            fts[method] = [row["ft"] for row in json.load(f)]
        rep = tv_report(X, labels, method=method,
                        reference_first_frame=reference_frame)
        curves = roi_curves(X, labels, names, t1s, _conversion(cfg))
        peak_ratio = float(curves["aorta"].values.max() / aif_true.max())
        nrmse = float(np.linalg.norm(X - gt_images) / np.linalg.norm(gt_images))
        values = {"background_tv": rep.background_mean,
                  "contrast_tv": rep.contrast_mean,
                  "aif_peak_ratio": peak_ratio,
                  "nrmse": nrmse}
        for metric in REPORT_METRICS:
            rows.append({"method": method, "metric": metric,
                         "value": values[metric]})

    cmd_evaluate(cfg, out, recon_paths)

    summary: dict = {"config": cfg.name, "config_hash": cfg.config_hash(),
                     "rows": rows, "ft_by_method": fts}
    if "dip" in fts and AGREEMENT_REFERENCE in fts:
        rep = agreement(fts["dip"], fts[AGREEMENT_REFERENCE])
        summary["agreement_dip_vs_cs"] = rep.as_dict()
    path = out / "summary.json"
    with open(path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "metric", "value"])
        writer.writeheader()
        writer.writerows(rows)
    return path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dcedp",
        description="Synthetic dynamic contrast-enhanced radial MRI pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="YAML overrides applied on top of the preset")
        p.add_argument("--preset", choices=("desk", "paper-scale"), default="desk")
        p.add_argument("--out", type=Path, required=True,
                       help="artifact directory")

    add_common(sub.add_parser("simulate", help="render phantom and sample k-space"))

    p_recon = sub.add_parser("recon", help="reconstruct one method")
    add_common(p_recon)
    p_recon.add_argument("--method", required=True,
                         help="inufft | cs:<lambda> | dip")
    p_recon.add_argument("--lambda", dest="lam", type=float, default=None,
                         help="shorthand: use with --method cs")

    p_fit = sub.add_parser("fit", help="tracer-kinetic fit of a reconstruction")
    add_common(p_fit)
    p_fit.add_argument("--recon", type=Path, required=True)

    p_eval = sub.add_parser("evaluate", help="TV/profile/agreement bundles")
    add_common(p_eval)
    p_eval.add_argument("--recon", type=Path, nargs="+", required=True)

    add_common(sub.add_parser("report", help="full pipeline and summary"))

    p_seed = None
    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=None,
                       help="override the acquisition noise seed")
    del p_seed

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            from dataclasses import replace
            cfg = replace(cfg, acquisition=type(cfg.acquisition)(
                **{**asdict(cfg.acquisition), "noise_seed": args.seed}))
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "recon":
            method = args.method
            if method == "cs" and args.lam is not None:
                method = f"cs:{args.lam}"
            cmd_recon(cfg, args.out, method)
        elif args.command == "fit":
            cmd_fit(cfg, args.out, args.recon)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.out, args.recon)
        elif args.command == "report":
            cmd_report(cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (TrainingDiverged, np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
