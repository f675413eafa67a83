"""Command-line interface.

Subcommands: synth, simulate, calibrate, fit-lll, denoise, evaluate, sweep,
repeat-frames. Every run validates its configuration before creating any
output file and logs the resolved configuration and seed to stdout as JSON,
so identical invocations produce byte-identical artifacts. Exit codes:
0 success, 1 validation error, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__
from .calib import estimate_gain, roi_mask_from_rects
from .denoise import (
    PipelineConfig,
    make_align_merge,
    make_identity,
    make_temporal_average,
    run_causal,
)
from .errors import ValidationError
from .frameio import (
    SceneSpec,
    VideoSequence,
    load_entry_channel,
    load_manifest,
    load_sequence,
    save_sequence,
    write_scene_dataset,
)
from .kernels import backend_name
from .leakage import LeakagePredictor, fit_from_sequences
from .metrics import evaluate, run_sweep
from .noise import NoiseParams, simulate_sequence

PAPER_TEST_INV_K = 1763.5
PAPER_TEST_R_M = 6.0
PAPER_TEST_BIT_DEPTH = 12


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _threads() -> int | None:
    raw = os.environ.get("FGSIM_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"FGSIM_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValidationError("FGSIM_THREADS must be >= 1")
    return n


def _log_config(command: str, seed, config: dict) -> None:
    doc = {
        "command": command,
        "seed": seed,
        "config": config,
        "kernel_backend": backend_name(),
        "threads": _threads(),
        "version": __version__,
    }
    print(json.dumps(doc, sort_keys=True))


_NOISE_CONFIG_KEYS = {
    "S_m": "sm", "L_m": "lm", "R_m": "rm",
    "inv_K": "inv_k", "bit_depth": "bit_depth", "seed": "seed",
}


def _apply_noise_config(args) -> None:
    """Fill unset noise flags from a JSON config file; explicit flags win.
    Unknown keys are rejected."""
    path = getattr(args, "config", None)
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        unknown = sorted(set(doc) - set(_NOISE_CONFIG_KEYS))
        if unknown:
            raise ValidationError(f"unknown noise-config keys: {', '.join(unknown)}")
        for key, attr in _NOISE_CONFIG_KEYS.items():
            if key in doc and getattr(args, attr, None) is None:
                setattr(args, attr, doc[key])
    if getattr(args, "seed", None) is None:
        args.seed = 0


def _resolve_noise_params(args) -> NoiseParams:
    profile = getattr(args, "profile", None)
    if profile not in (None, "paper-test"):
        raise ValidationError(f"unknown profile {profile!r}")
    inv_k = args.inv_k if args.inv_k is not None else PAPER_TEST_INV_K
    r_m = args.rm if args.rm is not None else PAPER_TEST_R_M
    bit_depth = args.bit_depth if args.bit_depth is not None else PAPER_TEST_BIT_DEPTH
    if args.sm is None:
        raise ValidationError("S_m is required (--sm or a --config file)")
    lm = args.lm if args.lm is not None else 0.0
    params = NoiseParams(
        s_m=float(args.sm), l_m=float(lm), r_m=float(r_m),
        k=1.0 / float(inv_k), bit_depth=int(bit_depth),
    )
    params.validate()
    return params


def _load_entry(args):
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise ValidationError("manifest has no entries")
    if args.entry is None:
        return manifest.entries[0]
    for e in manifest.entries:
        if e.sequence_id == args.entry:
            return e
    raise ValidationError(f"no entry {args.entry!r} in manifest")


def _load_predictor_file(path) -> LeakagePredictor:
    with open(path) as fh:
        return LeakagePredictor.from_json(fh.read())


def _parse_denoisers(spec_str: str, cfg: PipelineConfig) -> dict:
    out = {}
    for name in spec_str.split(","):
        name = name.strip()
        if not name:
            continue
        if name == "identity":
            out[name] = make_identity()
        elif name == "am":
            out[name] = make_align_merge(cfg)
        elif name.startswith("tavg"):
            window = int(name[4:] or "9")
            out[name] = make_temporal_average(window)
        else:
            raise ValidationError(f"unknown denoiser {name!r} (use am, identity, tavg<k>)")
    if not out:
        raise ValidationError("no denoisers selected")
    return out


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_synth(args) -> int:
    spec = SceneSpec(
        width=args.width,
        height=args.height,
        length=args.frames,
        n_blobs=args.blobs,
        velocity=(args.vx, args.vy),
        specular_count=args.speculars,
        alpha=args.alpha,
        fps=args.fps,
    )
    if spec.length < 1 or spec.width < 1 or spec.height < 1:
        raise ValidationError("scene must have positive size and length")
    _log_config("synth", args.seed, {"scene": vars(spec) | {"velocity": [args.vx, args.vy]}, "out": args.out})
    manifest_path = write_scene_dataset(args.out, spec, args.seed)
    print(f"wrote {manifest_path}")
    return 0


def _cmd_simulate(args) -> int:
    _apply_noise_config(args)
    params = _resolve_noise_params(args)
    entry = _load_entry(args)
    fluor = load_entry_channel(args.manifest, entry, "fluorescence_clean")
    ref = load_entry_channel(args.manifest, entry, "reference")
    leakage = None
    predictor = None
    if args.leakage == "oracle":
        leakage = load_entry_channel(args.manifest, entry, "leakage")
    elif args.leakage != "none":
        predictor = _load_predictor_file(args.leakage)
    elif params.l_m > 0.0:
        raise ValidationError("--leakage none requires --lm 0")
    _log_config(
        "simulate",
        args.seed,
        {
            "S_m": params.s_m,
            "L_m": params.l_m,
            "R_m": params.r_m,
            "inv_K": 1.0 / params.k,
            "bit_depth": params.bit_depth,
            "leakage": args.leakage,
            "entry": entry.sequence_id,
            "out": args.out,
        },
    )
    noisy = simulate_sequence(
        fluor, ref, params, args.seed, leakage=leakage, predictor=predictor,
        sequence_id=entry.sequence_id,
    )
    save_sequence(noisy, args.out, fmt=args.format)
    print(f"wrote {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    video = load_sequence(args.video, "noisy_fv")
    with open(args.roi) as fh:
        roi_doc = json.load(fh)
    if "rects" not in roi_doc:
        raise ValidationError("rois.json must contain a 'rects' list of [x, y, w, h]")
    mask = roi_mask_from_rects(video.frame_shape, roi_doc["rects"])
    _log_config("calibrate", None, {"video": args.video, "roi": args.roi, "out": args.out})
    est = estimate_gain(video, mask)
    doc = {"K_mean": est.k_mean, "inv_K": est.inv_k, "roi_count": est.roi_count}
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    print(f"wrote {args.out}")
    return 0


def _cmd_fit_lll(args) -> int:
    entry = _load_entry(args)
    ref = load_entry_channel(args.manifest, entry, "reference")
    leak = load_entry_channel(args.manifest, entry, "leakage")
    if args.kind not in ("affine", "patch_affine"):
        raise ValidationError("--kind must be affine or patch_affine")
    _log_config("fit-lll", None, {"kind": args.kind, "entry": entry.sequence_id, "out": args.out})
    predictor = fit_from_sequences(ref, leak, args.kind)
    with open(args.out, "w") as fh:
        fh.write(predictor.to_json())
    print(f"wrote {args.out}")
    return 0


def _build_pipeline_cfg(args, params: NoiseParams | None) -> PipelineConfig:
    predictor = None
    if args.lll == "oracle":
        predictor = LeakagePredictor(kind="oracle")
    elif args.lll != "none":
        predictor = _load_predictor_file(args.lll)
    beta_arg = args.beta
    if beta_arg is None and predictor is not None and params is None:
        beta_arg = "auto"  # no noise parameters to derive a fixed scale from
    if beta_arg == "auto":
        mode, beta = "estimated", None
    else:
        mode, beta = "fixed", (float(beta_arg) if beta_arg is not None else None)
    cfg = PipelineConfig(
        n_max=args.nmax,
        tau=args.tau,
        predictor=predictor,
        leakage_scale_mode=mode,
        beta=beta,
        params=params,
        smoother_sigma=args.smooth_sigma,
    )
    cfg.validate()
    return cfg


def _cmd_denoise(args) -> int:
    noisy = load_sequence(args.fv, "noisy_fv")
    ref = load_sequence(args.ref, "reference")
    oracle = load_sequence(args.leak, "leakage") if args.leak else None
    params = None
    if args.sm is not None:
        params = NoiseParams(s_m=args.sm, l_m=args.lm if args.lm is not None else 0.0)
        params.validate()
    cfg = _build_pipeline_cfg(args, params)
    if cfg.predictor is not None and cfg.predictor.kind == "oracle" and oracle is None:
        raise ValidationError("--lll oracle needs --leak <leakage dir>")
    _log_config(
        "denoise",
        None,
        {"fv": args.fv, "ref": args.ref, "lll": args.lll, "nmax": args.nmax,
         "tau": args.tau, "beta": args.beta, "out": args.out},
    )
    denoised = run_causal(noisy, ref, cfg, oracle_leakage=oracle)
    save_sequence(denoised, args.out, fmt=args.format)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    pred = load_sequence(args.pred, "denoised")
    truth = load_sequence(args.truth, "fluorescence_clean")
    _log_config("evaluate", None, {"pred": args.pred, "truth": args.truth})
    report = evaluate(pred, truth, per_frame=args.per_frame is not None)
    doc = {"psnr": report.psnr, "ssim": report.ssim}
    print(json.dumps(doc, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
    if args.per_frame:
        with open(args.per_frame, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "psnr", "ssim"])
            for t, (p, s) in enumerate(report.per_frame):
                writer.writerow([t, f"{p:.6f}", f"{s:.6f}"])
    return 0


def _cmd_sweep(args) -> int:
    params_probe = argparse.Namespace(
        sm=1.0, lm=0.0, rm=args.rm, inv_k=args.inv_k, bit_depth=args.bit_depth,
        profile=args.profile,
    )
    base = _resolve_noise_params(params_probe)
    s_values = [float(s) for s in args.sm_list.split(",") if s.strip()]
    ratio_values = [float(r) for r in args.ratio_list.split(",") if r.strip()]
    if not s_values or not ratio_values:
        raise ValidationError("empty sweep grid")
    entry = _load_entry(args)
    fluor = load_entry_channel(args.manifest, entry, "fluorescence_clean")
    ref = load_entry_channel(args.manifest, entry, "reference")
    leak = load_entry_channel(args.manifest, entry, "leakage")
    cfg = _build_pipeline_cfg(args, None)
    denoisers = _parse_denoisers(args.denoisers, cfg)
    _log_config(
        "sweep",
        args.seed,
        {"S_m": s_values, "ratios": ratio_values, "denoisers": sorted(denoisers),
         "trials": args.trials, "entry": entry.sequence_id, "out_dir": args.out_dir},
    )
    grid = run_sweep(
        fluor, ref, leak, denoisers, s_values, ratio_values, args.trials, args.seed,
        base_params=base,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    sweep_csv = os.path.join(args.out_dir, "sweep.csv")
    with open(sweep_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["S_m", "ratio", "denoiser", "trial", "psnr", "ssim"])
        for c in grid.cells:
            writer.writerow([c.s_m, c.ratio, c.denoiser, c.trial, f"{c.psnr:.6f}", f"{c.ssim:.6f}"])
    fits = grid.robustness_fits()
    doc = {}
    for (name, s), fit in sorted(fits.items()):
        doc.setdefault(name, []).append(
            {"S_m": s, "m_lll": fit.m_lll, "b_lll": fit.b_lll, "r_squared": fit.r_squared}
        )
    with open(os.path.join(args.out_dir, "robustness.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    winners = grid.winners("psnr")
    with open(os.path.join(args.out_dir, "winners.json"), "w") as fh:
        json.dump({f"{s}:{r}": name for (s, r), name in sorted(winners.items())}, fh, indent=2, sort_keys=True)
    print(f"wrote {sweep_csv}")
    return 0


def repeat_frames_experiment(
    fluorescence: VideoSequence,
    reference: VideoSequence,
    leakage: VideoSequence,
    denoisers: dict,
    params: NoiseParams,
    seed: int,
    n_frames: int = 100,
    trials: int = 4,
    bank=None,
) -> dict:
    """Duplicate frame 0 of every channel n_frames times, simulate noise
    with independent per-frame draws, run each denoiser, and return the
    per-frame-index PSNR (MSE pooled over trials) per denoiser."""
    if n_frames < 1 or trials < 1:
        raise ValidationError("n_frames and trials must be >= 1")
    rep = {
        "fluor": VideoSequence(np.repeat(fluorescence.data[:1], n_frames, axis=0),
                               fps=fluorescence.fps, channel_tag="fluorescence_clean"),
        "ref": VideoSequence(np.repeat(reference.data[:1], n_frames, axis=0),
                             fps=reference.fps, channel_tag="reference"),
        "leak": VideoSequence(np.repeat(leakage.data[:1], n_frames, axis=0),
                              fps=leakage.fps, channel_tag="leakage"),
    }
    sq_err = {name: np.zeros(n_frames) for name in denoisers}
    n_px = float(np.prod(rep["fluor"].frame_shape) * trials)
    for trial in range(trials):
        noisy = simulate_sequence(
            rep["fluor"], rep["ref"], params, seed,
            leakage=rep["leak"], bank=bank, sequence_id=f"repeat/trial{trial}",
        )
        for name, fn in denoisers.items():
            den = fn(noisy, rep["ref"], rep["leak"])
            err = (den.data - rep["fluor"].data) ** 2
            sq_err[name] += err.sum(axis=(1, 2))
    curves = {}
    for name, sums in sq_err.items():
        mse = sums / n_px
        curves[name] = [psnr_from_mse(m) for m in mse]
    return curves


def psnr_from_mse(mse: float) -> float:
    if mse <= 0.0:
        return 100.0
    return min(10.0 * float(np.log10(1.0 / mse)), 100.0)


def _cmd_repeat_frames(args) -> int:
    _apply_noise_config(args)
    params = _resolve_noise_params(args)
    entry = _load_entry(args)
    fluor = load_entry_channel(args.manifest, entry, "fluorescence_clean")
    ref = load_entry_channel(args.manifest, entry, "reference")
    leak = load_entry_channel(args.manifest, entry, "leakage")
    cfg = _build_pipeline_cfg(args, params)
    denoisers = _parse_denoisers(args.denoisers, cfg)
    _log_config(
        "repeat-frames",
        args.seed,
        {"S_m": params.s_m, "L_m": params.l_m, "n": args.n, "trials": args.trials,
         "denoisers": sorted(denoisers), "out": args.out},
    )
    curves = repeat_frames_experiment(
        fluor, ref, leak, denoisers, params, args.seed, n_frames=args.n, trials=args.trials
    )
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "denoiser", "psnr"])
        for name in sorted(curves):
            for t, value in enumerate(curves[name]):
                writer.writerow([t, name, f"{value:.6f}"])
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_noise_flags(p):
    p.add_argument("--sm", type=float, default=None, help="max fluorescence photons S_m")
    p.add_argument("--lm", type=float, default=None, help="max leakage photons L_m")
    p.add_argument("--rm", type=float, default=None, help="read-noise divisor R_m")
    p.add_argument("--inv-k", type=float, default=None, dest="inv_k", help="1/K camera gain")
    p.add_argument("--bit-depth", type=int, default=None, dest="bit_depth")
    p.add_argument("--profile", choices=["paper-test"], default=None,
                   help="pin the calibrated test-camera parameters")
    p.add_argument("--config", default=None,
                   help="JSON file with {S_m, L_m, R_m, inv_K, bit_depth, seed}")


def _add_pipeline_flags(p):
    p.add_argument("--lll", default="none", help="leakage predictor: none, oracle, or lll.json path")
    p.add_argument("--nmax", type=float, default=64.0, help="align-and-merge count cap")
    p.add_argument("--tau", type=float, default=0.08, help="occlusion threshold")
    p.add_argument("--beta", default=None, help="leakage scale: number or 'auto'")
    p.add_argument("--smooth-sigma", type=float, default=0.0, dest="smooth_sigma")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgsim", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fgsim {__version__}")
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic three-channel scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--blobs", type=int, default=3)
    p.add_argument("--vx", type=int, default=1)
    p.add_argument("--vy", type=int, default=0)
    p.add_argument("--speculars", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.4)
    p.add_argument("--fps", type=float, default=15.0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("simulate", help="add calibrated noise to a clean sequence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--entry", default=None)
    p.add_argument("--leakage", default="oracle", help="oracle, none, or lll.json path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["auto", "png16", "f32"], default="auto")
    _add_noise_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate camera gain from phantom video")
    p.add_argument("--video", required=True)
    p.add_argument("--roi", required=True, help="rois.json with 'rects': [[x,y,w,h], ...]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("fit-lll", help="fit a leakage predictor from reference/leakage pairs")
    p.add_argument("--pairs", dest="manifest", required=True, help="dataset manifest.json")
    p.add_argument("--entry", default=None)
    p.add_argument("--kind", default="affine")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_lll)

    p = sub.add_parser("denoise", help="run the causal align-and-merge pipeline")
    p.add_argument("--fv", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--leak", default=None, help="oracle leakage dir (for --lll oracle)")
    p.add_argument("--sm", type=float, default=None)
    p.add_argument("--lm", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["auto", "png16", "f32"], default="auto")
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of a denoised sequence against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--per-frame", default=None, dest="per_frame", help="per-frame CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="noise-space sweep over S_m and L_m/S_m")
    p.add_argument("--manifest", required=True)
    p.add_argument("--entry", default=None)
    p.add_argument("--sm-list", default="10,25,50,100,150,200", dest="sm_list")
    p.add_argument("--ratio-list", default="0,0.25,0.5,0.75,1", dest="ratio_list")
    p.add_argument("--denoisers", default="am,identity,tavg9")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--rm", type=float, default=None)
    p.add_argument("--inv-k", type=float, default=None, dest="inv_k")
    p.add_argument("--bit-depth", type=int, default=None, dest="bit_depth")
    p.add_argument("--profile", choices=["paper-test"], default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("repeat-frames", help="temporal-information experiment on duplicated frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--entry", default=None)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--denoisers", default="am,identity")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_noise_flags(p)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_repeat_frames)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "subcommand", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        _threads()  # validate the env var before doing any work
        return int(args.func(args) or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
