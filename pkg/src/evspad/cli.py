"""Command-line entry point.

Subcommands: simulate, deblur, fuse, snr, mtf, eval, e2e.
Exit codes: 0 ok, 2 config error, 3 data error, 4 solver error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, SolverError
from .fusion import FusionConfig
from .pipelines import (run_deblur, run_e2e, run_eval, run_fuse, run_mtf,
                        run_simulate, run_snr)


def _add_common(p: argparse.ArgumentParser, needs_config: bool = True) -> None:
    p.add_argument("--config", required=needs_config,
                   help="path to the run-config JSON")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True, help="output directory")


def _add_fusion_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--adaptive", action="store_true", default=None,
                   help="enable uncertainty-triggered SPAD capture")
    p.add_argument("--u-threshold", type=float, default=None)
    p.add_argument("--n-bins", type=int, default=None,
                   help="binary frames per aggregate window")


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(seed=args.seed, scene=cfg.scene, sensor=cfg.sensor,
                        fusion=cfg.fusion, adaptive_sweep=cfg.adaptive_sweep)
    overrides = {}
    if getattr(args, "adaptive", None):
        overrides["adaptive"] = True
    if getattr(args, "u_threshold", None) is not None:
        overrides["u_threshold"] = args.u_threshold
    if getattr(args, "n_bins", None) is not None:
        overrides["n_bins_per_frame"] = args.n_bins
    if overrides:
        d = cfg.fusion.to_dict()
        d.update(overrides)
        cfg = RunConfig(seed=cfg.seed, scene=cfg.scene, sensor=cfg.sensor,
                        fusion=FusionConfig.from_dict(d),
                        adaptive_sweep=cfg.adaptive_sweep)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evspad",
                                 description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render scene, SPAD and event streams")
    _add_common(p)
    _add_fusion_overrides(p)

    p = sub.add_parser("deblur", help="EDI/NEDI latents for stored windows")
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True,
                   help="simulate output directory")
    _add_fusion_overrides(p)

    p = sub.add_parser("fuse", help="asynchronous Kalman fusion")
    _add_common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    _add_fusion_overrides(p)

    p = sub.add_parser("snr", help="emit SNR-vs-flux curves as CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--sensor", default="all",
                   choices=["all", "camera", "spad", "event"])
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--flux-min", type=float, default=None)
    p.add_argument("--flux-max", type=float, default=None)
    p.add_argument("--delta-phi", type=float, nargs="+", default=[0.3, 1.0])

    p = sub.add_parser("mtf", help="rotating Siemens-star MTF comparison")
    _add_common(p)
    _add_fusion_overrides(p)

    p = sub.add_parser("eval", help="recompute PSNR/bandwidth table from a run")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("e2e", help="simulate -> deblur -> fuse -> evaluate")
    _add_common(p)
    _add_fusion_overrides(p)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            run_simulate(_load(args), args.out)
        elif args.command == "deblur":
            run_deblur(_load(args), args.in_dir, args.out)
        elif args.command == "fuse":
            run_fuse(_load(args), args.in_dir, args.out)
        elif args.command == "snr":
            info = run_snr(args.out, sensor=args.sensor, n_points=args.points,
                           flux_min=args.flux_min, flux_max=args.flux_max,
                           delta_phi=args.delta_phi)
            print(json.dumps(info))
        elif args.command == "mtf":
            run_mtf(_load(args), args.out)
        elif args.command == "eval":
            run_eval(args.in_dir, args.out)
        elif args.command == "e2e":
            run_e2e(_load(args), args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
