"""Command-line entry point.

Exit codes: 0 success, 1 numerical or internal failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bumphunt import (
    BumpModel,
    bump_hunt_pipeline,
    bump_normalizers,
    load_events,
    simulate_events,
)
from .config import RunConfig
from .errors import InputError, TohmError
from .euler import clique_counts
from .lattice import FieldSample, load_field, save_field
from .rft import global_pvalue, read_lkc_record, write_lkc_record
from .simulate import (
    GaussianFieldSampler,
    STREAM_SINGLE,
    TRANSFORMS,
    calibrate_lkc,
    validation_curve,
)

log = logging.getLogger("tohm")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="INI run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides [run] seed)")
    p.add_argument("--threads", type=int, help="worker threads (overrides [run] threads)")
    p.add_argument("--output", type=Path, help="output file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="tohm", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ec", parents=[common], help="Euler characteristic of a field file's excursion set")
    p.add_argument("field", type=Path)
    p.add_argument("threshold", type=float)

    sub.add_parser("calibrate", parents=[common], help="estimate Lipschitz-Killing curvatures by simulation")

    p = sub.add_parser("pvalue", parents=[common], help="global p-value from an LKC record")
    p.add_argument("record", type=Path)
    p.add_argument("c", type=float, help="observed supremum of the field")

    sub.add_parser("validate", parents=[common], help="EC approximation vs. empirical sup-tail (TSV)")

    p = sub.add_parser("bumphunt", parents=[common], help="bump hunt on events (file or simulated)")
    p.add_argument("--events", type=Path, help="event file (overrides [bumphunt] events)")

    p = sub.add_parser("simulate-field", parents=[common], help="draw one Gaussian (or chi-bar) field")
    p.add_argument("--transform", choices=("identity", "chibar"))
    return ap


def _resolve(cfg: RunConfig, args) -> tuple[int, int]:
    seed = args.seed if args.seed is not None else cfg.seed()
    threads = args.threads if args.threads is not None else cfg.threads()
    if seed < 0:
        raise InputError("seed must be nonnegative")
    if threads < 1:
        raise InputError("threads must be >= 1")
    return seed, threads


def _output(cfg: RunConfig, args, section: str) -> Path | None:
    if args.output is not None:
        return args.output
    if cfg.has(section, "output"):
        return Path(cfg.raw(section, "output"))
    return None


def _need_config(args) -> RunConfig:
    if args.config is None:
        raise InputError(f"'{args.command}' needs --config")
    return RunConfig.load(args.config)


def cmd_ec(args) -> int:
    f = load_field(args.field)
    cc = clique_counts(f, args.threshold)
    print(f"threshold = {args.threshold!r}")
    for d, n in enumerate(cc.counts):
        print(f"|C^{d}| = {n}")
    if cc.counts[0] == 0:
        print("EC = 0 (empty excursion set)")
    else:
        print(f"EC = {cc.euler}")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _need_config(args)
    seed, threads = _resolve(cfg, args)
    lat = cfg.lattice()
    kernel = cfg.kernel(lat.dims)
    family = cfg.family()
    transform = cfg.transform()
    th = cfg.thresholds()
    n_reps = cfg.get_int("calibrate", "n_reps", 100, minimum=2)
    L0 = cfg.get_float("calibrate", "L0")
    out = _output(cfg, args, "calibrate")
    if out is None:
        raise InputError("calibrate needs --output or [calibrate] output")
    sol, table = calibrate_lkc(lat, kernel, transform, family, L0, th, n_reps, seed, threads)
    write_lkc_record(sol, out)
    print(f"lattice R = {lat.R}, D = {lat.dims}, replicates = {n_reps}, seed = {seed}")
    for c, m, s in zip(sol.thresholds, sol.ec_means, sol.ec_se):
        print(f"E[phi(A_{c:g})] = {m:.6g} ± {s:.3g}")
    for d, (L, s) in enumerate(zip(sol.lkcs, sol.se), start=1):
        print(f"L*_{d} = {L:.6g} ± {s:.3g}")
    print(f"condition number = {sol.condition:.4g}")
    if table.shape[1] > 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.corrcoef(table, rowvar=False)
        print("EC correlation across thresholds (shared replicates):")
        for row in corr:
            print("  " + " ".join(f"{x:7.3f}" for x in row))
    print(f"wrote {out}")
    return 0


def cmd_pvalue(args) -> int:
    sol = read_lkc_record(args.record)
    rep = global_pvalue(args.c, sol)
    print(rep.format())
    return 0


def cmd_validate(args) -> int:
    cfg = _need_config(args)
    seed, threads = _resolve(cfg, args)
    lat = cfg.lattice()
    kernel = cfg.kernel(lat.dims)
    grid = cfg.get_floats("validate", "grid")
    if not grid:
        raise InputError("[validate] grid is empty")
    family = cfg.family()
    for c in grid:
        family.check_threshold(c)
    out = _output(cfg, args, "validate")
    table = validation_curve(
        lat,
        kernel,
        cfg.transform(),
        grid,
        cfg.thresholds(),
        cfg.get_int("validate", "n_calib", 100, minimum=2),
        cfg.get_int("validate", "n_tail", 10000, minimum=100),
        cfg.get_float("calibrate", "L0"),
        family,
        seed,
        threads,
    )
    text = table.to_tsv()
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
        print(f"wrote {out}")
    return 0


def cmd_bumphunt(args) -> int:
    cfg = _need_config(args)
    seed, threads = _resolve(cfg, args)
    region = cfg.region()
    nu = cfg.get_float("bumphunt", "nu", 0.5, positive=True)
    lat = region.lattice(cfg.get_float("bumphunt", "step", positive=True))
    calib = cfg.calibration(threads, seed)
    ev_path = args.events or (Path(cfg.raw("bumphunt", "events")) if cfg.has("bumphunt", "events") else None)
    if ev_path is not None:
        events = load_events(ev_path)
    else:
        eta = cfg.get_float("bumphunt", "eta", 0.0)
        theta = tuple(cfg.get_floats("bumphunt", "theta")) if cfg.has("bumphunt", "theta") else None
        model = BumpModel(region, nu, eta, theta)
        n = cfg.get_int("bumphunt", "n_events", 10000, minimum=1)
        events = simulate_events(model, n, cfg.get_int("bumphunt", "data_seed", seed, minimum=0))
    k = bump_normalizers(region, lat.points(), nu)
    res = bump_hunt_pipeline(events, lat, nu, region, calib, normalizers=k)
    print(f"events = {len(events)}, lattice R = {lat.R}")
    for d, (L, s) in enumerate(zip(res.report.lkc.lkcs, res.report.lkc.se), start=1):
        print(f"L*_{d} = {L:.6g} ± {s:.3g}")
    print(res.format())
    out = _output(cfg, args, "bumphunt")
    if out is not None:
        save_field(res.field, out)
        print(f"wrote {out}")
    return 0


def cmd_simulate_field(args) -> int:
    cfg = _need_config(args)
    seed, _ = _resolve(cfg, args)
    lat = cfg.lattice()
    kernel = cfg.kernel(lat.dims)
    transform = args.transform or cfg.raw("field", "transform", "identity")
    if transform not in TRANSFORMS:
        raise InputError(f"unknown transform {transform!r}")
    z = TRANSFORMS[transform](GaussianFieldSampler(lat, kernel).draw_replicates(seed, [0], STREAM_SINGLE)[0])
    out = _output(cfg, args, "field")
    if out is None:
        raise InputError("simulate-field needs --output or [field] output")
    save_field(FieldSample(lat, z), out)
    print(f"wrote {out} (R = {lat.R}, max = {z.max():.6g})")
    return 0


COMMANDS = {
    "ec": cmd_ec,
    "calibrate": cmd_calibrate,
    "pvalue": cmd_pvalue,
    "validate": cmd_validate,
    "bumphunt": cmd_bumphunt,
    "simulate-field": cmd_simulate_field,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    warnings.simplefilter("default")
    try:
        return COMMANDS[args.command](args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TohmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
