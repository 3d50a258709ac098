"""Command-line entry point: ``qpdec <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def _bits_file(path) -> np.ndarray:
    """Read 0/1 data: one bit per line, or one shot per line as a 0/1 string.

    Returns a 2-D uint8 array (shots x bits).
    """
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty bit file")
    if all(len(ln.replace(" ", "")) == 1 for ln in lines):
        return np.array([[int(ln.replace(" ", "")) for ln in lines]], dtype=np.uint8)
    rows = [[int(ch) for ch in ln if ch in "01"] for ln in lines]
    if len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: shots have different lengths")
    return np.array(rows, dtype=np.uint8)


def _write_shots(path, bits: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_2d(bits):
            fh.write("".join("1" if b else "0" for b in row) + "\n")


def _write_bit_lines(fh, bits) -> None:
    for b in np.ravel(bits):
        fh.write(f"{int(b)}\n")


def _circuit_and_dem(d: int, T: int):
    from .dem_builder import build_dem
    from .stab_circuit import build_surface_code

    circ = build_surface_code(d)
    return circ, build_dem(circ, T)


def _truth_for(args, circ):
    from .chip_qp import read_trajectory

    if args.qp is None:
        return None
    traj = read_trajectory(args.qp)
    if traj.J != circ.N:
        raise SystemExit(f"trajectory has {traj.J} sites but the circuit has {circ.N} qubits")
    return traj


# ---------------------------------------------------------------- subcommands


def cmd_simulate_qp(args) -> int:
    from .chip_qp import DiffusionParams, InjectionEvent, grid_geometry, simulate_qp, write_geometry, write_trajectory
    from .stab_circuit import build_surface_code

    geom = grid_geometry(args.grid, args.grid) if args.grid else build_surface_code(args.d).geometry
    params = DiffusionParams(kappa=args.kappa, s=args.s, rho=args.rho, sigma_kernel=args.sigma_kernel, gamma=args.gamma, r=args.r)
    events = [InjectionEvent(args.t0, args.site, args.amplitude, args.spread)] if args.amplitude > 0 else []
    traj = simulate_qp(
        geom,
        params,
        events,
        args.T,
        mode=args.mode,
        seed=args.seed,
        x0=args.x0,
        process_noise=args.process_noise,
        background=args.background,
    )
    write_trajectory(traj, args.out, binary=args.binary)
    if args.geometry_out:
        write_geometry(geom, args.geometry_out)
    print(f"wrote {traj.J} x {traj.T} trajectory to {args.out} (peak {traj.values.max():.3e})")
    return 0


def cmd_build_dem(args) -> int:
    from .dem_builder import mechanism_priors, uniform_fault_priors, write_dem, write_priors

    circ, dem = _circuit_and_dem(args.d, args.T)
    write_dem(dem, args.h_out, args.o_out)
    if args.gates_out:
        Path(args.gates_out).write_text("\n".join(circ.gate_list(args.T)) + "\n")
    if args.priors_out:
        traj = _truth_for(args, circ)
        if traj is not None:
            pri = mechanism_priors(dem, traj.values, prior_mode=args.prior_mode)
        else:
            pri = uniform_fault_priors(dem, args.iid_p, args.prior_mode)
        write_priors(args.priors_out, pri)
    print(f"DEM: {dem.n_det} detectors x {dem.n_mech} mechanisms")
    return 0


def cmd_sample(args) -> int:
    from .stab_circuit import build_surface_code, fault_probabilities, sample_shots

    circ = build_surface_code(args.d)
    traj = _truth_for(args, circ)
    probs = fault_probabilities(circ, traj.values) if traj is not None else np.full(3, args.iid_p)
    if traj is not None and traj.T != args.T:
        raise SystemExit(f"trajectory covers {traj.T} cycles, --T is {args.T}")
    dets, obs = sample_shots(circ, args.T, probs, args.shots, args.seed)
    _write_shots(args.out, dets)
    if args.obs_out:
        _write_shots(args.obs_out, obs)
    print(f"sampled {args.shots} shots, mean detection rate {dets.mean():.4f}")
    return 0


def cmd_decode(args) -> int:
    if args.mode:
        return _decode_mode(args)
    if not (args.h and args.priors and args.syndrome):
        raise SystemExit("file mode needs --h, --priors and --syndrome (or pass --mode)")
    from .bp_osd import decode, predict_observable
    from .dem_builder import read_coo, read_priors

    H = read_coo(args.h)
    pri = read_priors(args.priors)
    syn = _bits_file(args.syndrome)[args.shot]
    res = decode(H, pri, syn, args.bp_iters, args.osd_order, args.osd_mode)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        _write_bit_lines(out, res.hard_decisions)
        if args.o:
            obs = predict_observable(read_coo(args.o), res.hard_decisions)
            if args.obs_out:
                with open(args.obs_out, "w") as fh:
                    _write_bit_lines(fh, obs)
            else:
                out.write("# observables\n")
                _write_bit_lines(out, obs)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _decode_mode(args) -> int:
    from .chip_qp import QpTrajectory, build_laplacian, write_trajectory
    from .harness import ExperimentConfig, decode_mode
    from .sensing import WindowPlan, write_trace

    circ, dem = _circuit_and_dem(args.d, args.T)
    traj = _truth_for(args, circ)
    if args.mode == "genie" and traj is None:
        raise SystemExit("genie mode needs the true trajectory via --qp")
    syn = _bits_file(args.syndrome)[args.shot]
    if syn.size != dem.n_det:
        raise SystemExit(f"syndrome has {syn.size} bits, DEM expects {dem.n_det}")
    cfg = ExperimentConfig(d=args.d, T=args.T, modes=(args.mode,))
    kw = {
        "tw": args.tw,
        "ts": args.ts,
        "K": args.outer_k,
        "M": args.inner_m,
        "sigma_q2": args.sigma_q2,
        "sigma_r2": args.sigma_r2,
        "kappa": args.kappa,
        "s": args.s,
        "osd_order": args.osd_order,
        "bp_iters": args.bp_iters,
        "osd_mode": args.osd_mode,
    }
    kw = {k: v for k, v in kw.items() if v is not None}
    if args.mode == "alg2-ekf":
        kw["ekf_tw"] = kw.pop("tw", cfg.ekf_tw)
        kw["ekf_ts"] = kw.pop("ts", cfg.ekf_ts)
    if args.mode == "uniform":
        kw["uniform_tw"] = kw.pop("tw", cfg.uniform_tw)
        kw["uniform_ts"] = kw.pop("ts", cfg.uniform_ts)
    cfg = cfg.with_(**kw)
    L = build_laplacian(circ.geometry, cfg.rho, cfg.sigma_kernel)
    truth_log = None if traj is None else np.log(traj.values)
    res = decode_mode(args.mode, cfg, dem, WindowPlan(dem), L, syn, truth_log, with_truth_trace=traj is not None)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        _write_bit_lines(out, res.E)
        if not args.obs_out:
            out.write("# observables\n")
            _write_bit_lines(out, res.observables)
    finally:
        if out is not sys.stdout:
            out.close()
    if args.obs_out:
        with open(args.obs_out, "w") as fh:
            _write_bit_lines(fh, res.observables)
    if args.trace_out:
        write_trace(args.trace_out, res.trace)
    if args.qp_out:
        write_trajectory(QpTrajectory(res.X), args.qp_out)
    return 0


def _load_cfg(args):
    from .harness import load_config

    return load_config(args.config, args.set or ())


def cmd_evaluate(args) -> int:
    from .harness import emit_report, report_to_csv, run_experiment

    cfg = _load_cfg(args)
    report = run_experiment(cfg)
    if args.out:
        fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "json")
        emit_report(report, args.out, fmt, timing=not args.no_timing)
    sys.stdout.write(report_to_csv(report, timing=not args.no_timing))
    return 0


def _grid_arg(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise SystemExit(f"grid entry {item!r} is not key=v1,v2,...")
        k, v = item.split("=", 1)
        grid[k.strip()] = [float(x) for x in v.split(",") if x.strip()]
    return grid


def cmd_sweep(args) -> int:
    import csv

    from .harness import sweep

    allowed = {"kappa", "s", "sigma_q2", "sigma_r2"}
    grid = _grid_arg(args.grid)
    bad = set(grid) - allowed
    if bad:
        raise SystemExit(f"sweep keys must be among {sorted(allowed)}, got {sorted(bad)}")
    rows = sweep(_load_cfg(args), grid, args.mode, args.objective)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        wr = csv.DictWriter(out, fieldnames=list(rows[0]), lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_report(args) -> int:
    from .harness import emit_report, read_report

    rep = read_report(args.report)
    if args.convert:
        fmt = "csv" if str(args.convert).endswith(".csv") else "json"
        emit_report(rep, args.convert, fmt)
    width = max(len(m.mode) for m in rep.modes)
    print(f"{'mode':<{width}}  {'PLE':>7}  {'95% CI':>17}  {'mse_mean':>9}  {'mse_max':>9}")
    for m in rep.modes:
        mse = "" if m.mse_mean is None else f"{m.mse_mean:9.3f}  {m.mse_max:9.3f}"
        print(f"{m.mode:<{width}}  {m.ple:7.4f}  [{m.ci_low:.4f}, {m.ci_high:.4f}]  {mse}")
    for a, b, p in rep.pairwise:
        print(f"McNemar {a} vs {b}: p = {p:.3g}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qpdec", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate-qp", help="generate a QP density trajectory")
    p.add_argument("--d", type=int, default=3, help="sample at the sites of a distance-d patch")
    p.add_argument("--grid", type=int, default=0, help="simulate on an n x n chip grid instead")
    p.add_argument("--T", type=int, default=30)
    p.add_argument("--kappa", type=float, default=0.1)
    p.add_argument("--s", type=float, default=0.1)
    p.add_argument("--rho", type=float, default=4.0)
    p.add_argument("--sigma-kernel", type=float, default=2.5)
    p.add_argument("--gamma", type=float, default=1e-7)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--mode", choices=("linear", "nonlinear"), default="linear")
    p.add_argument("--amplitude", type=float, default=300.0)
    p.add_argument("--spread", type=float, default=2.0)
    p.add_argument("--site", type=int, default=0)
    p.add_argument("--t0", type=int, default=3)
    p.add_argument("--x0", type=float, default=1e-8)
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--process-noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--binary", action="store_true")
    p.add_argument("--geometry-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_qp)

    p = sub.add_parser("build-dem", help="export H, O and priors for a surface-code memory")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--T", type=int, default=30)
    p.add_argument("--h-out", required=True)
    p.add_argument("--o-out")
    p.add_argument("--gates-out")
    p.add_argument("--priors-out")
    p.add_argument("--qp", help="trajectory file for priors")
    p.add_argument("--iid-p", type=float, default=1e-3)
    p.add_argument("--prior-mode", choices=("sum", "xor"), default="sum")
    p.set_defaults(func=cmd_build_dem)

    p = sub.add_parser("sample", help="sample detector shots")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--T", type=int, default=30)
    p.add_argument("--qp", help="trajectory file; otherwise iid faults")
    p.add_argument("--iid-p", type=float, default=1e-3)
    p.add_argument("--shots", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--obs-out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("decode", help="decode one syndrome")
    p.add_argument("--h")
    p.add_argument("--o")
    p.add_argument("--priors")
    p.add_argument("--syndrome", required=True)
    p.add_argument("--shot", type=int, default=0, help="row of a multi-shot file")
    p.add_argument("--mode", choices=("genie", "uniform", "alg1-offline", "alg1-window", "alg2-ekf"))
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--T", type=int, default=30)
    p.add_argument("--qp", help="true trajectory (genie priors, MSE trace)")
    p.add_argument("--tw", type=int)
    p.add_argument("--ts", type=int)
    p.add_argument("--outer-k", type=int)
    p.add_argument("--inner-m", type=int)
    p.add_argument("--sigma-q2", type=float)
    p.add_argument("--sigma-r2", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--s", type=float)
    p.add_argument("--osd-order", type=int, default=10)
    p.add_argument("--osd-mode", choices=("combination_sweep", "exhaustive"), default="combination_sweep")
    p.add_argument("--bp-iters", type=int, default=20)
    p.add_argument("--out")
    p.add_argument("--obs-out")
    p.add_argument("--trace-out")
    p.add_argument("--qp-out", help="write the estimated trajectory")
    p.set_defaults(func=cmd_decode)

    for name, fn, helptext in (("evaluate", cmd_evaluate, "run an experiment"), ("sweep", cmd_sweep, "grid search")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        p.add_argument("--out")
        if name == "evaluate":
            p.add_argument("--format", choices=("json", "csv"))
            p.add_argument("--no-timing", action="store_true", help="zero runtime fields for reproducible output")
        else:
            p.add_argument("--grid", action="append", required=True, metavar="KEY=V1,V2")
            p.add_argument("--mode", default="alg1-offline")
            p.add_argument("--objective", choices=("mse_max", "mse_mean", "ple"), default="mse_max")
        p.set_defaults(func=fn)

    p = sub.add_parser("report", help="summarise or convert a saved report")
    p.add_argument("report")
    p.add_argument("--convert", help="write the report again in another format")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"qpdec {args.cmd}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
