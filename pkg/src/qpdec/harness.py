"""Experiment orchestration: configs, truth bursts, decoding modes and metrics."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .chip_qp import (
    BASELINE_DENSITY,
    DiffusionParams,
    InjectionEvent,
    QpTrajectory,
    build_laplacian,
    grid_geometry,
    sample_at_sites,
    simulate_qp,
)
from .dem_builder import build_dem, syndrome_of
from .noise_model import NOMINAL, PhysicalConstants
from .sensing import SensingParams, WindowPlan, algorithm1, algorithm2, fixed_prior_decode
from .stab_circuit import build_surface_code, fault_probabilities, sample_shots

SCHEMA_VERSION = 1


class ShotError(RuntimeError):
    """A decoder failure annotated with the shot that triggered it."""

    def __init__(self, truth: int, shot: int, mode: str, cause: Exception):
        super().__init__(f"truth {truth}, shot {shot}, mode {mode}: {type(cause).__name__}: {cause}")
        self.truth, self.shot, self.mode = truth, shot, mode
MODES = ("genie", "uniform", "alg1-offline", "alg1-window", "alg2-ekf")


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 3
    T: int = 30
    modes: tuple = MODES
    shots: int = 200
    seed: int = 1
    n_truth: int = 1
    # truth generator
    truth_kappa: float = 0.02
    truth_s: float = 0.1
    truth_rho: float = 4.0
    truth_sigma_kernel: float = 2.5
    truth_gamma: float = 1e-7
    truth_baseline: float = BASELINE_DENSITY
    truth_grid: int = 0  # 0: simulate on qubit sites; n > 0: n x n chip grid
    truth_mode: str = "linear"
    burst: bool = True
    burst_t0: int = 3
    # severity calibrated so that uniform/genie PLE is about 2.8 at d = 3, T = 30
    burst_amp_min: float = 400.0
    burst_amp_max: float = 400.0
    burst_spread_min: float = 1.0
    burst_spread_max: float = 1.0
    burst_site: int = 4  # -1: random qubit per truth sample
    # decoders
    kappa: float = 0.02
    s: float = 0.1
    sigma_q2: float = 2.2889
    sigma_r2: float = 5.0  # chosen by sweep on the calibrated burst
    K: int = 10
    M: int = 20
    tw: int = 20
    ts: int = 10
    ekf_tw: int = 2
    ekf_ts: int = 1
    uniform_tw: int = 2
    uniform_ts: int = 1
    bp_iters: int = 20
    osd_order: int = 10
    osd_mode: str = "combination_sweep"
    prior_mode: str = "sum"
    rho: float = 4.0
    sigma_kernel: float = 2.5
    iid_p: float = 0.0  # > 0: ignore the QP field, every fault has this probability
    threads: int = 0
    output_dir: str = "."

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if not self.modes:
            raise ValueError("at least one decoder mode is required")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}; choose from {MODES}")

    def sensing(self, **kw) -> SensingParams:
        base = dict(
            kappa=self.kappa,
            s=self.s,
            sigma_q2=self.sigma_q2,
            sigma_r2=self.sigma_r2,
            K=self.K,
            M=self.M,
            tw=self.tw,
            ts=self.ts,
            bp_iters=self.bp_iters,
            osd_order=self.osd_order,
            osd_mode=self.osd_mode,
            prior_mode=self.prior_mode,
        )
        base.update(kw)
        return SensingParams(**base)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _coerce(name: str, raw: str):
    ftype = {f.name: f for f in fields(ExperimentConfig)}[name].type
    raw = raw.strip()
    if name == "modes":
        return tuple(m.strip() for m in raw.replace(",", " ").split() if m.strip())
    if ftype in ("int", int):
        return int(float(raw))
    if ftype in ("float", float):
        return float(raw)
    if ftype in ("bool", bool):
        return raw.lower() in ("1", "true", "yes", "on")
    return raw


def parse_overrides(pairs) -> dict:
    """``['key=value', ...]`` -> typed dict of config fields."""
    names = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in names:
            raise KeyError(f"unknown config key {k!r}")
        out[k] = _coerce(k, v)
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Read a ``key = value`` file (``#`` comments allowed) and apply overrides."""
    pairs = []
    if path is not None:
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                pairs.append(line)
    kw = parse_overrides(pairs)
    kw.update(parse_overrides(overrides))
    return ExperimentConfig(**kw)


# ------------------------------------------------------------------ truth


def make_truth(cfg: ExperimentConfig, circ, index: int) -> QpTrajectory:
    """Synthetic burst trajectory sampled at the circuit's qubit sites."""
    rng = np.random.default_rng([cfg.seed, 7919, index])
    params = DiffusionParams(
        kappa=cfg.truth_kappa,
        s=cfg.truth_s,
        rho=cfg.truth_rho,
        sigma_kernel=cfg.truth_sigma_kernel,
        gamma=cfg.truth_gamma,
    )
    qgeom = circ.geometry
    geom = qgeom if cfg.truth_grid <= 0 else grid_geometry(cfg.truth_grid, cfg.truth_grid, qgeom.width_mm, qgeom.height_mm)
    events = []
    if cfg.burst:
        amp = rng.uniform(cfg.burst_amp_min, cfg.burst_amp_max)
        spread = rng.uniform(cfg.burst_spread_min, cfg.burst_spread_max)
        q = int(rng.integers(circ.N)) if cfg.burst_site < 0 else cfg.burst_site
        pos = qgeom.sites[q]
        site = int(np.argmin(np.sum((geom.sites - pos) ** 2, axis=1)))
        events.append(InjectionEvent(cfg.burst_t0, site, amp, spread))
    traj = simulate_qp(geom, params, events, cfg.T, mode=cfg.truth_mode, x0=cfg.truth_baseline)
    if geom is not qgeom:
        traj = sample_at_sites(traj, geom, qgeom)
    return traj


# ------------------------------------------------------------------ statistics


def wilson_interval(k: int, n: int, conf: float = 0.95) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    z = stats.norm.ppf(0.5 + conf / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return (max(0.0, centre - half), min(1.0, centre + half))


def mcnemar_p(fail_a: np.ndarray, fail_b: np.ndarray) -> float:
    """Exact two-sided McNemar p-value for paired failure indicators."""
    a = np.asarray(fail_a, bool)
    b = np.asarray(fail_b, bool)
    n01 = int(np.sum(~a & b))
    n10 = int(np.sum(a & ~b))
    n = n01 + n10
    if n == 0:
        return 1.0
    return float(min(1.0, 2 * stats.binom.cdf(min(n01, n10), n, 0.5)))


def shots_for_halfwidth(p_guess: float, halfwidth: float, conf: float = 0.95) -> int:
    """Smallest n whose Wilson half-width at ``p_guess`` is below ``halfwidth``."""
    n = 16
    while True:
        lo, hi = wilson_interval(int(round(p_guess * n)), n, conf)
        if (hi - lo) / 2 <= halfwidth or n > 10**8:
            return n
        n = int(n * 1.25) + 1


def mse_mean(Z: np.ndarray, truth_log: np.ndarray) -> float:
    return float(np.mean((Z - truth_log) ** 2))


def mse_max(Z: np.ndarray, truth_log: np.ndarray) -> float:
    return float(np.max(np.mean((Z - truth_log) ** 2, axis=0)))


# ------------------------------------------------------------------ experiment


@dataclass
class ModeMetrics:
    mode: str
    shots: int
    failures: int
    ple: float
    ci_low: float
    ci_high: float
    mse_mean: float | None = None
    mse_max: float | None = None
    seconds_per_shot: float = 0.0


@dataclass
class MetricsReport:
    config: dict
    modes: list = field(default_factory=list)
    pairwise: list = field(default_factory=list)  # (mode_a, mode_b, p_value)
    per_truth_mse: dict = field(default_factory=dict)  # mode -> [mse_mean per truth]
    schema_version: int = SCHEMA_VERSION
    # per-shot failure flags and parity-check count, kept in memory only
    fail_flags: dict = field(default_factory=dict, repr=False, compare=False)
    parity_checked: int = field(default=0, repr=False, compare=False)

    def mode(self, name: str) -> ModeMetrics:
        return next(m for m in self.modes if m.mode == name)

    def ple(self, name: str) -> float:
        return self.mode(name).ple

    def p_value(self, a: str, b: str) -> float:
        for x, y, p in self.pairwise:
            if {x, y} == {a, b}:
                return p
        raise KeyError((a, b))


class _Context:
    """Per-process cache of circuit, DEM and window plans."""

    _cache = {}

    @classmethod
    def get(cls, d: int, T: int):
        key = (d, T)
        if key not in cls._cache:
            circ = build_surface_code(d)
            dem = build_dem(circ, T)
            cls._cache[key] = (circ, dem, WindowPlan(dem))
        return cls._cache[key]


def decode_mode(mode: str, cfg: ExperimentConfig, dem, plan, L, syndrome, truth_log, with_truth_trace: bool = False):
    """Decode one shot in ``mode``; returns a ``SensingResult``.

    ``truth_log`` is required for the genie.  With ``with_truth_trace`` the
    estimating modes also record their MSE against it per iteration.
    """
    J = L.shape[0]
    T = dem.T
    truth = np.exp(truth_log) if (with_truth_trace and truth_log is not None) else None
    if mode == "genie":
        if truth_log is None:
            raise ValueError("genie mode needs the true trajectory")
        return fixed_prior_decode(dem, syndrome, truth_log, cfg.sensing(), T, T, L, plan)
    if mode == "uniform":
        Zu = np.full((J, T), math.log(BASELINE_DENSITY))
        return fixed_prior_decode(dem, syndrome, Zu, cfg.sensing(), cfg.uniform_tw, cfg.uniform_ts, L, plan)
    if mode == "alg1-offline":
        return algorithm1(dem, syndrome, cfg.sensing(), L, "offline", truth=truth, plan=plan)
    if mode == "alg1-window":
        return algorithm1(dem, syndrome, cfg.sensing(), L, "window", truth=truth, plan=plan)
    if mode == "alg2-ekf":
        return algorithm2(dem, syndrome, cfg.sensing(tw=cfg.ekf_tw, ts=cfg.ekf_ts), L, truth=truth, plan=plan)
    raise ValueError(f"unknown mode {mode!r}")


def _iid_decode(cfg, dem, plan, syndrome):
    from .bp_osd import decode
    from .dem_builder import uniform_fault_priors

    pri = uniform_fault_priors(dem, cfg.iid_p, cfg.prior_mode)
    return decode(dem, pri, syndrome, cfg.bp_iters, cfg.osd_order, cfg.osd_mode)


def _run_chunk(args):
    cfg, truth_idx, shot_lo, shot_hi = args
    circ, dem, plan = _Context.get(cfg.d, cfg.T)
    L = build_laplacian(circ.geometry, cfg.rho, cfg.sigma_kernel)
    n = shot_hi - shot_lo
    seed = np.random.SeedSequence([cfg.seed, truth_idx, shot_lo])
    if cfg.iid_p > 0:
        probs = np.full(3, cfg.iid_p)
        truth_log = None
    else:
        traj = make_truth(cfg, circ, truth_idx)
        probs = fault_probabilities(circ, traj.values)
        truth_log = np.log(traj.values)
    dets, obs = sample_shots(circ, cfg.T, probs, n, seed)
    fails = {m: np.zeros(n, dtype=bool) for m in cfg.modes}
    mses = {m: np.zeros(n) for m in cfg.modes}
    msemax = {m: np.zeros(n) for m in cfg.modes}
    secs = {m: 0.0 for m in cfg.modes}
    checked = 0
    for k in range(n):
        for m in cfg.modes:
            t0 = time.perf_counter()
            try:
                if cfg.iid_p > 0:
                    r = _iid_decode(cfg, dem, plan, dets[k])
                else:
                    r = decode_mode(m, cfg, dem, plan, L, dets[k], truth_log)
                    if not np.array_equal(syndrome_of(dem, r.E), dets[k]):
                        raise AssertionError("committed errors do not reproduce the syndrome")
                    checked += 1
                    mses[m][k] = mse_mean(np.log(r.X), truth_log)
                    msemax[m][k] = mse_max(np.log(r.X), truth_log)
            except Exception as exc:
                raise ShotError(truth_idx, shot_lo + k, m, exc) from exc
            secs[m] += time.perf_counter() - t0
            fails[m][k] = bool(np.any(r.observables != obs[k]))
    return truth_idx, shot_lo, fails, mses, msemax, secs, checked


def _workers(cfg: ExperimentConfig) -> int:
    env = os.environ.get("QPDEC_THREADS")
    cap = int(env) if env else (cfg.threads or 1)
    return max(1, cap)


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """Sample shots per truth sample, decode with every mode, aggregate metrics.

    Shots are split evenly across ``n_truth`` truth samples.  Each (truth,
    chunk) pair has its own seed, so results do not depend on the worker count.
    """
    per = [cfg.shots // cfg.n_truth + (1 if i < cfg.shots % cfg.n_truth else 0) for i in range(cfg.n_truth)]
    chunk = 25
    jobs = []
    for ti, n in enumerate(per):
        for lo in range(0, n, chunk):
            jobs.append((cfg, ti, lo, min(n, lo + chunk)))
    workers = _workers(cfg)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_chunk, jobs))
    else:
        results = [_run_chunk(j) for j in jobs]
    results.sort(key=lambda r: (r[0], r[1]))
    return _aggregate(cfg, results)


def _aggregate(cfg, results) -> MetricsReport:
    modes = list(cfg.modes)
    fails = {m: np.concatenate([r[2][m] for r in results]) for m in modes}
    secs = {m: sum(r[5][m] for r in results) for m in modes}
    report = MetricsReport(config=_config_dict(cfg))
    sensing = cfg.iid_p <= 0
    for m in modes:
        n = len(fails[m])
        k = int(fails[m].sum())
        lo, hi = wilson_interval(k, n)
        mm = ModeMetrics(m, n, k, k / n, lo, hi, seconds_per_shot=secs[m] / n)
        if sensing:
            per_truth = {}
            per_truth_max = {}
            for r in results:
                per_truth.setdefault(r[0], []).append(r[3][m])
                per_truth_max.setdefault(r[0], []).append(r[4][m])
            means = [float(np.mean(np.concatenate(v))) for _, v in sorted(per_truth.items())]
            maxes = [float(np.mean(np.concatenate(v))) for _, v in sorted(per_truth_max.items())]
            mm.mse_mean = float(np.mean(means))
            mm.mse_max = float(np.mean(maxes))
            report.per_truth_mse[m] = means
        report.modes.append(mm)
    for i, a in enumerate(modes):
        for b in modes[i + 1 :]:
            report.pairwise.append((a, b, mcnemar_p(fails[a], fails[b])))
    report.fail_flags = fails
    report.parity_checked = sum(r[6] for r in results)
    return report


def _config_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["modes"] = list(cfg.modes)
    return out


def sweep(cfg: ExperimentConfig, grid: dict, mode: str = "alg1-offline", objective: str = "mse_max") -> list:
    """Evaluate every grid point; rows sorted ascending by the objective."""
    keys = sorted(grid)
    rows = []
    for values in _product([grid[k] for k in keys]):
        point = dict(zip(keys, values))
        rep = run_experiment(cfg.with_(modes=(mode,), **point))
        mm = rep.mode(mode)
        rows.append({**point, "objective": getattr(mm, objective), "ple": mm.ple})
    rows.sort(key=lambda r: r["objective"])
    return rows


def _product(lists):
    if not lists:
        yield ()
        return
    for v in lists[0]:
        for rest in _product(lists[1:]):
            yield (v,) + rest


# ------------------------------------------------------------------ reports

_CSV_FIELDS = [f.name for f in fields(ModeMetrics)]


def _strip_timing(report: MetricsReport) -> MetricsReport:
    modes = [replace(m, seconds_per_shot=0.0) for m in report.modes]
    return replace(report, modes=modes)


def report_to_csv(report: MetricsReport, timing: bool = True) -> str:
    if not timing:
        report = _strip_timing(report)
    buf = io.StringIO()
    buf.write(f"# schema_version={report.schema_version}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(_CSV_FIELDS)
    for m in report.modes:
        wr.writerow(["" if getattr(m, k) is None else _fmt(getattr(m, k)) for k in _CSV_FIELDS])
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def report_to_json(report: MetricsReport, timing: bool = True) -> str:
    """Sorted-key JSON.  ``timing=False`` zeroes the runtime fields so that
    repeated runs of one config serialise to identical bytes."""
    if not timing:
        report = _strip_timing(report)
    payload = {
        "schema_version": report.schema_version,
        "config": report.config,
        "modes": [asdict(m) for m in report.modes],
        "pairwise": [list(p) for p in report.pairwise],
        "per_truth_mse": report.per_truth_mse,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def emit_report(report: MetricsReport, path, fmt: str = "json", timing: bool = True) -> Path:
    if fmt not in ("json", "csv"):
        raise ValueError("report format must be 'json' or 'csv'")
    path = Path(path)
    text = report_to_json(report, timing) if fmt == "json" else report_to_csv(report, timing)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"could not write report to {path}: {exc}") from exc
    return path


def parse_report(text: str, fmt: str = "json") -> MetricsReport:
    if fmt == "json":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported report schema version")
        modes = [ModeMetrics(**m) for m in data["modes"]]
        pairwise = [tuple(p) for p in data["pairwise"]]
        return MetricsReport(data["config"], modes, pairwise, data["per_truth_mse"], data["schema_version"])
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema_version="):
        raise ValueError("missing schema header")
    version = int(lines[0].split("=", 1)[1])
    rd = csv.DictReader(lines[1:])
    modes = []
    for row in rd:
        kw = {}
        for f in fields(ModeMetrics):
            v = row[f.name]
            if f.name == "mode":
                kw[f.name] = v
            elif v == "":
                kw[f.name] = None
            elif f.name in ("shots", "failures"):
                kw[f.name] = int(v)
            else:
                kw[f.name] = float(v)
        modes.append(ModeMetrics(**kw))
    return MetricsReport({}, modes, [], {}, version)


def read_report(path, fmt: str | None = None) -> MetricsReport:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "json")
    return parse_report(path.read_text(), fmt)
