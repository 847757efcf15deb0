"""Scenario drivers: localized decay, periodic decay, counterexample, pipeline.

Each command returns a ``RunReport`` whose verdicts can be recomputed from
its time series; ``write_outputs`` dumps the report, the series CSV, state
snapshots and (when matplotlib is available) one SVG per series column.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .flux import FluxDomainError, NoAdmissibleValue, affine_structure, check_gn, nonlinearity_subspace, subspace_family
from .lattice import CertificateError, Lattice, LatticeError, random_avoiding_lattice, verify_avoidance
from .norms import GridFunction, l1_over, v_norm
from .periodization import (
    EnvelopeError,
    admissibility,
    default_eps,
    envelopes,
    grid_tolerance,
    mr_bound_check,
    sandwich_violation,
    shifted_periodic_data,
)
from .shapes import Ball, Box, Shape
from .solver import CFLError, MonotoneScheme, auto_box, evolve, hopf_lax_1d, tabulate_flux, to_torus, traveling_wave
from .torus import PeriodicGridFunction, periodic_v_norm, torus_resolution

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("t", "x_norm", "l1_cell", "mass", "dev_plus", "dev_minus")


class GNFailure(RuntimeError):
    """The command's precondition on genuine nonlinearity is not met."""

    def __init__(self, msg: str, report: RunReport | None = None):
        super().__init__(msg)
        self.report = report


class PipelineError(RuntimeError):
    def __init__(self, stage: str, msg: str, report: RunReport | None = None):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage
        self.report = report


@dataclass
class RunReport:
    command: str
    config: dict
    seed: int
    verdicts: dict[str, dict] = field(default_factory=dict)
    series: list[dict] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    states: list[tuple[str, Any]] = field(default_factory=list, repr=False)
    series_columns: tuple[str, ...] = SERIES_COLUMNS

    @property
    def passed(self) -> bool:
        return all(v.get("passed") is not False for v in self.verdicts.values())

    def verdict(self, name: str, passed: bool | None, **detail):
        self.verdicts[name] = {"passed": None if passed is None else bool(passed), **detail}

    def column(self, name: str, **where) -> np.ndarray:
        rows = [r for r in self.series if all(r.get(k) == v for k, v in where.items())]
        return np.array([np.nan if r.get(name) is None else r[name] for r in rows], dtype=float)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "command": self.command,
            "passed": self.passed,
            "seed": self.seed,
            "config": self.config,
            "verdicts": self.verdicts,
            **self.extra,
            "versions": {"entropy_decay": __version__, "numpy": np.__version__, "python": platform.python_version()},
            "timings": self.timings,
        }


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# {{{ shared helpers


def fit_rate(ts, values, window) -> dict:
    """Least-squares slope of ``log(values)`` against ``log(ts)`` on ``window``."""
    ts = np.asarray(ts, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (ts >= window[0] - 1e-12) & (ts <= window[1] + 1e-12) & (values > 0)
    if np.count_nonzero(sel) < 2:
        return {"slope": None, "intercept": None, "residual": None, "samples": int(np.count_nonzero(sel))}
    x, y = np.log(ts[sel]), np.log(values[sel])
    (slope, intercept), res, *_ = np.polyfit(x, y, 1, full=True)
    rms = float(np.sqrt(res[0] / x.size)) if res.size else 0.0
    return {"slope": float(slope), "intercept": float(intercept), "residual": rms, "samples": int(x.size)}


def window_surface(V: Shape) -> float:
    """Boundary measure of a window (two points in 1D)."""
    if V.dim == 1:
        return 2.0
    if isinstance(V, Ball):
        return 2 * np.pi * V.radius
    ext = V.hi - V.lo
    return 2.0 * float(np.sum(ext))


def data_range(*arrays) -> tuple[float, float]:
    lo = min(0.0, *(float(np.min(a)) for a in arrays if np.size(a)))
    hi = max(0.0, *(float(np.max(a)) for a in arrays if np.size(a)))
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def _table(cfg: ExperimentConfig, lo: float, hi: float):
    try:
        return tabulate_flux(cfg.flux, lo, hi, int(cfg.scheme.table_points))
    except FluxDomainError as exc:
        raise ConfigError(f"data range [{lo}, {hi}] is outside the flux u_range {cfg.flux.u_range}") from exc


def _schedule(*groups, T: float) -> list[float]:
    return sorted({round(float(t), 12) for g in groups for t in g if 0 < float(t) <= T + 1e-12})


def _states_times(cfg: ExperimentConfig, T: float) -> list[float]:
    every = cfg.output.states_every
    if not every:
        return []
    n = int(np.floor(T / every + 1e-9))
    return [round(k * every, 12) for k in range(0, n + 1)]


def _gn(cfg: ExperimentConfig):
    structure = affine_structure(cfg.flux)
    return structure, check_gn(structure)


def _thresholds(report: RunReport, name: str, column: str, thresholds, **where):
    if not thresholds:
        return
    ts = report.column("t", **where)
    vals = report.column(column, **where)
    checks = []
    for t, bound in thresholds:
        hit = np.flatnonzero(np.abs(ts - float(t)) < 1e-9)
        value = float(vals[hit[0]]) if hit.size else None
        checks.append({"t": float(t), "bound": float(bound), "value": value, "passed": value is not None and value <= bound})
    report.verdict(name, all(c["passed"] for c in checks), checks=checks)


def _box_series(V: Shape, stride, report_rows: list, states: list, label: str, state_times):
    def record(t, state):
        report_rows.append({
            "t": t,
            "x_norm": v_norm(state, V, stride),
            "l1_cell": l1_over(state, V, np.zeros(state.dim)),
            "mass": state.mass,
            "dev_plus": None,
            "dev_minus": None,
        })
        if any(abs(t - s) < 1e-9 for s in state_times):
            states.append((f"{label}_t{t:g}", state))

    return record


# }}}


# {{{ localized decay


def cmd_decay(cfg: ExperimentConfig, resolution_scale: float = 1.0) -> RunReport:
    report = RunReport("decay", cfg.to_json(), cfg.lattice.seed)
    clock = time.perf_counter()
    structure, gn = _gn(cfg)
    report.extra["gn"] = gn.to_json()
    report.verdict("gn", gn.holds, **gn.to_json())
    if not gn.holds:
        raise GNFailure(
            f"flux is affine on {gn.witness.lo, gn.witness.hi}, next to zero; localized data need not decay. "
            "Run the 'counterexample' command instead.",
            report,
        )
    u0 = cfg.initial.grid(cfg.base_dir, resolution_scale)
    V = cfg.window()
    T = float(cfg.scheme.T)
    table = _table(cfg, *data_range(u0.values))
    scheme = MonotoneScheme(table, cfg.scheme.flux)
    box = auto_box(u0, scheme.alpha, T, cfg.decay.margin)
    report.extra["grid"] = {"h": u0.h, "box_origin": box.origin, "box_shape": list(box.shape), "alpha": scheme.alpha,
                            "table_max_error": table.max_error}
    state_times = _states_times(cfg, T)
    times = _schedule(cfg.scheme.sample_times(T), [t for t, _ in cfg.decay.thresholds], state_times, T=T)
    record = _box_series(V, cfg.norm.stride, report.series, report.states, "u", state_times)
    report.timings["setup"] = time.perf_counter() - clock
    clock = time.perf_counter()
    final = evolve(box, scheme, T, cfl=cfg.scheme.cfl, times=times, callback=record)
    report.timings["solve"] = time.perf_counter() - clock

    ts, xs = report.column("t"), report.column("x_norm")
    _thresholds(report, "thresholds", "x_norm", cfg.decay.thresholds)
    later = ts >= cfg.decay.monotone_from - 1e-12
    inc = np.diff(xs[later])
    worst = float(inc.max()) if inc.size else 0.0
    report.verdict("x_norm_nonincreasing", worst <= cfg.decay.monotone_tol, from_t=cfg.decay.monotone_from,
                   max_increase=worst, tol=cfg.decay.monotone_tol)
    mass = report.column("mass")
    drift = float(np.max(np.abs(mass - mass[0])))
    report.verdict("mass_conserved", drift <= 1e-10 * max(1.0, abs(mass[0])), max_drift=drift)
    if cfg.decay.fit_window:
        report.verdict("rate_fit", None, window=list(cfg.decay.fit_window), **fit_rate(ts, xs, cfg.decay.fit_window))
    if cfg.decay.oracle:
        if u0.dim != 1 or not table.is_convex():
            report.verdict("oracle", None, note="oracle needs a convex 1D flux")
        else:
            clock = time.perf_counter()
            ref = oracle_state(table, u0, final, T)
            ref_norm = v_norm(ref, V, cfg.norm.stride)
            rel = abs(xs[-1] - ref_norm) / ref_norm if ref_norm > 0 else abs(xs[-1])
            report.verdict("oracle", rel <= 0.1, x_norm=float(xs[-1]), oracle_x_norm=ref_norm, rel_error=rel, rtol=0.1)
            report.timings["oracle"] = time.perf_counter() - clock
    report.extra["open_question"] = (
        "decay observed for the tabulated flux; effects of infinite propagation speed of the exact flux are not reproduced"
    )
    return report


def oracle_state(table, u0: GridFunction, numeric: GridFunction, t: float) -> GridFunction:
    """Hopf-Lax cell averages on the cells of ``numeric`` near the support."""
    vals = np.zeros(numeric.shape)
    x = numeric.axes()[0]
    # the exact solution moves at most max|slope|*t past the initial support
    lo, hi = u0.support_box() if u0.support_box() is not None else (np.zeros(1), np.zeros(1))
    s_lo, s_hi = table.slope_range()
    near = (x >= lo[0] + min(0.0, float(s_lo[0])) * t - 1.0) & (x <= hi[0] + max(0.0, float(s_hi[0])) * t + 1.0)
    if np.any(near):
        vals[near] = hopf_lax_1d(table, u0, t, x[near], delta=0.5 * numeric.h)
    return numeric.with_values(vals)


# }}}


# {{{ periodic decay


def periodic_initial(cfg: ExperimentConfig, resolution_scale: float = 1.0) -> PeriodicGridFunction:
    basis = np.eye(cfg.dim) if cfg.periodic.basis is None else np.asarray(cfg.periodic.basis, dtype=float)
    try:
        L = Lattice(basis)
    except LatticeError as exc:
        raise ConfigError(str(exc)) from exc
    r = float(cfg.periodic.r)
    shape = torus_resolution(L, r, cfg.initial.h / resolution_scale)
    template = PeriodicGridFunction(L, r, np.zeros(shape))
    return template.with_values(cfg.initial.evaluate(template.physical_centers()))


def ndp_certificate(cfg: ExperimentConfig, L: Lattice, M: float) -> dict:
    """Integer dual-lattice directions up to ``R`` avoiding the affine directions near ``M``."""
    lo, hi = cfg.flux.u_range
    rho = cfg.periodic.ndp_radius
    iv = (max(lo, M - rho), min(hi, M + rho))
    sub = nonlinearity_subspace(cfg.flux, iv)
    out = {"interval": list(iv), "affine_directions": sub.basis, "R": cfg.periodic.R}
    if not sub.is_proper:
        return {**out, "passed": False, "min_ratio": 0.0, "note": "flux is affine near the mean in every direction"}
    ratio, xi, alpha = verify_avoidance(L.dual().basis, [sub], cfg.periodic.R)
    return {**out, "passed": ratio > cfg.lattice.delta, "min_ratio": ratio, "worst_xi": xi}


def cmd_periodic_decay(cfg: ExperimentConfig, resolution_scale: float = 1.0) -> RunReport:
    report = RunReport("periodic-decay", cfg.to_json(), cfg.lattice.seed)
    clock = time.perf_counter()
    u0 = periodic_initial(cfg, resolution_scale)
    mean0 = u0.mean
    M = mean0 if cfg.periodic.M is None else float(cfg.periodic.M)
    scale = max(1.0, float(np.max(np.abs(u0.values))))
    report.verdict("mean_matches_M", abs(mean0 - M) <= 1e-12 * scale, mean=mean0, M=M)
    report.verdict("ndp", **ndp_certificate(cfg, u0.lattice, M))
    T = float(cfg.scheme.T)
    problem = to_torus(cfg.flux, u0.lattice, u0.r)
    table = problem.transform_table(_table(cfg, *data_range(u0.values)))
    scheme = MonotoneScheme(table, cfg.scheme.flux)
    state_times = _states_times(cfg, T)
    times = _schedule(cfg.scheme.sample_times(T), [t for t, _ in cfg.periodic.thresholds], state_times, T=T)
    V = cfg.window()
    report.extra["grid"] = {"torus_shape": list(u0.shape), "period_volume": u0.period_volume, "alpha": scheme.alpha}

    def record(t, state):
        report.series.append({
            "t": t,
            "x_norm": periodic_v_norm(state.with_values(state.values - M), V),
            "l1_cell": state.deviation_l1(M),
            "mass": state.mean,
            "dev_plus": None,
            "dev_minus": None,
        })
        if any(abs(t - s) < 1e-9 for s in state_times):
            report.states.append((f"u_t{t:g}", state))

    report.timings["setup"] = time.perf_counter() - clock
    clock = time.perf_counter()
    evolve(u0, scheme, T, cfl=cfg.scheme.cfl, times=times, callback=record)
    report.timings["solve"] = time.perf_counter() - clock
    means = report.column("mass")
    drift = float(np.max(np.abs(means - means[0])))
    report.verdict("mean_conserved", drift <= 1e-12 * scale, max_drift=drift, tol=1e-12 * scale)
    _thresholds(report, "thresholds", "l1_cell", cfg.periodic.thresholds)
    return report


# }}}


# {{{ counterexample


def cmd_counterexample(cfg: ExperimentConfig, resolution_scale: float = 1.0) -> RunReport:
    report = RunReport("counterexample", cfg.to_json(), cfg.lattice.seed)
    structure, gn = _gn(cfg)
    report.extra["gn"] = gn.to_json()
    if gn.holds:
        report.verdict("gn_fails", False, note="genuine nonlinearity holds, so no counterexample exists")
        raise GNFailure("genuine nonlinearity holds; the counterexample command does not apply", report)
    w = gn.witness
    report.verdict("gn_fails", True, interval=[w.lo, w.hi], slope=w.slope)
    u0 = cfg.initial.grid(cfg.base_dir, resolution_scale)
    if u0.values.min() < w.lo or u0.values.max() > w.hi:
        raise ConfigError(f"initial data range [{u0.values.min()}, {u0.values.max()}] leaves the affine interval [{w.lo}, {w.hi}]")
    c = np.asarray(w.slope, dtype=float)
    T = float(cfg.counterexample.T)
    times = cfg.counterexample.times or list(np.linspace(0.0, T, 101))
    V = cfg.window()
    ball = Ball(float(cfg.counterexample.ball_radius), u0.dim)
    state_times = _states_times(cfg, T)
    clock = time.perf_counter()
    for t in times:
        state = traveling_wave(u0, c, float(t))
        report.series.append({
            "t": float(t),
            "x_norm": v_norm(state, V, cfg.norm.stride),
            "l1_cell": l1_over(state, ball, np.zeros(u0.dim)),
            "mass": state.mass,
            "dev_plus": None,
            "dev_minus": None,
        })
        if any(abs(t - s) < 1e-9 for s in state_times):
            report.states.append((f"u_t{t:g}", state))
    report.timings["exact"] = time.perf_counter() - clock
    xs, ls, ts = report.column("x_norm"), report.column("l1_cell"), report.column("t")
    spread = float(xs.max() - xs.min())
    report.verdict("x_norm_constant", spread <= 1e-12 * max(1.0, float(xs[0])), spread=spread)
    speed = float(np.linalg.norm(c))
    supp = u0.support_box()
    if speed > 0 and supp is not None:
        reach = float(np.max(np.linalg.norm(np.stack(supp), axis=1)))
        t_exit = (ball.radius + reach) / speed
        after = ts >= t_exit - 1e-12
        report.verdict("ball_l1_vanishes", bool(np.all(ls[after] == 0.0)), t_exit=t_exit,
                       max_after=float(ls[after].max()) if after.any() else 0.0)
    else:
        spread_l1 = float(ls.max() - ls.min())
        report.verdict("ball_l1_constant", spread_l1 <= 1e-12 * max(1.0, float(ls[0])), spread=spread_l1)
    if cfg.counterexample.run_scheme:
        clock = time.perf_counter()
        table = _table(cfg, *data_range(u0.values))
        scheme = MonotoneScheme(table, cfg.scheme.flux)
        box = auto_box(u0, scheme.alpha, T, 2.0)
        rows = []
        evolve(box, scheme, T, cfl=cfg.scheme.cfl, times=[t for t in times if t > 0],
               callback=lambda t, s: rows.append({"t": t, "x_norm": v_norm(s, V, cfg.norm.stride),
                                                  "l1_ball": l1_over(s, ball, np.zeros(s.dim))}))
        report.extra["scheme_run"] = {
            "rows": rows,
            "caveat": "numerical diffusion spreads the transported profile, so the scheme's X-norm decays slowly "
                      "even though the exact solution keeps it constant",
        }
        report.timings["scheme"] = time.perf_counter() - clock
    return report


# }}}


# {{{ pipeline


def _ordered_bounds(upper: PeriodicGridFunction, lower: PeriodicGridFunction, pts: np.ndarray, h: float, cells: int):
    """Max of ``upper`` and min of ``lower`` over a ``(2*cells+1)**n`` stencil around each point."""
    dim = pts.shape[1]
    hi = np.full(len(pts), -np.inf)
    lo = np.full(len(pts), np.inf)
    for off in np.ndindex(*([2 * cells + 1] * dim)):
        shift = (np.asarray(off) - cells) * h
        hi = np.maximum(hi, upper.sample(pts + shift))
        lo = np.minimum(lo, lower.sample(pts + shift))
    return hi, lo


def cmd_pipeline(cfg: ExperimentConfig, resolution_scale: float = 1.0, seed: int | None = None) -> RunReport:
    seed = cfg.lattice.seed if seed is None else seed
    report = RunReport("pipeline", cfg.to_json(), seed, series_columns=SERIES_COLUMNS + ("r",))
    pc = cfg.pipeline
    clock = time.perf_counter()

    # (1) nonlinearity structure
    structure, gn = _gn(cfg)
    report.extra["gn"] = gn.to_json()
    report.verdict("gn", gn.holds)
    if not gn.holds:
        raise PipelineError("gn", f"flux is affine on {gn.witness.lo, gn.witness.hi} next to zero", report)
    subspaces = subspace_family(cfg.flux, structure)
    report.extra["subspaces"] = [{"interval": list(s.interval), "basis": s.basis} for s in subspaces]

    # (2) avoiding lattice and its dual
    try:
        L1, cert = random_avoiding_lattice(subspaces, cfg.lattice.R, cfg.lattice.delta, seed, cfg.dim, cfg.lattice.max_retries)
    except CertificateError as exc:
        raise PipelineError("lattice", str(exc), report) from exc
    L = L1.dual()
    report.extra["lattice"] = {"certificate": cert.to_json(), "period_basis": L.basis}
    report.verdict("lattice_certificate", cert.passed, min_ratio=cert.min_ratio)
    report.timings["structure"] = time.perf_counter() - clock

    # (3) envelopes and shifted periodic data
    clock = time.perf_counter()
    u0 = cfg.initial.grid(cfg.base_dir, resolution_scale)
    h = u0.h
    eps = default_eps(u0.sup_norm)
    p = float(admissibility(u0, [eps])[0])
    runs = []
    for r in pc.r_schedule:
        try:
            rep = replace(envelopes(u0, L, float(r)), p=p)
            u_plus, u_minus, rep = shifted_periodic_data(rep, structure.F)
        except (EnvelopeError, NoAdmissibleValue) as exc:
            raise PipelineError("envelopes", f"r={r}: {exc}", report) from exc
        bound = mr_bound_check(rep, eps, p, grid_tolerance(u0, rep.period_volume))
        scale = max(1.0, abs(rep.B_r_plus), abs(rep.B_r_minus))
        info = {
            **rep.scalars(),
            "eps": eps,
            "mr_bound": bound.to_json(),
            "sandwich_t0": sandwich_violation(u0, u_minus, u_plus),
            "envelope_sandwich_t0": sandwich_violation(u0, rep.v_minus, rep.v_plus),
            "mean_error_plus": abs(u_plus.mean - rep.B_r_plus) / scale,
            "mean_error_minus": abs(u_minus.mean - rep.B_r_minus) / scale,
            "torus_shape": list(u_plus.shape),
        }
        runs.append({"r": float(r), "report": rep, "u_plus": u_plus, "u_minus": u_minus, "info": info})
    report.extra["envelopes"] = [run["info"] for run in runs]
    report.verdict("mr_bound", all(run["info"]["mr_bound"]["passed"] for run in runs))
    report.verdict("sandwich_t0", all(run["info"]["sandwich_t0"] == 0.0 and run["info"]["envelope_sandwich_t0"] == 0.0 for run in runs))
    report.verdict("shifted_means", all(max(run["info"]["mean_error_plus"], run["info"]["mean_error_minus"]) <= 1e-12 for run in runs))
    Bp = [run["report"].B_r_plus for run in runs]
    report.verdict("B_plus_nonincreasing", all(b <= a for a, b in zip(Bp, Bp[1:])), B_plus=Bp)
    report.timings["envelopes"] = time.perf_counter() - clock

    # (4) three solves on one flux table and one time step
    clock = time.perf_counter()
    T = float(cfg.scheme.T)
    lo, hi = data_range(u0.values, *[run["u_plus"].values for run in runs], *[run["u_minus"].values for run in runs])
    table = _table(cfg, lo, hi)
    box_scheme = MonotoneScheme(table, cfg.scheme.flux)
    box = auto_box(u0, box_scheme.alpha, T, pc.margin)
    dts = [box_scheme.stable_dt([h] * u0.dim, cfg.scheme.cfl)]
    for run in runs:
        run["scheme"] = MonotoneScheme(to_torus(cfg.flux, L, run["r"]).transform_table(table), cfg.scheme.flux)
        dts.append(run["scheme"].stable_dt([1.0 / n for n in run["u_plus"].shape], cfg.scheme.cfl))
    dt = min(dts)
    check_times = [float(t) for t in pc.check_times if 0 < float(t) <= T + 1e-12]
    tail_start = pc.tail_fraction * T
    state_times = _states_times(cfg, T)
    times = _schedule(cfg.scheme.sample_times(T), check_times, state_times, T=T)
    V = cfg.window()
    report.extra["solve"] = {"dt": dt, "table_range": [lo, hi], "alpha": box_scheme.alpha, "box_shape": list(box.shape),
                             "box_origin": box.origin, "table_max_error": table.max_error}

    box_rows: dict[float, dict] = {}
    box_states: dict[float, GridFunction] = {}

    def record_box(t, state):
        box_rows[t] = {"x_norm": v_norm(state, V, cfg.norm.stride), "l1_cell": l1_over(state, V, np.zeros(state.dim)),
                       "mass": state.mass}
        if any(abs(t - s) < 1e-9 for s in check_times):
            box_states[t] = state
        if any(abs(t - s) < 1e-9 for s in state_times):
            report.states.append((f"u_t{t:g}", state))

    try:
        evolve(box, box_scheme, T, dt=dt, times=times, callback=record_box)
        for run in runs:
            for side in ("plus", "minus"):
                B = run["report"].B_r_plus if side == "plus" else run["report"].B_r_minus
                devs, snaps = {}, {}

                def record_torus(t, state, B=B, devs=devs, snaps=snaps, side=side, r=run["r"]):
                    devs[t] = periodic_v_norm(state.with_values(state.values - B), V)
                    if any(abs(t - s) < 1e-9 for s in check_times):
                        snaps[t] = state
                    if any(abs(t - s) < 1e-9 for s in state_times):
                        report.states.append((f"u_{side}_r{r:g}_t{t:g}", state))

                evolve(run[f"u_{side}"], run["scheme"], T, dt=dt, times=times, callback=record_torus)
                run[f"dev_{side}"] = devs
                run[f"snap_{side}"] = snaps
    except CFLError as exc:
        raise PipelineError("solve", str(exc), report) from exc
    report.timings["solves"] = time.perf_counter() - clock

    # (5) sandwich at the check times, (6) series, (7) final bound
    clock = time.perf_counter()
    c = V.volume
    cells = int(pc.tolerance_cells)
    for run in runs:
        r = run["r"]
        worst = 0.0
        checks = []
        for t in check_times:
            key = min(box_states, key=lambda s: abs(s - t))
            u = box_states[key]
            pts = u.centers().reshape(-1, u.dim)
            upper, lower = _ordered_bounds(run["snap_plus"][key], run["snap_minus"][key], pts, h, cells)
            vals = u.values.ravel()
            viol = float(max(0.0, np.max(vals - upper), np.max(lower - vals)))
            worst = max(worst, viol)
            checks.append({"t": t, "violation": viol})
        report.verdict(f"sandwich_r{r:g}", worst <= 1e-12, checks=checks, spatial_tolerance=cells * h)
        B_p, B_m = run["report"].B_r_plus, run["report"].B_r_minus
        for t in sorted(box_rows):
            report.series.append({"t": t, **box_rows[t], "dev_plus": run["dev_plus"][t], "dev_minus": run["dev_minus"][t], "r": r})
        tol = window_surface(V) * cells * h * (u0.sup_norm + abs(B_p) + abs(B_m))
        tail = [t for t in sorted(box_rows) if t >= tail_start - 1e-12]
        lhs = [box_rows[t]["x_norm"] for t in tail]
        rhs = [run["dev_plus"][t] + run["dev_minus"][t] + c * (abs(B_p) + abs(B_m)) for t in tail]
        report.verdict(
            f"final_bound_r{r:g}",
            all(a <= b + tol for a, b in zip(lhs, rhs)),
            tail_window=[tail_start, T],
            tail_max_x_norm=max(lhs) if lhs else None,
            tail_max_bound=max(rhs) if rhs else None,
            ball_volume=c,
            tol=tol,
        )
        devp = [run["dev_plus"][t] for t in sorted(run["dev_plus"])]
        report.verdict(f"deviation_trend_r{r:g}", None, dev_plus_first=devp[0], dev_plus_last=devp[-1],
                       nonincreasing=all(b <= a + 1e-12 for a, b in zip(devp, devp[1:])))
    report.extra["open_question"] = "the limsup over t is evaluated as the maximum over the tail window [tail_fraction*T, T]"
    report.timings["verdicts"] = time.perf_counter() - clock
    return report


# }}}


# {{{ output


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_series(path: Path, rows: list[dict], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def write_state(path: Path, state) -> None:
    pts = state.centers() if isinstance(state, GridFunction) else state.physical_centers()
    pts = pts.reshape(-1, state.dim)
    names = ["x", "y"][: state.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["value"])
        for p, v in zip(pts, state.values.ravel()):
            w.writerow([repr(float(q)) for q in p] + [repr(float(v))])


def write_plots(plot_dir: Path, report: RunReport) -> list[str]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.info("matplotlib not installed; skipping plots")
        return []
    plt.rcParams["svg.hashsalt"] = "entropy-decay"
    written = []
    groups = sorted({row.get("r") for row in report.series}, key=lambda v: -1 if v is None else v)
    for col in report.series_columns:
        if col in ("t", "r"):
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        drew = False
        for g in groups:
            where = {} if g is None else {"r": g}
            ts, vs = report.column("t", **where), report.column(col, **where)
            if np.all(np.isnan(vs)):
                continue
            ax.plot(ts, vs, label=None if g is None else f"r={g:g}")
            drew = True
        if drew:
            ax.set_xlabel("t")
            ax.set_ylabel(col)
            if len(groups) > 1:
                ax.legend()
            path = plot_dir / f"{col}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            written.append(path.name)
        plt.close(fig)
    return written


def write_outputs(report: RunReport, out_dir, plots: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "series.csv", report.series, report.series_columns)
    if report.states:
        (out / "states").mkdir(exist_ok=True)
        for label, state in report.states:
            write_state(out / "states" / f"{label}.csv", state)
    if plots and report.series:
        (out / "plots").mkdir(exist_ok=True)
        report.extra["plots"] = write_plots(out / "plots", report)
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2, default=_json_default) + "\n")


# }}}
