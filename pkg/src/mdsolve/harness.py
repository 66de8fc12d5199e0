"""Single runs, time-step convergence studies and linear-solver iteration studies."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import build_basis
from .cases import TestCase, exact_solution, initial_state, l2_error
from .config import RunConfig
from .mesh import build_cartesian_mesh
from .operators import DiscreteSpace
from .solver import SolverError
from .timestepping import BlowUpError, HBPCIntegrator, StageSolveError, rk4_reference_advance

log = logging.getLogger(__name__)

CSV_VERSION = "# mdsolve-csv-v1"


class RunError(RuntimeError):
    """A solver failure during a run, tagged with the step index."""

    def __init__(self, message, step, cause=None):
        super().__init__(message)
        self.step = step
        self.cause = cause


def build_problem(cfg: RunConfig):
    params = {}
    if cfg.case == "advection":
        params["a"] = tuple(cfg.velocity)
    else:
        params.update(gamma=cfg.gamma, eps=cfg.eps)
        if cfg.case == "navier_stokes":
            params.update(mu=cfg.mu, prandtl=cfg.prandtl)
    case = TestCase(cfg.case, params=params, velocity=tuple(cfg.velocity))
    mesh = build_cartesian_mesh(cfg.nx, cfg.ny, cfg.bounds)
    space = DiscreteSpace(mesh, build_basis(cfg.degree), case.equation(), br2_eta=cfg.br2_eta)
    return case, space


def step_sizes(t_end: float, dt: float, rel_tol: float = 1e-10):
    """Steps of size dt with the last one shortened to land on t_end."""
    if not (dt > 0 and t_end > 0):
        raise ValueError("dt and t_end must be positive")
    n_full = math.floor(t_end / dt + rel_tol)
    steps = [dt] * n_full
    rest = t_end - n_full * dt
    if rest > rel_tol * dt:
        steps.append(rest)
    return steps


_REFERENCE_CACHE: dict = {}


def reference_solution(space: DiscreteSpace, w0, t_end: float, dt: float, cache_key=None):
    """Explicit RK4 reference at t_end."""
    if cache_key is not None and cache_key in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[cache_key]
    w = w0
    for h in step_sizes(t_end, dt):
        w = rk4_reference_advance(space, h, w)
    if cache_key is not None:
        _REFERENCE_CACHE[cache_key] = w
    return w


def _reference_key(cfg: RunConfig, t_end):
    return (cfg.case, tuple(cfg.velocity), cfg.eps, cfg.gamma, cfg.mu, cfg.prandtl, cfg.br2_eta,
            cfg.nx, cfg.ny, cfg.degree, tuple(cfg.bounds), t_end, cfg.reference_dt)


def uses_exact(cfg: RunConfig) -> bool:
    if cfg.error_reference == "auto":
        return cfg.case in ("advection", "euler")
    return cfg.error_reference == "exact"


@dataclass
class RunSummary:
    config_hash: str
    dt: float
    steps: int
    t_final: float
    errors: np.ndarray | None = None
    err_sum: float = float("nan")
    newton_total: int = 0
    gmres_total: int = 0
    wallclock: float = 0.0
    max_sigma_defect: float = 0.0
    stage_diagnostics: list = field(default_factory=list, repr=False)

    @property
    def gmres_per_step(self):
        return self.gmres_total / self.steps if self.steps else float("nan")

    @property
    def newton_per_step(self):
        return self.newton_total / self.steps if self.steps else float("nan")

    def text(self):
        lines = [
            f"config {self.config_hash}: {self.steps} steps to t = {self.t_final:.6g} (dt = {self.dt:g})",
            f"  newton iterations {self.newton_total}, gmres iterations {self.gmres_total} "
            f"({self.gmres_per_step:.1f} per step), wallclock {self.wallclock:.2f} s",
        ]
        if self.errors is not None:
            errs = ", ".join(f"{e:.4e}" for e in self.errors)
            lines.append(f"  L2 errors [{errs}], sum {self.err_sum:.6e}")
        return "\n".join(lines)


def run(cfg: RunConfig, dt: float | None = None, compute_error: bool = True, keep_stages: bool = False):
    """Integrate from 0 to t_end (or max_steps steps); returns (w, RunSummary)."""
    dt = cfg.dt if dt is None else dt
    case, space = build_problem(cfg)
    w = initial_state(case, space)
    w0 = w
    steps = step_sizes(cfg.t_end, dt)
    if cfg.max_steps:
        steps = steps[: cfg.max_steps]
    summary = RunSummary(cfg.hash(), dt, 0, 0.0)
    integ = HBPCIntegrator(space, cfg.q, cfg.k_max, cfg.solver) if cfg.scheme == "hbpc" else None
    t0 = time.perf_counter()
    t = 0.0
    for n, h in enumerate(steps):
        try:
            if integ is None:
                w = rk4_reference_advance(space, h, w)
            else:
                w, diag = integ.step(w, h)
                summary.newton_total += diag.newton_iterations
                summary.gmres_total += diag.gmres_iterations
                for s in diag.stages:
                    summary.max_sigma_defect = max(summary.max_sigma_defect, s.sigma_defect)
                if keep_stages:
                    summary.stage_diagnostics.extend(diag.stages)
        except (StageSolveError, BlowUpError, SolverError) as exc:
            raise RunError(f"step {n} (t = {t:.6g}) failed: {exc}", step=n, cause=exc) from exc
        t += h
        summary.steps += 1
        log.debug("step %d t=%.6g", n, t)
    summary.wallclock = time.perf_counter() - t0
    summary.t_final = t
    if compute_error and summary.steps == len(step_sizes(cfg.t_end, dt)):
        if uses_exact(cfg):
            ref = exact_solution(case, space, cfg.t_end)
        else:
            ref = reference_solution(space, w0, cfg.t_end, cfg.reference_dt,
                                     cache_key=_reference_key(cfg, cfg.t_end))
        summary.errors, summary.err_sum = l2_error(space, w, ref)
    return w, summary


def eoc(errors, dts):
    """Observed orders between consecutive entries; the first entry is None."""
    out = [None]
    for (e1, d1), (e2, d2) in zip(zip(errors, dts), zip(errors[1:], dts[1:])):
        if e1 > 0 and e2 > 0 and d1 != d2:
            out.append(math.log(e1 / e2) / math.log(d1 / d2))
        else:
            out.append(None)
    return out


def _write_csv(path, columns, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(CSV_VERSION + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != CSV_VERSION:
            raise ValueError(f"{path}: unexpected CSV header {first!r}")
        return list(csv.DictReader(fh))


def convergence_study(cfg: RunConfig, dts=None, path=None):
    """Errors and EOC over a list of time steps; optionally writes a CSV."""
    dts = list(dts if dts is not None else (cfg.dt_list or (cfg.dt,)))
    rows = []
    for dt in dts:
        _, s = run(cfg, dt=dt)
        row = {"dt": dt, "err_sum": s.err_sum, "newton_total": s.newton_total,
               "gmres_total": s.gmres_total, "config_hash": s.config_hash}
        for i, e in enumerate(s.errors):
            row[f"err_var_{i}"] = float(e)
        rows.append(row)
        log.info("dt=%g err=%.4e", dt, s.err_sum)
    for row, p in zip(rows, eoc([r["err_sum"] for r in rows], dts)):
        row["eoc_sum"] = p
    if path is not None:
        n_var = sum(1 for k in rows[0] if k.startswith("err_var_"))
        cols = (["dt"] + [f"err_var_{i}" for i in range(n_var)]
                + ["err_sum", "eoc_sum", "newton_total", "gmres_total", "config_hash"])
        _write_csv(path, cols, rows)
    return rows


def iteration_study(cfg: RunConfig, dts=None, preconditioners=None, modes=None, path=None):
    """GMRES and Newton iterations per time step; failures are recorded, not raised."""
    dts = list(dts if dts is not None else (cfg.dt_list or (cfg.dt,)))
    precs = list(preconditioners or cfg.preconditioners or (cfg.solver.preconditioner,))
    modes = list(modes or cfg.modes or (cfg.solver.mode,))
    rows = []
    for mode in modes:
        for prec in precs:
            sub = cfg.with_overrides(preconditioner=prec, mode=mode)
            for dt in dts:
                row = {"dt": dt, "preconditioner": prec, "mode": mode,
                       "config_hash": sub.hash(), "failure": ""}
                try:
                    _, s = run(sub, dt=dt, compute_error=False)
                    row.update(steps=s.steps, gmres_per_step=s.gmres_per_step,
                               newton_per_step=s.newton_per_step, converged=1)
                except RunError as exc:
                    row.update(steps=exc.step, gmres_per_step=float("nan"),
                               newton_per_step=float("nan"), converged=0,
                               failure=type(exc.cause.cause if getattr(exc.cause, "cause", None)
                                            else exc.cause).__name__)
                rows.append(row)
                log.info("%s/%s dt=%g -> %s", mode, prec, dt, row.get("gmres_per_step"))
    if path is not None:
        cols = ["dt", "preconditioner", "mode", "steps", "gmres_per_step", "newton_per_step",
                "converged", "failure", "config_hash"]
        _write_csv(path, cols, rows)
    return rows
