"""Run configuration: INI-style files with strict key checking."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .solver import SolverConfig


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in str(text).replace(",", " ").split())


def _strings(text):
    return tuple(x for x in str(text).replace(",", " ").split())


@dataclass(frozen=True)
class RunConfig:
    case: str = "advection"
    velocity: tuple = (0.3, 0.3)
    eps: float = 1.0
    gamma: float = 1.4
    mu: float = 1e-3
    prandtl: float = 0.72
    br2_eta: float = 4.0
    nx: int = 16
    ny: int = 16
    degree: int = 5
    bounds: tuple = (-1.0, 1.0, -1.0, 1.0)
    scheme: str = "hbpc"  # hbpc | rk4
    q: int = 4
    k_max: int = 0
    dt: float = 0.1
    t_end: float = 0.8
    dt_list: tuple = ()
    max_steps: int = 0  # 0 means run to t_end
    error_reference: str = "auto"  # auto | exact | rk4
    reference_dt: float = 5e-4
    solver: SolverConfig = field(default_factory=SolverConfig)
    preconditioners: tuple = ()
    modes: tuple = ()
    threads: int = 1
    out_dir: str = "."
    prefix: str = "mdsolve"

    def __post_init__(self):
        if self.case not in ("advection", "euler", "navier_stokes"):
            raise ConfigError(f"[equation] case: unknown case {self.case!r}")
        if self.scheme not in ("hbpc", "rk4"):
            raise ConfigError(f"[time] scheme: unknown scheme {self.scheme!r}")
        if self.error_reference not in ("auto", "exact", "rk4"):
            raise ConfigError(f"[time] error_reference: unknown value {self.error_reference!r}")
        if not self.dt > 0 or not self.t_end > 0:
            raise ConfigError("[time] dt and t_end must be positive")
        if self.error_reference == "exact" and self.case == "navier_stokes":
            raise ConfigError("[time] error_reference: no exact solution for navier_stokes")
        if any(not d > 0 for d in self.dt_list):
            raise ConfigError("[time] dt_list entries must be positive")
        if self.degree < 0 or self.nx < 1 or self.ny < 1:
            raise ConfigError("[mesh] nx, ny must be >= 1 and degree >= 0")
        if self.threads < 1:
            raise ConfigError("[solver] threads must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["solver"] = asdict(self.solver)
        return d

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def with_overrides(self, **kw):
        solver_keys = {f.name for f in fields(SolverConfig)}
        skw = {k: v for k, v in kw.items() if k in solver_keys and v is not None}
        rkw = {k: v for k, v in kw.items() if k not in solver_keys and v is not None}
        try:
            solver = replace(self.solver, **skw) if skw else self.solver
            return replace(self, solver=solver, **rkw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# section -> key -> (RunConfig field or "solver.<field>", parser)
_SCHEMA = {
    "equation": {
        "case": ("case", str),
        "velocity": ("velocity", _floats),
        "eps": ("eps", float),
        "gamma": ("gamma", float),
        "mu": ("mu", float),
        "prandtl": ("prandtl", float),
        "br2_eta": ("br2_eta", float),
    },
    "mesh": {
        "nx": ("nx", int),
        "ny": ("ny", int),
        "degree": ("degree", int),
        "bounds": ("bounds", _floats),
    },
    "time": {
        "scheme": ("scheme", str),
        "q": ("q", int),
        "kmax": ("k_max", int),
        "dt": ("dt", float),
        "t_end": ("t_end", float),
        "dt_list": ("dt_list", _floats),
        "max_steps": ("max_steps", int),
        "error_reference": ("error_reference", str),
        "reference_dt": ("reference_dt", float),
    },
    "solver": {
        "tol_newton_rel": ("solver.tol_newton_rel", float),
        "tol_newton_abs": ("solver.tol_newton_abs", float),
        "tol_residual_abs": ("solver.tol_residual_abs", float),
        "max_newton": ("solver.max_newton", int),
        "tol_gmres_rel": ("solver.tol_gmres_rel", float),
        "gmres_restart": ("solver.gmres_restart", int),
        "max_krylov_total": ("solver.max_krylov_total", int),
        "precond": ("solver.preconditioner", str),
        "mode": ("solver.mode", str),
        "precond_rebuild": ("solver.precond_rebuild", str),
        "jvp": ("solver.jvp", str),
        "fd_norm": ("solver.fd_norm", str),
        "precond_list": ("preconditioners", _strings),
        "mode_list": ("modes", _strings),
        "threads": ("threads", int),
    },
    "output": {
        "dir": ("out_dir", str),
        "prefix": ("prefix", str),
    },
}


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a RunConfig; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    run_kw, solver_kw = {}, {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            target, conv = _SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc
            if target.startswith("solver."):
                solver_kw[target[7:]] = value
            else:
                run_kw[target] = value
    try:
        solver = SolverConfig(**solver_kw)
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}") from exc
    if "velocity" in run_kw and len(run_kw["velocity"]) != 2:
        raise ConfigError("[equation] velocity needs two components")
    if "bounds" in run_kw and len(run_kw["bounds"]) != 4:
        raise ConfigError("[mesh] bounds needs four numbers")
    return RunConfig(solver=solver, **run_kw)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
