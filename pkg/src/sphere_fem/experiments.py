"""Experiment configurations and drivers for the convergence, barrier and dynamics studies.

Configurations are flat ``key = value`` files (``#`` starts a comment).
Every field of :class:`ExperimentConfig` is a valid key; unknown keys are
rejected.  All drivers return a header and a list of rows, which
:func:`write_table` serialises with the shortest round-trip float format.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from .assembly import Operators
from .analysis import (SingularIC, SmoothTestProblem, barrier_scan, convergence_rates,
                       error_norms_q, error_norms_u, h1_norm, negnorm_q, oscillation_amplitude)
from .mesh import Mesh, build_structured_2d, build_structured_3d, check_h5
from .schemes import CSV_COLUMNS, ModelParams, SchemeOperators, prepare_initial, run_simulation

log = logging.getLogger(__name__)

EXPERIMENTS = ("convergence-space", "convergence-time", "barrier-scan", "dynamics", "check-mesh")
SCHEMES = ("euler", "crank-nicolson")
SOLVERS = ("direct", "uzawa", "nullspace")


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(t) for t in str(text).replace(",", " ").split())


@dataclass
class ExperimentConfig:
    experiment: str = "dynamics"
    scheme: str = "crank-nicolson"
    solver: str = "nullspace"
    multiplier: str = "lumped"
    # model
    gamma: float = 1.0
    alpha: float = 0.0
    k: float = 1e-3
    T: float = 1.0
    # mesh
    dimension: int = 2
    nx: int = 34
    ny: int = 17
    nz: int = 17
    box: tuple = ()  # default (-2,-1[,-1]) .. (2,1[,1])
    phase: int = 0
    pattern: str = "alternating"
    # refinement levels (grid spacing 2^-level on the smooth-test square)
    level_min: int = 1
    level_max: int = 6
    level: int = 3
    j_min: int = 0
    j_max: int = 6
    k0: float = 0.1
    # initial data
    ic: str = "singular"
    delta: float = 0.0625
    Theta: float = math.pi
    kx: float = math.pi
    ky: float = 2 * math.pi
    # solver controls
    fp_tol: float = 1e-13
    fp_maxiter: int = 100
    renormalize: bool = False
    quad_order: int = 4
    negnorm_space: str = "h1"
    # barrier scan path
    path_start: tuple = ()  # default (-2, 0[, 0])
    path_end: tuple = ()  # default the origin
    samples_per_cell: int = 8
    out: str = ""

    def __post_init__(self):
        d = self.dimension
        if not self.box:
            self.box = (-2.0, -1.0, -1.0)[:d] + (2.0, 1.0, 1.0)[:d]
        if not self.path_start:
            self.path_start = (-2.0,) + (0.0,) * (d - 1)
        if not self.path_end:
            self.path_end = (0.0,) * d
        self.validate()

    # -- parsing -----------------------------------------------------------
    @classmethod
    def from_mapping(cls, mapping: dict, base: "ExperimentConfig | None" = None):
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        if base is None:
            values = {f.name: f.default for f in dataclasses.fields(cls)}
        else:
            values = dataclasses.asdict(base)
        for key, raw in mapping.items():
            if key not in types:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = _convert(key, types[key], raw)
        return cls(**values)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                           delimiters=("=",))
        parser.optionxform = str  # keys are case sensitive (Theta, T)
        with open(path) as fh:
            parser.read_string("[config]\n" + fh.read(), source=str(path))
        mapping = dict(parser["config"])
        mapping.update(overrides or {})
        return cls.from_mapping(mapping)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.dimension not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.dimension == 2 and self.alpha != 0:
            raise ConfigError("alpha must be 0 for two-dimensional (two-component) runs")
        if self.scheme == "crank-nicolson" and self.alpha != 0:
            raise ConfigError("the Crank-Nicolson scheme requires alpha = 0")
        if self.level_min > self.level_max:
            raise ConfigError(f"empty level range {self.level_min}..{self.level_max}")
        if self.j_min > self.j_max:
            raise ConfigError(f"empty time-step range {self.j_min}..{self.j_max}")
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigError("nx, ny, nz must be >= 1")
        if len(self.box) != 2 * self.dimension:
            raise ConfigError(f"box needs {2 * self.dimension} numbers (lower corner, upper corner)")
        if self.ic not in ("smooth", "singular"):
            raise ConfigError(f"ic must be 'smooth' or 'singular', got {self.ic!r}")
        if self.quad_order < 4:
            raise ConfigError("quad_order must be >= 4")
        if self.samples_per_cell < 1:
            raise ConfigError("samples_per_cell must be >= 1")
        # ModelParams checks gamma, k and T
        try:
            self.model
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects ---------------------------------------------------
    @property
    def model(self) -> ModelParams:
        return ModelParams(self.gamma, self.alpha, self.k, self.T)

    @property
    def problem(self) -> SmoothTestProblem:
        return SmoothTestProblem(self.Theta, self.kx, self.ky, self.gamma)

    def build_mesh(self) -> Mesh:
        d = self.dimension
        lo, hi = self.box[:d], self.box[d:]
        if d == 2:
            return build_structured_2d(self.nx, self.ny, (lo, hi), phase=self.phase,
                                       pattern=self.pattern)
        return build_structured_3d(self.nx, self.ny, self.nz, (lo, hi))

    def initial_data(self):
        if self.ic == "smooth":
            if self.dimension != 2:
                raise ConfigError("the smooth test problem is two-dimensional")
            return self.problem.u0
        return SingularIC(self.delta, self.dimension)


def _convert(key, typ, raw):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "tuple":
            return tuple(raw) if isinstance(raw, (tuple, list)) else _floats(raw)
        return str(raw).strip()
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for key {key!r} ({typ})") from None


def smooth_test_mesh(level: int, phase: int = 0, pattern: str = "alternating") -> Mesh:
    """Grid of spacing 2^-level on (-1, 1)^2."""
    n = 2 ** (level + 1)
    return build_structured_2d(n, n, ((-1.0, -1.0), (1.0, 1.0)), phase=phase, pattern=pattern)


# -- drivers -------------------------------------------------------------------

U_NORMS = ("L1", "L2", "Linf", "H1")
CONV_SPACE_HEADER = (["level", "h", "k", "fp_iters_max"]
                     + [f"u_{n}{s}" for n in U_NORMS for s in ("", "_rate")]
                     + [f"q_{n}{s}" for n in ("negnorm",) + U_NORMS for s in ("", "_rate")]
                     + ["energy_residual"])
CONV_TIME_HEADER = ["j", "k", "increment", "rate"]
DYNAMICS_HEADER = CSV_COLUMNS


def _simulate(cfg, so, u0h, params, scheme=None):
    return run_simulation(u0h, so, params, scheme=scheme or cfg.scheme, fp_tol=cfg.fp_tol,
                          fp_maxiter=cfg.fp_maxiter, renormalize=cfg.renormalize,
                          solver=cfg.solver, multiplier=cfg.multiplier)


def _with_rates(values):
    rates = [None] + convergence_rates(values) if len(values) > 1 else [None]
    return rates


def run_convergence_space(cfg: ExperimentConfig):
    """Errors at t = T against the smooth test solution for each refinement level.

    The multiplier is compared at t = T - k/2 for Crank--Nicolson (its
    natural half-step time) and at t = T for Euler.
    """
    prob = cfg.problem
    params = cfg.model
    tq = cfg.T - cfg.k / 2 if cfg.scheme == "crank-nicolson" else cfg.T
    per_level = []
    for level in range(cfg.level_min, cfg.level_max + 1):
        t0 = time.perf_counter()
        mesh = smooth_test_mesh(level, cfg.phase, cfg.pattern)
        so = SchemeOperators(Operators.build(mesh))
        traj = _simulate(cfg, so, prepare_initial(prob.u0, mesh), params)
        eu = error_norms_u(traj.final.u, prob, cfg.T, mesh, cfg.quad_order)
        eq = error_norms_q(traj.final.q, prob, tq, mesh, cfg.quad_order)
        eq = {"negnorm": negnorm_q(traj.final.q, prob, tq, mesh, cfg.quad_order,
                                   space=cfg.negnorm_space, K=so.ops.K, M=so.ops.M), **eq}
        fp = max(r.fp_iters for r in traj.reports)
        per_level.append((level, eu, eq, fp, traj.global_residual))
        log.info("level %d done in %.1f s (u L2 %.3e, q negnorm %.4g)", level,
                 time.perf_counter() - t0, eu["L2"], eq["negnorm"])

    cols = {}
    for n in U_NORMS:
        cols[f"u_{n}"] = [p[1][n] for p in per_level]
    for n in ("negnorm",) + U_NORMS:
        cols[f"q_{n}"] = [p[2][n] for p in per_level]
    rates = {name: _with_rates(vals) for name, vals in cols.items()}
    rows = []
    for idx, (level, _, _, fp, resid) in enumerate(per_level):
        row = [level, 2.0 ** -level, cfg.k, fp]
        for name in CONV_SPACE_HEADER[4:-1]:
            if name.endswith("_rate"):
                row.append(rates[name[:-5]][idx])
            else:
                row.append(cols[name][idx])
        row.append(resid)
        rows.append(row)
    return CONV_SPACE_HEADER, rows


def time_increments(cfg: ExperimentConfig):
    """Final fields for k = k0 2^-j, j = j_min..j_max, on the grid of spacing 2^-level."""
    prob = cfg.problem
    mesh = smooth_test_mesh(cfg.level, cfg.phase, cfg.pattern)
    so = SchemeOperators(Operators.build(mesh))
    u0h = prepare_initial(prob.u0, mesh)
    finals = []
    for j in range(cfg.j_min, cfg.j_max + 1):
        k = cfg.k0 * 2.0 ** -j
        params = ModelParams(cfg.gamma, cfg.alpha, k, cfg.T)
        finals.append((j, k, _simulate(cfg, so, u0h, params).final.u))
    incs = [h1_norm(a[2] - b[2], so.ops.K, so.ops.M) for a, b in zip(finals[:-1], finals[1:])]
    return finals, incs


def run_convergence_time(cfg: ExperimentConfig):
    """Increments ||u^k - u^{k/2}||_{H1} and the rates log2 of their ratios."""
    finals, incs = time_increments(cfg)
    rates = _with_rates(incs) if incs else []
    rows = [[finals[i][0], finals[i][1], incs[i], rates[i]] for i in range(len(incs))]
    return CONV_TIME_HEADER, rows


def scan_path(cfg: ExperimentConfig, mesh: Mesh):
    """Equispaced centres with at least ``samples_per_cell`` points per cell crossed."""
    a, b = np.asarray(cfg.path_start, float), np.asarray(cfg.path_end, float)
    if a.size != cfg.dimension or b.size != cfg.dimension:
        raise ConfigError("path_start and path_end must have one entry per dimension")
    cells_crossed = np.abs(b - a) / np.asarray(mesh.spacing)
    n = max(1, int(math.ceil(cells_crossed.max() * cfg.samples_per_cell)))
    s = np.linspace(0.0, 1.0, n + 1)
    return a + s[:, None] * (b - a)


def run_barrier_scan(cfg: ExperimentConfig):
    mesh = cfg.build_mesh()
    path = scan_path(cfg, mesh)
    energies, skipped = barrier_scan(mesh, path)
    coords = ["x0", "y0", "z0"][:cfg.dimension]
    header = ["index"] + coords + ["energy", "skipped", "nx", "ny"] + (["nz"] if cfg.dimension == 3 else [])
    grid = [cfg.nx, cfg.ny] + ([cfg.nz] if cfg.dimension == 3 else [])
    rows = [[i, *p, (None if s else e), int(s), *grid]
            for i, (p, e, s) in enumerate(zip(path.tolist(), energies.tolist(), skipped.tolist()))]
    return header, rows


def barrier_amplitude(cfg: ExperimentConfig, lo=None, hi=None) -> float:
    """Small-scale oscillation amplitude of a scan along the x axis."""
    mesh = cfg.build_mesh()
    path = scan_path(cfg, mesh)
    energies, _ = barrier_scan(mesh, path)
    return oscillation_amplitude(path[:, 0], energies, mesh.spacing[0], lo, hi)


def run_dynamics(cfg: ExperimentConfig, callback=None):
    mesh = cfg.build_mesh()
    so = SchemeOperators(Operators.build(mesh))
    u0h = prepare_initial(cfg.initial_data(), mesh, cfg.dimension)
    traj = run_simulation(u0h, so, cfg.model, scheme=cfg.scheme, fp_tol=cfg.fp_tol,
                          fp_maxiter=cfg.fp_maxiter, renormalize=cfg.renormalize,
                          solver=cfg.solver, multiplier=cfg.multiplier, callback=callback)
    log.info("global energy identity residual %.3e (relative)", traj.global_residual)
    return DYNAMICS_HEADER, [r.row() for r in traj.reports]


def run_check_mesh(cfg: ExperimentConfig):
    from .assembly import assemble_stiffness

    mesh = cfg.build_mesh()
    ok, pairs = check_h5(mesh, assemble_stiffness(mesh))
    return ["a", "b"], [list(p) for p in pairs], ok


# -- output --------------------------------------------------------------------

def format_value(x) -> str:
    """Shortest round-trip text for floats; integers as integers; None as empty."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(fh, header, rows):
    wr = csv.writer(fh, lineterminator="\n")
    wr.writerow(header)
    for row in rows:
        wr.writerow([format_value(v) for v in row])
