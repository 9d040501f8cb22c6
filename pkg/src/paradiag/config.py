"""JSON run configuration: schema, validation and object construction."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import numpy as np

from .circulant import ReferenceState
from .exceptions import ConfigError
from .numerics import BlockOptions
from .problems import ThetaScheme, make_problem
from .solvers import PreconditionerConfig, SolverOptions

__all__ = [
    "InitialConfig",
    "ProblemConfig",
    "SchemeConfig",
    "WindowConfig",
    "BlockConfig",
    "SolverConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
]

PROBLEM_TYPES = ("heat1d", "heat2d", "advection1d", "burgers1d")
_PARAMS = {
    "heat1d": {"nu"},
    "heat2d": {"nu"},
    "advection1d": {"c", "order"},
    "burgers1d": {"nu"},
}


@dataclass
class InitialConfig:
    """Initial condition.

    ``kind`` is ``auto``, ``gaussian``, ``sine``, ``random`` or ``zero``;
    ``auto`` picks a sine mode for heat problems and a Gaussian otherwise.
    """

    kind: str = "auto"
    center: float = 0.5
    width: float = 0.1
    amplitude: float = 1.0
    offset: float = 0.0
    mode: int = 1


@dataclass
class ProblemConfig:
    type: str = "heat1d"
    nx: int = 64
    ny: int | None = None
    length: float = 1.0
    params: dict = field(default_factory=dict)
    bc: str | None = None
    mass: str = "identity"
    initial: InitialConfig = field(default_factory=InitialConfig)


@dataclass
class SchemeConfig:
    """Either ``dt`` or a Courant number (advection and Burgers only)."""

    theta: float = 0.5
    dt: float | None = None
    courant: float | None = None


@dataclass
class WindowConfig:
    nt: int = 8
    nwindows: int = 1
    partition: list | None = None


@dataclass
class BlockConfig:
    method: str = "dense_lu"
    tol: float | None = None
    fixed_iters: int | None = None
    maxiter: int = 500
    preconditioner: str = "ilu"


@dataclass
class SolverConfig:
    outer: str = "richardson"
    rtol: float = 1e-11
    atol: float = 0.0
    max_outer: int = 200
    newton_max: int = 30
    alpha: float = 1e-4
    reference_state: str = "auto"
    forcing: str = "eisenstat_walker"
    forcing_tol: float = 1e-4
    jacobian_mode: str = "exact"
    residual_scaling: str = "none"
    damping: float = 1.0
    restart: int | None = None
    block: BlockConfig = field(default_factory=BlockConfig)


@dataclass
class OutputConfig:
    """Output locations.  ``timings=False`` leaves timing columns empty so
    repeated runs produce byte-identical CSV files."""

    csv_path: str | None = None
    json_path: str | None = None
    checkpoint_dir: str | None = None
    timings: bool = True


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    threads: int = 1
    seed: int = 0

    @classmethod
    def from_dict(cls, data):
        """Parse and validate; unknown keys are rejected."""
        cfg = _build(cls, data, "config")
        cfg.validate()
        return cfg

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def with_changes(self, section, **changes):
        """Copy with fields of one section replaced, re-validated."""
        cfg = replace(self, **{section: replace(getattr(self, section), **changes)})
        cfg.validate()
        return cfg

    # ------------------------------------------------------------------
    def validate(self):
        p, s, w, v, b = self.problem, self.scheme, self.window, self.solver, self.solver.block
        _require(p.type in PROBLEM_TYPES, f"problem.type must be one of {PROBLEM_TYPES}, got {p.type!r}")
        _require(_is_int(p.nx) and p.nx >= 1, f"problem.nx must be a positive integer, got {p.nx!r}")
        _require(p.ny is None or (_is_int(p.ny) and p.ny >= 1), "problem.ny must be a positive integer")
        _require(p.ny is None or p.type == "heat2d", "problem.ny only applies to heat2d")
        _require(_positive(p.length), "problem.length must be positive")
        unknown = set(p.params) - _PARAMS[p.type]
        _require(not unknown, f"unknown parameters for {p.type}: {sorted(unknown)}")
        for key, value in p.params.items():
            _require(_finite(value), f"problem.params.{key} must be a finite number")
        if p.type == "heat1d":
            _require(p.bc in (None, "dirichlet", "periodic"), f"heat1d bc must be dirichlet or periodic, got {p.bc!r}")
        elif p.type == "heat2d":
            _require(p.bc in (None, "dirichlet"), "heat2d supports only dirichlet walls")
        elif p.type == "advection1d":
            _require(p.bc in (None, "periodic", "inflow"), f"advection1d bc must be periodic or inflow, got {p.bc!r}")
            _require(p.params.get("order", 2) in (1, 2), "advection1d order must be 1 or 2")
        else:
            _require(p.bc in (None, "periodic"), "burgers1d supports only periodic boundaries")
        _require(p.mass in ("identity", "consistent"), f"problem.mass must be identity or consistent, got {p.mass!r}")
        _require(p.mass == "identity" or p.type == "heat1d", "a consistent mass matrix is only available for heat1d")
        ic = p.initial
        _require(ic.kind in ("auto", "gaussian", "sine", "random", "zero"), f"unknown initial kind {ic.kind!r}")
        _require(_positive(ic.width), "initial.width must be positive")
        _require(_is_int(ic.mode) and ic.mode >= 1, "initial.mode must be a positive integer")

        _require(_finite(s.theta) and 0 <= s.theta <= 1, f"scheme.theta must lie in [0, 1], got {s.theta!r}")
        _require((s.dt is None) != (s.courant is None), "give exactly one of scheme.dt and scheme.courant")
        _require(s.dt is None or _positive(s.dt), "scheme.dt must be positive")
        _require(s.courant is None or _positive(s.courant), "scheme.courant must be positive")
        _require(s.courant is None or p.type in ("advection1d", "burgers1d"),
                 "scheme.courant needs a problem with a wave speed")

        _require(_is_int(w.nt) and w.nt >= 1, f"window.nt must be a positive integer, got {w.nt!r}")
        _require(_is_int(w.nwindows) and w.nwindows >= 1, f"window.nwindows must be >= 1, got {w.nwindows!r}")
        if w.partition is not None:
            _require(all(_is_int(x) and x >= 1 for x in w.partition), "window.partition entries must be >= 1")
            _require(sum(w.partition) == w.nt, f"window.partition must sum to nt={w.nt}")

        _require(v.outer in ("richardson", "gmres", "fgmres"), f"unknown solver.outer {v.outer!r}")
        _require(_finite(v.rtol) and 0 < v.rtol < 1, "solver.rtol must lie in (0, 1)")
        _require(_finite(v.atol) and v.atol >= 0, "solver.atol must be >= 0")
        _require(_is_int(v.max_outer) and v.max_outer >= 1, "solver.max_outer must be >= 1")
        _require(_is_int(v.newton_max) and v.newton_max >= 1, "solver.newton_max must be >= 1")
        _require(_finite(v.alpha) and 0 < v.alpha <= 1, f"solver.alpha must lie in (0, 1], got {v.alpha!r}")
        _require(v.reference_state in ("auto", "time_average", "initial", "linear"),
                 f"unknown solver.reference_state {v.reference_state!r}")
        _require(v.reference_state != "linear" or p.type != "burgers1d",
                 "reference_state linear needs a linear problem")
        _require(v.forcing in ("eisenstat_walker", "fixed"), f"unknown solver.forcing {v.forcing!r}")
        _require(_finite(v.forcing_tol) and 0 < v.forcing_tol < 1, "solver.forcing_tol must lie in (0, 1)")
        _require(v.jacobian_mode in ("exact", "preconditioner_only"), f"unknown jacobian_mode {v.jacobian_mode!r}")
        _require(v.residual_scaling in ("none", "sqrt_nt"), f"unknown residual_scaling {v.residual_scaling!r}")
        _require(_positive(v.damping), "solver.damping must be positive")
        _require(v.restart is None or (_is_int(v.restart) and v.restart >= 1), "solver.restart must be >= 1")
        _require(b.method in ("dense_lu", "sparse_lu", "gmres"), f"unknown block method {b.method!r}")
        _require(b.tol is None or b.fixed_iters is None, "give at most one of block.tol and block.fixed_iters")
        _require(b.tol is None or (_positive(b.tol) and b.tol < 1), "block.tol must lie in (0, 1)")
        _require(b.fixed_iters is None or (_is_int(b.fixed_iters) and b.fixed_iters >= 1),
                 "block.fixed_iters must be >= 1")
        _require(_is_int(b.maxiter) and b.maxiter >= 1, "block.maxiter must be >= 1")
        _require(b.preconditioner in ("ilu", "none"), f"unknown block preconditioner {b.preconditioner!r}")

        _require(isinstance(self.output.timings, bool), "output.timings must be true or false")
        _require(_is_int(self.threads) and self.threads >= 1, "threads must be a positive integer")
        _require(_is_int(self.seed) and 0 <= self.seed < 2**64, "seed must be a 64-bit unsigned integer")

    # ------------------------------------------------------------------
    # object construction

    def build_problem(self):
        p = self.problem
        bc = "periodic" if p.bc is None and p.type in ("advection1d", "burgers1d") else p.bc
        if p.type == "advection1d" and bc == "inflow":
            bc = "dirichlet"
        return make_problem(p.type, p.nx, p.ny, p.params, bc, p.mass, p.length)

    def initial_state(self, problem):
        ic = self.problem.initial
        kind = ic.kind
        if kind == "auto":
            kind = "sine" if self.problem.type.startswith("heat") else "gaussian"
        x = np.asarray(problem.metadata["x"], dtype=float)
        L = self.problem.length
        if kind == "zero":
            u = np.zeros(problem.nx)
        elif kind == "random":
            u = ic.amplitude * np.random.default_rng(self.seed).standard_normal(problem.nx)
        elif kind == "sine":
            u = ic.amplitude * np.sin(ic.mode * np.pi * x / L)
            if "y" in problem.metadata:
                u = u * np.sin(ic.mode * np.pi * np.asarray(problem.metadata["y"]) / L)
        else:
            u = ic.amplitude * np.exp(-(((x - ic.center * L) / (ic.width * L)) ** 2))
        return u + ic.offset

    def timestep(self, problem, u0):
        s = self.scheme
        if s.dt is not None:
            return float(s.dt)
        dx = problem.metadata["dx"]
        if self.problem.type == "advection1d":
            speed = abs(problem.metadata["c"])
        else:
            speed = float(np.max(np.abs(u0)))
        if speed == 0:
            raise ConfigError("a Courant number needs a nonzero wave speed")
        return s.courant * dx / speed

    def theta_scheme(self, problem, u0):
        return ThetaScheme(self.timestep(problem, u0), self.scheme.theta)

    def solver_options(self):
        v = self.solver
        return SolverOptions(
            outer_method=v.outer, rtol=v.rtol, atol=v.atol, max_outer=v.max_outer,
            newton_max=v.newton_max, forcing=v.forcing, forcing_tol=v.forcing_tol,
            jacobian_mode=v.jacobian_mode, residual_scaling=v.residual_scaling,
            damping=v.damping, restart=v.restart,
        )

    def preconditioner_config(self, problem):
        v, b = self.solver, self.solver.block
        mode = v.reference_state
        if mode == "auto":
            mode = "linear" if problem.is_linear else "time_average"
        block = BlockOptions(b.method, tol=b.tol, fixed_iters=b.fixed_iters, maxiter=b.maxiter,
                             preconditioner=b.preconditioner)
        return PreconditionerConfig(v.alpha, ReferenceState(mode), block, self.threads)


def load_config(path):
    """Read and validate a JSON config file."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _finite(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _positive(x):
    return _finite(x) and x > 0


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _nested_type(cls, name)
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        elif name == "params":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{name} must be a JSON object")
            kwargs[name] = dict(value)
        elif name == "partition" and value is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be a list")
            kwargs[name] = list(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _nested_type(cls, name):
    instance = cls()
    value = getattr(instance, name)
    return type(value) if is_dataclass(value) else None
