"""Outer solvers for the all-at-once system and the windowed driver.

Linear systems are solved by preconditioned Richardson, GMRES or FGMRES with
the circulant preconditioner.  Nonlinear systems use an inexact Newton method
whose inner solves are one of those; linear problems take a single Newton
iteration.  :class:`Paradiag` chains windows by broadcasting the final step.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from dataclasses import replace as _replace

import numpy as np

from .aaos import AllAtOnceForm, AllAtOnceJacobian, Timeseries, aaos_residual, bcast_final_step
from .circulant import CirculantPreconditioner, ReferenceState
from .exceptions import MaxIterations, NewtonDiverged, ParadiagError, SolveError
from .numerics import BlockOptions, gmres
from .report import SolveReport

__all__ = [
    "SolverOptions",
    "PreconditionerConfig",
    "richardson_solve",
    "gmres_solve",
    "newton_solve",
    "eisenstat_walker",
    "Paradiag",
    "solve_windows",
]

_GOLDEN = (1 + math.sqrt(5)) / 2


@dataclass(frozen=True)
class SolverOptions:
    """Outer solver settings.

    Parameters
    ----------
    outer_method : {"richardson", "gmres", "fgmres"}
        Linear (inner) solver for the all-at-once system.
    rtol, atol : float
        Stopping rule ``||r|| <= max(atol * scale, rtol * ||r0||)``.
    max_outer : int
        Iteration cap of each linear solve.
    newton_max : int
        Newton iteration cap.
    forcing : {"eisenstat_walker", "fixed"}
        Inner tolerance control; ``fixed`` uses ``forcing_tol``.
    jacobian_mode : {"exact", "preconditioner_only"}
        ``preconditioner_only`` replaces the Jacobian by the preconditioner,
        so each Newton step is a single preconditioner application.
    residual_scaling : {"none", "sqrt_nt"}
        ``sqrt_nt`` multiplies ``atol`` by the square root of the window length.
    damping : float
        Richardson step length.
    restart : int, optional
        GMRES restart length; unrestarted by default.
    """

    outer_method: str = "richardson"
    rtol: float = 1e-11
    atol: float = 0.0
    max_outer: int = 200
    newton_max: int = 30
    forcing: str = "eisenstat_walker"
    forcing_tol: float = 1e-4
    jacobian_mode: str = "exact"
    residual_scaling: str = "none"
    damping: float = 1.0
    restart: int | None = None

    def __post_init__(self):
        if self.outer_method not in ("richardson", "gmres", "fgmres"):
            raise ValueError(f"unknown outer method {self.outer_method!r}")
        if not 0 < self.rtol < 1:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.atol < 0:
            raise ValueError("atol must be >= 0")
        if self.max_outer < 1 or self.newton_max < 1:
            raise ValueError("max_outer and newton_max must be >= 1")
        if self.forcing not in ("eisenstat_walker", "fixed"):
            raise ValueError(f"unknown forcing {self.forcing!r}")
        if not 0 < self.forcing_tol < 1:
            raise ValueError("forcing_tol must lie in (0, 1)")
        if self.jacobian_mode not in ("exact", "preconditioner_only"):
            raise ValueError(f"unknown jacobian mode {self.jacobian_mode!r}")
        if self.residual_scaling not in ("none", "sqrt_nt"):
            raise ValueError(f"unknown residual scaling {self.residual_scaling!r}")
        if not self.damping > 0:
            raise ValueError("damping must be positive")


@dataclass(frozen=True)
class PreconditionerConfig:
    """How to build the circulant preconditioner for a form."""

    alpha: float = 1e-4
    reference: ReferenceState | None = None
    block: BlockOptions = field(default_factory=BlockOptions)
    threads: int = 1

    def build(self, form, block_problem=None):
        return CirculantPreconditioner(form, self.alpha, self.reference, self.block, self.threads, block_problem)


# --------------------------------------------------------------------------
# Linear solves


def _pc_owner(apply_Pinv):
    owner = getattr(apply_Pinv, "__self__", apply_Pinv)
    return owner if isinstance(owner, CirculantPreconditioner) else None


class _PcProbe:
    """Collects timings and block iteration counts of a circulant preconditioner."""

    def __init__(self, apply_Pinv):
        self.pc = _pc_owner(apply_Pinv)
        if self.pc is not None:
            self.t0 = dict(self.pc.timings)
            self.its0 = self.pc.block_iterations.copy()

    def fill(self, report):
        if self.pc is None:
            return
        for key, value in self.pc.timings.items():
            report.timings[key] = report.timings.get(key, 0.0) + value - self.t0.get(key, 0.0)
        report.per_block_iterations = (self.pc.block_iterations - self.its0).tolist()


def _as_array(x):
    return x.steps if isinstance(x, Timeseries) else np.asarray(x)


def _wrap(x0, steps):
    return x0.with_steps(steps) if isinstance(x0, Timeseries) else steps


def _rates(history):
    return [b / a for a, b in zip(history[:-1], history[1:]) if a > 0]


def richardson_solve(apply_A, apply_Pinv, rhs, x0, opts=SolverOptions()):
    """Preconditioned Richardson iteration ``x <- x + P^-1 (rhs - A x)``.

    ``apply_A`` and ``apply_Pinv`` act on ``(nt, nx)`` arrays.  Stops when
    the unpreconditioned residual satisfies
    ``||rhs - A x|| <= max(atol, rtol ||r0||)``.  Every iteration applies the
    preconditioner once, so ``M_p`` equals the number of updates.

    Returns
    -------
    (x, SolveReport)
        ``x`` has the type of ``x0`` (array or :class:`Timeseries`).

    Raises
    ------
    MaxIterations
        After ``max_outer`` iterations, with the residual history attached.
    """
    tic = time.perf_counter()
    probe = _PcProbe(apply_Pinv)
    rhs = np.asarray(rhs)
    x = np.array(_as_array(x0), dtype=float)
    t_res = 0.0

    def residual(x):
        nonlocal t_res
        t = time.perf_counter()
        r = rhs - apply_A(x)
        t_res += time.perf_counter() - t
        return r

    r = residual(x)
    history = [float(np.linalg.norm(r))]
    target = max(opts.atol, opts.rtol * history[0])
    its = 0
    while history[-1] > target and history[-1] > 0:
        if its >= opts.max_outer:
            raise MaxIterations(
                f"Richardson did not converge in {opts.max_outer} iterations "
                f"(residual {history[-1]:.3e}, target {target:.3e})",
                history=history,
            )
        x = x + opts.damping * apply_Pinv(r)
        r = residual(x)
        its += 1
        history.append(float(np.linalg.norm(r)))
        if not math.isfinite(history[-1]):
            raise MaxIterations(f"Richardson residual became non-finite after {its} iterations", history=history)

    report = SolveReport(
        kind="richardson",
        nt=x.shape[0] if x.ndim > 1 else 0,
        outer_iterations=its,
        pc_applications=its,
        residual_history=history,
        contraction_rates=_rates(history),
    )
    probe.fill(report)
    report.timings["T_residual"] += t_res
    report.timings["T_total"] = time.perf_counter() - tic
    return _wrap(x0, x), report


def gmres_solve(apply_A, apply_Pinv, rhs, x0, opts=SolverOptions(), flexible=False):
    """Right-preconditioned GMRES (or FGMRES) on the all-at-once operator.

    ``M_p`` is the number of Arnoldi iterations.  GMRES applies the
    preconditioner once more than FGMRES to form the final update.

    Raises
    ------
    MaxIterations
        When ``max_outer`` iterations do not reach the tolerance.
    Breakdown
        When the Krylov space is exhausted short of the tolerance.
    """
    tic = time.perf_counter()
    probe = _PcProbe(apply_Pinv)
    rhs = np.asarray(rhs)
    shape = rhs.shape
    t_res = 0.0

    def matvec(v):
        nonlocal t_res
        t = time.perf_counter()
        out = np.asarray(apply_A(v.reshape(shape))).ravel()
        t_res += time.perf_counter() - t
        return out

    def psolve(v):
        return np.asarray(apply_Pinv(v.reshape(shape))).ravel()

    result = gmres(
        matvec, rhs.ravel(), np.array(_as_array(x0), dtype=float).ravel(),
        psolve=psolve, flexible=flexible, rtol=opts.rtol, atol=opts.atol,
        restart=opts.restart, maxiter=opts.max_outer,
    )
    history = [float(h) for h in result.residuals]
    report = SolveReport(
        kind="fgmres" if flexible else "gmres",
        nt=shape[0] if len(shape) > 1 else 0,
        outer_iterations=result.iterations,
        pc_applications=result.pc_applications,
        residual_history=history,
        contraction_rates=_rates(history),
    )
    probe.fill(report)
    report.timings["T_residual"] += t_res
    report.timings["T_total"] = time.perf_counter() - tic
    return _wrap(x0, result.x.real.reshape(shape)), report


def _linear_solve(apply_A, apply_Pinv, rhs, x0, opts):
    if opts.outer_method == "richardson":
        return richardson_solve(apply_A, apply_Pinv, rhs, x0, opts)
    return gmres_solve(apply_A, apply_Pinv, rhs, x0, opts, flexible=opts.outer_method == "fgmres")


# --------------------------------------------------------------------------
# Newton


def eisenstat_walker(norm, prev_norm, linear_norm, eta_prev):
    """Eisenstat-Walker forcing term (choice 1) with the usual safeguard.

    ``eta = | ||F(x_k)|| - ||F(x_{k-1}) + J s_{k-1}|| | / ||F(x_{k-1})||``,
    raised to ``eta_prev**((1 + sqrt 5) / 2)`` when that exceeds 0.1 and
    clipped to ``[1e-8, 0.9]``.
    """
    eta = abs(norm - linear_norm) / prev_norm
    guard = eta_prev ** _GOLDEN
    if guard > 0.1:
        eta = max(eta, guard)
    return min(max(eta, 1e-8), 0.9)


def newton_solve(form, u_guess, opts=SolverOptions(), precond=None):
    """Inexact Newton for the all-at-once residual.

    Parameters
    ----------
    form : AllAtOnceForm
    u_guess : Timeseries
        Initial iterate; its initial condition and ``t0`` define the window.
    opts : SolverOptions
    precond : CirculantPreconditioner or PreconditionerConfig, optional
        The preconditioner is re-linearised at every Newton iteration.

    Returns
    -------
    (Timeseries, SolveReport)
        ``outer_iterations`` sums the inner iterations over Newton steps.
        For linear problems ``residual_history`` holds the inner history,
        otherwise the Newton residual norms.

    Raises
    ------
    NewtonDiverged
        After three consecutive residual increases or ``newton_max`` steps.
    """
    tic = time.perf_counter()
    if precond is None:
        precond = PreconditionerConfig()
    pc = precond.build(form) if isinstance(precond, PreconditionerConfig) else precond
    problem = form.problem
    linear = problem.is_linear
    scale = math.sqrt(form.nt) if opts.residual_scaling == "sqrt_nt" else 1.0

    report = SolveReport(kind="newton", nt=form.nt, fingerprint=problem.fingerprint())
    probe = _PcProbe(pc.apply)
    per_block = np.zeros(form.nt, dtype=int)
    t_res = t_jac = 0.0

    def residual(u):
        nonlocal t_res
        t = time.perf_counter()
        r = aaos_residual(form, u)
        t_res += time.perf_counter() - t
        return r

    u = u_guess.copy()
    r = residual(u)
    history = [float(np.linalg.norm(r))]
    target = max(opts.atol * scale, opts.rtol * history[0])
    eta = opts.forcing_tol if opts.forcing == "fixed" else 0.1
    increases = 0
    newton_its = 0
    inner_history = []

    while history[-1] > target and history[-1] > 0:
        if newton_its >= opts.newton_max:
            raise NewtonDiverged(
                f"Newton did not converge in {opts.newton_max} iterations "
                f"(residual {history[-1]:.3e}, target {target:.3e})", history)
        pc.update(u)
        if opts.jacobian_mode == "preconditioner_only":
            inner_opts = None
            du = pc.apply(-r)
            report.outer_iterations += 1
            report.pc_applications += 1
            per_block += pc.last_stats.iterations
            linear_norm = float("nan")
        else:
            t = time.perf_counter()
            jac = AllAtOnceJacobian(form, None if linear else u.steps, u.partition)
            t_jac += time.perf_counter() - t
            if linear:
                inner_opts = _replace(opts, rtol=opts.rtol, atol=opts.atol * scale)
            else:
                inner_opts = _replace(opts, rtol=eta, atol=0.0)

            def apply_jac(v, jac=jac):
                nonlocal t_jac
                t = time.perf_counter()
                out = jac.apply(v)
                t_jac += time.perf_counter() - t
                return out

            du, inner = _linear_solve(apply_jac, pc.apply, -r, np.zeros_like(r), inner_opts)
            report.outer_iterations += inner.outer_iterations
            report.pc_applications += inner.pc_applications
            report.contraction_rates.extend(inner.contraction_rates)
            if inner.per_block_iterations:
                per_block += np.asarray(inner.per_block_iterations, dtype=int)
            inner_history = inner.residual_history
            linear_norm = inner.residual_history[-1]
        u = u.with_steps(u.steps + du)
        r = residual(u)
        history.append(float(np.linalg.norm(r)))
        newton_its += 1
        if not math.isfinite(history[-1]):
            raise NewtonDiverged("Newton residual became non-finite", history)
        increases = increases + 1 if history[-1] > history[-2] else 0
        if increases >= 3:
            raise NewtonDiverged("Newton residual increased over 3 consecutive iterations", history)
        if linear and opts.jacobian_mode == "exact":
            break
        if opts.forcing == "eisenstat_walker" and inner_opts is not None:
            eta = eisenstat_walker(history[-1], history[-2], linear_norm, eta)

    report.newton_iterations = newton_its
    probe.fill(report)
    report.per_block_iterations = per_block.tolist()
    report.residual_history = inner_history if linear and opts.jacobian_mode == "exact" else history
    report.converged = history[-1] <= target or history[-1] == 0 or (linear and opts.jacobian_mode == "exact")
    report.timings["T_residual"] += t_res
    report.timings["T_jac"] += t_jac
    report.timings["T_total"] = time.perf_counter() - tic
    return u, report


# --------------------------------------------------------------------------
# Windowed driver


class Paradiag:
    """Windowed all-at-once solver.

    Each window solves ``nt`` steps at once; its final step becomes the next
    window's initial condition and, repeated over all steps, its initial
    guess.

    Parameters
    ----------
    problem : Problem
    scheme : ThetaScheme
    nt : int
        Steps per window.
    solver : SolverOptions
    precond : PreconditionerConfig
    partition : sequence of int, optional
        Time slices of each window.
    block_problem : Problem, optional
        Problem whose Jacobian builds the preconditioner blocks.
    """

    def __init__(self, problem, scheme, nt, solver=SolverOptions(), precond=PreconditionerConfig(),
                 partition=None, block_problem=None):
        self.form = AllAtOnceForm(problem, scheme, nt)
        self.solver = solver
        self.partition = partition
        self.pc = precond.build(self.form, block_problem)

    def solve_window(self, u0, t0=0.0, guess=None, window=None):
        """Solve one window from the initial condition ``u0`` at ``t0``."""
        form = self.form.at(t0)
        self.pc.form = form
        if guess is None:
            guess = Timeseries.constant(u0, form.nt, t0, self.partition)
        self.pc.reset_counters()
        u, report = newton_solve(form, guess, self.solver, self.pc)
        report.kind = "paradiag"
        report.window = window
        return u, report

    def solve(self, u0, nwindows, t0=0.0, callback=None):
        """March ``nwindows`` windows.

        ``callback(window, u, report)`` runs after each window.  Returns the
        list of window timeseries and the list of reports.

        Raises
        ------
        SolveError
            Wrapping any solver failure, with the window index.
        """
        if nwindows < 1:
            raise ValueError("nwindows must be >= 1")
        dt = self.form.scheme.dt
        u_init = np.asarray(u0, dtype=float)
        series, reports = [], []
        for w in range(nwindows):
            t_start = t0 + w * self.form.nt * dt
            try:
                u, report = self.solve_window(u_init, t_start, window=w)
            except ParadiagError as exc:
                raise SolveError(f"window {w} failed: {exc}", window=w) from exc
            series.append(u)
            reports.append(report)
            if callback is not None:
                callback(w, u, report)
            u_init = bcast_final_step(u)
        return series, reports


def solve_windows(problem, scheme, u0, nt, nwindows, solver=SolverOptions(), precond=PreconditionerConfig(),
                  t0=0.0, partition=None):
    """Convenience wrapper around :class:`Paradiag`; returns ``(steps, reports)``.

    ``steps`` stacks the steps of all windows into one ``(nwindows * nt, nx)`` array.
    """
    driver = Paradiag(problem, scheme, nt, solver, precond, partition)
    series, reports = driver.solve(u0, nwindows, t0)
    return np.vstack([s.steps for s in series]), reports
