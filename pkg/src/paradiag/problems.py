"""Spatial semi-discretisations and the serial-in-time theta-method.

A problem describes ``M du/dt + f(u, t) = b(t)`` on ``nx`` unknowns.  ``f`` is
the spatial operator (``K u`` for linear problems) and ``b`` an optional
forcing that is kept separate from ``f``.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import NewtonDiverged
from .numerics import BlockOptions, BlockSolver, as_csr
from .report import SolveReport

__all__ = [
    "ThetaScheme",
    "Problem",
    "LinearProblem",
    "Burgers1D",
    "heat1d",
    "heat2d",
    "advection1d",
    "burgers1d",
    "make_problem",
    "serial_theta_step",
    "run_serial",
    "SerialStepper",
]


@dataclass(frozen=True)
class ThetaScheme:
    """Implicit theta-method; ``theta=1`` is backward Euler, ``0.5`` the trapezium rule."""

    dt: float
    theta: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta!r}")


class Problem:
    """Base class for spatial semi-discretisations.

    Subclasses provide :meth:`f` and :meth:`jacobian`.  Instances are treated
    as immutable once constructed.
    """

    name = "problem"
    is_linear = False

    def __init__(self, nx, mass=None, forcing=None, metadata=None):
        self.nx = int(nx)
        if self.nx < 1:
            raise ValueError("nx must be positive")
        self._mass = as_csr(mass if mass is not None else sp.identity(self.nx))
        if self._mass.shape != (self.nx, self.nx):
            raise ValueError(f"mass matrix has shape {self._mass.shape}, expected {(self.nx, self.nx)}")
        self._forcing = forcing
        self.metadata = dict(metadata or {})

    def mass(self):
        return self._mass

    def f(self, u, t):
        raise NotImplementedError

    def jacobian(self, u, t):
        raise NotImplementedError

    def forcing(self, t):
        """Right-hand side ``b(t)``, or ``None`` when the problem is unforced."""
        if self._forcing is None:
            return None
        return np.asarray(self._forcing(t), dtype=float)

    def f_steps(self, U, times):
        """Evaluate ``f`` on each row of ``U``."""
        return np.array([self.f(u, t) for u, t in zip(U, times)]).reshape(np.shape(U))

    def coordinates(self):
        return self.metadata.get("x")

    def courant(self, dt):
        """Courant number ``|c| dt / dx`` for problems with a wave speed."""
        c = self.metadata.get("c")
        if c is None:
            raise AttributeError(f"{self.name} has no wave speed")
        return abs(c) * dt / self.metadata["dx"]

    def fingerprint(self):
        meta = {k: v for k, v in self.metadata.items() if isinstance(v, (int, float, str, bool))}
        blob = json.dumps({"name": self.name, "nx": self.nx, **meta}, sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, nx={self.nx})"


class LinearProblem(Problem):
    """``f(u, t) = K u`` with a constant stiffness matrix."""

    is_linear = True

    def __init__(self, stiffness, mass=None, forcing=None, name="linear", metadata=None):
        K = as_csr(stiffness)
        super().__init__(K.shape[0], mass=mass, forcing=forcing, metadata=metadata)
        self.name = name
        self.stiffness = K

    def f(self, u, t):
        return self.stiffness @ u

    def jacobian(self, u=None, t=None):
        return self.stiffness

    def f_steps(self, U, times):
        return np.asarray((self.stiffness @ np.asarray(U).T).T)


class Burgers1D(Problem):
    """Viscous Burgers on a periodic interval, central differences.

    ``f(u)_i = (u_{i+1}^2 - u_{i-1}^2) / (4 dx) - nu (u_{i+1} - 2 u_i + u_{i-1}) / dx^2``.
    The nonlinearity is quadratic, so the Jacobian is affine in ``u``.
    """

    name = "burgers1d"

    def __init__(self, nx, nu=0.02, length=1.0, mass=None):
        dx = length / nx
        x = np.arange(nx) * dx
        super().__init__(nx, mass=mass, metadata={"dx": dx, "nu": nu, "length": length, "x": x})
        self.nu = nu
        self.dx = dx
        I = sp.identity(nx, format="csr")
        shift_up = _periodic_shift(nx, 1)  # (S u)_i = u_{i+1}
        shift_dn = _periodic_shift(nx, -1)
        self._shift_up = shift_up
        self._shift_dn = shift_dn
        self._diffusion = as_csr(-nu / dx**2 * (shift_up - 2 * I + shift_dn))

    def f(self, u, t=None):
        u = np.asarray(u, dtype=float)
        usq = u * u
        return (np.roll(usq, -1) - np.roll(usq, 1)) / (4 * self.dx) + self._diffusion @ u

    def f_steps(self, U, times=None):
        U = np.asarray(U, dtype=float)
        usq = U * U
        adv = (np.roll(usq, -1, axis=1) - np.roll(usq, 1, axis=1)) / (4 * self.dx)
        return adv + np.asarray((self._diffusion @ U.T).T)

    def jacobian(self, u, t=None):
        u = np.asarray(u, dtype=float)
        half = 1.0 / (2 * self.dx)
        # d/du_{i+1} of u_{i+1}^2/(4dx) is u_{i+1}/(2dx)
        adv = half * (self._shift_up @ sp.diags(u) - self._shift_dn @ sp.diags(u))
        return as_csr(adv + self._diffusion)


def _periodic_shift(n, k):
    """Sparse ``S`` with ``(S u)_i = u_{(i+k) mod n}``."""
    rows = np.arange(n)
    cols = (rows + k) % n
    return sp.csr_matrix((np.ones(n), (rows, cols)), shape=(n, n))


def _tridiag(n, lower, diag, upper, periodic=False):
    A = sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="lil")
    if periodic and n > 2:
        A[0, n - 1] = lower
        A[n - 1, 0] = upper
    return as_csr(A)


def heat1d(nx, nu=1.0, bc="dirichlet", mass="identity", length=1.0, forcing=None):
    """Heat equation ``u_t = nu u_xx`` with second-order finite differences.

    ``bc="dirichlet"`` keeps only the ``nx`` interior nodes of ``[0, length]``
    (homogeneous boundary rows eliminated); ``bc="periodic"`` uses ``nx``
    nodes on a periodic grid.  ``mass="consistent"`` uses the tridiagonal
    ``(1, 4, 1)/6`` mass matrix of linear elements, scaled by ``1/dx``.
    """
    if bc == "dirichlet":
        dx = length / (nx + 1)
        x = dx * np.arange(1, nx + 1)
        periodic = False
    elif bc == "periodic":
        dx = length / nx
        x = dx * np.arange(nx)
        periodic = True
    else:
        raise ValueError(f"unknown heat1d boundary condition {bc!r}")
    K = _tridiag(nx, -1.0, 2.0, -1.0, periodic) * (nu / dx**2)
    if mass == "identity":
        M = sp.identity(nx, format="csr")
    elif mass == "consistent":
        M = _tridiag(nx, 1 / 6, 4 / 6, 1 / 6, periodic)
    else:
        raise ValueError(f"unknown mass option {mass!r}")
    meta = {"dx": dx, "nu": nu, "bc": bc, "mass": mass, "length": length, "x": x}
    return LinearProblem(K, M, forcing=forcing, name="heat1d", metadata=meta)


def heat2d(nx, ny=None, nu=1.0, length=1.0, forcing=None):
    """Five-point heat equation on the unit square with homogeneous Dirichlet walls."""
    ny = nx if ny is None else ny
    dx = length / (nx + 1)
    dy = length / (ny + 1)
    Lx = _tridiag(nx, -1.0, 2.0, -1.0) / dx**2
    Ly = _tridiag(ny, -1.0, 2.0, -1.0) / dy**2
    K = nu * (sp.kron(sp.identity(ny), Lx) + sp.kron(Ly, sp.identity(nx)))
    xs = dx * np.arange(1, nx + 1)
    ys = dy * np.arange(1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    meta = {"dx": dx, "dy": dy, "nu": nu, "nx": nx, "ny": ny, "length": length,
            "x": X.ravel(), "y": Y.ravel()}
    return LinearProblem(K, forcing=forcing, name="heat2d", metadata=meta)


def advection1d(nx, c=1.0, periodic=True, order=2, length=1.0, forcing=None):
    """Linear advection ``u_t + c u_x = 0`` with upwind finite differences.

    ``order=1`` is first-order upwind; ``order=2`` the second-order upwind
    stencil ``(3 u_i - 4 u_{i-1} + u_{i-2}) / (2 dx)`` (mirrored for ``c < 0``).
    Both have spectra in the closed right half plane.  Non-periodic grids
    drop the wraparound entries, i.e. zero inflow.
    """
    dx = length / nx
    x = dx * np.arange(nx)
    if order == 1:
        stencil = {0: 1.0, -1: -1.0}
    elif order == 2:
        stencil = {0: 1.5, -1: -2.0, -2: 0.5}
    else:
        raise ValueError("advection1d supports order 1 or 2")
    sign = 1 if c >= 0 else -1
    rows, cols, vals = [], [], []
    for off, w in stencil.items():
        for i in range(nx):
            j = i + sign * off
            if periodic:
                j %= nx
            elif not 0 <= j < nx:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(w * abs(c) / dx)
    K = sp.csr_matrix((vals, (rows, cols)), shape=(nx, nx))
    meta = {"dx": dx, "c": c, "periodic": periodic, "order": order, "length": length, "x": x}
    return LinearProblem(K, forcing=forcing, name="advection1d", metadata=meta)


def burgers1d(nx, nu=0.02, periodic=True, length=1.0):
    if not periodic:
        raise ValueError("burgers1d is only implemented on periodic grids")
    return Burgers1D(nx, nu=nu, length=length)


def make_problem(kind, nx, ny=None, params=None, bc=None, mass="identity", length=1.0):
    """Build one of the shipped problems by name."""
    params = dict(params or {})
    if kind == "heat1d":
        return heat1d(nx, nu=params.get("nu", 1.0), bc=bc or "dirichlet", mass=mass, length=length)
    if kind == "heat2d":
        return heat2d(nx, ny, nu=params.get("nu", 1.0), length=length)
    if kind == "advection1d":
        return advection1d(nx, c=params.get("c", 1.0), periodic=(bc or "periodic") == "periodic",
                           order=params.get("order", 2), length=length)
    if kind == "burgers1d":
        return burgers1d(nx, nu=params.get("nu", 0.02), periodic=(bc or "periodic") == "periodic",
                         length=length)
    raise ValueError(f"unknown problem type {kind!r}")


# --------------------------------------------------------------------------
# Serial theta-method


def _btilde(problem, theta, t_new, t_old):
    b_new = problem.forcing(t_new)
    if b_new is None:
        return None
    return theta * b_new + (1 - theta) * problem.forcing(t_old)


def theta_residual(problem, scheme, u_new, u_old, t_old):
    """Residual of one theta-method step."""
    dt, theta = scheme.dt, scheme.theta
    M = problem.mass()
    r = M @ (u_new - u_old) / dt + theta * problem.f(u_new, t_old + dt) + (1 - theta) * problem.f(u_old, t_old)
    b = _btilde(problem, theta, t_old + dt, t_old)
    return r if b is None else r - b


class SerialStepper:
    """Serial theta-method stepper with block reuse for linear problems."""

    def __init__(self, problem, scheme, block=BlockOptions(method="sparse_lu"), tol=1e-12, newton_max=25):
        self.problem = problem
        self.scheme = scheme
        self.block = block
        self.tol = tol
        self.newton_max = newton_max
        self._linear_block = None
        self.block_solves = 0
        self.block_iterations = 0
        self.block_time = 0.0

    def _block(self, u, t):
        dt, theta = self.scheme.dt, self.scheme.theta
        if self.problem.is_linear:
            if self._linear_block is None:
                self._linear_block = BlockSolver(self.problem.mass() / dt + theta * self.problem.jacobian(), self.block)
            return self._linear_block
        return BlockSolver(self.problem.mass() / dt + theta * self.problem.jacobian(u, t), self.block)

    def step(self, u, t):
        """Advance one step; returns ``(u_new, newton_iterations)``."""
        u = np.asarray(u, dtype=float)
        t_new = t + self.scheme.dt
        w = u.copy()
        r = theta_residual(self.problem, self.scheme, w, u, t)
        r0 = np.linalg.norm(r)
        history = [r0]
        its = 0
        while True:
            rn = history[-1]
            if rn <= self.tol * max(r0, 1e-300) or rn == 0.0:
                return w, its
            if its >= self.newton_max:
                raise NewtonDiverged(f"serial Newton did not converge in {self.newton_max} iterations", history)
            tic = time.perf_counter()
            solver = self._block(w, t_new)
            dw, kits = solver.solve(-r)
            self.block_time += time.perf_counter() - tic
            self.block_solves += 1
            self.block_iterations += kits
            w = w + dw
            its += 1
            r = theta_residual(self.problem, self.scheme, w, u, t)
            history.append(np.linalg.norm(r))
            if self.problem.is_linear:
                return w, its


def serial_theta_step(problem, scheme, u, t, tol=1e-12, newton_max=25, block=BlockOptions(method="sparse_lu")):
    """One step of ``M(u1 - u0)/dt + theta f(u1) + (1-theta) f(u0) = b~``.

    Linear problems solve ``(M/dt + theta K)`` once; nonlinear problems run
    Newton until the step residual drops by ``tol`` relative to its value at
    ``u1 = u0``.

    Raises
    ------
    NewtonDiverged
        If the residual target is not met within ``newton_max`` iterations.
    """
    w, _ = SerialStepper(problem, scheme, block, tol, newton_max).step(u, t)
    return w


def run_serial(problem, scheme, u0, n_steps, t0=0.0, tol=1e-12, newton_max=25,
               block=BlockOptions(method="sparse_lu")):
    """March ``n_steps`` theta-method steps; returns ``(Timeseries, SolveReport)``."""
    from .aaos import Timeseries

    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    stepper = SerialStepper(problem, scheme, block, tol, newton_max)
    u = np.asarray(u0, dtype=float).copy()
    steps = np.empty((n_steps, problem.nx))
    newton = []
    tic = time.perf_counter()
    t = t0
    for n in range(n_steps):
        try:
            u, its = stepper.step(u, t)
        except NewtonDiverged as exc:
            exc.step = n
            raise
        steps[n] = u
        newton.append(its)
        t = t0 + (n + 1) * scheme.dt
    total = time.perf_counter() - tic
    report = SolveReport(
        kind="serial",
        nt=n_steps,
        newton_iterations=int(sum(newton)),
        newton_per_step=newton,
        block_solves=stepper.block_solves,
        block_iterations=stepper.block_iterations,
        timings={"T_total": total, "T_blocks": stepper.block_time},
        fingerprint=problem.fingerprint(),
    )
    series = Timeseries(steps, np.asarray(u0, dtype=float).copy(), t0=t0)
    return series, report
