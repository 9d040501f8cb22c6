"""Block alpha-circulant preconditioner for the all-at-once system.

The Toeplitz time-stepping matrices are replaced by alpha-circulant ones,
which share the eigenvector basis ``V = Gamma^-1 F^-1`` with
``Gamma = diag(alpha**(n/nt))``.  Applying the inverse then takes three
steps: a weighted FFT in time at every spatial dof, ``nt`` independent
complex block solves ``(l1_k M + l2_k J) y_k = z_k``, and the inverse weighted
FFT.
"""
from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .exceptions import DegenerateBlockWarning, DivisionByZero, MaxIterations, SingularBlock
from .numerics import BlockOptions, ComplexProxyBlock, WeightedDftPlan

__all__ = [
    "CirculantEigenvalues",
    "circulant_eigenvalues",
    "psi_ratios",
    "ReferenceState",
    "resolve_reference",
    "BlockStats",
    "CirculantPreconditioner",
    "apply_circulant_inverse",
    "default_block_tol",
]


@dataclass(frozen=True)
class CirculantEigenvalues:
    lambda1: np.ndarray
    lambda2: np.ndarray
    alpha: float
    dt: float
    theta: float

    @property
    def nt(self):
        return self.lambda1.size


def _weighted_column(generator, nt, alpha):
    # offset m of the Toeplitz generator wraps to m mod nt with weight alpha**(m/nt)
    col = np.zeros(nt)
    for m, c in enumerate(generator):
        col[m % nt] += alpha ** (m / nt) * c
    return col


def circulant_eigenvalues(nt, dt, theta, alpha, jacobian_norm=None):
    """Eigenvalues of the two alpha-circulant time matrices.

    Computed as FFTs of the gamma-weighted first columns ``(1, -1)/dt`` and
    ``(theta, 1 - theta)``.  With ``jacobian_norm`` a
    :class:`DegenerateBlockWarning` is issued for any frequency whose block
    would vanish.
    """
    if nt < 1 or not dt > 0 or not 0 < alpha <= 1:
        raise ValueError(f"invalid circulant parameters nt={nt}, dt={dt}, alpha={alpha}")
    lam1 = np.fft.fft(_weighted_column([1 / dt, -1 / dt], nt, alpha))
    lam2 = np.fft.fft(_weighted_column([theta, 1 - theta], nt, alpha))
    if jacobian_norm is not None:
        bad = np.flatnonzero((np.abs(lam1) < 1e-14) & (np.abs(lam2) * jacobian_norm < 1e-14))
        for k in bad:
            warnings.warn(f"circulant block {k} is degenerate (both coefficients vanish)",
                          DegenerateBlockWarning, stacklevel=2)
    return CirculantEigenvalues(lam1, lam2, float(alpha), float(dt), float(theta))


def psi_ratios(eigs):
    """Mass-matrix coefficient of each complex block relative to the serial block.

    ``psi_k = (lambda1_k / lambda2_k) * dt * theta``.
    """
    small = np.flatnonzero(np.abs(eigs.lambda2) < 1e-14)
    if small.size:
        k = int(small[0])
        raise DivisionByZero(f"lambda2[{k}] vanishes for theta={eigs.theta}, alpha={eigs.alpha}", frequency=k)
    return eigs.lambda1 / eigs.lambda2 * eigs.dt * eigs.theta


@dataclass(frozen=True)
class ReferenceState:
    """Constant-in-time state whose Jacobian enters the preconditioner.

    ``mode`` is one of ``time_average``, ``initial``, ``user`` or ``linear``.
    ``time`` overrides the reference time.
    """

    mode: str = "time_average"
    state: np.ndarray | None = field(default=None, compare=False)
    time: float | None = None

    def __post_init__(self):
        if self.mode not in ("time_average", "initial", "user", "linear"):
            raise ValueError(f"unknown reference mode {self.mode!r}")
        if self.mode == "user" and self.state is None:
            raise ValueError("reference mode 'user' needs a state")


def resolve_reference(u, ref, dt=None):
    """Return ``(u_hat, t_hat)`` for the timeseries ``u``.

    The time-average reference time is the window midpoint, which needs
    ``dt``; without it ``t0`` is used.
    """
    if ref.mode == "time_average":
        t_hat = u.t0 + 0.5 * u.nt * dt if dt is not None else u.t0
        u_hat = u.time_average()
    elif ref.mode == "initial":
        u_hat, t_hat = u.initial_condition.copy(), u.t0
    elif ref.mode == "user":
        u_hat, t_hat = np.asarray(ref.state, dtype=float).copy(), u.t0
    else:
        u_hat, t_hat = None, u.t0
    if ref.time is not None:
        t_hat = ref.time
    return u_hat, t_hat


def default_block_tol(alpha, nt):
    return 1e-3 * alpha / nt


@dataclass
class BlockStats:
    iterations: np.ndarray
    time: float


class CirculantPreconditioner:
    """Applies the inverse of ``C1 x M + C2 x J_hat`` by diagonalisation in time.

    Parameters
    ----------
    form : AllAtOnceForm
    alpha : float
        Circulant parameter in ``(0, 1]``.
    reference : ReferenceState, optional
        Defaults to ``linear`` for linear problems and ``time_average``
        otherwise.
    block : BlockOptions
        Block solver; iterative blocks default to tolerance
        ``1e-3 * alpha / nt``.
    threads : int
        Worker threads for the block solves.
    block_problem : Problem, optional
        Alternative problem whose Jacobian builds the blocks.
    """

    def __init__(self, form, alpha=1e-4, reference=None, block=BlockOptions(), threads=1, block_problem=None):
        self.form = form
        self.alpha = float(alpha)
        self.plan = WeightedDftPlan(form.nt, self.alpha)
        self.block_problem = block_problem or form.problem
        if reference is None:
            reference = ReferenceState("linear" if self.block_problem.is_linear else "time_average")
        if reference.mode == "linear" and not self.block_problem.is_linear:
            raise ValueError("reference mode 'linear' needs a linear block problem")
        self.reference = reference
        self.block = block
        self.block_tol = block.tol if block.tol is not None else default_block_tol(self.alpha, form.nt)
        self.threads = max(1, int(threads))
        self.eigs = circulant_eigenvalues(form.nt, form.scheme.dt, form.scheme.theta, self.alpha)
        self._blocks = None
        self._key = None
        self.reset_counters()

    def reset_counters(self):
        self.applications = 0
        self.block_iterations = np.zeros(self.form.nt, dtype=int)
        self.timings = {"T_blocks": 0.0, "T_transpose": 0.0, "T_fft": 0.0}

    @property
    def reference_state(self):
        return self._ref

    def update(self, u=None):
        """Resolve the reference state from ``u`` and rebuild the blocks if it changed."""
        problem = self.block_problem
        if self.reference.mode == "linear":
            key = ("linear",)
            self._ref = (None, self.form.t0)
        else:
            if u is None:
                raise ValueError("a timeseries is needed to resolve a nonlinear reference state")
            u_hat, t_hat = resolve_reference(u, self.reference, self.form.scheme.dt)
            self._ref = (u_hat, t_hat)
            key = (u_hat.tobytes(), t_hat)
        if key == self._key and self._blocks is not None:
            return
        u_hat, t_hat = self._ref
        J = problem.jacobian() if problem.is_linear else problem.jacobian(u_hat, t_hat)
        M = problem.mass()
        self.eigs = circulant_eigenvalues(
            self.form.nt, self.form.scheme.dt, self.form.scheme.theta, self.alpha,
            jacobian_norm=spla.norm(J, np.inf),
        )
        tic = time.perf_counter()

        def build(k):
            try:
                return ComplexProxyBlock(J, M, self.eigs.lambda1[k], self.eigs.lambda2[k], self.block, tol=self.block_tol)
            except SingularBlock as exc:
                exc.frequency = k
                raise

        self._blocks = self._map(build, range(self.form.nt))
        self.timings["T_blocks"] += time.perf_counter() - tic
        self._key = key

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) == 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def apply(self, rhs, order=None):
        """Apply the preconditioner inverse to an ``(nt, nx)`` array.

        ``order`` permutes the sequence of block solves; the result does not
        depend on it.  Returns the solution, real if ``rhs`` is real.
        """
        if self._blocks is None:
            self.update()
        rhs = np.asarray(rhs)
        real_input = not np.iscomplexobj(rhs)
        nt, nx = self.form.nt, self.form.nx
        rhs = rhs.reshape(nt, nx)

        # Step 1: time-aligned layout, weighted FFT at each spatial dof
        tic = time.perf_counter()
        by_dof = np.ascontiguousarray(rhs.T)
        toc = time.perf_counter()
        self.timings["T_transpose"] += toc - tic
        z = self.plan.forward(by_dof, axis=1)
        tic = time.perf_counter()
        self.timings["T_fft"] += tic - toc
        z = np.ascontiguousarray(z.T)
        toc = time.perf_counter()
        self.timings["T_transpose"] += toc - tic

        # Step 2: independent complex block solves
        y = np.empty_like(z)
        its = np.zeros(nt, dtype=int)

        def solve(k):
            try:
                yk, kits = self._blocks[k].solve(z[k])
            except (SingularBlock, MaxIterations) as exc:
                exc.frequency = k
                raise
            y[k] = yk
            its[k] = kits

        self._map(solve, range(nt) if order is None else order)
        tic = time.perf_counter()
        block_time = tic - toc
        self.timings["T_blocks"] += block_time

        # Step 3: back to the time-aligned layout and inverse weighted FFT
        y_by_dof = np.ascontiguousarray(y.T)
        toc = time.perf_counter()
        self.timings["T_transpose"] += toc - tic
        x = self.plan.inverse(y_by_dof, axis=1)
        tic = time.perf_counter()
        self.timings["T_fft"] += tic - toc
        x = np.ascontiguousarray(x.T)
        self.timings["T_transpose"] += time.perf_counter() - tic

        self.applications += 1
        self.block_iterations += its
        self.last_stats = BlockStats(its, block_time)
        return x.real.copy() if real_input else x

    def __call__(self, rhs):
        return self.apply(rhs)


def apply_circulant_inverse(form, eigs, ref, rhs, block_opts=BlockOptions(), u=None, threads=1):
    """One-shot application of the circulant preconditioner inverse.

    ``eigs`` fixes ``alpha``; ``u`` supplies the timeseries for
    state-dependent reference modes.  Returns ``(x, BlockStats)``.
    """
    pc = CirculantPreconditioner(form, eigs.alpha, ref, block_opts, threads)
    pc.update(u)
    x = pc.apply(rhs)
    return x, pc.last_stats
