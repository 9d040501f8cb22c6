"""The all-at-once system over one window of timesteps.

Steps are stored as an ``(nt, nx)`` array whose row ``n`` holds ``u`` at
``t0 + (n + 1) dt``; the initial condition is kept separately.  A time
partition splits the rows into contiguous slices.  Every per-step evaluation
needs the last step of the previous slice (or the initial condition for the
first slice), which is fetched by an explicit one-step lookback.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Timeseries",
    "AllAtOnceForm",
    "AllAtOnceJacobian",
    "aaos_residual",
    "aaos_jacobian_action",
    "aaos_rhs",
    "linearisation_state",
    "bcast_final_step",
    "write_checkpoint",
    "read_checkpoint",
]


def _normalise_partition(partition, nt):
    if partition is None:
        return (nt,)
    partition = tuple(int(p) for p in partition)
    if any(p < 1 for p in partition):
        raise ValueError(f"partition entries must be >= 1, got {partition}")
    if sum(partition) != nt:
        raise ValueError(f"partition {partition} does not sum to nt={nt}")
    return partition


@dataclass
class Timeseries:
    """All-at-once unknown: ``nt`` steps plus the initial condition."""

    steps: np.ndarray
    initial_condition: np.ndarray
    t0: float = 0.0
    partition: tuple = None

    def __post_init__(self):
        self.steps = np.array(self.steps, dtype=float, ndmin=2)
        self.initial_condition = np.array(self.initial_condition, dtype=float).ravel()
        if self.steps.shape[1] != self.initial_condition.size:
            raise ValueError(
                f"steps have {self.steps.shape[1]} dofs but the initial condition has {self.initial_condition.size}"
            )
        if not np.all(np.isfinite(self.steps)) or not np.all(np.isfinite(self.initial_condition)):
            raise ValueError("timeseries contains non-finite values")
        self.partition = _normalise_partition(self.partition, self.nt)

    @classmethod
    def constant(cls, u0, nt, t0=0.0, partition=None):
        """Every step set to ``u0`` (the default initial guess)."""
        u0 = np.asarray(u0, dtype=float)
        return cls(np.tile(u0, (nt, 1)), u0.copy(), t0=t0, partition=partition)

    @property
    def nt(self):
        return self.steps.shape[0]

    @property
    def nx(self):
        return self.steps.shape[1]

    def slices(self):
        """Views of the steps, one per partition entry."""
        bounds = np.cumsum((0,) + self.partition)
        return [self.steps[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    def time_average(self):
        return self.steps.mean(axis=0)

    def copy(self):
        return Timeseries(self.steps.copy(), self.initial_condition.copy(), self.t0, self.partition)

    def with_steps(self, steps):
        return Timeseries(steps, self.initial_condition.copy(), self.t0, self.partition)


@dataclass
class AllAtOnceForm:
    """A problem, a theta scheme and a window of ``nt`` steps from ``t0``."""

    problem: object
    scheme: object
    nt: int
    t0: float = 0.0
    times: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        self.times = self.t0 + self.scheme.dt * np.arange(1, self.nt + 1)

    def at(self, t0):
        """The same form for a window starting at ``t0``."""
        return AllAtOnceForm(self.problem, self.scheme, self.nt, t0)

    @property
    def nx(self):
        return self.problem.nx


def _slice_bounds(partition):
    bounds = np.cumsum((0,) + tuple(partition))
    return list(zip(bounds[:-1], bounds[1:]))


def _check(form, u):
    if u.nt != form.nt or u.nx != form.nx:
        raise ValueError(f"timeseries shape {(u.nt, u.nx)} does not match form {(form.nt, form.nx)}")


def _btilde_steps(form, t_start):
    problem = form.problem
    theta = form.scheme.theta
    if problem.forcing(t_start) is None:
        return None
    prev_t = np.concatenate([[t_start], form.times[:-1]])
    return np.array([theta * problem.forcing(t) + (1 - theta) * problem.forcing(tp)
                     for t, tp in zip(form.times, prev_t)])


def aaos_residual(form, u):
    """Residual of the all-at-once theta-method system.

    ``r_n = M (u_n - u_{n-1}) / dt + theta f(u_n, t_n) + (1 - theta) f(u_{n-1}, t_{n-1}) - b~_n``
    with ``u_{-1}`` the initial condition.  Returns an ``(nt, nx)`` array.
    """
    _check(form, u)
    problem = form.problem
    dt, theta = form.scheme.dt, form.scheme.theta
    M = problem.mass()
    times = form.times
    btilde = _btilde_steps(form, u.t0)

    out = np.empty_like(u.steps)
    halo = u.initial_condition
    f_halo = problem.f(halo, u.t0)
    for (a, b), chunk in zip(_slice_bounds(u.partition), u.slices()):
        prev = np.vstack([halo[None, :], chunk[:-1]])
        f_cur = problem.f_steps(chunk, times[a:b])
        f_prev = np.vstack([f_halo[None, :], f_cur[:-1]])
        dU = chunk - prev
        r = np.asarray((M @ dU.T).T) / dt + theta * f_cur + (1 - theta) * f_prev
        if btilde is not None:
            r -= btilde[a:b]
        out[a:b] = r
        # lookback exchange for the next slice
        halo = chunk[-1]
        f_halo = f_cur[-1]
    return out


def aaos_rhs(form, u):
    """Constant part of the residual of a linear problem: ``r(v) = A v - rhs``."""
    zero = Timeseries(np.zeros_like(u.steps), u.initial_condition, u.t0, u.partition)
    return -aaos_residual(form, zero)


def linearisation_state(u, mode="current", user_state=None):
    """States to linearise the Jacobian around, one row per step.

    ``current`` uses the iterate itself; ``time_average`` and ``initial``
    repeat a single state over all steps; ``user`` takes ``user_state``,
    either one spatial vector or a full ``(nt, nx)`` array.
    """
    if mode == "current":
        return u.steps
    if mode == "time_average":
        return np.tile(u.time_average(), (u.nt, 1))
    if mode == "initial":
        return np.tile(u.initial_condition, (u.nt, 1))
    if mode == "user":
        if user_state is None:
            raise ValueError("linearisation mode 'user' needs a state")
        state = np.asarray(user_state, dtype=float)
        return np.tile(state, (u.nt, 1)) if state.ndim == 1 else state
    raise ValueError(f"unknown linearisation mode {mode!r}")


class AllAtOnceJacobian:
    """Matrix-free action of ``(B1 x M) + (B2 x I) blockdiag(grad f(u_n, t_n))``.

    The spatial Jacobians are assembled once per linearisation state; linear
    problems share the single stiffness matrix.
    """

    def __init__(self, form, u_lin=None, partition=None):
        self.form = form
        self.partition = _normalise_partition(partition, form.nt)
        problem = form.problem
        if problem.is_linear:
            self._jacs = None
        else:
            if u_lin is None:
                raise ValueError("a linearisation state is required for nonlinear problems")
            u_lin = np.asarray(u_lin, dtype=float).reshape(form.nt, form.nx)
            self._jacs = [problem.jacobian(s, t) for s, t in zip(u_lin, form.times)]

    def _apply_jac(self, steps, a, b):
        problem = self.form.problem
        if self._jacs is None:
            return np.asarray((problem.jacobian() @ steps.T).T)
        return np.array([self._jacs[n] @ steps[n - a] for n in range(a, b)])

    def apply(self, v):
        """Apply to an ``(nt, nx)`` array (the first step has no predecessor)."""
        form = self.form
        v = np.asarray(v).reshape(form.nt, form.nx)
        dt, theta = form.scheme.dt, form.scheme.theta
        M = form.problem.mass()
        out = np.empty(v.shape, dtype=np.result_type(v.dtype, float))
        halo = np.zeros(form.nx, dtype=out.dtype)
        jhalo = np.zeros(form.nx, dtype=out.dtype)
        for a, b in _slice_bounds(self.partition):
            chunk = v[a:b]
            prev = np.vstack([halo[None, :], chunk[:-1]])
            jcur = self._apply_jac(chunk, a, b)
            jprev = np.vstack([jhalo[None, :], jcur[:-1]])
            out[a:b] = np.asarray((M @ (chunk - prev).T).T) / dt + theta * jcur + (1 - theta) * jprev
            halo = chunk[-1]
            jhalo = jcur[-1]
        return out

    def matvec(self, x):
        return self.apply(x).ravel()


def aaos_jacobian_action(form, u_lin, v):
    """Jacobian action of the all-at-once system linearised at ``u_lin``.

    ``u_lin`` may be a :class:`Timeseries` (its steps are used) or an
    ``(nt, nx)`` array of per-step states.
    """
    states = u_lin.steps if isinstance(u_lin, Timeseries) else u_lin
    partition = u_lin.partition if isinstance(u_lin, Timeseries) else None
    vsteps = v.steps if isinstance(v, Timeseries) else v
    return AllAtOnceJacobian(form, states, partition).apply(vsteps)


def bcast_final_step(u):
    """Copy of the last step, used as the next window's initial condition."""
    return u.steps[-1].copy()


def write_checkpoint(directory, state, t, window):
    """Write ``state`` as little-endian float64 with a JSON sidecar.

    Returns the path of the binary file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = np.ascontiguousarray(state, dtype="<f8")
    stem = f"window_{int(window):04d}"
    path = directory / f"{stem}.bin"
    state.tofile(path)
    sidecar = {"nx": int(state.size), "t": float(t), "window": int(window), "dtype": "<f8"}
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, sort_keys=True))
    return path


def read_checkpoint(path):
    """Read a checkpoint written by :func:`write_checkpoint`; returns ``(state, sidecar)``."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    state = np.fromfile(path, dtype="<f8")
    if state.size != sidecar["nx"]:
        raise ValueError(f"checkpoint {path} holds {state.size} values, sidecar says {sidecar['nx']}")
    return state.astype(float), sidecar
