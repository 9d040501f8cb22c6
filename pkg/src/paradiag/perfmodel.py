"""Performance model for the parallel-in-time solve.

Serial cost is ``T_s ~ K_s M_s Nx^(q-1) Nt`` and parallel cost
``T_p ~ K_p M_p Nx^(q-1) + T_c``.  With ``gamma = K_p/K_s`` and
``omega = M_p/M_s`` the predicted speedup is

    S = (Nt / (gamma omega)) / (1 + T_c/T_b) / core_penalty

and the efficiency ``E = S / (core_penalty Nt)``.  ``core_penalty`` is 2 when
the parallel run uses twice as many cores per timestep as the serial run
(complex blocks) and 1 when it uses the same number.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .exceptions import InvalidInput, MismatchedReports

__all__ = ["PerfInputs", "PerfEstimate", "predict", "measure_and_predict", "COMM_WARN_RATIO"]

# T_c/T_b above which communication is expected to erode the speedup
COMM_WARN_RATIO = 0.1


@dataclass(frozen=True)
class PerfInputs:
    """Measured or hypothesised quantities fed to :func:`predict`.

    ``M_p`` is the number of preconditioner applications; for Richardson
    the caller includes the application for the initial residual.
    """

    K_s: float = 1.0
    K_p: float = 1.0
    M_s: float = 1.0
    M_p: float = 1.0
    Nx: int = 1
    Nt: int = 1
    q: float = 1.0
    T_c: float = 0.0
    T_b: float = 0.0
    core_penalty: float = 2.0

    def __post_init__(self):
        for name in ("K_s", "K_p", "M_s", "M_p", "T_c", "T_b"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise InvalidInput(f"{name} must be a finite non-negative number, got {value!r}")
        if int(self.Nx) != self.Nx or self.Nx < 1 or int(self.Nt) != self.Nt or self.Nt < 1:
            raise InvalidInput(f"Nx and Nt must be positive integers, got Nx={self.Nx}, Nt={self.Nt}")
        if not self.q >= 1:
            raise InvalidInput(f"q must be >= 1, got {self.q}")
        if not self.core_penalty >= 1:
            raise InvalidInput(f"core_penalty must be >= 1, got {self.core_penalty}")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown performance inputs: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class PerfEstimate:
    gamma: float
    omega: float
    S: float
    E: float
    T_s_rel: float
    T_p_rel: float
    comm_ratio: float
    comm_bound: bool
    measured_speedup: float | None = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def predict(inputs):
    """Evaluate the performance model.

    Raises
    ------
    InvalidInput
        If ``K_s`` or ``M_s`` is zero, if ``K_p`` or ``M_p`` is zero, or if
        ``T_c > 0`` while ``T_b = 0``.
    """
    p = inputs
    if p.K_s == 0 or p.M_s == 0:
        raise InvalidInput("gamma and omega need K_s > 0 and M_s > 0")
    if p.K_p == 0 or p.M_p == 0:
        raise InvalidInput("the speedup needs K_p > 0 and M_p > 0")
    if p.T_b == 0:
        if p.T_c > 0:
            raise InvalidInput("T_c > 0 with T_b = 0 gives an unbounded communication ratio")
        ratio = 0.0
    else:
        ratio = p.T_c / p.T_b
    gamma = p.K_p / p.K_s
    omega = p.M_p / p.M_s
    S = p.Nt / (gamma * omega) / (1 + ratio) / p.core_penalty
    work = p.Nx ** (p.q - 1)
    return PerfEstimate(
        gamma=gamma,
        omega=omega,
        S=S,
        E=S / (p.core_penalty * p.Nt),
        T_s_rel=p.K_s * p.M_s * work * p.Nt,
        T_p_rel=p.K_p * p.M_p * work + p.T_c,
        comm_ratio=ratio,
        comm_bound=ratio > COMM_WARN_RATIO,
    )


def _parallel_counts(report):
    if report.kind == "serial":
        return report.k_s, report.m_s
    return report.k_p_max, float(report.pc_applications)


def measure_and_predict(report_serial, report_parallel, nt, core_penalty=2.0, q=1.0, nx=1):
    """Feed iteration counts and timings from two solve reports to :func:`predict`.

    ``K_s`` and ``M_s`` come from the serial report, ``K_p`` (the maximum over
    blocks), ``M_p`` (preconditioner applications), ``T_c`` (transposes) and
    ``T_b`` (block solves) from the parallel one.  The returned estimate also
    carries the measured wallclock ratio of the two runs.

    Raises
    ------
    MismatchedReports
        If the reports were produced for different problems.
    """
    if report_serial.fingerprint != report_parallel.fingerprint:
        raise MismatchedReports(
            f"reports come from different problems ({report_serial.fingerprint} vs {report_parallel.fingerprint})"
        )
    k_p, m_p = _parallel_counts(report_parallel)
    inputs = PerfInputs(
        K_s=report_serial.k_s,
        K_p=k_p,
        M_s=report_serial.m_s,
        M_p=m_p,
        Nx=nx,
        Nt=nt,
        q=q,
        T_c=report_parallel.timings.get("T_transpose", 0.0),
        T_b=report_parallel.timings.get("T_blocks", 0.0),
        core_penalty=core_penalty,
    )
    est = predict(inputs)
    t_par = report_parallel.timings.get("T_total", 0.0)
    measured = report_serial.timings.get("T_total", 0.0) / t_par if t_par > 0 else None
    return PerfEstimate(**{**est.to_dict(), "measured_speedup": measured})
