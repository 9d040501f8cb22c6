"""Solver reports shared by the serial stepper and the all-at-once solvers."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

TIMING_KEYS = ("T_total", "T_blocks", "T_transpose", "T_fft", "T_residual", "T_jac")


def mean_contraction(rates):
    """Geometric mean of the contraction rates, skipping the first iteration.

    The first ratio is dominated by the start-up transient; when only one
    iteration was taken it is all there is.
    """
    rates = [r for r in rates if r > 0 and math.isfinite(r)]
    if not rates:
        return float("nan")
    tail = rates[1:] if len(rates) > 1 else rates
    return float(np.exp(np.mean(np.log(tail))))


@dataclass
class SolveReport:
    """Iteration counts, residual history and component timings of one solve.

    For parallel-in-time solves ``outer_iterations`` is M_p (Krylov or
    Richardson iterations summed over Newton iterations) and
    ``pc_applications`` counts preconditioner applications.
    ``per_block_iterations[k]`` totals the inner iterations of frequency
    ``k`` over all applications.
    """

    kind: str = "parallel"
    nt: int = 0
    outer_iterations: int = 0
    pc_applications: int = 0
    residual_history: list = field(default_factory=list)
    contraction_rates: list = field(default_factory=list)
    per_block_iterations: list = field(default_factory=list)
    newton_iterations: int = 0
    newton_per_step: list = field(default_factory=list)
    block_solves: int = 0
    block_iterations: int = 0
    timings: dict = field(default_factory=dict)
    fingerprint: str = ""
    converged: bool = True
    window: int | None = None

    def __post_init__(self):
        for key in TIMING_KEYS:
            self.timings.setdefault(key, 0.0)

    @property
    def m_p(self):
        return self.outer_iterations

    @property
    def eta_mean(self):
        return mean_contraction(self.contraction_rates)

    def _kp_per_application(self):
        if not self.per_block_iterations or self.pc_applications == 0:
            return np.zeros(0)
        return np.asarray(self.per_block_iterations, dtype=float) / self.pc_applications

    @property
    def k_p_max(self):
        kp = self._kp_per_application()
        return float(kp.max()) if kp.size else 0.0

    @property
    def k_p_min(self):
        kp = self._kp_per_application()
        return float(kp.min()) if kp.size else 0.0

    @property
    def k_s(self):
        """Mean inner iterations per real-valued block solve (serial runs)."""
        return self.block_iterations / self.block_solves if self.block_solves else 0.0

    @property
    def m_s(self):
        """Mean block solves per timestep (serial runs)."""
        return self.block_solves / self.nt if self.nt else 0.0

    def merge(self, other):
        """Accumulate a nested (inner) report into this one."""
        self.outer_iterations += other.outer_iterations
        self.pc_applications += other.pc_applications
        self.contraction_rates.extend(other.contraction_rates)
        if other.per_block_iterations:
            if self.per_block_iterations:
                self.per_block_iterations = [a + b for a, b in zip(self.per_block_iterations, other.per_block_iterations)]
            else:
                self.per_block_iterations = list(other.per_block_iterations)
        for key, value in other.timings.items():
            self.timings[key] = self.timings.get(key, 0.0) + value

    def to_dict(self):
        """JSON-ready summary using the published key names."""
        return {
            "m_p": self.outer_iterations,
            "residuals": [float(r) for r in self.residual_history],
            "eta": [float(r) for r in self.contraction_rates],
            "eta_mean": _finite_or_none(self.eta_mean),
            "k_p_max": self.k_p_max,
            "k_p_min": self.k_p_min,
            "newton_its": self.newton_iterations,
            "pc_applications": self.pc_applications,
            "timings": {k: float(v) for k, v in self.timings.items()},
            "kind": self.kind,
            "nt": self.nt,
            "window": self.window,
            "converged": self.converged,
            "fingerprint": self.fingerprint,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def as_full_dict(self):
        return asdict(self)


def _finite_or_none(x):
    return float(x) if math.isfinite(x) else None
