"""Parallel-in-time solver kit based on alpha-circulant preconditioning of
the all-at-once theta-method system."""

from .aaos import (
    AllAtOnceForm,
    AllAtOnceJacobian,
    Timeseries,
    aaos_jacobian_action,
    aaos_residual,
    bcast_final_step,
    read_checkpoint,
    write_checkpoint,
)
from .circulant import (
    CirculantEigenvalues,
    CirculantPreconditioner,
    ReferenceState,
    apply_circulant_inverse,
    circulant_eigenvalues,
    psi_ratios,
    resolve_reference,
)
from .config import RunConfig, load_config
from .exceptions import (
    Breakdown,
    ConfigError,
    DegenerateBlockWarning,
    DivisionByZero,
    InvalidInput,
    MaxIterations,
    MismatchedReports,
    NewtonDiverged,
    ParadiagError,
    SingularBlock,
    SolveError,
)
from .numerics import (
    BlockOptions,
    WeightedDftPlan,
    complex_proxy_solve,
    fft_forward,
    fft_inverse,
    gmres,
    weighted_forward,
    weighted_inverse,
)
from .perfmodel import PerfEstimate, PerfInputs, measure_and_predict, predict
from .problems import (
    Burgers1D,
    LinearProblem,
    Problem,
    ThetaScheme,
    advection1d,
    burgers1d,
    heat1d,
    heat2d,
    make_problem,
    run_serial,
    serial_theta_step,
)
from .report import SolveReport
from .solvers import (
    Paradiag,
    PreconditionerConfig,
    SolverOptions,
    gmres_solve,
    newton_solve,
    richardson_solve,
    solve_windows,
)

__version__ = "0.1.0"
