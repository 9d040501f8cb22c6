"""Linear-algebra and transform kernels.

FFT convention: forward ``X[k] = sum_n v[n] exp(-2 pi i k n / N)``, inverse
normalised by ``1/N`` (numpy's default).  Sparse matrices are plain
``scipy.sparse.csr_matrix`` objects with canonical (sorted, deduplicated)
indices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import Breakdown, MaxIterations, SingularBlock

__all__ = [
    "fft_forward",
    "fft_inverse",
    "WeightedDftPlan",
    "weighted_forward",
    "weighted_inverse",
    "as_csr",
    "BlockOptions",
    "BlockSolver",
    "complex_proxy_matrix",
    "ComplexProxyBlock",
    "complex_proxy_solve",
    "KrylovResult",
    "gmres",
]

PIVOT_RTOL = 1e-14


def fft_forward(v, axis=-1):
    """Unnormalised forward DFT along ``axis``."""
    return np.fft.fft(np.asarray(v, dtype=complex), axis=axis)


def fft_inverse(v, axis=-1):
    """Inverse DFT along ``axis``, normalised by ``1/N``."""
    return np.fft.ifft(np.asarray(v, dtype=complex), axis=axis)


@dataclass(frozen=True)
class WeightedDftPlan:
    """Gamma-weighted DFT along the time axis.

    ``gamma[n] = alpha**(n/nt)`` for ``n = 0 .. nt-1``.  The forward transform
    scales by ``gamma`` then applies the DFT; the inverse undoes both.
    """

    nt: int
    alpha: float
    gamma: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.nt) != self.nt or self.nt < 1:
            raise ValueError(f"nt must be a positive integer, got {self.nt!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha!r}")
        gamma = self.alpha ** (np.arange(self.nt) / self.nt)
        gamma.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)

    def _weights(self, ndim, axis):
        shape = [1] * ndim
        shape[axis] = self.nt
        return self.gamma.reshape(shape)

    def forward(self, v, axis=0):
        v = np.asarray(v)
        if v.shape[axis] != self.nt:
            raise ValueError(f"expected length {self.nt} along axis {axis}, got {v.shape[axis]}")
        return fft_forward(self._weights(v.ndim, axis) * v, axis=axis)

    def inverse(self, v, axis=0):
        v = np.asarray(v)
        if v.shape[axis] != self.nt:
            raise ValueError(f"expected length {self.nt} along axis {axis}, got {v.shape[axis]}")
        return fft_inverse(v, axis=axis) / self._weights(v.ndim, axis)


def weighted_forward(plan, v, axis=0):
    return plan.forward(v, axis=axis)


def weighted_inverse(plan, v, axis=0):
    return plan.inverse(v, axis=axis)


def as_csr(A):
    """Return ``A`` as a CSR matrix with sorted, unique column indices."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


# --------------------------------------------------------------------------
# Krylov kernel


@dataclass
class KrylovResult:
    x: np.ndarray
    residuals: list
    iterations: int
    converged: bool
    pc_applications: int = 0


def _givens(a, b):
    # b is real and non-negative (a norm from Arnoldi)
    absa = abs(a)
    denom = np.hypot(absa, b)
    if denom == 0.0:
        return 1.0, 0.0, 0.0
    if absa == 0.0:
        return 0.0, 1.0, b
    phase = a / absa
    return absa / denom, phase * b / denom, phase * denom


def gmres(matvec, b, x0=None, *, psolve=None, flexible=False, rtol=1e-8, atol=0.0,
          restart=None, maxiter=200, fixed_iterations=False):
    """Right-preconditioned restarted (F)GMRES.

    Residual norms in ``residuals`` are those of the unpreconditioned system
    ``b - A x``; the first entry is the initial residual.  With
    ``flexible=False`` the preconditioned basis is not stored and one extra
    preconditioner application forms the update at the end of each cycle.

    With ``fixed_iterations=True`` exactly ``maxiter`` Arnoldi steps are taken
    (fewer only on an exact solve) and no error is raised.
    """
    b = np.asarray(b)
    n = b.size
    dtype = np.result_type(b.dtype, float) if x0 is None else np.result_type(b.dtype, np.asarray(x0).dtype, float)
    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype).ravel()
    b = b.ravel()

    r = b - matvec(x) if np.any(x) else b.astype(dtype, copy=True)
    beta = float(np.linalg.norm(r))
    residuals = [beta]
    target = max(atol, rtol * beta)
    pcs = 0
    if beta == 0.0 or (beta <= target and not fixed_iterations):
        return KrylovResult(x, residuals, 0, True, 0)

    m = min(restart or maxiter, maxiter)
    its = 0
    tiny = np.finfo(float).eps
    while True:
        V = np.zeros((m + 1, n), dtype=dtype)
        Z = [] if flexible else None
        R = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        V[0] = r / beta
        g[0] = beta
        k = 0
        happy = False
        for j in range(m):
            z = V[j] if psolve is None else psolve(V[j])
            if psolve is not None:
                pcs += 1
            if flexible:
                Z.append(z)
            w = np.asarray(matvec(z), dtype=dtype)
            wnorm0 = np.linalg.norm(w)
            for i in range(j + 1):
                h = np.vdot(V[i], w)
                R[i, j] = h
                w = w - h * V[i]
            hnext = float(np.linalg.norm(w))
            for i in range(j):
                t = cs[i] * R[i, j] + sn[i] * R[i + 1, j]
                R[i + 1, j] = -np.conj(sn[i]) * R[i, j] + cs[i] * R[i + 1, j]
                R[i, j] = t
            c, s, rr = _givens(R[j, j], hnext)
            cs[j], sn[j] = c, s
            R[j, j] = rr
            g[j + 1] = -np.conj(s) * g[j]
            g[j] = c * g[j]
            its += 1
            k = j + 1
            res = float(abs(g[j + 1]))
            residuals.append(res)
            happy = hnext <= tiny * max(wnorm0, 1.0)
            if happy or its >= maxiter or (res <= target and not fixed_iterations):
                break
            V[j + 1] = w / hnext

        if k > 0:
            diag = np.abs(np.diag(R[:k, :k]))
            if np.any(diag == 0.0):
                keep = int(np.argmax(diag == 0.0))
                k = keep
            y = sla.solve_triangular(R[:k, :k], g[:k]) if k else np.zeros(0)
            if flexible:
                dx = np.asarray(Z[:k]).T @ y if k else 0.0
            else:
                dx = V[:k].T @ y if k else np.zeros(n)
                if psolve is not None and k:
                    dx = psolve(dx)
                    pcs += 1
            x = x + dx
        r = b - matvec(x)
        beta = float(np.linalg.norm(r))
        residuals[-1] = beta
        if fixed_iterations and (its >= maxiter or happy):
            return KrylovResult(x, residuals, its, beta <= target, pcs)
        if beta <= target:
            return KrylovResult(x, residuals, its, True, pcs)
        if happy:
            raise Breakdown(f"GMRES breakdown after {its} iterations with residual {beta:.3e}")
        if its >= maxiter:
            raise MaxIterations(
                f"GMRES did not converge in {maxiter} iterations "
                f"(residual {beta:.3e}, target {target:.3e})",
                history=residuals,
            )


# --------------------------------------------------------------------------
# Block solves


@dataclass(frozen=True)
class BlockOptions:
    """How a single spatial block system is solved.

    method: ``dense_lu``, ``sparse_lu`` or ``gmres``.  For ``gmres`` either
    ``tol`` (relative) or ``fixed_iters`` sets the stopping rule; when both are
    absent the circulant preconditioner picks ``1e-3 * alpha / nt``.
    """

    method: str = "dense_lu"
    tol: float | None = None
    fixed_iters: int | None = None
    maxiter: int = 500
    preconditioner: str = "ilu"

    def __post_init__(self):
        if self.method not in ("dense_lu", "sparse_lu", "gmres"):
            raise ValueError(f"unknown block method {self.method!r}")
        if self.preconditioner not in ("none", "ilu"):
            raise ValueError(f"unknown block preconditioner {self.preconditioner!r}")
        if self.fixed_iters is not None and self.fixed_iters < 1:
            raise ValueError("fixed_iters must be >= 1")

    @property
    def is_direct(self):
        return self.method != "gmres"


def _check_pivots(udiag, what):
    udiag = np.abs(udiag)
    top = udiag.max() if udiag.size else 0.0
    if top == 0.0 or udiag.min() < PIVOT_RTOL * top:
        raise SingularBlock(f"{what} is numerically singular (min pivot {udiag.min():.3e}, max {top:.3e})")


class BlockSolver:
    """Solve a fixed real sparse system repeatedly.

    Direct methods factorise once on construction; ``gmres`` optionally builds
    an incomplete LU preconditioner once.
    """

    def __init__(self, matrix, options=BlockOptions(), tol=None):
        self.matrix = as_csr(matrix)
        self.options = options
        self.tol = tol if tol is not None else (options.tol if options.tol is not None else 1e-8)
        self._lu = None
        self._dense = None
        self._ilu = None
        n = self.matrix.shape[0]
        if options.method == "dense_lu":
            dense = self.matrix.toarray()
            with warnings.catch_warnings():
                # singularity is reported through the pivot check below
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(dense, check_finite=True)
            _check_pivots(np.diag(lu), "block")
            self._dense = (lu, piv)
        elif options.method == "sparse_lu":
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except RuntimeError as exc:
                raise SingularBlock(f"block is singular: {exc}") from exc
            _check_pivots(self._lu.U.diagonal(), "block")
        elif options.preconditioner == "ilu" and n > 0:
            try:
                self._ilu = spla.spilu(self.matrix.tocsc(), drop_tol=1e-4, fill_factor=10)
            except RuntimeError as exc:
                raise SingularBlock(f"block ILU failed: {exc}") from exc

    def solve(self, rhs):
        """Return ``(x, iterations)``; direct solves count as one iteration."""
        opts = self.options
        if self._dense is not None:
            return sla.lu_solve(self._dense, rhs), 1
        if self._lu is not None:
            return self._lu.solve(np.asarray(rhs, dtype=float)), 1
        psolve = self._ilu.solve if self._ilu is not None else None
        fixed = opts.fixed_iters is not None
        result = gmres(
            self.matrix.dot, rhs, psolve=psolve, flexible=False,
            rtol=self.tol, maxiter=opts.fixed_iters if fixed else opts.maxiter,
            fixed_iterations=fixed,
        )
        return result.x, result.iterations


def complex_proxy_matrix(A, M, lam1, lam2):
    """Real ``2N x 2N`` embedding of ``(lam1*M + lam2*A)``.

    Unknowns are ordered ``[x_real, x_imag]``; the real parts of the
    coefficients sit on the diagonal blocks and the imaginary parts on the
    off-diagonal blocks with signs ``(-, +)``.
    """
    lam1 = complex(lam1)
    lam2 = complex(lam2)
    A = as_csr(A)
    M = as_csr(M)
    re = lam1.real * M + lam2.real * A
    im = lam1.imag * M + lam2.imag * A
    return as_csr(sp.bmat([[re, -im], [im, re]]))


class ComplexProxyBlock:
    """Reusable solver for ``(lam1*M + lam2*A) x = b`` with complex data."""

    def __init__(self, A, M, lam1, lam2, options=BlockOptions(), tol=None):
        if lam1 == 0 and lam2 == 0:
            raise SingularBlock("both block coefficients are zero")
        self.n = A.shape[0]
        self.lam1 = complex(lam1)
        self.lam2 = complex(lam2)
        self._solver = BlockSolver(complex_proxy_matrix(A, M, lam1, lam2), options, tol=tol)

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=complex)
        x, its = self._solver.solve(np.concatenate([rhs.real, rhs.imag]))
        return x[: self.n] + 1j * x[self.n:], its


def complex_proxy_solve(A, M, lam1, lam2, rhs, method="dense_lu", tol=None, **kwargs):
    """Solve ``(lam1*M + lam2*A) x = rhs`` through the real embedding.

    Raises
    ------
    SingularBlock
        If an LU pivot falls below ``1e-14`` of the largest pivot.
    MaxIterations
        If the inner GMRES does not reach ``tol``.
    """
    options = BlockOptions(method=method, tol=tol, **kwargs)
    x, _ = ComplexProxyBlock(A, M, lam1, lam2, options, tol=tol).solve(rhs)
    return x
