"""Preconditioned conjugate gradients for the symmetric positive (semi)definite
systems of the flow and heat solvers.

Storage is ``scipy.sparse.csr_matrix``.  The iteration itself, the Jacobi
and deflated preconditioners and the null-space handling are written out
here so that iteration counts and residual histories are observable.  A
third preconditioner applies a complete sparse LU factorisation
(``scipy.sparse.linalg.splu``); it is meant for small systems that are
solved many times with the same matrix but are too ill-conditioned for the
diagonal preconditioners.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverError",
    "ConvergenceError",
    "BreakdownError",
    "SolverConfig",
    "SolveResult",
    "Deflation",
    "as_spd",
    "build_deflation",
    "build_factorization",
    "pcg_solve",
    "dump_matrix_market",
]

RESIDUAL_FLOOR = 1e-30
PRECONDITIONERS = ("jacobi", "deflated-jacobi", "factorized")


class SolverError(RuntimeError):
    """Base class for linear solver failures."""


class ConvergenceError(SolverError):
    def __init__(self, message, iterations, residual):
        super().__init__(f"{message} (iterations={iterations}, relative residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class BreakdownError(SolverError):
    """NaN/Inf or a non-positive curvature encountered during iteration."""


@dataclass
class SolverConfig:
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None
    preconditioner: str = "jacobi"
    deflation_groups: np.ndarray | None = None
    # remove the constant vector from rhs and iterates (pure-Neumann systems)
    singular: bool = False
    # optional absolute floor on ||b - A x||; 0 disables it
    abs_tolerance: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rel_tolerance < 1.0:
            raise ValueError(f"rel_tolerance must lie in (0, 1), got {self.rel_tolerance}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.preconditioner == "deflated-jacobi" and self.deflation_groups is None:
            raise ValueError("deflated-jacobi needs deflation_groups")
        if self.preconditioner == "factorized" and self.singular:
            raise ValueError("the factorized preconditioner needs a nonsingular matrix")


@dataclass
class SolveResult:
    solution: np.ndarray
    iterations: int
    final_residual: float
    residual_history: list = field(default_factory=list)

    def __iter__(self):
        # allows ``x, its, res = pcg_solve(...)``
        return iter((self.solution, self.iterations, self.final_residual))


def as_spd(matrix) -> sp.csr_matrix:
    """Validate and normalise a matrix to sorted CSR.

    Checks squareness, structural symmetry and a positive diagonal.
    """
    a = sp.csr_matrix(matrix, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    a.sum_duplicates()
    a.sort_indices()
    if (a != a.T).nnz and abs(a - a.T).max() > 1e-12 * abs(a).max():
        raise ValueError("matrix is not symmetric")
    if np.any(a.diagonal() <= 0.0):
        raise ValueError("matrix diagonal must be positive")
    return a


class Deflation:
    """Deflation with piecewise-constant group vectors W.

    Applies P = I - A Q with Q = W E^+ W^T, E = W^T A W (pseudo-inverse so a
    singular coarse matrix from a pure-Neumann operator is tolerated).
    """

    def __init__(self, matrix: sp.csr_matrix, groups: np.ndarray):
        groups = np.asarray(groups)
        n = matrix.shape[0]
        if groups.shape != (n,):
            raise ValueError(f"deflation groups must assign every one of {n} nodes")
        if np.any(groups < 0):
            raise ValueError("every node must belong to a group (negative group id found)")
        n_groups = int(groups.max()) + 1
        counts = np.bincount(groups, minlength=n_groups)
        if np.any(counts == 0):
            raise ValueError(f"empty deflation groups: {np.flatnonzero(counts == 0).tolist()}")
        self.n_groups = n_groups
        self.groups = groups
        # W is never formed: W^T r is a bincount and W y an indexed gather
        self.aw = np.stack([np.asarray(matrix @ (groups == g).astype(float)).ravel()
                            for g in range(n_groups)], axis=1)
        self.coarse = np.stack([np.bincount(groups, self.aw[:, g], n_groups)
                                for g in range(n_groups)], axis=1)
        self.coarse_pinv = np.linalg.pinv(self.coarse, rcond=1e-12, hermitian=True)

    def restrict(self, r):
        """W^T r."""
        return np.bincount(self.groups, r, self.n_groups)

    def coarse_correction(self, r):
        """Q r."""
        return (self.coarse_pinv @ self.restrict(r))[self.groups]

    def project(self, r):
        """P r = r - A Q r."""
        return r - self.aw @ (self.coarse_pinv @ self.restrict(r))

    def finalize(self, x, b):
        """x = Q b + P^T x."""
        return (self.coarse_pinv @ (self.restrict(b) - self.aw.T @ x))[self.groups] + x


def build_deflation(matrix, groups) -> Deflation:
    return Deflation(sp.csr_matrix(matrix), groups)


def build_factorization(matrix):
    """Complete LU factors for the ``factorized`` preconditioner (reusable)."""
    try:
        return spla.splu(sp.csc_matrix(matrix, dtype=float))
    except RuntimeError as exc:
        raise BreakdownError(f"factorisation failed: {exc}") from exc


def _remove_mean(v):
    return v - v.mean()


def pcg_solve(matrix, rhs, initial_guess=None, config: SolverConfig | None = None,
              deflation: Deflation | None = None, callback=None, factorization=None) -> SolveResult:
    """Solve A x = b by preconditioned CG.

    Convergence is declared on the true residual ``||b - A x|| / ||b||``
    (``||b||`` floored at 1e-30).  ``callback(x)`` is called with each
    iterate.  ``factorization`` (from :func:`build_factorization`) is reused
    by the ``factorized`` preconditioner when given.  Returns a :class:`SolveResult` that also unpacks as
    ``(solution, iterations, final_residual)``.

    Raises
    ------
    ConvergenceError
        No convergence within ``max_iterations``.
    BreakdownError
        Non-finite values encountered.
    """
    config = config or SolverConfig()
    a = matrix if sp.issparse(matrix) else sp.csr_matrix(matrix)
    n = a.shape[0]
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise BreakdownError("non-finite right-hand side")
    max_it = config.max_iterations or 10 * n
    x = np.zeros(n) if initial_guess is None else np.array(initial_guess, dtype=float)
    if config.singular:
        b = _remove_mean(b)
        x = _remove_mean(x)

    diag = a.diagonal()
    if np.any(diag <= 0):
        raise BreakdownError("non-positive diagonal entry; matrix is not SPD")
    inv_diag = 1.0 / diag
    if config.preconditioner == "factorized":
        factor = factorization if factorization is not None else build_factorization(a)
        precondition = factor.solve
    else:
        def precondition(r):
            return inv_diag * r

    if config.preconditioner == "deflated-jacobi" and deflation is None:
        deflation = Deflation(sp.csr_matrix(a), config.deflation_groups)

    b_norm = max(np.linalg.norm(b), RESIDUAL_FLOOR)
    # everything below is measured relative to ||b||
    tol = max(config.rel_tolerance, config.abs_tolerance / b_norm)
    history = []
    total_its = 0

    def true_residual(x):
        r = b - a @ x
        if config.singular:
            r = _remove_mean(r)
        return r

    if deflation is not None:
        # deflated CG iterates on the projected system, then maps back
        x_hat = x.copy()
        r = deflation.project(true_residual(x_hat))
    else:
        r = true_residual(x)

    for _restart in range(3):
        res = np.linalg.norm(true_residual(x if deflation is None else deflation.finalize(x_hat, b))) / b_norm
        history.append(res)
        if res <= tol:
            break
        y = x_hat if deflation is not None else x
        z = precondition(r)
        if config.singular:
            z = _remove_mean(z)
        p = z.copy()
        rz = r @ z
        converged = False
        while total_its < max_it:
            ap = a @ p
            if deflation is not None:
                ap = deflation.project(ap)
            pap = p @ ap
            if not np.isfinite(pap):
                raise BreakdownError(f"non-finite curvature at iteration {total_its}")
            if pap <= 0.0:
                if np.linalg.norm(r) / b_norm <= tol:
                    converged = True
                    break
                raise BreakdownError(f"non-positive curvature p^T A p = {pap:.3e} at iteration {total_its}")
            alpha = rz / pap
            y = y + alpha * p
            r = r - alpha * ap
            total_its += 1
            if callback is not None:
                callback(y if deflation is None else deflation.finalize(y, b))
            rel = np.linalg.norm(r) / b_norm
            if not np.isfinite(rel):
                raise BreakdownError(f"non-finite residual at iteration {total_its}")
            history.append(rel)
            if rel <= tol:
                converged = True
                break
            z = precondition(r)
            if config.singular:
                z = _remove_mean(z)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        if deflation is not None:
            x_hat = y
            x = deflation.finalize(x_hat, b)
        else:
            x = y
        if config.singular:
            x = _remove_mean(x)
        # recurrence drift: recompute the true residual and restart if needed
        r_true = true_residual(x)
        res = np.linalg.norm(r_true) / b_norm
        if res <= tol or (not converged and total_its >= max_it):
            break
        if deflation is not None:
            x_hat = x.copy()
            r = deflation.project(r_true)
        else:
            r = r_true
    final = np.linalg.norm(true_residual(x)) / b_norm
    if final > tol:
        raise ConvergenceError("PCG did not reach the requested tolerance", total_its, final)
    return SolveResult(x, total_its, float(final), history)


def dump_matrix_market(path, matrix, comment="") -> None:
    """Write the matrix in Matrix Market coordinate format, symmetric storage."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, symmetry="symmetric")
