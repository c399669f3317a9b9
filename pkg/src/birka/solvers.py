"""Linear solvers for the Kronecker-structured sieve systems.

The reduction algorithm needs, at every outer iteration, the solutions
of a primal system M vec(V) = b and its transposed dual M^T vec(W) = c
with M = -Lambda (x) I_n - I_r (x) A - sum_k NCheck_k^T (x) N_k.  This
module provides the matrix-free operator, an exact sparse-LU path, a
coupled two-sided BiCG that solves the primal/dual pair within a single
recurrence (so the two Krylov spaces stay bi-orthogonally paired), and
a threshold-ILU preconditioner for the assembled operator.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spsla

from .linalg import (ConvergenceError, SingularMatrixError, SparseLU,
                     frobenius_norm, unvec, vec)


class KroneckerOperator:
    """Matrix-free M = -Lambda (x) I_n - I_r (x) A - sum_k NCheck_k^T (x) N_k.

    ``apply`` multiplies by M and ``apply_transpose`` by M^T, where the
    transpose is taken WITHOUT conjugation so that the dual operator is
    exactly the transpose of the primal one even for complex Lambda.
    Both act on length n*r vectors interpreted as vec of an n-by-r
    matrix (column stacking).
    """

    def __init__(self, Lambda, NCheckCheck, sys):
        Lambda = np.asarray(Lambda).reshape(-1)
        r = Lambda.size
        NCheckCheck = [np.asarray(Nc) for Nc in NCheckCheck]
        if len(NCheckCheck) != sys.m:
            raise ValueError("need one NCheck_k per input channel")
        for Nc in NCheckCheck:
            if Nc.shape != (r, r):
                raise ValueError("each NCheck_k must be r-by-r")
        if np.any(Lambda.real >= 0):
            warnings.warn("reduced eigenvalues with nonnegative real part",
                          RuntimeWarning, stacklevel=2)
        self.Lambda = Lambda
        self.NCheckCheck = NCheckCheck
        self.A = sys.A
        self.N = sys.N
        self.n, self.r = sys.A.shape[0], r
        self.shape = (self.n * r, self.n * r)

    def _as_matrix(self, x):
        return unvec(np.asarray(x), self.n, self.r)

    def apply(self, x):
        """M @ x through vec identities: (P^T (x) Q) vec(X) = vec(Q X P)."""
        X = self._as_matrix(x)
        Y = -X * self.Lambda[np.newaxis, :] - self.A @ X
        for Nc, Nk in zip(self.NCheckCheck, self.N):
            Y = Y - Nk @ (X @ Nc)
        return vec(Y)

    def apply_transpose(self, x):
        """M^T @ x (plain transpose, no conjugation)."""
        X = self._as_matrix(x)
        Y = -X * self.Lambda[np.newaxis, :] - self.A.T @ X
        for Nc, Nk in zip(self.NCheckCheck, self.N):
            Y = Y - Nk.T @ (X @ Nc.T)
        return vec(Y)

    def assemble(self):
        """Assembled sparse (n*r)-by-(n*r) matrix (complex when Lambda is)."""
        n, r = self.n, self.r
        I_n = sps.identity(n, format="csr")
        I_r = sps.identity(r, format="csr")
        M = -sps.kron(sps.diags(self.Lambda), I_n) - sps.kron(I_r, self.A)
        for Nc, Nk in zip(self.NCheckCheck, self.N):
            M = M - sps.kron(sps.csr_matrix(Nc.T), Nk)
        return M.tocsr()


@dataclass
class SolveReport:
    """Outcome of one sieve-system solve (primal or dual side).

    ``solution`` and ``residual`` are n-by-r matrices; the residual is
    always recomputed as rhs - operator @ solution after the solve, so
    the stored value is exact by construction.  ``pg_defect`` is the
    bilinear pairing scalar |trace(W^T R_B)| (primal) or
    |trace(R_C^T V)| (dual), quantifying how far the pair is from the
    Petrov-Galerkin orthogonality the stability analysis assumes.
    """

    solution: np.ndarray
    residual: np.ndarray
    iterations: int
    relative_residual_history: list
    tolerance_used: float
    mode: str
    preconditioner: str = "none"
    converged: bool = True
    stagnated: bool = False
    restarts: int = 0
    pg_defect: float = 0.0

    @property
    def relative_residual(self):
        return self.relative_residual_history[-1] if self.relative_residual_history else 0.0


def _finalize_pair(op, b, c, x, xhat, it, hist_p, hist_d, tol, mode,
                   precond="none", conv_p=True, conv_d=True, stag=False, restarts=0):
    n, r = op.n, op.r
    Rp = unvec(b - op.apply(x), n, r)
    Rd = unvec(c - op.apply_transpose(xhat), n, r)
    V = unvec(x, n, r)
    W = unvec(xhat, n, r)
    defect_p = abs(np.trace(W.T @ Rp))
    defect_d = abs(np.trace(Rd.T @ V))
    rep_p = SolveReport(V, Rp, it, hist_p, tol, mode, precond, conv_p,
                        stag, restarts, defect_p)
    rep_d = SolveReport(W, Rd, it, hist_d, tol, mode, precond, conv_d,
                        stag, restarts, defect_d)
    return rep_p, rep_d


def direct_solve(op, rhs_primal, rhs_dual):
    """Exact primal/dual solves via one sparse LU of the assembled operator."""
    M = op.assemble()
    try:
        lu = SparseLU(M)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            "assembled sieve operator is singular; the reduction requires "
            "it to be invertible at every iteration"
        ) from exc
    b = np.asarray(rhs_primal, dtype=M.dtype).reshape(-1)
    c = np.asarray(rhs_dual, dtype=M.dtype).reshape(-1)
    x = lu.solve(b)
    xhat = lu.solve_transpose(c)
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    hist_p = [float(np.linalg.norm(b - op.apply(x)) / max(nb, 1e-300))]
    hist_d = [float(np.linalg.norm(c - op.apply_transpose(xhat)) / max(nc, 1e-300))]
    return _finalize_pair(op, b, c, x, xhat, 1, hist_p, hist_d,
                          0.0, "direct")


class IlutPreconditioner:
    """Threshold incomplete-LU factors of an assembled sieve operator."""

    def __init__(self, ilu, drop_tolerance, shift=0.0):
        self._ilu = ilu
        self.drop_tolerance = drop_tolerance
        self.shift = shift

    def solve(self, x):
        return self._ilu.solve(np.asarray(x))

    def solve_transpose(self, x):
        return self._ilu.solve(np.asarray(x), trans="T")

    def describe(self):
        base = f"ilut(drop_tol={self.drop_tolerance:g})"
        return base if self.shift == 0.0 else base + f"+shift({self.shift:.3e})"


def build_ilut(op, drop_tol, fill_factor=10.0):
    """Threshold ILU of the assembled operator, with diagonal-shift retries.

    A zero (or unusably small) pivot triggers a retry on the shifted
    matrix M + s*I with s = 1e-8 * ||M||_F, doubling s each attempt, at
    most 3 attempts.
    """
    M = sps.csc_matrix(op.assemble() if isinstance(op, KroneckerOperator) else op)
    shift = 0.0
    step = 1e-8 * frobenius_norm(M)
    last_exc = None
    for attempt in range(4):
        try:
            ilu = spsla.spilu(M + shift * sps.identity(M.shape[0], dtype=M.dtype, format="csc")
                              if shift else M,
                              drop_tol=drop_tol, fill_factor=fill_factor)
            return IlutPreconditioner(ilu, drop_tol, shift)
        except RuntimeError as exc:
            last_exc = exc
            shift = step * (2 ** attempt)
    raise SingularMatrixError(
        f"incomplete LU failed even with diagonal shifts: {last_exc}")


def bicg_dual_solve(op, rhs_primal, rhs_dual, tol, maxit=None, precond=None,
                    breakdown_tol=1e-14, seed=1234):
    """Coupled two-sided BiCG for M x = b and M^T xhat = c.

    One BiCG recurrence advances both sides: the shadow sequence of the
    primal solve is exactly the residual sequence of the dual solve, so
    the primal and dual Krylov spaces are built bi-orthogonally paired
    (all inner products are unconjugated bilinear forms).  With an
    optional preconditioner K, the primal side uses K^{-1} and the dual
    side K^{-T}.  On a bi-orthogonality breakdown the iteration restarts
    from the current iterates (re-deriving both residuals and, if the
    pairing scalar is still degenerate, perturbing the dual iterate), at
    most 3 times.
    """
    if not (0.0 < tol < 1.0):
        raise ValueError("tol must be in (0, 1)")
    b = np.asarray(rhs_primal).reshape(-1)
    c = np.asarray(rhs_dual).reshape(-1)
    nb, nc = np.linalg.norm(b), np.linalg.norm(c)
    if nb == 0.0 or nc == 0.0:
        raise ValueError("BiCG requires nonzero right-hand sides")
    if maxit is None:
        maxit = 4 * op.n * op.r
    dtype = np.result_type(b.dtype, c.dtype, op.Lambda.dtype)
    x = np.zeros_like(b, dtype=dtype)
    xhat = np.zeros_like(c, dtype=dtype)
    r = b.astype(dtype)
    rhat = c.astype(dtype)
    rng = np.random.default_rng(seed)

    def prec(v):
        return precond.solve(v) if precond is not None else v

    def prec_t(v):
        return precond.solve_transpose(v) if precond is not None else v

    hist_p = [float(np.linalg.norm(r) / nb)]
    hist_d = [float(np.linalg.norm(rhat) / nc)]
    restarts = 0
    it = 0
    stagnated = False
    while it < maxit:
        z = prec(r)
        zhat = prec_t(rhat)
        rho = np.dot(rhat, z)
        scale = np.linalg.norm(rhat) * np.linalg.norm(z)
        if abs(rho) <= breakdown_tol * max(scale, 1e-300):
            if restarts >= 3:
                raise ConvergenceError(
                    "BiCG bi-orthogonality breakdown persisted through 3 restarts")
            restarts += 1
            # restart from the current iterates; if the pairing scalar is
            # still degenerate, nudge the dual iterate so the new exact
            # residual pair is no longer bi-orthogonal
            xhat = xhat + 1e-10 * max(np.linalg.norm(xhat), 1.0) * rng.standard_normal(xhat.shape)
            r = b - op.apply(x)
            rhat = c - op.apply_transpose(xhat)
            continue
        p = z.copy()
        phat = zhat.copy()
        broke = False
        while it < maxit:
            q = op.apply(p)
            qhat = op.apply_transpose(phat)
            sigma = np.dot(phat, q)
            if abs(sigma) <= breakdown_tol * max(
                    np.linalg.norm(phat) * np.linalg.norm(q), 1e-300):
                broke = True
                break
            alpha = rho / sigma
            x = x + alpha * p
            xhat = xhat + alpha * phat
            r = r - alpha * q
            rhat = rhat - alpha * qhat
            it += 1
            res_p = float(np.linalg.norm(r) / nb)
            res_d = float(np.linalg.norm(rhat) / nc)
            hist_p.append(res_p)
            hist_d.append(res_d)
            if len(hist_p) > 51:
                prev = max(hist_p[-51], hist_d[-51])
                cur = max(res_p, res_d)
                stagnated = prev > 0 and (prev - cur) < 1e-3 * prev
            if res_p <= tol and res_d <= tol:
                return _finalize_pair(op, b, c, x, xhat, it, hist_p, hist_d,
                                      tol, "bicg",
                                      precond.describe() if precond else "none",
                                      True, True, stagnated, restarts)
            z = prec(r)
            zhat = prec_t(rhat)
            rho_new = np.dot(rhat, z)
            scale = np.linalg.norm(rhat) * np.linalg.norm(z)
            if abs(rho_new) <= breakdown_tol * max(scale, 1e-300):
                broke = True
                break
            beta = rho_new / rho
            rho = rho_new
            p = z + beta * p
            phat = zhat + beta * phat
        if broke:
            if restarts >= 3:
                raise ConvergenceError(
                    "BiCG bi-orthogonality breakdown persisted through 3 restarts")
            restarts += 1
            xhat = xhat + 1e-10 * max(np.linalg.norm(xhat), 1.0) * rng.standard_normal(xhat.shape)
            r = b - op.apply(x)
            rhat = c - op.apply_transpose(xhat)
            continue
    conv_p = hist_p[-1] <= tol
    conv_d = hist_d[-1] <= tol
    warnings.warn(f"BiCG hit maxit={maxit} with residuals "
                  f"{hist_p[-1]:.3e}/{hist_d[-1]:.3e} (tol {tol:g})",
                  RuntimeWarning, stacklevel=2)
    return _finalize_pair(op, b, c, x, xhat, it, hist_p, hist_d, tol, "bicg",
                          precond.describe() if precond else "none",
                          conv_p, conv_d, stagnated, restarts)
