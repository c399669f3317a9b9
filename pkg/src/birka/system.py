"""Bilinear state-space systems and their H2-norm machinery.

A bilinear system is the quadruple (A, {N_k}, B, C) of
``x' = A x + sum_k N_k x u_k + B u``, ``y = C x``.  This module provides
two independent H2-norm routes (the Kronecker quadratic form and the
Gramian trace formula), error-system assembly, generalized Lyapunov
solves, and the invertibility/conditioning diagnostics on the
block-Kronecker operator of the error system.
"""

import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg as spla
import scipy.sparse as sps

from . import linalg
from .linalg import SingularMatrixError, SparseLU, kron, unvec, vec


class BilinearSystem:
    """Immutable bilinear system (A, {N_k}, B, C) of order n with m inputs, p outputs."""

    def __init__(self, A, N, B, C, label=""):
        A = sps.csr_matrix(A)
        N = [sps.csr_matrix(Nk) for Nk in N]
        B = sps.csr_matrix(B)
        C = sps.csr_matrix(C)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        m = B.shape[1]
        p = C.shape[0]
        if len(N) != m:
            raise ValueError(f"need one N_k per input channel: got {len(N)}, m={m}")
        for Nk in N:
            if Nk.shape != (n, n):
                raise ValueError("each N_k must be n-by-n")
        if B.shape[0] != n or C.shape[1] != n:
            raise ValueError("B / C dimensions inconsistent with A")
        self.A, self.N, self.B, self.C = A, N, B, C
        self.n, self.m, self.p = n, m, p
        self.label = label

    def is_stable(self):
        """True iff every eigenvalue of A has negative real part."""
        w = np.linalg.eigvals(self.A.toarray())
        return bool(np.all(w.real < 0))

    def dense(self):
        """The four matrices as dense arrays (A, [N_k], B, C)."""
        return (self.A.toarray(), [Nk.toarray() for Nk in self.N],
                self.B.toarray(), self.C.toarray())

    def save(self, directory):
        """Write the system as Matrix Market files plus a metadata text file."""
        os.makedirs(directory, exist_ok=True)
        scipy.io.mmwrite(os.path.join(directory, "A.mtx"), self.A)
        for k, Nk in enumerate(self.N, start=1):
            scipy.io.mmwrite(os.path.join(directory, f"N{k}.mtx"), Nk)
        scipy.io.mmwrite(os.path.join(directory, "B.mtx"), self.B)
        scipy.io.mmwrite(os.path.join(directory, "C.mtx"), self.C)
        with open(os.path.join(directory, "metadata.txt"), "w") as fh:
            fh.write(f"n {self.n}\nm {self.m}\np {self.p}\nlabel {self.label}\n")

    @classmethod
    def load(cls, directory):
        meta = {}
        with open(os.path.join(directory, "metadata.txt")) as fh:
            for line in fh:
                key, _, value = line.strip().partition(" ")
                meta[key] = value
        m = int(meta["m"])
        A = scipy.io.mmread(os.path.join(directory, "A.mtx"))
        N = [scipy.io.mmread(os.path.join(directory, f"N{k}.mtx")) for k in range(1, m + 1)]
        B = scipy.io.mmread(os.path.join(directory, "B.mtx"))
        C = scipy.io.mmread(os.path.join(directory, "C.mtx"))
        B = sps.csr_matrix(B)
        if B.shape[1] != m:
            raise ValueError("metadata m inconsistent with B")
        return cls(A, N, B, C, label=meta.get("label", ""))


def gramian_operator(sys):
    """Assembled n^2-by-n^2 operator -A(x)I - I(x)A - sum_k N_k(x)N_k (sparse)."""
    I = sps.identity(sys.n, format="csr")
    G = -kron(sys.A, I) - kron(I, sys.A)
    for Nk in sys.N:
        G = G - kron(Nk, Nk)
    return G.tocsr()


@dataclass
class QHatDiagnostics:
    """Norm diagnostics of the error-system block operator Q.

    All quantities come from the exact 4-fold decoupling of Q into
    copies of the n^2-by-n^2 base Gramian operator, so Q and the base
    operator share their singular-value multiset.  ``qinv_norm`` is the
    reciprocal of the largest singular value of the base operator (the
    inverse-norm gauge used by the accuracy analysis and by the
    condition-number hypothesis check); ``base_sigma_min`` is the
    smallest singular value, whose positivity certifies invertibility;
    ``lyapunov_symbol_sigma_min`` is the smallest singular value of the
    n-by-n symbol -A^T - A - sum_k N_k N_k^T, a cheap sufficient
    invertibility check.
    """

    qinv_norm: float
    base_sigma_min: float
    base_sigma_max: float
    lyapunov_symbol_sigma_min: float


def qhat_diagnostics(sys):
    """Invertibility/conditioning diagnostics for the error-system operator."""
    G = gramian_operator(sys)
    base_sigma_min = linalg.smallest_singular_value_sparse(G)
    base_sigma_max = linalg.two_norm(G)
    symbol = (-sys.A.T - sys.A - sum(Nk @ Nk.T for Nk in sys.N)).toarray()
    sym_sigma_min = float(spla.svdvals(symbol)[-1])
    return QHatDiagnostics(
        qinv_norm=1.0 / base_sigma_max,
        base_sigma_min=base_sigma_min,
        base_sigma_max=base_sigma_max,
        lyapunov_symbol_sigma_min=sym_sigma_min,
    )


def assemble_qhat(sys):
    """Dense 4n^2-by-4n^2 error-system operator (desk scale, for verification)."""
    A, N, _, _ = sys.dense()
    n = sys.n
    A2 = spla.block_diag(A, A)
    I2n = np.eye(2 * n)
    Q = -np.kron(A2, I2n) - np.kron(I2n, A2)
    for Nk in N:
        N2 = spla.block_diag(Nk, Nk)
        Q -= np.kron(N2, N2)
    return Q


def h2_norm_kron(sys, lu=None):
    """H2 norm via the Kronecker quadratic form on the Gramian operator.

    Raises :class:`SingularMatrixError` on a singular operator and
    ``ValueError`` if the norm-square comes out negative beyond roundoff.
    """
    if sys.C.nnz == 0 or sys.B.nnz == 0:
        return 0.0
    if lu is None:
        lu = SparseLU(gramian_operator(sys))
    rhs = kron(sys.B, sys.B) @ vec(np.eye(sys.m))
    x = lu.solve(rhs)
    val = float(vec(np.eye(sys.p)) @ (kron(sys.C, sys.C) @ x))
    if val < -1e-12 * max(1.0, abs(val)):
        raise ValueError(f"negative H2 norm-square {val:.3e}: system unstable "
                         "or Gramian assumption violated")
    return float(np.sqrt(max(val, 0.0)))


def solve_generalized_lyapunov(sys, tol=1e-12, maxit=500):
    """Reachability Gramian P of A P + P A^T + sum_k N_k P N_k^T = -B B^T.

    Runs the stationary iteration with standard-Lyapunov inner solves;
    on divergence falls back to the assembled Kronecker direct solve
    (desk scale).  Returns ``(P, method)`` with method in
    {"stationary", "kronecker"}.
    """
    A, N, B, _ = sys.dense()
    BBt = B @ B.T
    rhs_norm = max(np.linalg.norm(BBt), 1.0)
    P = np.zeros_like(A)
    prev_res = np.inf
    for _ in range(maxit):
        Q = BBt + sum(Nk @ P @ Nk.T for Nk in N)
        P_new = spla.solve_continuous_lyapunov(A, -Q)
        P_new = 0.5 * (P_new + P_new.T)
        res = np.linalg.norm(A @ P_new + P_new @ A.T
                             + sum(Nk @ P_new @ Nk.T for Nk in N) + BBt)
        if res <= tol * rhs_norm:
            return P_new, "stationary"
        if not np.isfinite(res) or res > 10 * max(prev_res, rhs_norm):
            break
        prev_res = res
        P = P_new
    # divergent (spectral radius >= 1) or stagnating: assembled fallback
    if sys.n ** 2 > 40_000:
        raise linalg.ConvergenceError(
            "generalized Lyapunov stationary iteration diverged and the "
            f"assembled fallback is too large (n^2 = {sys.n ** 2})")
    lu = SparseLU(gramian_operator(sys))
    x = lu.solve(kron(sys.B, sys.B) @ vec(np.eye(sys.m)))
    P = unvec(x, sys.n, sys.n)
    return 0.5 * (P + P.T), "kronecker"


def h2_norm_lyap(sys):
    """H2 norm via the Gramian trace formula trace(C P C^T)."""
    if sys.C.nnz == 0 or sys.B.nnz == 0:
        return 0.0
    P, _ = solve_generalized_lyapunov(sys)
    C = sys.C.toarray()
    val = float(np.trace(C @ P @ C.T))
    if val < -1e-12 * max(1.0, abs(val)):
        raise ValueError(f"negative H2 norm-square {val:.3e}")
    return float(np.sqrt(max(val, 0.0)))


def error_system(sys1, sys2):
    """Block-diagonal error system whose output is y_1 - y_2.

    Works for full-vs-full and full-vs-reduced pairings; the input and
    output channel counts must match.
    """
    if sys1.m != sys2.m or sys1.p != sys2.p:
        raise ValueError("channel counts (m, p) must match across the two systems")
    A = sps.block_diag([sys1.A, sys2.A], format="csr")
    N = [sps.block_diag([N1, N2], format="csr") for N1, N2 in zip(sys1.N, sys2.N)]
    B = sps.vstack([sys1.B, sys2.B], format="csr")
    C = sps.hstack([sys1.C, -sys2.C], format="csr")
    return BilinearSystem(A, N, B, C, label=f"err({sys1.label},{sys2.label})")


def h2_error(sys1, sys2):
    """H2 norm of the error system between two bilinear systems."""
    return h2_norm_kron(error_system(sys1, sys2))
