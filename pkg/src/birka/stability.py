"""Backward-stability diagnostics for inexact reduction runs.

Given the sieve-solve residuals R_B, R_C and trial bases V~, W~ of one
outer iteration, the inexact step is equivalent to an exact step on a
perturbed model whose drift matrix is A + F with

    F = R_B (W~^T V~)^{-1} W~^T + V~ (W~^T V~)^{-1} R_C^T,

a rank <= 2r matrix.  This module constructs F in factored form, bounds
its Frobenius norm, verifies the algebraic identities the equivalence
rests on (Petrov-Galerkin orthogonality of the residuals and the
projection identity for the perturbed model), evaluates the norm of the
lifted error-system perturbation, and computes the condition number of
the model with respect to the H2 norm of the full-vs-perturbed error
system.

Only the drift perturbation F is realized.  Analogous perturbations of
N_k, B, and C can be derived the same way but require the reduced-side
factors themselves to be invertible, which cannot be guaranteed; they
are therefore analyzed no further and not implemented.
"""

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .linalg import (SingularMatrixError, SparseLU, frobenius_norm, kron,
                     operator_two_norm, two_norm, unvec, vec)
from .system import gramian_operator, h2_norm_kron, qhat_diagnostics


class PerturbationF:
    """The backward drift perturbation, kept as low-rank factors.

    F = P1 Q1^T + P2 Q2^T with P1 = R_B, Q1 = W~ T^T, P2 = V~ T,
    Q2 = R_C, where T = (W~^T V~)^{-1}.  Norms are exact: dense when the
    state dimension is small enough to assemble, factored (power
    iteration / Gram traces) otherwise.
    """

    _ASSEMBLE_LIMIT = 2000

    def __init__(self, V_tilde, W_tilde, R_B, R_C):
        V_tilde = np.asarray(V_tilde)
        W_tilde = np.asarray(W_tilde)
        R_B = np.asarray(R_B)
        R_C = np.asarray(R_C)
        WtV = W_tilde.T @ V_tilde
        cond = np.linalg.cond(WtV)
        if not np.isfinite(cond) or cond > 1e14:
            raise SingularMatrixError(
                "W~^T V~ is numerically singular; the perturbation "
                "construction assumes it to be invertible")
        T = np.linalg.inv(WtV)
        self.n, self.r = V_tilde.shape
        self.V_tilde, self.W_tilde = V_tilde, W_tilde
        self.R_B, self.R_C = R_B, R_C
        self.T = T
        self._P1, self._Q1 = R_B, W_tilde @ T.T
        self._P2, self._Q2 = V_tilde @ T, R_C
        if self.n <= self._ASSEMBLE_LIMIT:
            F = self.assemble()
            self.norm_2 = float(np.linalg.norm(F, 2)) if F.size else 0.0
            self.norm_F = float(np.linalg.norm(F))
        else:
            self.norm_2 = self._factored_two_norm()
            self.norm_F = self._factored_frobenius()

    def apply_matrix(self, X):
        """F @ X through the factors."""
        X = np.asarray(X)
        return self._P1 @ (self._Q1.T @ X) + self._P2 @ (self._Q2.T @ X)

    def apply(self, x):
        return self.apply_matrix(np.asarray(x).reshape(-1, 1)).reshape(-1)

    def apply_conj_transpose(self, x):
        x = np.asarray(x).reshape(-1, 1)
        y = (self._Q1.conj() @ (self._P1.conj().T @ x)
             + self._Q2.conj() @ (self._P2.conj().T @ x))
        return y.reshape(-1)

    def assemble(self):
        """Dense F (real part; the imaginary residue of conjugate-paired
        complex bases is roundoff and is discarded)."""
        F = self._P1 @ self._Q1.T + self._P2 @ self._Q2.T
        return F.real if np.iscomplexobj(F) else F

    def _factored_two_norm(self):
        return operator_two_norm(self.apply, self.apply_conj_transpose,
                                 (self.n, self.n), rel_tol=1e-10, maxit=20000)

    def _factored_frobenius(self):
        total = 0.0 + 0j
        pairs = [(self._P1, self._Q1), (self._P2, self._Q2)]
        for Pi, Qi in pairs:
            for Pj, Qj in pairs:
                total += np.trace((Pi.conj().T @ Pj) @ (Qj.T @ Qi.conj()))
        return float(np.sqrt(max(total.real, 0.0)))


def construct_perturbation(V_tilde, W_tilde, R_B, R_C):
    """Backward drift perturbation realizing the inexact-equals-perturbed
    equivalence, in factored low-rank form."""
    return PerturbationF(V_tilde, W_tilde, R_B, R_C)


def perturbation_bound(R_B, R_C, V_tilde, W_tilde, r=None):
    """A-priori Frobenius bound on the constructed perturbation:

    sqrt(r) * ( max_i ||R_B e_i|| * ||(W~^T V~)^{-1} W~^T||_F
              + max_i ||R_C e_i|| * ||V~ (W~^T V~)^{-1}||_F ).
    """
    V_tilde = np.asarray(V_tilde)
    W_tilde = np.asarray(W_tilde)
    R_B = np.asarray(R_B)
    R_C = np.asarray(R_C)
    if r is None:
        r = V_tilde.shape[1]
    WtV = W_tilde.T @ V_tilde
    cond = np.linalg.cond(WtV)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError("W~^T V~ is numerically singular")
    T = np.linalg.inv(WtV)
    max_rb = float(np.max(np.linalg.norm(R_B, axis=0))) if R_B.size else 0.0
    max_rc = float(np.max(np.linalg.norm(R_C, axis=0))) if R_C.size else 0.0
    left = float(np.linalg.norm(T @ W_tilde.T))
    right = float(np.linalg.norm(V_tilde @ T))
    return float(np.sqrt(r) * (max_rb * left + max_rc * right))


def _rel_diff(X, Y):
    X, Y = np.asarray(X), np.asarray(Y)
    denom = max(np.linalg.norm(Y), 1e-300)
    return float(np.linalg.norm(X - Y) / denom)


def verify_backward_stability(sys, V_r, W_r, F, reduced=None):
    """Projection-identity defects of the backward equivalence.

    Projects the perturbed model (A + F, N_k, B, C) obliquely with
    (V_r, W_r) and compares against the inexact reduced matrices
    (recomputed from the unperturbed model with the same bases when
    ``reduced`` is not supplied).  Returns a dict with ``eq_defect``
    (= ||W_r^T F V_r||, the sole source of disagreement) and the
    entrywise relative differences per reduced matrix.
    """
    V_r, W_r = np.asarray(V_r), np.asarray(W_r)
    WtV = W_r.T @ V_r
    cond = np.linalg.cond(WtV)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError("W_r^T V_r is numerically singular")
    FV = F.apply_matrix(V_r) if isinstance(F, PerturbationF) else np.asarray(F) @ V_r
    mid = W_r.T @ FV
    defect = float(np.linalg.norm(mid, 2))

    A_pert = np.linalg.solve(WtV, W_r.T @ (sys.A @ V_r) + mid)
    N_pert = [np.linalg.solve(WtV, W_r.T @ (Nk @ V_r)) for Nk in sys.N]
    B_pert = np.linalg.solve(WtV, W_r.T @ sys.B.toarray())
    C_pert = np.asarray(sys.C @ V_r)

    if reduced is None:
        A_red = np.linalg.solve(WtV, W_r.T @ (sys.A @ V_r))
        N_red = [np.linalg.solve(WtV, W_r.T @ (Nk @ V_r)) for Nk in sys.N]
        B_red = np.linalg.solve(WtV, W_r.T @ sys.B.toarray())
        C_red = np.asarray(sys.C @ V_r)
    else:
        A_red, N_red, B_red, C_red = reduced.dense()

    diffs = {
        "A": _rel_diff(A_pert.real, A_red),
        "B": _rel_diff(B_pert.real, B_red),
        "C": _rel_diff(C_pert.real, C_red),
    }
    for k, (Np, Nr) in enumerate(zip(N_pert, N_red), start=1):
        diffs[f"N{k}"] = _rel_diff(Np.real, Nr)
    return {"eq_defect": defect, "matrix_rel_diffs": diffs}


def fhh_norm(F, n=None, rel_tol=1e-12, maxit=20000):
    """2-norm of the lifted error-system perturbation.

    The error system of the model vs its drift-perturbed copy has, in
    Kronecker form, the perturbation
    FHH = I_{2n} (x) FH + FH (x) I_{2n} with FH = diag(0, F).  The norm
    is evaluated by power iteration on the matrix-free apply
    x -> vec(FH X + X FH^T); it always satisfies ||FHH|| <= 2 ||F||_2.
    """
    if isinstance(F, PerturbationF):
        Fd = F.assemble() if F.n <= PerturbationF._ASSEMBLE_LIMIT else None
        n = F.n
        apply_F = F.apply_matrix if Fd is None else (lambda X: Fd @ X)
        apply_Ft = ((lambda X: Fd.T @ X) if Fd is not None else
                    (lambda X: np.column_stack([
                        F.apply_conj_transpose(X[:, j].conj()).conj()
                        for j in range(X.shape[1])])))
    else:
        Fd = np.asarray(F, dtype=float)
        if n is None:
            n = Fd.shape[0]
        apply_F = lambda X: Fd @ X
        apply_Ft = lambda X: Fd.T @ X
    d = 2 * n

    def lift(X):
        # FH X: rows [0:n] stay zero, rows [n:2n] get F @ X
        out = np.zeros((d, X.shape[1]), dtype=np.result_type(X.dtype, float))
        out[n:, :] = apply_F(X[n:, :])
        return out

    def lift_t(X):
        out = np.zeros((d, X.shape[1]), dtype=np.result_type(X.dtype, float))
        out[n:, :] = apply_Ft(X[n:, :])
        return out

    def apply(x):
        X = unvec(np.asarray(x), d, d)
        return vec(lift(X) + lift(X.T).T)

    def apply_ct(x):
        X = unvec(np.asarray(x), d, d)
        return vec(lift_t(X) + lift_t(X.T).T)

    return operator_two_norm(apply, apply_ct, (d * d, d * d),
                             rel_tol=rel_tol, maxit=maxit)


def condition_number(sys, diagnostics=None, h2=None, return_factors=False):
    """Condition number of the model w.r.t. the H2 norm of the
    full-vs-perturbed error system:

        k = ||vec(I_2p)|| * ||CH QH^{-1}|| * ||QH^{-1}|| * ||BH||
            * ||vec(I_2m)|| * ||A||_2 / ( ||sys||_H2 * (1 - ||QH^{-1}||) )

    with CH = [C, -C] (x) [C, -C], BH = [B; B] (x) [B; B], and QH the
    error-system block operator.  ||CH QH^{-1}|| is exact: its p^2 rows
    are assembled sector-by-sector through adjoint solves against the
    decoupled base operator, followed by the norm of the small Gram
    matrix.  Requires ||QH^{-1}|| < 1.
    """
    if diagnostics is None:
        diagnostics = qhat_diagnostics(sys)
    qinv = diagnostics.qinv_norm
    if qinv >= 1.0:
        raise ValueError(
            f"||QH^-1|| = {qinv:.3e} >= 1: the accuracy bound's hypothesis "
            "fails and the condition number is undefined")
    n, m, p = sys.n, sys.m, sys.p
    G = gramian_operator(sys)
    lu = SparseLU(G)
    CC = kron(sys.C, sys.C)
    CC = CC.toarray() if sps.issparse(CC) else CC
    # base adjoint solves: K0[i] = row i of (C (x) C) G^{-1}
    K0 = np.vstack([lu.solve_transpose(CC[i]) for i in range(p * p)])
    # sector signs of [C,-C] (x) [C,-C] under the 4-fold decoupling
    signs = [1.0, -1.0, -1.0, 1.0]
    CQ = np.hstack([s * K0 for s in signs])
    gram = CQ @ CQ.T
    cq_norm = float(np.sqrt(max(np.linalg.eigvalsh(gram)[-1], 0.0)))
    b_stack = sps.vstack([sys.B, sys.B], format="csr")
    bhat_norm = float(two_norm(b_stack.toarray())) ** 2
    a_norm = two_norm(sys.A)
    if h2 is None:
        h2 = h2_norm_kron(sys, lu=lu)
    k = (np.sqrt(2 * p) * cq_norm * qinv * bhat_norm * np.sqrt(2 * m)
         * a_norm / (h2 * (1.0 - qinv)))
    if return_factors:
        return float(k), {
            "vec_norm_p": float(np.sqrt(2 * p)),
            "vec_norm_m": float(np.sqrt(2 * m)),
            "chat_qinv_norm": cq_norm,
            "qinv_norm": qinv,
            "bhat_norm": bhat_norm,
            "a_norm": float(a_norm),
            "h2_norm": float(h2),
        }
    return float(k)


@dataclass
class StabilityReport:
    """All stability quantities of one outer iteration."""

    iteration: int
    rb_norm: float
    rc_norm: float
    wtv_inv_wt_frob: float
    f_norm2: float
    f_normF: float
    thm_bound: float
    pg_defect_B: float
    pg_defect_C: float
    eq_defect_B: float
    eq_defect_C: float
    projection_defect: float
    matrix_rel_diffs: dict
    fhh_norm: float


def analyze_iteration(sys, record, compute_fhh=True):
    """Full stability report from one reduction iteration record.

    The record must carry the captured oblique bases (run with
    ``capture_bases=True``).  All basis-dependent quantities are
    reported in the orthonormal-basis convention: the constructed F is
    invariant under the change of basis, but residual norms, the
    oblique-factor norm, and the a-priori bound are not, and the
    orthonormal convention is the one in which the solution bases
    actually enter the projection.
    """
    if record.V_r is None or record.W_r is None:
        raise ValueError("iteration record has no captured bases; rerun "
                         "with capture_bases=True")
    V_tilde = record.V_r
    W_tilde = record.W_r
    R_B = record.R_B_orth
    R_C = record.R_C_orth
    F = construct_perturbation(V_tilde, W_tilde, R_B, R_C)
    bound = perturbation_bound(R_B, R_C, V_tilde, W_tilde)
    T = F.T
    frag = verify_backward_stability(sys, record.V_r, record.W_r, F)
    eq_B = float(np.linalg.norm(F.apply_matrix(V_tilde) - R_B, 2))
    eq_C = float(np.linalg.norm(W_tilde.T @ (F.apply_matrix(np.eye(F.n))) - R_C.T, 2)) \
        if F.n <= 2000 else float("nan")
    return StabilityReport(
        iteration=record.iteration,
        rb_norm=float(np.linalg.norm(R_B, 2)),
        rc_norm=float(np.linalg.norm(R_C, 2)),
        wtv_inv_wt_frob=float(np.linalg.norm(T @ W_tilde.T)),
        f_norm2=F.norm_2,
        f_normF=F.norm_F,
        thm_bound=bound,
        pg_defect_B=float(np.linalg.norm(W_tilde.T @ R_B, 2)),
        pg_defect_C=float(np.linalg.norm(R_C.T @ V_tilde, 2)),
        eq_defect_B=eq_B,
        eq_defect_C=eq_C,
        projection_defect=frag["eq_defect"],
        matrix_rel_diffs=frag["matrix_rel_diffs"],
        fhh_norm=fhh_norm(F) if compute_fhh else float("nan"),
    )


def stability_csv(reports, path):
    """Write per-iteration stability rows (residual norms, oblique-factor
    norm, perturbation norms, bound) as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "rb_norm", "rc_norm",
                         "wtv_inv_wt_frob", "f_norm2", "f_normF",
                         "thm_bound", "fhh_norm"])
        for rep in reports:
            writer.writerow([rep.iteration] + [
                f"{v:.17g}" for v in (rep.rb_norm, rep.rc_norm,
                                      rep.wtv_inv_wt_frob, rep.f_norm2,
                                      rep.f_normF, rep.thm_bound,
                                      rep.fhh_norm)])
