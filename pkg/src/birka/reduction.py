"""H2-optimal reduction of bilinear systems by fixed-point iteration.

Each sweep eigendecomposes the current reduced drift matrix, solves a
primal/dual pair of Kronecker-structured sieve systems for the trial
bases, realifies and orthonormalizes them, and obliquely projects the
full model.  At the fixed point the reduced model satisfies the
interpolation-based first-order H2 optimality conditions.
"""

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .linalg import SingularMatrixError, eig_dense, orth, unvec, vec
from .solvers import KroneckerOperator, bicg_dual_solve, build_ilut, direct_solve
from .system import BilinearSystem, h2_error


@dataclass
class BirkaConfig:
    """Knobs for one reduction run.

    ``solver_mode`` selects exact sparse-LU sieve solves ("direct") or
    the coupled two-sided BiCG ("bicg") at relative tolerance
    ``bicg_tol``; ``precond_drop_tol`` (if set) turns on threshold-ILU
    preconditioning of the BiCG runs.  ``capture_bases`` retains the
    oblique projection bases of every iteration for post-hoc stability
    analysis, and ``reference_error`` additionally computes, per
    iteration, the H2 distance between the inexact reduced model and
    the one an exact solve would have produced from the same incoming
    guess.
    """

    r: int
    btol: float = 1e-6
    max_outer: int = 100
    solver_mode: str = "direct"
    bicg_tol: float = 1e-8
    bicg_maxit: int = None
    precond_drop_tol: float = None
    seed: int = 0
    capture_bases: bool = False
    reference_error: bool = False

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("reduced order r must be >= 1")
        if self.btol <= 0:
            raise ValueError("btol must be positive")
        if self.solver_mode not in ("direct", "bicg"):
            raise ValueError("solver_mode must be 'direct' or 'bicg'")


@dataclass
class IterationRecord:
    """Diagnostics of one outer iteration."""

    iteration: int
    eigenvalues: np.ndarray
    relative_change: float
    report_primal: object
    report_dual: object
    V_r: np.ndarray = None
    W_r: np.ndarray = None
    R_B_orth: np.ndarray = None
    R_C_orth: np.ndarray = None
    reference_error: float = None
    unstable_intermediate: bool = False


@dataclass
class BirkaResult:
    """Converged (or best-effort) reduced system plus full iteration history."""

    reduced: BilinearSystem
    converged: bool
    iterations: int
    history: list = field(default_factory=list)

    def save(self, directory):
        """Reduced system + history.csv + eigenvalues.csv under ``directory``."""
        os.makedirs(directory, exist_ok=True)
        self.reduced.save(os.path.join(directory, "reduced"))
        with open(os.path.join(directory, "history.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "eigenvalue_change", "solver_iterations",
                             "residual_primal", "residual_dual", "h2_error"])
            for rec in self.history:
                writer.writerow([
                    rec.iteration, f"{rec.relative_change:.17g}",
                    rec.report_primal.iterations,
                    f"{rec.report_primal.relative_residual:.17g}",
                    f"{rec.report_dual.relative_residual:.17g}",
                    "" if rec.reference_error is None else f"{rec.reference_error:.17g}",
                ])
        with open(os.path.join(directory, "eigenvalues.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "index", "real", "imag"])
            for rec in self.history:
                for idx, lam in enumerate(rec.eigenvalues):
                    writer.writerow([rec.iteration, idx,
                                     f"{lam.real:.17g}", f"{lam.imag:.17g}"])


def initialize_guess(seed, r, m, p):
    """Random reduced-order starting system with a Hurwitz, diagonalizable drift."""
    rng = np.random.default_rng(seed)
    for attempt in range(5):
        A = rng.standard_normal((r, r))
        shift = np.max(np.linalg.eigvals(A).real) + 1.0
        A = A - shift * np.eye(r)
        if not eig_dense(A).ill_conditioned:
            break
    else:
        raise SingularMatrixError(
            f"could not draw a diagonalizable drift matrix from seed {seed} "
            "after 5 attempts")
    N = [rng.standard_normal((r, r)) for _ in range(m)]
    B = rng.standard_normal((r, m))
    C = rng.standard_normal((p, r))
    return BilinearSystem(A, N, B, C, label=f"guess(seed={seed},r={r})")


def realify(M, eigenvalues=None, tol=1e-8):
    """Real basis with the same span as [M, conj(M)], column count preserved.

    Columns must correspond to a conjugation-closed set: a real column
    passes through as its real part; each conjugate pair (v, vbar)
    becomes the pair (Re v, Im v).  Pairing uses ``eigenvalues`` when
    supplied (exact conjugate matching) and column conjugacy otherwise.
    A rank drop of the realified basis is flagged with a warning.
    """
    M = np.asarray(M)
    if not np.iscomplexobj(M):
        return M.copy()
    n, q = M.shape
    out = np.empty((n, q))
    used = np.zeros(q, dtype=bool)
    col = 0
    for i in range(q):
        if used[i]:
            continue
        used[i] = True
        vi = M[:, i]
        is_real = (abs(eigenvalues[i].imag) <= tol * max(abs(eigenvalues[i]), 1.0)
                   if eigenvalues is not None
                   else np.linalg.norm(vi.imag) <= tol * max(np.linalg.norm(vi), 1.0))
        if is_real:
            out[:, col] = vi.real
            col += 1
            continue
        # locate the conjugate partner among the remaining columns
        candidates = [j for j in range(i + 1, q) if not used[j]]
        if not candidates:
            warnings.warn("unpaired complex column during realification",
                          RuntimeWarning, stacklevel=2)
            out[:, col] = vi.real
            col += 1
            continue
        if eigenvalues is not None:
            dists = [abs(eigenvalues[j] - np.conj(eigenvalues[i])) for j in candidates]
        else:
            dists = [np.linalg.norm(M[:, j] - np.conj(vi)) for j in candidates]
        j = candidates[int(np.argmin(dists))]
        used[j] = True
        out[:, col] = vi.real
        out[:, col + 1] = vi.imag
        col += 2
    out = out[:, :col]
    if col > 0:
        sv = np.linalg.svd(out, compute_uv=False)
        if sv[0] > 0 and np.sum(sv > max(n, col) * np.finfo(float).eps * sv[0] * 1e3) < col:
            warnings.warn("realified basis lost rank", RuntimeWarning, stacklevel=2)
    return out


def _orth_with_residual(solution, residual, eigenvalues):
    """Realify and orthonormalize a trial basis, co-transforming its residual.

    The raw solution X (with residual R = rhs - M vec(X)) is first
    realified and then QR-factored, X_real = Q Z.  The same column
    transformation applied to the residual, R_orth = R_real Z^{-1},
    makes (Q, R_orth) a consistent solution/residual pair for the
    re-based systems, so that all basis-dependent stability quantities
    can be reported in the orthonormal-basis convention.  Falls back to
    a plain SVD basis with an untransformed residual when the basis is
    rank-deficient.
    """
    X_real = realify(solution, eigenvalues)
    R_real = realify(residual, eigenvalues)
    q = X_real.shape[1]
    sv = np.linalg.svd(X_real, compute_uv=False) if q else np.array([])
    full_rank = q > 0 and sv[-1] > max(X_real.shape) * np.finfo(float).eps * sv[0]
    if not full_rank:
        warnings.warn("rank-deficient trial basis; residual left in the "
                      "raw-basis convention", RuntimeWarning, stacklevel=2)
        return orth(X_real), R_real
    Q, Z = np.linalg.qr(X_real)
    return Q, np.linalg.solve(Z.T, R_real.T).T


def _project(sys, V_r, W_r):
    """Oblique Petrov-Galerkin projection of the full model onto (V_r, W_r)."""
    WtV = W_r.T @ V_r
    cond = np.linalg.cond(WtV)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError(
            "W_r^T V_r is numerically singular; the projection assumes it "
            "to be invertible")
    A_r = np.linalg.solve(WtV, W_r.T @ (sys.A @ V_r))
    N_r = [np.linalg.solve(WtV, W_r.T @ (Nk @ V_r)) for Nk in sys.N]
    B_r = np.linalg.solve(WtV, W_r.T @ sys.B.toarray())
    C_r = sys.C @ V_r
    return BilinearSystem(A_r, N_r, B_r, np.asarray(C_r), label=sys.label + ":reduced")


def birka_step(sys, guess, config):
    """One sweep: eigendecompose, solve the sieve pair, project.

    Returns ``(new_guess, record)`` where record is an
    :class:`IterationRecord` with its convergence fields left unset.
    """
    A_c, N_c, B_c, C_c = guess.dense()
    ed = eig_dense(A_c)
    if ed.ill_conditioned:
        warnings.warn("reduced drift matrix is nearly defective",
                      RuntimeWarning, stacklevel=2)
    unstable = bool(np.any(ed.eigenvalues.real >= 0))
    if unstable:
        warnings.warn("reduced drift matrix has unstable eigenvalues; "
                      "continuing", RuntimeWarning, stacklevel=2)
    R = ed.right_vectors
    BCheck = np.linalg.solve(R, B_c).T                       # B^T R^{-T}, m x r
    CCheck = C_c @ R                                         # C R, p x r
    NCheck = [np.linalg.solve(R, Nk @ R).T for Nk in N_c]    # R^T N_k^T R^{-T}

    op = KroneckerOperator(ed.eigenvalues, NCheck, sys)
    rhs_primal = vec(sys.B @ BCheck)
    rhs_dual = vec(sys.C.T @ CCheck)

    if config.solver_mode == "direct":
        rep_p, rep_d = direct_solve(op, rhs_primal, rhs_dual)
    else:
        precond = (build_ilut(op, config.precond_drop_tol)
                   if config.precond_drop_tol is not None else None)
        rep_p, rep_d = bicg_dual_solve(op, rhs_primal, rhs_dual,
                                       config.bicg_tol, config.bicg_maxit,
                                       precond)

    V_r, RB_orth = _orth_with_residual(rep_p.solution, rep_p.residual,
                                       ed.eigenvalues)
    W_r, RC_orth = _orth_with_residual(rep_d.solution, rep_d.residual,
                                       ed.eigenvalues)
    new_guess = _project(sys, V_r, W_r)
    record = IterationRecord(
        iteration=0, eigenvalues=ed.eigenvalues, relative_change=np.nan,
        report_primal=rep_p, report_dual=rep_d,
        V_r=V_r if config.capture_bases else None,
        W_r=W_r if config.capture_bases else None,
        R_B_orth=RB_orth if config.capture_bases else None,
        R_C_orth=RC_orth if config.capture_bases else None,
        unstable_intermediate=unstable,
    )
    return new_guess, record


def _sorted_eigs(A):
    w = np.linalg.eigvals(np.asarray(A))
    order = np.lexsort((w.imag, w.real))
    return w[order]


def run_birka(sys, config, guess=None):
    """Iterate :func:`birka_step` until the reduced spectrum settles.

    Convergence is declared when the relative 2-norm change of the
    lexicographically sorted reduced eigenvalues drops below
    ``config.btol``.  Non-convergence is reported through the
    ``converged`` flag with the full history retained, not raised.
    """
    if config.r >= sys.n:
        raise ValueError(f"reduced order r={config.r} must be < n={sys.n}")
    if not sys.is_stable():
        warnings.warn("full model is not stable; H2 quantities may be "
                      "meaningless", RuntimeWarning, stacklevel=2)
    if guess is None:
        guess = initialize_guess(config.seed, config.r, sys.m, sys.p)
    lam_old = _sorted_eigs(guess.A.toarray())
    history = []
    converged = False
    for it in range(1, config.max_outer + 1):
        new_guess, record = birka_step(sys, guess, config)
        if config.reference_error and config.solver_mode != "direct":
            ref_cfg = BirkaConfig(r=config.r, btol=config.btol,
                                  solver_mode="direct")
            try:
                ref_guess, _ = birka_step(sys, guess, ref_cfg)
                record.reference_error = h2_error(ref_guess, new_guess)
            except (ValueError, np.linalg.LinAlgError) as exc:
                # an unstable intermediate reduced model has no H2 error;
                # the diagnostic is skipped, not fatal
                warnings.warn(f"reference error undefined at iteration {it}: "
                              f"{exc}", RuntimeWarning, stacklevel=2)
                record.reference_error = float("nan")
        lam_new = _sorted_eigs(new_guess.A.toarray())
        denom = np.linalg.norm(lam_old)
        rel_change = float(np.linalg.norm(lam_new - lam_old) / denom) if denom > 0 else np.inf
        record.iteration = it
        record.relative_change = rel_change
        history.append(record)
        guess = new_guess
        lam_old = lam_new
        if rel_change < config.btol:
            converged = True
            break
    return BirkaResult(reduced=guess, converged=converged,
                       iterations=len(history), history=history)
