"""Deterministic generators for the two benchmark bilinear systems.

``build_flow_model`` semi-discretizes the 1D viscous Burgers equation
with a Dirichlet input at the left boundary and lifts the resulting
quadratic ODE to a bilinear system on [w; w(x)w] via Carleman
bilinearization.  ``build_heat_model`` discretizes 2D heat transfer on
the unit square with boundary control entering bilinearly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .system import BilinearSystem


@dataclass
class FlowModelParams:
    """Burgers flow model: N interior grid points on (0, L) with viscosity nu."""

    N: int
    L: float = 1.0
    nu: float = 0.1
    h: float = field(init=False)

    def __post_init__(self):
        if self.N < 2 or self.L <= 0 or self.nu <= 0:
            raise ValueError("need N >= 2, L > 0, nu > 0")
        self.h = self.L / (self.N + 1)


@dataclass
class HeatModelParams:
    """Heat transfer model: K grid points per side of the unit square."""

    K: int
    h: float = field(init=False)

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("need K >= 2")
        self.h = 1.0 / (self.K + 1)


def flow_quadratic_tensor(params):
    """Second-derivative tensor A2 (N x N^2) of the convective term.

    Arranged so that ``f(w) = A1 w + 0.5 * A2 (w kron w)`` reproduces the
    semi-discretized right-hand side: row i carries -w_i(w_{i+1}-w_{i-1})/(2h)
    for interior rows and the one-sided products -w_1 w_2/(2h),
    -w_N w_{N-1}/(2h) in the first and last rows.
    """
    N, h = params.N, params.h
    c = 1.0 / (2.0 * h)
    rows, cols, vals = [], [], []

    def add(i, j, k, v):
        # symmetrized: 0.5 * A2 accumulates v * w_j * w_k into row i
        rows.extend([i, i])
        cols.extend([j * N + k, k * N + j])
        vals.extend([v, v])

    add(0, 0, 1, -c)                      # -w_1 w_2 / (2h)
    for i in range(1, N - 1):
        add(i, i, i + 1, -c)              # -w_i w_{i+1} / (2h)
        add(i, i, i - 1, c)               # +w_i w_{i-1} / (2h)
    add(N - 1, N - 1, N - 2, -c)          # -w_N w_{N-1} / (2h)
    return sps.csr_matrix((vals, (rows, cols)), shape=(N, N * N))


def build_flow_model(params):
    """Carleman-bilinearized Burgers system of order N + N^2 (SISO)."""
    N, h, nu = params.N, params.h, params.nu
    A1 = (nu / h ** 2) * sps.diags([1.0, -2.0, 1.0], [-1, 0, 1],
                                   shape=(N, N), format="csr")
    A2 = flow_quadratic_tensor(params)
    B0 = sps.csr_matrix(([nu / h ** 2], ([0], [0])), shape=(N, 1))
    B1 = sps.csr_matrix(([1.0 / (2.0 * h)], ([0], [0])), shape=(N, N))

    I = sps.identity(N, format="csr")
    A = sps.bmat([[A1, 0.5 * A2],
                  [None, sps.kron(A1, I) + sps.kron(I, A1)]], format="csr")
    N1 = sps.bmat([[B1, sps.csr_matrix((N, N * N))],
                   [sps.kron(B0, I) + sps.kron(I, B0), sps.csr_matrix((N * N, N * N))]],
                  format="csr")
    B = sps.vstack([B0, sps.csr_matrix((N * N, 1))], format="csr")
    C = sps.hstack([sps.csr_matrix(np.full((1, N), 1.0 / N)),
                    sps.csr_matrix((1, N * N))], format="csr")
    return BilinearSystem(A, [N1], B, C, label=f"flow(N={N},L={params.L},nu={nu})")


def flow_rhs(params, w, u=0.0):
    """Direct evaluation of the semi-discretized Burgers right-hand side.

    Independent of the Kronecker form; used to lock the structure of
    A1/A2/B0/B1 against the discretization itself.
    """
    N, h, nu = params.N, params.h, params.nu
    w = np.asarray(w, dtype=float)
    f = np.empty(N)
    f[0] = -w[0] * w[1] / (2 * h) + nu / h ** 2 * (w[1] - 2 * w[0])
    for i in range(1, N - 1):
        f[i] = (-w[i] * (w[i + 1] - w[i - 1]) / (2 * h)
                + nu / h ** 2 * (w[i + 1] - 2 * w[i] + w[i - 1]))
    f[N - 1] = -w[N - 1] * w[N - 2] / (2 * h) + nu / h ** 2 * (-2 * w[N - 1] + w[N - 2])
    g = np.zeros(N)
    g[0] = w[0] / (2 * h) + nu / h ** 2
    return f + g * u


def build_heat_model(params):
    """2D heat-transfer bilinear system of order K^2 with m = 2 inputs, p = 1."""
    K, h = params.K, params.h
    T = sps.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(K, K), format="csr")
    I = sps.identity(K, format="csr")
    e1 = np.zeros(K); e1[0] = 1.0
    eK = np.zeros(K); eK[-1] = 1.0
    e = np.ones(K)
    E1 = sps.csr_matrix(np.outer(e1, e1))
    EK = sps.csr_matrix(np.outer(eK, eK))

    A = (sps.kron(I, T) + sps.kron(T, I) + sps.kron(E1, I) + sps.kron(I, EK)) / h ** 2
    N1 = sps.kron(E1, I) / h
    N2 = sps.kron(I, EK) / h
    b1 = np.kron(e1, e) / h
    b2 = np.kron(e, eK) / h
    B = sps.csr_matrix(np.column_stack([b1, b2]))
    C = sps.csr_matrix(np.kron(e, e)[None, :] / K ** 2)
    return BilinearSystem(A.tocsr(), [N1.tocsr(), N2.tocsr()], B, C,
                          label=f"heat(K={K})")
