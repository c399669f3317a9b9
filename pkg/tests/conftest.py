import numpy as np
import pytest

from birka.linalg import SparseLU, kron, vec
from birka.system import BilinearSystem, gramian_operator


def random_stable_system(rng, n, m=1, p=1, coupling=0.25, max_tries=20):
    """Random stable bilinear system with a positive H2 quadratic form.

    The drift is shifted to be Hurwitz and the bilinear couplings are
    scaled down until the Kronecker quadratic form is positive, so both
    H2-norm routes are well defined.
    """
    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + 1.0) * np.eye(n)
        scale = coupling / np.sqrt(n)
        N = [scale * rng.standard_normal((n, n)) for _ in range(m)]
        B = rng.standard_normal((n, m))
        C = rng.standard_normal((p, n))
        sys = BilinearSystem(A, N, B, C)
        G = gramian_operator(sys)
        try:
            lu = SparseLU(G)
        except Exception:
            continue
        x = lu.solve(kron(sys.B, sys.B) @ vec(np.eye(m)))
        val = float(vec(np.eye(p)) @ (kron(sys.C, sys.C) @ x))
        if val > 1e-10:
            return sys
        coupling *= 0.5
    raise RuntimeError("could not draw a valid random system")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# one PASS/FAIL line per acceptance criterion, echoed after the test
# summary so they survive output capture
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
