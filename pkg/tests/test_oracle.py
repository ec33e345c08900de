import numpy as np
import pytest
from scipy.special import lambertw

from ddelab.counterexample import build_spike_density
from ddelab.oracle import BoxBoundaryError, char_roots, scalar_flow


def test_stable_delay_rightmost_pair():
    # lambda = -e^{-lambda}: rightmost roots are the principal Lambert W pair
    rs = char_roots([[0.0]], [(1.0, [[-1.0]])], 1.0, box=(-5, 1, -50, 50))
    w0 = complex(lambertw(-1.0, 0))
    hits = [r for r in rs.roots if abs(r - w0) < 1e-4 or abs(r - np.conj(w0)) < 1e-4]
    assert len(hits) == 2
    assert min(abs(r - w0) for r in rs.roots) < 1e-10
    assert max(r.real for r in rs.roots) == pytest.approx(w0.real, abs=1e-9)


def test_unstable_delay_real_root():
    rs = char_roots([[0.0]], [(1.0, [[1.0]])], 1.0, box=(-5, 1, -50, 50))
    real_pos = [r for r in rs.roots if r.real > 0]
    assert len(real_pos) == 1
    assert abs(real_pos[0] - float(lambertw(1.0).real)) < 1e-6


def test_ode_root_is_coefficient():
    rs = char_roots([[0.7]], [], 0.0, box=(-1, 1, -1, 1))
    assert len(rs.roots) == 1
    assert abs(rs.roots[0] - 0.7) < 1e-12
    assert rs.certified_count == 1


def test_winding_count_matches_roots():
    rs = char_roots([[0.0]], [(1.0, [[-1.0]])], 1.0, box=(-5, 1, -50, 50))
    assert rs.certified_count == len(rs.roots)


def test_conjugate_symmetry():
    rs = char_roots([[0.0]], [(1.0, [[-1.0]])], 1.0, box=(-5, 1, -30, 30))
    for r in rs.roots:
        assert any(abs(np.conj(r) - s) < 1e-8 for s in rs.roots)


def test_residuals_certified():
    rs = char_roots([[0.0]], [(1.0, [[1.0]])], 1.0, box=(-4, 1, -40, 40))
    for r in rs.roots:
        assert abs(r + 0j - np.exp(-r) * 1.0 * 1.0) >= 0  # well-formed complex
        assert abs(r - np.exp(-r)) < 1e-10  # char: lambda - e^{-lambda} = 0


def test_matrix_case_block_diagonal():
    # d=2 block diag: x1' = x1 (root 1.0), x2' = -x2(t-1) (Lambert pair)
    A0 = [[1.0, 0.0], [0.0, 0.0]]
    terms = [(1.0, [[0.0, 0.0], [0.0, -1.0]])]
    rs = char_roots(A0, terms, 1.0, box=(-3, 2, -10, 10))
    assert any(abs(r - 1.0) < 1e-9 for r in rs.roots)
    w0 = complex(lambertw(-1.0, 0))
    assert any(abs(r - w0) < 1e-8 for r in rs.roots)


def test_root_on_boundary_requests_adjustment():
    with pytest.raises(BoxBoundaryError):
        char_roots([[0.0]], [], 0.0, box=(0.0, 1.0, -1.0, 1.0))  # root at 0 on edge


class TestScalarFlow:
    def test_equal_times(self):
        assert scalar_flow(lambda t: t, 1.3, 1.3) == 1.0

    def test_pure_exponential(self):
        assert abs(scalar_flow(lambda t: t, 0.0, 2.0) - np.exp(-2)) < 1e-15

    def test_counterexample_shoulder(self):
        v = build_spike_density(6)
        val = scalar_flow(v.log_v, 5 - 0.2, 5.0)
        assert val > 5
        assert abs(val - (np.exp(-0.2) + 6.0)) < 1e-10
