import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddelab.segment_space import (
    DomainError,
    HistoryError,
    ParameterError,
    Segment,
    Trajectory,
    eval_segment,
    extract_segment,
    make_grid,
    sup_norm,
)


class TestMakeGrid:
    def test_degenerate_r_zero(self):
        g = make_grid(0.0, 1, 5)
        assert g.N == 0
        assert g.nodes.tolist() == [0.0]
        assert g.size == 1

    def test_three_point_lobatto(self):
        g = make_grid(1.0, 1, 2)
        assert np.allclose(g.nodes, [-1.0, -0.5, 0.0])

    def test_lobatto_formula_r2_n16(self):
        g = make_grid(2.0, 3, 16)
        j = np.arange(17)
        expected = -2.0 * (1 + np.cos(np.pi * j / 16)) / 2.0
        assert len(g.nodes) == 17
        assert g.nodes[0] == -2.0 and g.nodes[-1] == 0.0
        assert np.allclose(g.nodes, expected, atol=1e-15)
        # clustering: end spacings much smaller than the middle one
        sp = np.diff(g.nodes)
        assert sp[0] < sp[8] / 5 and sp[-1] < sp[8] / 5

    def test_parameter_errors(self):
        with pytest.raises(ParameterError):
            make_grid(-1.0, 1, 4)
        with pytest.raises(ParameterError):
            make_grid(1.0, 0, 4)

    def test_quad_weights_integrate_constants(self):
        g = make_grid(1.0, 1, 16)
        assert abs(g.quad_weights.sum() - 1.0) < 1e-14


class TestEvalSegment:
    def test_constant_reproduction(self):
        g = make_grid(1.0, 2, 8)
        seg = Segment.constant(g, np.array([1.0, 1.0]))
        for th in (-1.0, -0.77, -0.5, 0.0):
            assert np.allclose(eval_segment(seg, th), [1.0, 1.0], atol=1e-14)

    def test_linear_reproduction(self):
        r = 2.0
        g = make_grid(r, 1, 6)
        seg = Segment.from_function(g, lambda th: th)
        assert abs(eval_segment(seg, -r / 2)[0] + r / 2) < 1e-14

    def test_exponential_accuracy(self):
        g = make_grid(1.0, 1, 16)
        seg = Segment.from_function(g, np.exp)
        assert abs(eval_segment(seg, -0.3)[0] - np.exp(-0.3)) < 1e-12

    def test_exact_at_nodes(self):
        g = make_grid(1.0, 1, 10)
        rng = np.random.default_rng(0)
        seg = Segment(g, rng.standard_normal((1, 11)))
        for j, th in enumerate(g.nodes):
            assert eval_segment(seg, th)[0] == seg.values[0, j]

    def test_domain_error(self):
        g = make_grid(1.0, 1, 4)
        seg = Segment.constant(g, 1.0)
        with pytest.raises(DomainError):
            eval_segment(seg, -1.5)
        with pytest.raises(DomainError):
            eval_segment(seg, 0.5)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=8), st.integers(min_value=0, max_value=1000))
    def test_polynomial_reproduction(self, degree, seed):
        # interpolation is exact for polynomials up to the grid degree
        N = 8
        g = make_grid(1.0, 1, N)
        rng = np.random.default_rng(seed)
        coeffs = rng.standard_normal(degree + 1)
        p = np.polynomial.Polynomial(coeffs)
        seg = Segment.from_function(g, p)
        for th in np.linspace(-1, 0, 7):
            assert abs(eval_segment(seg, th)[0] - p(th)) < 1e-10


class TestSupNorm:
    def test_zero_segment(self):
        g = make_grid(1.0, 2, 8)
        assert sup_norm(Segment.constant(g, np.zeros(2))) == 0.0

    def test_constant_vector_max_norm(self):
        g = make_grid(1.0, 2, 8)
        assert sup_norm(Segment.constant(g, np.array([2.0, -3.0]))) == pytest.approx(3.0, abs=1e-12)

    def test_interior_maximum_oversampled(self):
        # brute-force oracle: dense sampling of the interpolant
        g = make_grid(1.0, 1, 16)
        seg = Segment.from_function(g, lambda th: np.sin(5 * th))
        dense = np.linspace(-1.0, 0.0, 10_000)
        brute = np.abs(eval_segment(seg, dense)).max()
        assert abs(brute - 1.0) < 1e-6  # interpolant itself is accurate
        assert abs(sup_norm(seg) - brute) < 1e-3

    def test_homogeneity_exact_for_powers_of_two(self):
        g = make_grid(1.0, 1, 12)
        rng = np.random.default_rng(3)
        seg = Segment(g, rng.standard_normal((1, 13)))
        for c in (2.0, -8.0, 0.25):
            assert sup_norm(c * seg) == abs(c) * sup_norm(seg)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=500))
    def test_triangle_inequality(self, seed):
        g = make_grid(1.0, 2, 8)
        rng = np.random.default_rng(seed)
        a = Segment(g, rng.standard_normal((2, 9)))
        b = Segment(g, rng.standard_normal((2, 9)))
        assert sup_norm(a + b) <= sup_norm(a) + sup_norm(b) + 1e-12

    def test_r_zero_is_vector_max_norm(self):
        g = make_grid(0.0, 3, 1)
        seg = Segment(g, np.array([[1.0], [-4.0], [2.0]]))
        assert sup_norm(seg) == 4.0
        assert np.array_equal(eval_segment(seg, 0.0), seg.values[:, 0])


def line_trajectory(t0, t1, slope=1.0, n=201):
    ts = np.linspace(t0, t1, n)
    return Trajectory(ts, slope * ts, np.full_like(ts, slope))


class TestTrajectory:
    def test_strictly_increasing_enforced(self):
        with pytest.raises(ParameterError):
            Trajectory([0.0, 0.0, 1.0], [1.0, 2.0, 3.0], [0.0, 0.0, 0.0])

    def test_extract_constant(self):
        g = make_grid(1.0, 1, 8)
        ts = np.linspace(-1.0, 5.0, 601)
        traj = Trajectory(ts, np.full_like(ts, 3.0), np.zeros_like(ts))
        for t in (0.0, 1.7, 5.0):
            seg = extract_segment(traj, t, g)
            assert np.allclose(seg.values, 3.0, atol=1e-14)

    def test_extract_linear(self):
        g = make_grid(1.0, 1, 8)
        traj = line_trajectory(-1.0, 5.0)
        seg = extract_segment(traj, 2.0, g)
        assert np.allclose(seg.values[0], 2.0 + g.nodes, atol=1e-12)

    def test_insufficient_history(self):
        g = make_grid(1.0, 1, 8)
        traj = line_trajectory(-1.0, 5.0)
        with pytest.raises(HistoryError):
            extract_segment(traj, -0.5, g)

    def test_derivative_and_domain(self):
        traj = line_trajectory(0.0, 1.0, slope=2.0)
        assert abs(traj.derivative(0.5)[0] - 2.0) < 1e-12
        with pytest.raises(DomainError):
            traj(2.0)

    def test_csv_roundtrip(self, tmp_path):
        traj = line_trajectory(0.0, 1.0, slope=-1.5, n=11)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert data.shape[1] == 3
        assert np.allclose(data[:, 1], -1.5 * data[:, 0], atol=1e-12)
