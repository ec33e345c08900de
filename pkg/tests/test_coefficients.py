import numpy as np
import pytest

from ddelab.coefficients import CoefficientSpec, apply, norm_bound
from ddelab.counterexample import build_spike_density, remark2_system
from ddelab.segment_space import ParameterError, Segment, make_grid


def test_instantaneous_only_scalar():
    L = CoefficientSpec(r=0.0, d=1, instantaneous=[[2.5]], autonomous=True)
    g = make_grid(0.0, 1, 1)
    seg = Segment.constant(g, 3.0)
    assert abs(apply(L, 0.0, seg)[0] - 7.5) < 1e-14


def test_single_delay_reads_delayed_value():
    # segment sampling theta + 1 vanishes at theta = -1
    L = CoefficientSpec(r=1.0, d=1, discrete_terms=((1.0, [[-1.0]]),), autonomous=True)
    g = make_grid(1.0, 1, 12)
    seg = Segment.from_function(g, lambda th: th + 1.0)
    assert abs(apply(L, 0.0, seg)[0]) < 1e-13


def test_kernel_constant_integrates_to_one():
    L = CoefficientSpec(r=1.0, d=1, kernel=lambda t, th: np.array([[1.0]]),
                        autonomous=True)
    g = make_grid(1.0, 1, 16)
    seg = Segment.constant(g, 1.0)
    assert abs(apply(L, 0.0, seg)[0] - 1.0) < 1e-10


def test_kernel_linear_weight():
    # int_{-1}^{0} theta * 1 dtheta = -1/2
    L = CoefficientSpec(r=1.0, d=1, kernel=lambda t, th: np.array([[th]]),
                        autonomous=True)
    g = make_grid(1.0, 1, 16)
    seg = Segment.constant(g, 1.0)
    assert abs(apply(L, 0.0, seg)[0] + 0.5) < 1e-10


def test_linearity_random_segments():
    L = CoefficientSpec(r=1.0, d=2,
                        instantaneous=[[0.3, -1.0], [0.2, 0.1]],
                        discrete_terms=((0.5, [[0.0, 1.0], [1.0, 0.0]]),),
                        kernel=lambda t, th: np.array([[np.cos(th), 0.0], [0.0, th]]),
                        autonomous=True)
    g = make_grid(1.0, 2, 12)
    rng = np.random.default_rng(7)
    for _ in range(5):
        a = Segment(g, rng.standard_normal((2, 13)))
        b = Segment(g, rng.standard_normal((2, 13)))
        al, be = rng.standard_normal(2)
        lhs = apply(L, 0.0, al * a + be * b)
        rhs = al * apply(L, 0.0, a) + be * apply(L, 0.0, b)
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_bound_dominates_random_applications():
    L = CoefficientSpec(r=1.0, d=2,
                        instantaneous=[[0.3, -1.0], [0.2, 0.1]],
                        discrete_terms=((0.5, [[0.0, 1.0], [1.0, 0.0]]),),
                        autonomous=True)
    g = make_grid(1.0, 2, 12)
    cert = norm_bound(L, 0.1, grid=g)
    rng = np.random.default_rng(11)
    from ddelab.segment_space import sup_norm
    for _ in range(20):
        seg = Segment(g, rng.standard_normal((2, 13)))
        assert np.abs(apply(L, 0.0, seg)).max() <= cert.M * sup_norm(seg) + 1e-12


def test_norm_bound_values():
    L1 = CoefficientSpec(r=1.0, d=1, discrete_terms=((1.0, [[-1.0]]),), autonomous=True)
    assert norm_bound(L1, 0.1).M == 1.0
    L2 = CoefficientSpec(r=1.0, d=1, instantaneous=[[1.0]],
                         discrete_terms=((1.0, [[-2.0]]),), autonomous=True)
    assert norm_bound(L2, 0.1).M == 3.0
    assert norm_bound(L2, 0.1).method == "analytic"


def test_remark2_coefficient_grows_at_spike_shoulders():
    spec, v = remark2_system(build_spike_density(8))
    # |a| at the spike half-width points grows without bound with n
    vals = []
    for c, w in zip(v.centers, v.widths):
        vals.append(abs(v.a(c - w / 2)))
    assert all(np.diff(vals) > 0)
    assert vals[-1] > 1e6
    cert = norm_bound(spec, 0.05, t_max=6.0)
    assert cert.method == "sampled"
    assert "sampled window" in cert.note


def test_grid_mismatch_rejected():
    L = CoefficientSpec(r=1.0, d=1, discrete_terms=((1.0, [[-1.0]]),), autonomous=True)
    g_wrong = make_grid(2.0, 1, 8)
    seg = Segment.constant(g_wrong, 1.0)
    with pytest.raises(ParameterError):
        apply(L, 0.0, seg)


def test_delay_outside_horizon_rejected():
    with pytest.raises(ParameterError):
        CoefficientSpec(r=1.0, d=1, discrete_terms=((1.5, [[1.0]]),))
