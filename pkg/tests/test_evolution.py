import numpy as np
import pytest

from ddelab.coefficients import CoefficientSpec
from ddelab.counterexample import build_spike_density, remark2_system
from ddelab.evolution import (
    CompositionError,
    EvolutionMatrix,
    WindowError,
    build_evolution,
    build_sequence,
    compose,
    export_matrix,
    op_norm,
    singular_values,
)
from ddelab.integrator import IvpProblem, solve
from ddelab.segment_space import Segment, extract_segment, make_grid

from conftest import stable_spec


def test_identity_at_equal_times():
    g = make_grid(1.0, 1, 16)
    T = build_evolution(stable_spec(), 0.5, 0.5, g)
    assert np.array_equal(T.entries, np.eye(g.size))


def test_scalar_ode_exponential():
    a = 0.7
    L = CoefficientSpec(r=0.0, d=1, instantaneous=[[a]], autonomous=True)
    g = make_grid(0.0, 1, 1)
    T = build_evolution(L, 0.0, 1.0, g, 1e-3)
    assert T.entries.shape == (1, 1)
    assert abs(T.entries[0, 0] - np.exp(a)) < 1e-10


def test_cocycle_composition():
    L = stable_spec()
    g = make_grid(1.0, 1, 32)
    T10 = build_evolution(L, 0.0, 1.0, g, 1e-3)
    T21 = build_evolution(L, 1.0, 2.0, g, 1e-3)
    T20 = build_evolution(L, 0.0, 2.0, g, 1e-3)
    C = compose(T21, T10)
    resid = np.abs(C.entries - T20.entries).sum(axis=1).max()
    assert resid / op_norm(T20) <= 1e-6
    assert C.s == 0.0 and C.t == 2.0


def test_compose_with_identity():
    L = stable_spec()
    g = make_grid(1.0, 1, 12)
    T = build_evolution(L, 0.0, 1.0, g, 1e-3)
    I = EvolutionMatrix(s=0.0, t=0.0, grid=g, entries=np.eye(g.size))
    C = compose(T, I)
    assert np.array_equal(C.entries, T.entries)


def test_compose_r0_scalar():
    a = 0.4
    L = CoefficientSpec(r=0.0, d=1, instantaneous=[[a]], autonomous=True)
    g = make_grid(0.0, 1, 1)
    T1 = build_evolution(L, 0.0, 1.0, g, 1e-3)
    T2 = build_evolution(L, 1.0, 2.0, g, 1e-3)
    C = compose(T2, T1)
    assert abs(C.entries[0, 0] - np.exp(2 * a)) < 1e-9


def test_compose_mismatch_rejected():
    L = stable_spec()
    g = make_grid(1.0, 1, 8)
    T1 = build_evolution(L, 0.0, 1.0, g, 1e-2)
    T3 = build_evolution(L, 2.0, 3.0, g, 1e-2)
    with pytest.raises(CompositionError):
        compose(T3, T1)


def test_action_matches_integrator_on_solution_segment():
    # dual route: operator action vs direct method-of-steps integration,
    # compared on compatible (solution-segment) data
    L = stable_spec()
    g = make_grid(1.0, 1, 32)
    preroll = solve(IvpProblem(L=L, s=0.0, phi=Segment.constant(g, 1.0),
                               t_end=5.0, step=1e-3))
    phi = extract_segment(preroll, 5.0, g)
    T = build_evolution(L, 0.0, 1.5, g, 1e-3)
    lhs = Segment.from_flat(g, T.entries @ phi.flatten())
    traj = solve(IvpProblem(L=L, s=0.0, phi=phi, t_end=1.5, step=1e-3))
    rhs = extract_segment(traj, 1.5, g)
    assert np.abs(lhs.values - rhs.values).max() < 1e-7


def test_op_norm_identity():
    g = make_grid(1.0, 1, 8)
    I = EvolutionMatrix(s=0.0, t=0.0, grid=g, entries=np.eye(g.size))
    assert op_norm(I) == 1.0


def test_op_norm_remark2_exact_flow():
    spec, v = remark2_system(build_spike_density(6))
    g = make_grid(0.0, 1, 1)
    T = build_evolution(spec, 0.2, 0.9, g)
    expected = np.exp(v.log_v(0.2) - v.log_v(0.9))
    assert abs(op_norm(T) - expected) / expected < 1e-6


def test_singular_value_compactness_window():
    # windows spanning the delay horizon lose most of their numerical rank
    L = stable_spec()
    g = make_grid(1.0, 1, 32)
    T = build_evolution(L, 0.0, 1.5, g, 1e-3)
    sv = singular_values(T)
    assert (sv / sv[0] > 1e-10).sum() < g.size
    assert sv[-1] / sv[0] < 1e-14
    I = EvolutionMatrix(s=0.0, t=0.0, grid=g, entries=np.eye(g.size))
    svi = singular_values(I)
    assert svi[-1] / svi[0] == 1.0


def test_r0_singular_value():
    a = -0.3
    L = CoefficientSpec(r=0.0, d=1, instantaneous=[[a]], autonomous=True)
    g = make_grid(0.0, 1, 1)
    T = build_evolution(L, 0.0, 2.0, g, 1e-3)
    assert abs(singular_values(T)[0] - np.exp(2 * a)) < 1e-9


class TestBuildSequence:
    def test_autonomous_windows_agree(self):
        L = stable_spec()
        g = make_grid(1.0, 1, 12)
        seq = build_sequence(L, 1.0, 3, g, 1e-2, reuse_autonomous=False)
        a0, a1, a2 = (seq.entries(n) for n in range(3))
        scale = np.abs(a0).max()
        assert np.abs(a0 - a1).max() / scale < 1e-8
        assert np.abs(a1 - a2).max() / scale < 1e-8

    def test_products_match_direct_build(self):
        L = stable_spec()
        g = make_grid(1.0, 1, 24)
        seq = build_sequence(L, 1.0, 3, g, 1e-3, reuse_autonomous=False)
        direct = build_evolution(L, 0.0, 3.0, g, 1e-3)
        prod = seq.product(3, 0)
        resid = np.abs(prod - direct.entries).sum(axis=1).max()
        assert resid / op_norm(direct) < 1e-6

    def test_remark2_entries_are_density_ratios(self):
        spec, v = remark2_system(build_spike_density(6))
        g = make_grid(0.0, 1, 1)
        seq = build_sequence(spec, 1.0, 5, g)
        for n in range(5):
            expected = np.exp(v.log_v(n) - v.log_v(n + 1))
            assert abs(seq.entries(n)[0, 0] - expected) < 1e-12

    def test_window_shorter_than_delay_rejected(self):
        L = stable_spec()
        g = make_grid(1.0, 1, 8)
        with pytest.raises(WindowError):
            build_sequence(L, 0.5, 4, g)


def test_export_matrix(tmp_path):
    import json

    L = stable_spec()
    g = make_grid(1.0, 1, 8)
    T = build_evolution(L, 0.0, 1.0, g, 1e-2)
    base = str(tmp_path / "op")
    export_matrix(T, base)
    loaded = np.loadtxt(base + ".csv", delimiter=",")
    assert np.allclose(loaded, T.entries)
    with open(base + ".meta.json") as fh:
        meta = json.load(fh)
    assert meta == {"s": 0.0, "t": 1.0, "r": 1.0, "d": 1, "N": 8}
