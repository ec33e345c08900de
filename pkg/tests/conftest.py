import numpy as np
import pytest

from ddelab import (
    CoefficientSpec,
    analyze_sequence,
    build_sequence,
    make_grid,
    solve,
    IvpProblem,
)
from ddelab.segment_space import Segment, Trajectory, extract_segment


def stable_spec():
    return CoefficientSpec(r=1.0, d=1, discrete_terms=((1.0, [[-1.0]]),),
                           autonomous=True, name="delay-stable")


def unstable_spec():
    return CoefficientSpec(r=1.0, d=1, discrete_terms=((1.0, [[1.0]]),),
                           autonomous=True, name="delay-unstable")


def saddle_spec():
    return CoefficientSpec(r=1.0, d=2, instantaneous=[[1.0, 0.0], [0.0, 0.0]],
                           discrete_terms=((1.0, [[0.0, 0.0], [0.0, -1.0]]),),
                           autonomous=True, name="saddle")


@pytest.fixture(scope="session")
def grid24():
    return make_grid(1.0, 1, 24)


@pytest.fixture(scope="session")
def grid24_d2():
    return make_grid(1.0, 2, 24)


@pytest.fixture(scope="session")
def stable_system(grid24):
    L = stable_spec()
    seq = build_sequence(L, 1.0, 30, grid24, 1e-3)
    est, split = analyze_sequence(seq)
    return L, grid24, seq, est, split


@pytest.fixture(scope="session")
def unstable_system(grid24):
    L = unstable_spec()
    seq = build_sequence(L, 1.0, 30, grid24, 1e-3)
    est, split = analyze_sequence(seq)
    return L, grid24, seq, est, split


@pytest.fixture(scope="session")
def saddle_system(grid24_d2):
    L = saddle_spec()
    seq = build_sequence(L, 1.0, 30, grid24_d2, 1e-3)
    est, split = analyze_sequence(seq)
    return L, grid24_d2, seq, est, split


def ramped_perturbation(scale, d, freq=1.3):
    """Perturbation vanishing identically on the history interval."""

    def eta(t):
        u = min(max(t, 0.0), 1.0)
        ramp = u * u * (3 - 2 * u)
        dramp = 6 * u * (1 - u) if 0 < t < 1 else 0.0
        val = np.array([scale * ramp * np.sin(freq * t + j) for j in range(d)])
        dval = np.array([scale * (dramp * np.sin(freq * t + j)
                                  + ramp * freq * np.cos(freq * t + j))
                         for j in range(d)])
        return val, dval

    return eta


def make_pseudo(L, grid, base, scale, history_perturbation=False):
    """Pseudo-solution: a computed trajectory plus a small analytic drift."""
    if history_perturbation:
        def eta(t):
            val = np.array([scale * np.cos(0.7 * t + j) for j in range(L.d)])
            dval = np.array([-scale * 0.7 * np.sin(0.7 * t + j) for j in range(L.d)])
            return val, dval
        hist_extra = Segment.from_function(grid, lambda th: eta(th)[0])
    else:
        eta = ramped_perturbation(scale, L.d)
        hist_extra = None
    pert = [eta(t) for t in base.ts]
    vals = base.values + np.stack([p[0] for p in pert])
    ders = base.derivs + np.stack([p[1] for p in pert])
    hist = extract_segment(base, 0.0, grid)
    if hist_extra is not None:
        hist = hist + hist_extra
    return Trajectory(base.ts, vals, ders, breakpoints=base.breakpoints,
                      history=hist, history_start=0.0)


def solve_constant_history(L, grid, value, t_end, step=1e-3):
    phi = Segment.constant(grid, value)
    return solve(IvpProblem(L=L, s=0.0, phi=phi, t_end=t_end, step=step))
