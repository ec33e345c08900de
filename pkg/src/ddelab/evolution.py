"""Matrix representations of the solution operators on segment coordinates.

The operator mapping the segment at time s to the segment at time t is the
flow of the collocation system on node values: interior nodes transport the
history by spectral differentiation, and the node at zero follows the
equation read through the interpolation rows.  The whole matrix is advanced
by RK4 (fourth-order Taylor stepping in the autonomous case), so operator
composition over abutting spans holds to rounding, and the spurious
transport modes decay fast enough that windows spanning the delay horizon
show the expected singular-value collapse.  Norms are induced max-row-sum
norms on node values, the grid approximation of the segment-space operator
norm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSpec
from .segment_space import Grid, ParameterError

_STABILITY_MARGIN = 1.5  # cap on step * spectral radius for the RK4 flow


class CompositionError(ValueError):
    """Operators do not abut in time or live on different grids."""


class WindowError(ValueError):
    """Window length incompatible with the delay horizon."""


@dataclass(frozen=True)
class EvolutionMatrix:
    """Finite section of the solution operator between times s and t."""

    s: float
    t: float
    grid: Grid
    entries: np.ndarray

    def __post_init__(self):
        D = self.grid.size
        if self.entries.shape != (D, D):
            raise ParameterError(f"entries must be {D}x{D}, got {self.entries.shape}")


def generator_matrix(L: CoefficientSpec, grid: Grid, t: float) -> np.ndarray:
    """Collocation generator: transport rows plus the equation row block."""
    d, N = grid.d, grid.N
    M = np.kron(grid.diff_matrix, np.eye(d))
    row = np.zeros((d, grid.size))
    if L.instantaneous is not None:
        row[:, d * N:] += np.asarray(L.instantaneous(t), dtype=float)
    for tau, A in L.discrete_terms:
        c = grid.interp_row(-tau)
        row += np.kron(c, np.asarray(A(t), dtype=float))
    if L.kernel is not None:
        for m, (w, theta) in enumerate(zip(grid.quad_weights, grid.nodes)):
            K = np.asarray(L.kernel(t, theta), dtype=float).reshape(d, d)
            row[:, d * m:d * (m + 1)] += w * K
    M[d * N:, :] = row
    return M


def _flow_steps(L: CoefficientSpec, grid: Grid, s: float, t: float, h_int: float) -> int:
    M = generator_matrix(L, grid, s)
    rho = float(np.abs(np.linalg.eigvals(M)).max()) if M.size else 0.0
    n = max(1, int(np.ceil((t - s) / h_int - 1e-9)))
    if rho > 0:
        n = max(n, int(np.ceil((t - s) * rho / _STABILITY_MARGIN)))
    return n


def _flow_autonomous(M: np.ndarray, span: float, n: int) -> np.ndarray:
    h = span / n
    D = M.shape[0]
    S = np.eye(D)
    # fourth-order Taylor step, the RK4 transition for a constant generator
    for k in (4, 3, 2, 1):
        S = np.eye(D) + (h / k) * (M @ S)
    out = np.eye(D)
    power = S
    m = n
    while m:
        if m & 1:
            out = power @ out
        power = power @ power
        m >>= 1
    return out


def _flow_nonautonomous(L, grid, s, t, n) -> np.ndarray:
    h = (t - s) / n
    U = np.eye(grid.size)
    for i in range(n):
        ta = s + i * h
        M1 = generator_matrix(L, grid, ta)
        M2 = generator_matrix(L, grid, ta + h / 2)
        M3 = generator_matrix(L, grid, ta + h)
        K1 = M1 @ U
        K2 = M2 @ (U + (h / 2) * K1)
        K3 = M2 @ (U + (h / 2) * K2)
        K4 = M3 @ (U + h * K3)
        U = U + (h / 6) * (K1 + 2 * K2 + 2 * K3 + K4)
    return U


def build_evolution(L: CoefficientSpec, s: float, t: float, grid: Grid,
                    h_int: float = 1e-3) -> EvolutionMatrix:
    """Assemble the operator matrix for times t >= s >= 0.

    Falls back to the coefficients' exact flow when one is attached (r = 0
    systems with a known fundamental solution).  The step is refined below
    h_int when the generator's spectral radius requires it for stability.
    """
    if t < s:
        raise ParameterError("need t >= s")
    D = grid.size
    if t == s:
        return EvolutionMatrix(s=s, t=t, grid=grid, entries=np.eye(D))
    if L.exact_flow is not None and grid.r == 0:
        entries = np.asarray(L.exact_flow(s, t), dtype=float).reshape(D, D)
        return EvolutionMatrix(s=s, t=t, grid=grid, entries=entries)
    if grid.d != L.d or abs(grid.r - L.r) > 1e-12 * max(1.0, L.r):
        raise ParameterError("grid does not match the coefficients")
    n = _flow_steps(L, grid, s, t, h_int)
    if L.autonomous:
        M = generator_matrix(L, grid, s)
        entries = _flow_autonomous(M, t - s, n)
    else:
        entries = _flow_nonautonomous(L, grid, s, t, n)
    return EvolutionMatrix(s=s, t=t, grid=grid, entries=entries)


def compose(T2: EvolutionMatrix, T1: EvolutionMatrix) -> EvolutionMatrix:
    """Operator for the concatenated time span; requires T1.t == T2.s."""
    if abs(T1.t - T2.s) > 1e-9 * max(1.0, abs(T1.t)):
        raise CompositionError(
            f"operators do not abut: first ends at {T1.t}, second starts at {T2.s}")
    if not T1.grid.compatible(T2.grid):
        raise CompositionError("operators live on different grids")
    return EvolutionMatrix(s=T1.s, t=T2.t, grid=T1.grid, entries=T2.entries @ T1.entries)


def op_norm(T: EvolutionMatrix) -> float:
    """Induced max-norm on node values (max absolute row sum)."""
    return float(np.abs(T.entries).sum(axis=1).max()) if T.entries.size else 0.0


def singular_values(T: EvolutionMatrix) -> np.ndarray:
    """Descending singular values; fast decay signals a compact window."""
    return np.linalg.svd(T.entries, compute_uv=False)


@dataclass(frozen=True)
class TransitionSequence:
    """Abutting window operators A(n) = T((n+1)h, nh) on one grid."""

    h: float
    grid: Grid
    matrices: tuple
    t0: float = 0.0

    @property
    def count(self) -> int:
        return len(self.matrices)

    def entries(self, n: int) -> np.ndarray:
        return self.matrices[n].entries

    def window_time(self, n: int) -> float:
        return self.t0 + n * self.h

    def product(self, n: int, m: int) -> np.ndarray:
        """Transition matrix over windows m..n-1 (identity when n == m)."""
        out = np.eye(self.grid.size)
        for j in range(m, n):
            out = self.entries(j) @ out
        return out


def build_sequence(L: CoefficientSpec, h: float, count: int, grid: Grid,
                   h_int: float = 1e-3, t0: float = 0.0,
                   reuse_autonomous: bool = True) -> TransitionSequence:
    """Window operators covering [t0, t0 + count*h].

    Each window must dominate the delay horizon (h >= r) so the operators
    carry full smoothing; for r = 0 any positive h is accepted.  Autonomous
    coefficient specs are integrated once and reused unless disabled.
    """
    if grid.r > 0 and h < grid.r - 1e-12:
        raise WindowError(f"window h={h} shorter than the delay horizon r={grid.r}")
    if h <= 0:
        raise WindowError("window length must be positive")
    if count < 1:
        raise ParameterError("need at least one window")
    mats = []
    if L.autonomous and reuse_autonomous and L.exact_flow is None:
        base = build_evolution(L, t0, t0 + h, grid, h_int)
        for n in range(count):
            mats.append(EvolutionMatrix(s=t0 + n * h, t=t0 + (n + 1) * h,
                                        grid=grid, entries=base.entries))
    else:
        for n in range(count):
            mats.append(build_evolution(L, t0 + n * h, t0 + (n + 1) * h, grid, h_int))
    return TransitionSequence(h=h, grid=grid, matrices=tuple(mats), t0=t0)


def export_matrix(T: EvolutionMatrix, base_path: str):
    """Write entries as CSV next to a JSON header (s, t, r, d, N)."""
    np.savetxt(base_path + ".csv", T.entries, delimiter=",")
    header = {"s": T.s, "t": T.t, "r": T.grid.r, "d": T.grid.d, "N": T.grid.N}
    with open(base_path + ".meta.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
