"""Finite-dimensional model of the segment phase space C([-r,0], R^d).

A segment is represented by its values on a Chebyshev-Lobatto grid of [-r,0]
together with barycentric polynomial interpolation.  The sup-norm is
approximated by maximizing over the nodes plus a fixed oversampling set.
For r = 0 the grid degenerates to the single node 0 and a segment is just a
vector in R^d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline


class ParameterError(ValueError):
    """Invalid construction parameters."""


class DomainError(ValueError):
    """Evaluation point outside the admissible domain."""


class HistoryError(ValueError):
    """Not enough trajectory history to extract a segment."""


_OVERSAMPLE_PER_INTERVAL = 8


def _lobatto_nodes(r: float, N: int) -> np.ndarray:
    # theta_j = -r (1 + cos(pi j / N)) / 2, increasing from -r to 0
    j = np.arange(N + 1)
    nodes = -r * (1.0 + np.cos(np.pi * j / N)) / 2.0
    nodes[0], nodes[-1] = -r, 0.0
    return nodes


def _barycentric_weights(nodes: np.ndarray, kind: str) -> np.ndarray:
    n = len(nodes)
    if n == 1:
        return np.ones(1)
    if kind == "chebyshev":
        w = np.ones(n)
        w[1::2] = -1.0
        w[0] *= 0.5
        w[-1] *= 0.5
        return w
    # uniform grid: w_j = (-1)^j binom(N, j), scaled to avoid overflow
    N = n - 1
    logw = [
        sum(np.log(np.arange(1, N + 1)))
        - sum(np.log(np.arange(1, j + 1)))
        - sum(np.log(np.arange(1, N - j + 1)))
        for j in range(n)
    ]
    logw = np.asarray(logw)
    w = np.exp(logw - logw.max())
    w[1::2] *= -1.0
    return w


def _clenshaw_curtis_weights(r: float, N: int) -> np.ndarray:
    """Quadrature weights over [-r, 0] at the Lobatto nodes."""
    if N == 0:
        return np.zeros(1)
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[ii]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
    w[ii] = 2.0 * v / N
    # weights are symmetric, so node ordering does not matter; scale to length r
    return w * (r / 2.0)


def _diff_matrix(nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    n = len(nodes)
    if n == 1:
        return np.zeros((1, 1))
    c = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(c, 1.0)
    D = (weights[None, :] / weights[:, None]) / c
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


@dataclass(frozen=True)
class Grid:
    """Interpolation grid on [-r, 0] for segments of an R^d-valued history."""

    r: float
    d: int
    N: int
    nodes: np.ndarray
    kind: str
    bary_weights: np.ndarray
    quad_weights: np.ndarray
    diff_matrix: np.ndarray
    oversample: np.ndarray
    oversample_matrix: np.ndarray

    @property
    def size(self) -> int:
        """Flattened dimension d*(N+1)."""
        return self.d * (self.N + 1)

    def interp_row(self, theta):
        """Barycentric interpolation coefficients c with p(theta) = values @ c.

        theta may be a scalar or a 1-d array; returns shape (n_nodes,) or
        (n_theta, n_nodes).
        """
        scalar = np.isscalar(theta)
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        rows = np.zeros((len(th), self.N + 1))
        diff = th[:, None] - self.nodes[None, :]
        hit = np.abs(diff) < 1e-14 * max(1.0, self.r)
        exact = hit.any(axis=1)
        safe = np.where(hit, 1.0, diff)
        c = self.bary_weights[None, :] / safe
        rows[~exact] = c[~exact] / c[~exact].sum(axis=1, keepdims=True)
        if exact.any():
            rows[exact] = hit[exact].astype(float)
        return rows[0] if scalar else rows

    def compatible(self, other: "Grid") -> bool:
        return (
            self.d == other.d
            and self.N == other.N
            and abs(self.r - other.r) < 1e-12 * max(1.0, self.r)
        )


def make_grid(r: float, d: int, N: int, kind: str = "chebyshev") -> Grid:
    """Build the segment grid; Chebyshev-Lobatto nodes by default.

    For r = 0 the grid has the single node 0 regardless of N.  Uniform
    grids are admitted for diagnostics only.
    """
    if r < 0:
        raise ParameterError(f"delay horizon must be nonnegative, got {r}")
    if d < 1:
        raise ParameterError(f"state dimension must be positive, got {d}")
    if r > 0 and N < 1:
        raise ParameterError(f"need at least two nodes, got N={N}")
    if kind not in ("chebyshev", "uniform"):
        raise ParameterError(f"unknown grid kind {kind!r}")
    if r == 0:
        nodes = np.zeros(1)
        N_eff = 0
    elif kind == "chebyshev":
        nodes = _lobatto_nodes(r, N)
        N_eff = N
    else:
        nodes = np.linspace(-r, 0.0, N + 1)
        N_eff = N
    bw = _barycentric_weights(nodes, kind)
    qw = _clenshaw_curtis_weights(r, N_eff)
    dm = _diff_matrix(nodes, bw)
    if N_eff > 0:
        sub = (np.arange(_OVERSAMPLE_PER_INTERVAL) + 0.5) / _OVERSAMPLE_PER_INTERVAL
        ov = (nodes[:-1, None] + sub[None, :] * np.diff(nodes)[:, None]).ravel()
    else:
        ov = np.zeros(0)
    for arr in (nodes, bw, qw, dm, ov):
        arr.flags.writeable = False
    grid = Grid(
        r=float(r),
        d=int(d),
        N=N_eff,
        nodes=nodes,
        kind=kind,
        bary_weights=bw,
        quad_weights=qw,
        diff_matrix=dm,
        oversample=ov,
        oversample_matrix=np.zeros((0, N_eff + 1)),
    )
    ov_mat = grid.interp_row(ov) if len(ov) else np.zeros((0, N_eff + 1))
    ov_mat = np.atleast_2d(ov_mat)
    ov_mat.flags.writeable = False
    object.__setattr__(grid, "oversample_matrix", ov_mat)
    return grid


@dataclass(frozen=True)
class Segment:
    """Node values of one history window, shape (d, N+1)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (self.grid.d, self.grid.N + 1)
        if vals.shape != expected:
            raise ParameterError(f"segment values must have shape {expected}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("segment values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def flatten(self) -> np.ndarray:
        return self.values.ravel(order="F").copy()

    @classmethod
    def from_flat(cls, grid: Grid, flat: np.ndarray) -> "Segment":
        vals = np.asarray(flat, dtype=float).reshape((grid.d, grid.N + 1), order="F")
        return cls(grid, vals)

    @classmethod
    def constant(cls, grid: Grid, value) -> "Segment":
        v = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1, 1), (grid.d, grid.N + 1))
        return cls(grid, v.copy())

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "Segment":
        vals = np.stack([np.atleast_1d(np.asarray(fn(th), dtype=float)) for th in grid.nodes], axis=1)
        return cls(grid, vals)

    def __add__(self, other: "Segment") -> "Segment":
        return Segment(self.grid, self.values + other.values)

    def __sub__(self, other: "Segment") -> "Segment":
        return Segment(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Segment":
        return Segment(self.grid, self.values * c)

    __rmul__ = __mul__


def eval_segment(seg: Segment, theta):
    """Evaluate the interpolating polynomial at theta in [-r, 0].

    Exact at the nodes.  theta may be scalar (returns shape (d,)) or an
    array (returns shape (d, len(theta))).
    """
    g = seg.grid
    slack = 1e-12 * max(1.0, g.r)
    th = np.asarray(theta, dtype=float)
    if np.any(th < -g.r - slack) or np.any(th > slack):
        raise DomainError(f"theta must lie in [{-g.r}, 0]")
    th = np.clip(th, -g.r, 0.0)
    rows = g.interp_row(th)
    if rows.ndim == 1:
        return seg.values @ rows
    return seg.values @ rows.T


def sup_norm(seg: Segment) -> float:
    """Sup-norm estimate: max over nodes and midpoint oversampling.

    A lower bound on the true segment sup-norm; the gap decays spectrally
    for smooth segments.
    """
    best = float(np.abs(seg.values).max()) if seg.values.size else 0.0
    g = seg.grid
    if g.oversample_matrix.shape[0]:
        ov = seg.values @ g.oversample_matrix.T
        best = max(best, float(np.abs(ov).max()))
    return best


def _hermite_eval(t, t0, t1, x0, x1, d0, d1):
    dt = t1 - t0
    tau = (t - t0) / dt
    t2 = tau * tau
    t3 = t2 * tau
    return (
        (2 * t3 - 3 * t2 + 1) * x0
        + (t3 - 2 * t2 + tau) * dt * d0
        + (-2 * t3 + 3 * t2) * x1
        + (t3 - t2) * dt * d1
    )


class Trajectory:
    """Dense solution record on [t_start, t_end].

    Piecewise cubic Hermite interpolation between stored samples and
    derivatives, split at the method-of-steps breakpoints.  When an exact
    initial segment is attached, evaluation on the history interval uses its
    polynomial interpolant directly.
    """

    def __init__(self, ts, values, derivs, breakpoints=(), history: Segment | None = None,
                 history_start: float | None = None):
        ts = np.asarray(ts, dtype=float)
        values = np.asarray(values, dtype=float)
        derivs = np.asarray(derivs, dtype=float) if derivs is not None else None
        if values.ndim == 1:
            values = values[:, None]
        if derivs is not None and derivs.ndim == 1:
            derivs = derivs[:, None]
        if np.any(np.diff(ts) <= 0):
            raise ParameterError("sample times must be strictly increasing")
        if derivs is None:
            spl = CubicSpline(ts, values, axis=0)
            derivs = spl(ts, 1)
        self.ts = ts
        self.values = values
        self.derivs = derivs
        self.d = values.shape[1]
        self.history = history
        self.history_start = history_start if history_start is not None else ts[0]
        if history is not None:
            self.t_start = self.history_start - history.grid.r
            dvals = history.values @ history.grid.diff_matrix.T
            self._history_deriv = Segment(history.grid, dvals)
        else:
            self.t_start = ts[0]
            self._history_deriv = None
        self.t_end = ts[-1]
        bps = []
        for b in breakpoints:
            if not (ts[0] < b < ts[-1]):
                continue
            # snap to the nearest sample time so pieces start on samples
            i = int(np.argmin(np.abs(ts - b)))
            if ts[0] < ts[i] < ts[-1]:
                bps.append(float(ts[i]))
        self.breakpoints = np.asarray(sorted(set(bps)))
        edges = np.concatenate(([ts[0]], self.breakpoints, [ts[-1]]))
        self._piece_edges = edges
        self._pieces = []
        self._dpieces = []
        for a, b in zip(edges[:-1], edges[1:]):
            mask = (ts >= a - 1e-14) & (ts <= b + 1e-14)
            tp = ts[mask]
            if len(tp) < 2:
                raise ParameterError("each breakpoint piece needs at least two samples")
            spl = CubicHermiteSpline(tp, values[mask], derivs[mask], axis=0)
            self._pieces.append(spl)
            self._dpieces.append(spl.derivative())

    @classmethod
    def from_samples(cls, ts, values, derivs=None, breakpoints=(), history=None,
                     history_start=None) -> "Trajectory":
        """Wrap user-supplied samples; derivatives default to a cubic-spline fit."""
        return cls(ts, values, derivs, breakpoints, history, history_start)

    def _dispatch(self, t, use_deriv):
        slack = 1e-9 * max(1.0, abs(self.t_end))
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        if np.any(tt < self.t_start - slack) or np.any(tt > self.t_end + slack):
            raise DomainError(
                f"time outside trajectory domain [{self.t_start}, {self.t_end}]")
        tt = np.clip(tt, self.t_start, self.t_end)
        out = np.empty((len(tt), self.d))
        hist_mask = tt < self.history_start - 1e-14 if self.history is not None else np.zeros(len(tt), bool)
        if hist_mask.any():
            theta = tt[hist_mask] - self.history_start
            seg = self._history_deriv if use_deriv else self.history
            out[hist_mask] = eval_segment(seg, theta).T
        fwd = ~hist_mask
        if fwd.any():
            tf = np.clip(tt[fwd], self.ts[0], self.ts[-1])
            idx = np.searchsorted(self._piece_edges, tf, side="right") - 1
            idx = np.clip(idx, 0, len(self._pieces) - 1)
            res = np.empty((len(tf), self.d))
            for p in np.unique(idx):
                sel = idx == p
                fn = self._dpieces[p] if use_deriv else self._pieces[p]
                res[sel] = np.atleast_2d(fn(tf[sel]))
            out[fwd] = res
        return out[0] if scalar else out

    def __call__(self, t):
        """State value(s); shape (d,) for scalar t, (n, d) for arrays."""
        return self._dispatch(t, use_deriv=False)

    def derivative(self, t):
        """Derivative value(s), right-hand convention at breakpoints."""
        return self._dispatch(t, use_deriv=True)

    def to_csv(self, path, n_history: int = 50):
        """Write (t, x_1..x_d, dx_1..dx_d) rows covering the full domain."""
        cols_t = [self.ts]
        cols_x = [self.values]
        cols_d = [self.derivs]
        if self.history is not None and self.history.grid.r > 0:
            th = np.linspace(self.t_start, self.history_start, n_history, endpoint=False)
            cols_t.insert(0, th)
            cols_x.insert(0, self._dispatch(th, False))
            cols_d.insert(0, self._dispatch(th, True))
        t_all = np.concatenate(cols_t)
        data = np.column_stack([t_all, np.vstack(cols_x), np.vstack(cols_d)])
        header = ",".join(
            ["t"]
            + [f"x{i+1}" for i in range(self.d)]
            + [f"dx{i+1}" for i in range(self.d)]
        )
        np.savetxt(path, data, delimiter=",", header=header, comments="")


def extract_segment(traj: Trajectory, t: float, grid: Grid) -> Segment:
    """Segment of traj at time t: node values of s -> traj(t + theta)."""
    if t - grid.r < traj.t_start - 1e-9 * max(1.0, grid.r):
        raise HistoryError(
            f"segment at t={t} needs history back to {t - grid.r}, "
            f"trajectory starts at {traj.t_start}")
    if t > traj.t_end + 1e-9 * max(1.0, abs(traj.t_end)):
        raise DomainError(f"t={t} beyond trajectory end {traj.t_end}")
    vals = traj(t + grid.nodes)
    return Segment(grid, vals.T)
