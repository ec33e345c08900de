"""Method-of-steps integration of x'(t) = L(t) x_t + z(t).

Fixed-step classical RK4 with cubic Hermite dense output.  The base step is
snapped so that it divides the shortest delay, and integration restarts at
every breakpoint s + k*tau_i so the derivative discontinuities propagating
from the initial time never sit inside an RK step.  Delayed stage values are
taken from the dense history: exactly from the initial segment polynomial
for times at or before the start, and from the stored Hermite record
afterwards.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSpec
from .segment_space import Grid, Segment, Trajectory, HistoryError, ParameterError

BLOWUP_GUARD = 1e12


class ConfigurationError(ValueError):
    """Step size cannot be reconciled with the delays."""


class BlowUpError(RuntimeError):
    """State magnitude exceeded the guard; carries the last valid time."""

    def __init__(self, t_last: float):
        super().__init__(f"solution exceeded {BLOWUP_GUARD:g} near t={t_last:.6g}")
        self.t_last = t_last


@dataclass(frozen=True)
class IvpProblem:
    """Initial value problem for the (possibly forced) linear delay equation."""

    L: CoefficientSpec
    s: float
    phi: Segment
    t_end: float
    forcing: object | None = None
    step: float = 1e-3

    def __post_init__(self):
        if self.t_end < self.s:
            raise ParameterError("t_end must not precede the start time")
        if self.step <= 0:
            raise ParameterError("step must be positive")
        g = self.phi.grid
        if g.d != self.L.d or abs(g.r - self.L.r) > 1e-12 * max(1.0, self.L.r):
            raise ParameterError("initial segment grid does not match coefficients")


def snap_step(h: float, delays) -> float:
    """Largest step <= h that divides the shortest delay.

    Raises if some other delay is not an integer multiple of the result.
    """
    delays = sorted(delays)
    if not delays:
        return h
    tau_min = delays[0]
    h = min(h, tau_min)
    n = int(np.ceil(tau_min / h - 1e-12))
    h_snap = tau_min / n
    for tau in delays[1:]:
        ratio = tau / h_snap
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                f"step {h_snap:g} (snapped to delay {tau_min:g}) does not divide delay {tau:g}")
    return h_snap


class _History:
    """Growing dense record of a batched solution, used for delayed lookups.

    State batches have shape (d, K).  Times at or before the start are
    answered exactly from the initial segment polynomial.
    """

    def __init__(self, grid: Grid, phi_values: np.ndarray, s: float):
        self.grid = grid
        self.s = s
        self.phi_values = phi_values  # (d, N+1, K)
        self.piece_ts: list[np.ndarray] = []
        self.piece_xs: list[np.ndarray] = []
        self.piece_ds: list[np.ndarray] = []
        self.piece_starts: list[float] = []
        self._cur_t = None
        self._cur_x = None
        self._cur_d = None
        self._cur_n = 0

    def start_piece(self, t0: float, n_steps: int, x0: np.ndarray, d0: np.ndarray):
        d, K = x0.shape
        self._cur_t = np.empty(n_steps + 1)
        self._cur_x = np.empty((n_steps + 1, d, K))
        self._cur_d = np.empty((n_steps + 1, d, K))
        self._cur_t[0] = t0
        self._cur_x[0] = x0
        self._cur_d[0] = d0
        self._cur_n = 1

    def append(self, t: float, x: np.ndarray, dx: np.ndarray):
        i = self._cur_n
        self._cur_t[i] = t
        self._cur_x[i] = x
        self._cur_d[i] = dx
        self._cur_n = i + 1

    def finish_piece(self):
        n = self._cur_n
        self.piece_ts.append(self._cur_t[:n])
        self.piece_xs.append(self._cur_x[:n])
        self.piece_ds.append(self._cur_d[:n])
        self.piece_starts.append(float(self._cur_t[0]))
        self._cur_t = None

    def _phi_eval(self, theta: float) -> np.ndarray:
        row = self.grid.interp_row(np.clip(theta, -self.grid.r, 0.0))
        return np.einsum("j,djk->dk", row, self.phi_values)

    def _piece_eval(self, ts, xs, ds, t, n_valid=None):
        n = len(ts) if n_valid is None else n_valid
        i = bisect.bisect_right(ts[:n], t) - 1
        i = min(max(i, 0), n - 2) if n >= 2 else 0
        if n == 1 or abs(t - ts[i]) < 1e-12:
            return xs[i].copy()
        if abs(t - ts[i + 1]) < 1e-12:
            return xs[i + 1].copy()
        t0, t1 = ts[i], ts[i + 1]
        dt = t1 - t0
        tau = (t - t0) / dt
        t2 = tau * tau
        t3 = t2 * tau
        return ((2 * t3 - 3 * t2 + 1) * xs[i]
                + (t3 - 2 * t2 + tau) * dt * ds[i]
                + (-2 * t3 + 3 * t2) * xs[i + 1]
                + (t3 - t2) * dt * ds[i + 1])

    def eval(self, t: float) -> np.ndarray:
        """Batched state at time t; extrapolates only within the active step."""
        if t <= self.s + 1e-13 * max(1.0, abs(self.s)):
            return self._phi_eval(t - self.s)
        if self._cur_t is not None and t >= self._cur_t[0] - 1e-13:
            return self._piece_eval(self._cur_t, self._cur_x, self._cur_d, t, self._cur_n)
        j = bisect.bisect_right(self.piece_starts, t) - 1
        j = min(max(j, 0), len(self.piece_starts) - 1)
        return self._piece_eval(self.piece_ts[j], self.piece_xs[j], self.piece_ds[j], t)

    def segment_at(self, t: float) -> np.ndarray:
        """(d, N+1, K) node values of the segment at time t."""
        out = np.empty_like(self.phi_values)
        for q, theta in enumerate(self.grid.nodes):
            out[:, q, :] = self.eval(t + theta)
        return out


def _make_rhs(L: CoefficientSpec, hist: _History, forcing):
    grid = hist.grid
    inst = L.instantaneous
    terms = L.discrete_terms
    kernel = L.kernel
    qw = grid.quad_weights
    nodes = grid.nodes
    d = L.d

    def rhs(t, x):
        out = inst(t) @ x if inst is not None else np.zeros_like(x)
        for tau, A in terms:
            out = out + A(t) @ hist.eval(t - tau)
        if kernel is not None:
            for w, theta in zip(qw, nodes):
                if theta == 0.0:
                    v = x
                else:
                    v = hist.eval(t + theta)
                out = out + w * (np.asarray(kernel(t, theta), dtype=float).reshape(d, d) @ v)
        if forcing is not None:
            out = out + np.asarray(forcing(t), dtype=float).reshape(-1, 1)
        return out

    return rhs


def _piece_plan(s, t_end, h_base, delays, mesh_hints, snap_times=()):
    """Split [s, t_end] into (a, b, step) pieces at breakpoints and hints.

    snap_times are forced onto the mesh (as piece boundaries) so stored
    values there carry no dense-output interpolation error.
    """
    edges = {s, t_end}
    for tau in delays:
        k = 1
        while s + k * tau < t_end - 1e-12:
            edges.add(s + k * tau)
            k += 1
    for t in snap_times:
        if s + 1e-12 < t < t_end - 1e-12:
            edges.add(float(t))
    hints = []
    for lo, hi, h_loc in mesh_hints:
        lo, hi = max(lo, s), min(hi, t_end)
        if lo < hi:
            edges.add(lo)
            edges.add(hi)
            hints.append((lo, hi, h_loc))
    edges = sorted(edges)
    plan = []
    for a, b in zip(edges[:-1], edges[1:]):
        step = h_base
        mid = (a + b) / 2
        for lo, hi, h_loc in hints:
            if lo <= mid <= hi:
                step = min(step, h_loc)
        if step < 64 * np.finfo(float).eps * max(1.0, abs(b)):
            raise ConfigurationError(
                f"required local step {step:g} near t={a:g} is below time resolution")
        plan.append((a, b, step))
    return plan


def _integrate(L: CoefficientSpec, phi_values: np.ndarray, s: float, t_end: float,
               h_int: float, forcing=None, grid: Grid | None = None,
               snap_times=()) -> _History:
    """Core stepper on batched initial data phi_values of shape (d, N+1, K)."""
    hist = _History(grid, phi_values, s)
    if t_end <= s + 1e-15:
        x0 = hist._phi_eval(0.0)
        hist.start_piece(s, 0, x0, np.zeros_like(x0))
        hist.finish_piece()
        return hist
    h_base = snap_step(h_int, L.delays)
    plan = _piece_plan(s, t_end, h_base, L.delays, L.mesh_hints, snap_times)
    rhs = _make_rhs(L, hist, forcing)
    x = hist._phi_eval(0.0)
    d_cur = None
    for a, b, step in plan:
        n = max(1, int(np.ceil((b - a) / step - 1e-9)))
        h = (b - a) / n
        if d_cur is None:
            d_cur = rhs(a, x)
        hist.start_piece(a, n, x, d_cur)
        t = a
        for i in range(n):
            k1 = d_cur
            k2 = rhs(t + h / 2, x + (h / 2) * k1)
            k3 = rhs(t + h / 2, x + (h / 2) * k2)
            k4 = rhs(t + h, x + h * k3)
            x = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = a + (i + 1) * h
            if not np.all(np.isfinite(x)) or np.abs(x).max() > BLOWUP_GUARD:
                raise BlowUpError(t_last=t - h)
            d_cur = rhs(t, x)
            hist.append(t, x, d_cur)
        hist.finish_piece()
    return hist


def _history_to_trajectory(hist: _History, phi: Segment | None) -> Trajectory:
    ts_parts, xs_parts, ds_parts = [], [], []
    for k, (ts, xs, ds) in enumerate(zip(hist.piece_ts, hist.piece_xs, hist.piece_ds)):
        sl = slice(None) if k == 0 else slice(1, None)
        ts_parts.append(ts[sl])
        xs_parts.append(xs[sl, :, 0])
        ds_parts.append(ds[sl, :, 0])
    ts = np.concatenate(ts_parts)
    if len(ts) == 1:  # degenerate zero-length integration
        ts = np.array([ts[0], ts[0] + 1e-9])
        xs = np.vstack([xs_parts[0], xs_parts[0]])
        ds = np.vstack([ds_parts[0], ds_parts[0]])
    else:
        xs = np.vstack(xs_parts)
        ds = np.vstack(ds_parts)
    return Trajectory(ts, xs, ds,
                      breakpoints=hist.piece_starts[1:],
                      history=phi if (phi is not None and phi.grid.r > 0) else None,
                      history_start=hist.s)


def solve(problem: IvpProblem) -> Trajectory:
    """Solve the IVP; the result covers [s - r, t_end].

    On [s - r, s] the trajectory coincides with the initial segment (its
    polynomial interpolant is evaluated exactly).  The derivative at the
    start time follows the right-hand convention.
    """
    phi_values = problem.phi.values[:, :, None]
    hist = _integrate(problem.L, phi_values, problem.s, problem.t_end,
                      problem.step, problem.forcing, problem.phi.grid)
    return _history_to_trajectory(hist, problem.phi)


@dataclass(frozen=True)
class DefectReport:
    """Sampled defect z(t) = y'(t) - L(t) y_t of a candidate pseudo-solution.

    z evaluates the defect exactly from the trajectory (no re-interpolation),
    so it can be fed back to the integrator as a forcing term.
    """

    delta: float
    ts: np.ndarray
    zs: np.ndarray
    mesh_resolution: float
    z: object = None


def defect(L: CoefficientSpec, y: Trajectory, grid: Grid) -> DefectReport:
    """Measure sup_t |y'(t) - L(t) y_t| on y's own sample mesh.

    The mesh resolution is reported alongside delta: a sampled trajectory can
    only approximate the continuously differentiable class the definition
    quantifies over.
    """
    from .coefficients import apply as apply_L
    from .segment_space import extract_segment

    t0 = max(0.0, y.t_start + grid.r)
    mask = y.ts >= t0 - 1e-12
    ts = y.ts[mask]
    if len(ts) < 2:
        raise HistoryError("trajectory too short to evaluate the defect")
    def z_exact(t):
        return y.derivative(t) - apply_L(L, t, extract_segment(y, t, grid))

    zs = np.empty((len(ts), L.d))
    for i, t in enumerate(ts):
        zs[i] = z_exact(t)
    delta = float(np.abs(zs).max())
    return DefectReport(delta=delta, ts=ts, zs=zs,
                        mesh_resolution=float(np.diff(ts).max()),
                        z=z_exact)
