"""Time-dependent linear functionals L(t): C([-r,0],R^d) -> R^d.

Supported class: instantaneous term, finitely many discrete delays and an
integrable kernel,

    L(t) phi = A0(t) phi(0) + sum_i A_i(t) phi(-tau_i)
               + int_{-r}^0 K(t, theta) phi(theta) dtheta,

with the kernel integral evaluated by Clenshaw-Curtis quadrature on the
segment grid.  Coefficient maps must be pure functions of t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .segment_space import Grid, Segment, DomainError, ParameterError, eval_segment


def _as_matrix_fn(m, d):
    """Normalize a constant matrix / scalar / callable into t -> (d,d) array."""
    if callable(m):
        return m
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.shape != (d, d):
        raise ParameterError(f"coefficient matrix must be {d}x{d}, got {arr.shape}")
    arr.flags.writeable = False
    return lambda t, _a=arr: _a


@dataclass(frozen=True)
class CoefficientSpec:
    """Concrete representation of t -> L(t).

    discrete_terms is a list of (tau, A) pairs with tau in (0, r]; kernel, if
    given, maps (t, theta) to a d x d matrix.  autonomous marks that every
    coefficient map is constant in t, which allows evolution windows to be
    reused.  exact_flow, when available, returns the d x d fundamental matrix
    of the r = 0 equation between two times and lets operator assembly bypass
    integration (used by systems with a known closed-form flow).
    mesh_hints lists (lo, hi, h_local) intervals where the integrator must
    refine its step to resolve narrow coefficient features.
    """

    r: float
    d: int
    instantaneous: object | None = None
    discrete_terms: tuple = ()
    kernel: object | None = None
    time_domain: tuple = (0.0, np.inf)
    autonomous: bool = False
    exact_flow: object | None = None
    mesh_hints: tuple = ()
    name: str = ""

    def __post_init__(self):
        if self.r < 0:
            raise ParameterError("delay horizon must be nonnegative")
        if self.d < 1:
            raise ParameterError("dimension must be positive")
        inst = _as_matrix_fn(self.instantaneous, self.d) if self.instantaneous is not None else None
        terms = []
        for tau, A in self.discrete_terms:
            tau = float(tau)
            if not (0 < tau <= self.r + 1e-12):
                raise ParameterError(f"delay {tau} outside (0, r={self.r}]")
            terms.append((tau, _as_matrix_fn(A, self.d)))
        object.__setattr__(self, "instantaneous", inst)
        object.__setattr__(self, "discrete_terms", tuple(terms))

    @property
    def delays(self) -> tuple:
        return tuple(tau for tau, _ in self.discrete_terms)

    def check_time(self, t: float):
        lo, hi = self.time_domain
        if t < lo - 1e-9 or t > hi + 1e-9:
            raise DomainError(f"t={t} outside coefficient time domain [{lo}, {hi}]")


@dataclass(frozen=True)
class BoundCertificate:
    """Sampled upper bound for sup_t ||L(t)||.

    method is "analytic" when the bound came from constant coefficients and
    "sampled" otherwise; sampled certificates only witness the times in
    t_samples.
    """

    M: float
    t_samples: np.ndarray
    method: str
    note: str = ""


def apply(L: CoefficientSpec, t: float, seg: Segment) -> np.ndarray:
    """Value of L(t) applied to a segment; linear in the segment."""
    g = seg.grid
    if g.d != L.d or abs(g.r - L.r) > 1e-12 * max(1.0, L.r):
        raise ParameterError(
            f"grid (r={g.r}, d={g.d}) does not match coefficients (r={L.r}, d={L.d})")
    L.check_time(t)
    out = np.zeros(L.d)
    if L.instantaneous is not None:
        out += L.instantaneous(t) @ seg.values[:, -1]
    for tau, A in L.discrete_terms:
        out += A(t) @ eval_segment(seg, -tau)
    if L.kernel is not None:
        for w, theta, v in zip(g.quad_weights, g.nodes, seg.values.T):
            out += w * (np.asarray(L.kernel(t, theta), dtype=float).reshape(L.d, L.d) @ v)
    return out


def _term_norm_sum(L: CoefficientSpec, t: float, grid: Grid | None) -> float:
    total = 0.0
    if L.instantaneous is not None:
        total += float(np.abs(L.instantaneous(t)).sum(axis=1).max())
    for _, A in L.discrete_terms:
        total += float(np.abs(A(t)).sum(axis=1).max())
    if L.kernel is not None:
        if grid is None:
            raise ParameterError("kernel norm bound needs a grid for quadrature")
        acc = 0.0
        for w, theta in zip(grid.quad_weights, grid.nodes):
            Kmat = np.asarray(L.kernel(t, theta), dtype=float).reshape(L.d, L.d)
            acc += w * float(np.abs(Kmat).sum(axis=1).max())
        total += acc
    return total


def norm_bound(L: CoefficientSpec, sampling: float, t_max: float | None = None,
               grid: Grid | None = None) -> BoundCertificate:
    """Certify M >= ||L(t)|| (max-norm setup) at sampled times.

    For autonomous coefficients a single evaluation is exact for all t and
    the certificate is marked analytic.  Otherwise M is the max over the
    sampled window only, and the certificate says so.
    """
    if sampling <= 0:
        raise ParameterError("sampling step must be positive")
    lo, hi = L.time_domain
    if L.autonomous:
        ts = np.array([max(lo, 0.0)])
        M = _term_norm_sum(L, ts[0], grid)
        return BoundCertificate(M=M, t_samples=ts, method="analytic",
                                note="constant coefficients; bound holds for all t")
    if t_max is None:
        t_max = hi if np.isfinite(hi) else max(lo, 0.0) + 10.0
    ts = np.arange(max(lo, 0.0), t_max + sampling / 2, sampling)
    M = max(_term_norm_sum(L, t, grid) for t in ts)
    return BoundCertificate(M=float(M), t_samples=ts, method="sampled",
                            note="sup over sampled window only")
