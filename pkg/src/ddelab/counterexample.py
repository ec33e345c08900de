"""Scalar system with bounded solutions, unit-constant Hyers-Ulam stability,
and no exponential dichotomy.

The density v(t) = e^t + spikes drives the coefficient a(t) = -v'(t)/v(t) of
x' = a(t) x, whose flow is x(t) = (v(s)/v(t)) x(s).  Spike n sits at
c_n = n - 1/n with height (n+1) e^n and area 2^{-n}, so that

  * the running integral of v never exceeds v (the total spike area 1/2 fits
    inside the slack of int_0^t e^s ds = e^t - 1),
  * v(c_n)/v(n) = e^{-1/n} + (n+1) > n, defeating every candidate uniform
    exponential bound as n grows,
  * v -> infinity keeps all solutions bounded.

Spike widths shrink like 2^{-n} e^{-n}, so coefficient magnitudes at the
spike shoulders grow without bound: the uniform-boundedness hypothesis on
the coefficients fails, and with it the route from bounded growth to a
dichotomy.  All v arithmetic runs in log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .segment_space import DomainError, ParameterError

_BUMP_MASS = 16.0 / 15.0  # integral of (1 - u^2)^2 over [-1, 1]


def _bump(u):
    return np.where(np.abs(u) < 1.0, (1.0 - u**2) ** 2, 0.0)


def _bump_deriv(u):
    return np.where(np.abs(u) < 1.0, -4.0 * u * (1.0 - u**2), 0.0)


@dataclass(frozen=True)
class SpikeDensity:
    """Materialized spike data (n = 2..n_max) over base density e^t."""

    n_max: int
    include_spikes: bool
    centers: np.ndarray
    log_heights: np.ndarray
    widths: np.ndarray
    areas: np.ndarray

    @property
    def t_valid(self) -> float:
        # spike n_max+1 only touches (n_max + 1 - 3/(2n), ...), so evaluation
        # is exact up to t = n_max
        return float(self.n_max)

    @staticmethod
    def alpha(n) -> float:
        return 1.0 / np.asarray(n, dtype=float)

    def _check_domain(self, t):
        if np.any(t < -1e-12) or np.any(t > self.t_valid + 1e-12):
            raise DomainError(f"density evaluated outside [0, {self.t_valid}]")

    def _active_spike(self, t):
        """Index (into the materialized arrays) of the spike covering t, or -1."""
        t = np.asarray(t, dtype=float)
        n = np.floor(t).astype(int) + 1  # spike n has support inside (n-1, n)
        idx = n - 2
        ok = (idx >= 0) & (idx < len(self.centers))
        safe = np.clip(idx, 0, max(len(self.centers) - 1, 0))
        if len(self.centers):
            inside = ok & (np.abs(t - self.centers[safe]) < self.widths[safe])
        else:
            inside = np.zeros_like(ok)
        return np.where(inside, safe, -1)

    def log_v(self, t):
        """log v(t); scalar or array argument."""
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        out = t.astype(float).copy()
        if self.include_spikes and len(self.centers):
            idx = self._active_spike(t)
            hit = idx >= 0
            if np.any(hit):
                i = idx[hit]
                u = (t[hit] - self.centers[i]) / self.widths[i]
                with np.errstate(divide="ignore"):
                    log_spike = self.log_heights[i] + np.log(_bump(u))
                out[hit] = np.logaddexp(t[hit], log_spike)
        return out if out.ndim else float(out)

    def v(self, t):
        return np.exp(self.log_v(t))

    def a(self, t):
        """Coefficient a(t) = -v'(t)/v(t), stable against the e^t scale."""
        t = np.asarray(t, dtype=float)
        self._check_domain(t)
        num = np.ones_like(t)
        den = np.ones_like(t)
        if self.include_spikes and len(self.centers):
            idx = self._active_spike(t)
            hit = idx >= 0
            if np.any(hit):
                i = idx[hit]
                u = (t[hit] - self.centers[i]) / self.widths[i]
                scale = np.exp(self.log_heights[i] - t[hit])
                num[hit] += scale * _bump_deriv(u) / self.widths[i]
                den[hit] += scale * _bump(u)
        out = -num / den
        return out if out.ndim else float(out)

    def shoulder_ratio(self, n: int) -> float:
        """v(n - alpha_n)/v(n) from the construction, valid for every n >= 2."""
        if n < 2:
            raise ParameterError("shoulder ratios start at n = 2")
        base = math.exp(-1.0 / n)
        if not self.include_spikes:
            return base
        if n - 2 < len(self.centers):
            return base + math.exp(self.log_heights[n - 2] - n)
        return base + (n + 1.0)  # height rule (n+1) e^n continues beyond n_max

    def spike_records(self):
        return [
            {"n": int(n), "center": float(c), "log_height": float(lh),
             "width": float(w), "area": float(a)}
            for n, c, lh, w, a in zip(
                range(2, self.n_max + 1), self.centers, self.log_heights,
                self.widths, self.areas)
        ]


def build_spike_density(n_max: int = 10, area_fn=None,
                        include_spikes: bool = True) -> SpikeDensity:
    """Construct the spiked density with spikes for n = 2..n_max.

    area_fn overrides the per-spike area 2^{-n} (used by negative controls);
    heights are always (n+1) e^n so the shoulder ratios are area-independent.
    Supports must stay pairwise disjoint inside (n - 3/(2n), n - 1/(2n)).
    """
    if n_max < 2:
        raise ParameterError("n_max must be at least 2")
    if n_max > 300:
        raise ParameterError("spike widths underflow beyond n_max = 300")
    ns = np.arange(2, n_max + 1)
    centers = ns - 1.0 / ns
    log_heights = ns + np.log(ns + 1.0)
    if area_fn is None:
        areas = np.power(2.0, -ns.astype(float))
    else:
        areas = np.array([float(area_fn(int(n))) for n in ns])
    if np.any(areas < 0):
        raise ParameterError("spike areas must be nonnegative")
    widths = areas / _BUMP_MASS * np.exp(-log_heights)
    if include_spikes:
        half_alpha = 1.0 / (2.0 * ns)
        if np.any(widths > half_alpha):
            bad = ns[widths > half_alpha][0]
            raise ParameterError(f"spike {bad} leaks outside its allotted interval")
    return SpikeDensity(n_max=int(n_max), include_spikes=include_spikes,
                        centers=centers, log_heights=log_heights,
                        widths=widths, areas=areas)


def _logsumexp(vals):
    vals = np.asarray(vals, dtype=float)
    m = vals.max()
    if not np.isfinite(m):
        return m
    return float(m + np.log(np.sum(np.exp(vals - m))))


def _signed_log_add(la, sa, lb, sb):
    if lb == -np.inf:
        return la, sa
    if la == -np.inf:
        return lb, sb
    if sa == sb:
        return np.logaddexp(la, lb), sa
    if la == lb:
        return -np.inf, 1.0
    hi, lo = (la, lb) if la > lb else (lb, la)
    sign = sa if la > lb else sb
    return hi + np.log1p(-np.exp(lo - hi)), sign


def _panel_edges(v: SpikeDensity, t_max: float, base_panel: float, extra=()):
    edges = set(np.arange(0.0, t_max + base_panel / 2, base_panel))
    edges.add(float(t_max))
    if v.include_spikes:
        for c, w in zip(v.centers, v.widths):
            for e in (c - w, c + w):
                if 0.0 < e < t_max:
                    edges.add(float(e))
    for e in extra:
        if 0.0 <= e <= t_max:
            edges.add(float(e))
    return np.array(sorted(edges))


def _gauss_nodes(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@dataclass(frozen=True)
class IntegralCheckReport:
    """Outcome of checking int_0^t v <= v(t) over a mesh of times."""

    passed: bool
    t_checked: np.ndarray
    margins: np.ndarray
    min_margin: float
    converged: bool
    rounds: int


def check_integral_bound(v: SpikeDensity, t_max: float,
                         quad_step: float = 0.25,
                         max_rounds: int = 5) -> IntegralCheckReport:
    """Log-domain quadrature check of the running-integral bound.

    Panels are densified at the spike supports; Gauss panels are refined
    until the total log-integral stabilizes.  The margin at time t is
    1 - (int_0^t v)/v(t).
    """
    if t_max > v.t_valid + 1e-12:
        raise ParameterError(f"t_max must not exceed {v.t_valid}")
    order, step = 12, quad_step
    prev_total = None
    converged = False
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        edges = _panel_edges(v, t_max, step)
        gx, gw = _gauss_nodes(order)
        panel_logs = np.empty(len(edges) - 1)
        for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            mid, half = (a + b) / 2, (b - a) / 2
            panel_logs[i] = _logsumexp(np.log(gw * half) + v.log_v(mid + half * gx))
        cum = np.array([-np.inf] + [None] * (len(edges) - 1), dtype=float)
        acc = -np.inf
        for i, pl in enumerate(panel_logs):
            acc = np.logaddexp(acc, pl)
            cum[i + 1] = acc
        total = acc
        if prev_total is not None and abs(total - prev_total) < 1e-11:
            converged = True
            break
        prev_total = total
        order, step = order * 2, step / 2
    margins = 1.0 - np.exp(cum - v.log_v(edges))
    # t = 0 carries an empty integral; margin there is exactly 1
    margins[0] = 1.0
    passed = bool(np.all(margins >= 0.0))
    return IntegralCheckReport(passed=passed, t_checked=edges, margins=margins,
                               min_margin=float(margins.min()),
                               converged=converged, rounds=rounds)


@dataclass(frozen=True)
class ShoulderWitness:
    n: int
    ratio: float
    exceeds: bool


def check_shoulder_ratios(v: SpikeDensity, n_max: int) -> list[ShoulderWitness]:
    """Exact-formula ratios v(n - alpha_n)/v(n) for n = 2..n_max."""
    out = []
    for n in range(2, n_max + 1):
        r = v.shoulder_ratio(n)
        out.append(ShoulderWitness(n=n, ratio=r, exceeds=r > n))
    return out


@dataclass(frozen=True)
class HyersUlamReport:
    """Closed-form bounded solution x(t) = int_0^t (v(s)/v(t)) z(s) ds."""

    sup_x: float
    sup_z: float
    passed: bool
    t_mesh: np.ndarray
    x_values: np.ndarray


def hyers_ulam_certificate(v: SpikeDensity, z, t_max: float,
                           mesh_per_unit: int = 20,
                           order: int = 20) -> HyersUlamReport:
    """Certify sup|x| <= sup|z| for the forced equation's bounded solution.

    The weighted integral int v z accumulates in signed log domain; the
    check mesh includes the spike edges.
    """
    if t_max > v.t_valid + 1e-12:
        raise ParameterError(f"t_max must not exceed {v.t_valid}")
    mesh = np.linspace(0.0, t_max, int(mesh_per_unit * t_max) + 1)
    edges = _panel_edges(v, t_max, 1.0 / mesh_per_unit, extra=mesh)
    gx, gw = _gauss_nodes(order)
    log_acc, sign_acc = -np.inf, 1.0
    xs = np.empty(len(edges))
    xs[0] = 0.0
    sup_z = 0.0
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        mid, half = (a + b) / 2, (b - a) / 2
        pts = mid + half * gx
        zvals = np.array([float(np.asarray(z(t)).reshape(-1)[0]) for t in pts])
        sup_z = max(sup_z, float(np.abs(zvals).max()))
        with np.errstate(divide="ignore"):
            logs = np.log(gw * half) + v.log_v(pts) + np.log(np.abs(zvals))
        signs = np.sign(zvals)
        for lg, sg in zip(logs, signs):
            if lg > -np.inf and sg != 0:
                log_acc, sign_acc = _signed_log_add(log_acc, sign_acc, lg, sg)
        xs[i + 1] = sign_acc * np.exp(log_acc - v.log_v(b))
    sup_x = float(np.abs(xs).max())
    passed = sup_x <= sup_z * (1 + 1e-9) or sup_z == 0.0
    return HyersUlamReport(sup_x=sup_x, sup_z=sup_z, passed=passed,
                           t_mesh=edges, x_values=xs)


@dataclass(frozen=True)
class RefutationWitness:
    D: float
    lam: float
    n: int | None
    ratio: float | None
    bound: float | None

    @property
    def found(self) -> bool:
        return self.n is not None


def refute_dichotomy(v: SpikeDensity, D_values, lam_values,
                     n_cap: int | None = None) -> list[RefutationWitness]:
    """For each candidate (D, lambda), the smallest n whose shoulder ratio
    beats D e^{-lambda alpha_n}.

    The ratio exceeds n by construction, so the witness appears no later
    than n = ceil(D) + 1; the scan is capped there unless overridden.
    """
    out = []
    for D in D_values:
        for lam in lam_values:
            cap = n_cap if n_cap is not None else int(np.ceil(D)) + 3
            found = None
            chunk = 200_000
            lo = 2
            while lo <= cap and found is None:
                hi = min(lo + chunk - 1, cap)
                ns = np.arange(lo, hi + 1, dtype=float)
                if v.include_spikes:
                    idx = (ns - 2).astype(int)
                    mat = idx < len(v.centers)
                    safe = np.clip(idx, 0, max(len(v.centers) - 1, 0))
                    spike_part = np.where(mat, np.exp(v.log_heights[safe] - ns), ns + 1.0)
                    ratios = np.exp(-1.0 / ns) + spike_part
                else:
                    ratios = np.exp(-1.0 / ns)
                bounds = D * np.exp(-lam / ns)
                viol = np.nonzero(ratios > bounds)[0]
                if viol.size:
                    j = int(viol[0])
                    found = (int(ns[j]), float(ratios[j]), float(bounds[j]))
                lo = hi + 1
            if found is None:
                out.append(RefutationWitness(D=float(D), lam=float(lam),
                                             n=None, ratio=None, bound=None))
            else:
                out.append(RefutationWitness(D=float(D), lam=float(lam),
                                             n=found[0], ratio=found[1],
                                             bound=found[2]))
    return out


def remark2_system(v: SpikeDensity | None = None, n_max: int = 10,
                   hint_min_width: float = 1e-9):
    """CoefficientSpec of x' = a(t) x driven by the spiked density.

    Attaches the exact closed-form flow (v(s)/v(t), computed in log domain)
    so that operator assembly does not depend on resolving the spikes, and
    mesh hints so direct integration resolves every spike wide enough for
    floating-point time steps.
    """
    from .coefficients import CoefficientSpec

    if v is None:
        v = build_spike_density(n_max)

    def a_mat(t):
        return np.array([[v.a(float(t))]])

    def flow(s, t):
        return np.array([[np.exp(v.log_v(float(s)) - v.log_v(float(t)))]])

    hints = tuple(
        (c - 1.25 * w, c + 1.25 * w, w / 80.0)
        for c, w in zip(v.centers, v.widths)
        if v.include_spikes and w >= hint_min_width
    )
    spec = CoefficientSpec(r=0.0, d=1, instantaneous=a_mat,
                           time_domain=(0.0, v.t_valid), autonomous=False,
                           exact_flow=flow, mesh_hints=hints, name="remark2")
    return spec, v
