"""Independent ground truth for autonomous systems.

Characteristic roots of det(lambda I - A0 - sum_i A_i e^{-lambda tau_i}) = 0
located by the argument principle on a rectangle plus Newton refinement, and
the closed-form scalar flow x(t) = (v(s)/v(t)) x(s) evaluated in log domain.
Only constant-coefficient equations are supported here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BoxBoundaryError(ValueError):
    """A root sits (numerically) on the search contour; adjust the box."""


@dataclass(frozen=True)
class RootSet:
    """Characteristic roots found inside a search rectangle."""

    roots: tuple
    box: tuple  # (re_min, re_max, im_min, im_max)
    certified_count: int


def _char_funcs(A0, terms, d):
    A0 = np.asarray(A0, dtype=float).reshape(d, d)
    terms = [(float(tau), np.asarray(A, dtype=float).reshape(d, d)) for tau, A in terms]

    def delta(lam):
        M = lam * np.eye(d, dtype=complex) - A0
        for tau, A in terms:
            M = M - A * np.exp(-lam * tau)
        return M

    def delta_prime(lam):
        M = np.eye(d, dtype=complex)
        for tau, A in terms:
            M = M + tau * A * np.exp(-lam * tau)
        return M

    def char(lam):
        return np.linalg.det(delta(lam))

    def newton_step(lam):
        # det'/det = tr(Delta^{-1} Delta'); stable near simple roots
        tr = np.trace(np.linalg.solve(delta(lam), delta_prime(lam)))
        return 1.0 / tr

    return char, newton_step


def _winding_number(char, box, contour_mesh):
    re0, re1, im0, im1 = box
    n = contour_mesh
    side = lambda a, b: a + (b - a) * np.linspace(0.0, 1.0, n, endpoint=False)
    pts = np.concatenate([
        side(re0 + 1j * im0, re1 + 1j * im0),
        side(re1 + 1j * im0, re1 + 1j * im1),
        side(re1 + 1j * im1, re0 + 1j * im1),
        side(re0 + 1j * im1, re0 + 1j * im0),
    ])
    vals = np.array([char(p) for p in pts])
    scale = np.abs(vals).max()
    if np.abs(vals).min() < 1e-12 * max(scale, 1.0):
        raise BoxBoundaryError("characteristic function vanishes on the contour; move the box")
    angles = np.angle(vals)
    incr = np.diff(np.concatenate([angles, angles[:1]]))
    incr = (incr + np.pi) % (2 * np.pi) - np.pi
    return int(round(incr.sum() / (2 * np.pi)))


def char_roots(A0, terms, r, box, mesh: int = 25, contour_mesh: int = 2000,
               newton_tol: float = 1e-12, max_newton: int = 50) -> RootSet:
    """Locate characteristic roots in a rectangle of the complex plane.

    terms is a list of (tau, A) pairs with tau in (0, r].  Seeds on a
    mesh x mesh grid are refined by Newton iteration; converged roots are
    deduplicated at 1e-8 and cross-checked against the winding number of the
    contour.
    """
    d = np.asarray(A0, dtype=float).reshape(-1).size
    d = int(round(np.sqrt(d)))
    char, newton_step = _char_funcs(A0, terms, d)
    re0, re1, im0, im1 = box
    count = _winding_number(char, box, contour_mesh)
    seeds_re = np.linspace(re0, re1, mesh)
    seeds_im = np.linspace(im0, im1, mesh)
    roots = []
    for sr in seeds_re:
        for si in seeds_im:
            lam = complex(sr, si)
            ok = False
            with np.errstate(all="ignore"):
                for _ in range(max_newton):
                    try:
                        step = newton_step(lam)
                    except np.linalg.LinAlgError:
                        break
                    lam = lam - step
                    if not np.isfinite(lam):
                        break
                    if abs(step) < newton_tol:
                        ok = True
                        break
            if not ok:
                continue
            if not (re0 - 1e-9 <= lam.real <= re1 + 1e-9
                    and im0 - 1e-9 <= lam.imag <= im1 + 1e-9):
                continue
            if abs(char(lam)) > 1e-10:
                continue
            if all(abs(lam - rt) > 1e-8 for rt in roots):
                roots.append(lam)
    roots.sort(key=lambda z: (-z.real, z.imag))
    return RootSet(roots=tuple(roots), box=tuple(box), certified_count=count)


def scalar_flow(log_v, s: float, t: float) -> float:
    """v(s)/v(t) computed as exp(log v(s) - log v(t))."""
    return float(np.exp(log_v(s) - log_v(t)))
