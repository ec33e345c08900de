"""Named benchmark systems and construction of coefficient specs from
validated system-description documents (see cli module for the schema)."""

from __future__ import annotations

import copy

import numpy as np

from .coefficients import CoefficientSpec
from .counterexample import build_spike_density, remark2_system
from .segment_space import ParameterError, make_grid

PRESETS: dict[str, dict] = {
    # scalar delayed feedback, all characteristic roots in the left half-plane
    "delay-stable": {
        "version": "v1",
        "name": "delay-stable",
        "d": 1,
        "r": 1.0,
        "terms": [{"type": "discrete", "delay": 1.0, "matrix": [[-1.0]]}],
        "grid": {"N": 24},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 30},
    },
    # scalar delayed feedback with one positive real root
    "delay-unstable": {
        "version": "v1",
        "name": "delay-unstable",
        "d": 1,
        "r": 1.0,
        "terms": [{"type": "discrete", "delay": 1.0, "matrix": [[1.0]]}],
        "grid": {"N": 24},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 30},
    },
    # block-diagonal saddle: growing ODE component, decaying delayed component
    "saddle": {
        "version": "v1",
        "name": "saddle",
        "d": 2,
        "r": 1.0,
        "terms": [
            {"type": "instantaneous", "matrix": [[1.0, 0.0], [0.0, 0.0]]},
            {"type": "discrete", "delay": 1.0, "matrix": [[0.0, 0.0], [0.0, -1.0]]},
        ],
        "grid": {"N": 24},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 30},
    },
    # x' = 0: center direction, no exponential behavior at all
    "zero": {
        "version": "v1",
        "name": "zero",
        "d": 1,
        "r": 1.0,
        "terms": [],
        "grid": {"N": 8},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 12},
    },
    # scalar ODE without delay
    "ode-stable": {
        "version": "v1",
        "name": "ode-stable",
        "d": 1,
        "r": 0.0,
        "terms": [{"type": "instantaneous", "matrix": [[-1.0]]}],
        "grid": {"N": 1},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 12},
    },
    # two-term stable combination (linear Mackey-style feedback)
    "mackey-linear": {
        "version": "v1",
        "name": "mackey-linear",
        "d": 1,
        "r": 1.0,
        "terms": [
            {"type": "instantaneous", "matrix": [[-1.0]]},
            {"type": "discrete", "delay": 1.0, "matrix": [[0.5]]},
        ],
        "grid": {"N": 24},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 1.0, "count": 30},
    },
    # spiked-density scalar ODE: bounded solutions, Hyers-Ulam stable,
    # no exponential dichotomy.  Windows of 0.1 land boundaries on the spike
    # shoulders at n = 2 and n = 5; D_max = 5 is the claimed-constant scale
    # the verdict refutes on this horizon.
    "remark2": {
        "version": "v1",
        "name": "remark2",
        "d": 1,
        "r": 0.0,
        "terms": [{"type": "instantaneous", "expr": "remark2"}],
        "grid": {"N": 1},
        "integrator": {"h_int": 1e-3},
        "dichotomy": {"h": 0.1, "count": 90, "D_max": 5.0},
        "counterexample": {"n_max": 10},
    },
}


def preset_names() -> list[str]:
    return sorted(PRESETS)


def get_preset(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    return copy.deepcopy(PRESETS[name])


def _matrix_fn(entry, d):
    return np.asarray(entry, dtype=float).reshape(d, d)


def system_from_doc(doc: dict):
    """Build (CoefficientSpec, Grid, doc) from a validated description.

    Expression terms are resolved against the built-in registry; currently
    the only expression id is "remark2", which delegates to the
    counterexample construction (closed-form flow attached).
    """
    d, r = int(doc["d"]), float(doc["r"])
    exprs = [t for t in doc.get("terms", []) if "expr" in t]
    if exprs:
        if len(exprs) != 1 or exprs[0].get("expr") != "remark2":
            raise ParameterError("the only supported expression id is 'remark2'")
        n_max = int(doc.get("counterexample", {}).get("n_max", 10))
        spec, density = remark2_system(build_spike_density(n_max))
        grid = make_grid(spec.r, spec.d, doc.get("grid", {}).get("N", 1))
        return spec, grid, density
    inst = None
    discrete = []
    kernel = None
    for term in doc.get("terms", []):
        kind = term["type"]
        if kind == "instantaneous":
            if inst is not None:
                raise ParameterError("only one instantaneous term is supported")
            inst = _matrix_fn(term["matrix"], d)
        elif kind == "discrete":
            discrete.append((float(term["delay"]), _matrix_fn(term["matrix"], d)))
        elif kind == "kernel":
            K = _matrix_fn(term["matrix"], d)
            kernel = lambda t, theta, _K=K: _K
        else:
            raise ParameterError(f"unknown term type {kind!r}")
    spec = CoefficientSpec(r=r, d=d, instantaneous=inst,
                           discrete_terms=tuple(discrete), kernel=kernel,
                           autonomous=True, name=doc.get("name", ""))
    grid = make_grid(r, d, doc.get("grid", {}).get("N", 16))
    return spec, grid, None
