"""Command-line front end.

Subcommands: integrate, dichotomy, shadow, counterexample.  Systems come
from a JSON description file or a named preset; reports are JSON (keys
sorted, deterministic up to the generated_at field) and time series are
CSV.  Exit codes: 2 schema violation, 3 numerical blow-up, 4 inconclusive
verdict, 5 refusal for lack of a dichotomy.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np
from jsonschema import Draft202012Validator

from . import counterexample as ce
from .coefficients import norm_bound
from .dichotomy import analyze_sequence, exp_bound_fit
from .evolution import build_sequence
from .integrator import BlowUpError, IvpProblem, solve
from .perron_shadow import NoDichotomyError, shadow
from .presets import PRESETS, get_preset, preset_names, system_from_doc
from .segment_space import Segment, Trajectory, extract_segment, make_grid, sup_norm

_MATRIX = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}

SYSTEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "d", "r", "terms"],
    "properties": {
        "version": {"const": "v1"},
        "name": {"type": "string"},
        "d": {"type": "integer", "minimum": 1},
        "r": {"type": "number", "minimum": 0},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["type"],
                "properties": {
                    "type": {"enum": ["instantaneous", "discrete", "kernel"]},
                    "delay": {"type": "number", "exclusiveMinimum": 0},
                    "matrix": _MATRIX,
                    "expr": {"type": "string"},
                },
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N": {"type": "integer", "minimum": 1}},
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"h_int": {"type": "number", "exclusiveMinimum": 0}},
        },
        "dichotomy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h": {"type": "number", "exclusiveMinimum": 0},
                "count": {"type": "integer", "minimum": 4},
                "m": {"type": ["integer", "null"], "minimum": 2},
                "k": {"type": ["integer", "null"], "minimum": 0},
                "gap_tol": {"type": "number", "exclusiveMinimum": 0},
                "lam_min": {"type": "number", "exclusiveMinimum": 0},
                "D_max": {"type": "number", "exclusiveMinimum": 0},
                "angle_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "counterexample": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_max": {"type": "integer", "minimum": 2}},
        },
    },
}

EXIT_SCHEMA, EXIT_BLOWUP, EXIT_INCONCLUSIVE, EXIT_REFUSAL = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code, kind, message):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _fail(code, kind, message):
    raise CliError(code, kind, message)


def load_system(ref: str) -> dict:
    """Load a system document from a file path or a preset name."""
    if os.path.exists(ref):
        try:
            with open(ref) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            _fail(EXIT_SCHEMA, "schema", f"{ref}: not valid JSON: {exc}")
    elif ref in PRESETS:
        doc = get_preset(ref)
    else:
        _fail(EXIT_SCHEMA, "schema",
              f"{ref}: no such file and not a preset (known: {', '.join(preset_names())})")
    if isinstance(doc, dict) and "preset" in doc:
        base = get_preset(doc["preset"])
        for key, val in doc.items():
            if key != "preset":
                base[key] = val
        doc = base
    errors = sorted(Draft202012Validator(SYSTEM_SCHEMA).iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        _fail(EXIT_SCHEMA, "schema", f"system description invalid at {loc}: {e.message}")
    return doc


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    for item in overrides or []:
        if "=" not in item:
            _fail(EXIT_SCHEMA, "override", f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def _report_header(doc: dict | None = None) -> dict:
    hdr = {
        "schema": "ddelab.report.v1",
        "state_norm": "max",
        "segment_norm": "sup",
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    if doc is not None:
        hdr["system"] = doc.get("name", "")
    return hdr


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _dichotomy_cfg(doc):
    cfg = dict(doc.get("dichotomy", {}))
    cfg.setdefault("h", max(doc.get("r", 1.0), 1.0))
    cfg.setdefault("count", 30)
    return cfg


def _run_pipeline(doc):
    spec, grid, density = system_from_doc(doc)
    cfg = _dichotomy_cfg(doc)
    h_int = doc.get("integrator", {}).get("h_int", 1e-3)
    seq = build_sequence(spec, cfg["h"], cfg["count"], grid, h_int)
    est, split = analyze_sequence(
        seq,
        k=cfg.get("k"),
        window_m=cfg.get("m"),
        gap_tol=cfg.get("gap_tol"),
        lam_min=cfg.get("lam_min", 1e-3),
        D_max=cfg.get("D_max", 1e6),
        angle_tol=cfg.get("angle_tol", 1e-6),
    )
    return spec, grid, seq, est, split


def cmd_integrate(args) -> int:
    doc = apply_overrides(load_system(args.system), args.override)
    spec, grid, _ = system_from_doc(doc)
    h_int = doc.get("integrator", {}).get("h_int", 1e-3)
    phi_vec = np.array([float(x) for x in args.phi.split(",")], dtype=float)
    if phi_vec.size != spec.d:
        _fail(EXIT_SCHEMA, "schema",
              f"--phi needs {spec.d} components, got {phi_vec.size}")
    phi = Segment.constant(grid, phi_vec)
    try:
        traj = solve(IvpProblem(L=spec, s=0.0, phi=phi, t_end=args.t_end, step=h_int))
    except BlowUpError as exc:
        _fail(EXIT_BLOWUP, "blowup", str(exc))
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trajectory.csv")
    traj.to_csv(csv_path)
    final = extract_segment(traj, args.t_end, grid)
    report = _report_header(doc)
    report.update({
        "t_end": args.t_end,
        "final_segment_norm": sup_norm(final),
        "breakpoints": [float(b) for b in traj.breakpoints],
        "trajectory_csv": os.path.basename(csv_path),
        "coefficient_bound": norm_bound(spec, 0.05, t_max=min(args.t_end, 50.0),
                                        grid=grid).M,
    })
    _write_json(os.path.join(args.out, "integrate.json"), report)
    print(f"trajectory written to {csv_path}")
    return 0


def _exponents_csv(path, est):
    data = np.column_stack([np.arange(1, len(est.exponents) + 1), est.exponents])
    np.savetxt(path, data, delimiter=",", header="rank,exponent", comments="")


def _envelope_csv(path, split):
    env = split.envelope or {}
    seps = env.get("separations", [])
    stable = env.get("log_sup_stable", [np.nan] * len(seps))
    unstable = env.get("log_sup_unstable", [np.nan] * len(seps))
    data = np.column_stack([seps, stable, unstable])
    np.savetxt(path, data, delimiter=",",
               header="separation,log_sup_stable,log_sup_unstable", comments="")


def cmd_dichotomy(args) -> int:
    doc = apply_overrides(load_system(args.system), args.override)
    spec, grid, seq, est, split = _run_pipeline(doc)
    os.makedirs(args.out, exist_ok=True)
    bound = exp_bound_fit(seq)
    report = _report_header(doc)
    report.update(split.to_dict())
    report.update({
        "exponents": [None if not np.isfinite(x) else float(x) for x in est.exponents],
        "gap_index": est.gap_index,
        "gap_low": None if not np.isfinite(est.gap_low) else est.gap_low,
        "gap_high": None if not np.isfinite(est.gap_high) else est.gap_high,
        "exp_bound": {"K": bound.K, "a": bound.a},
        "window": {"h": seq.h, "count": seq.count, "N": grid.N, "d": grid.d, "r": grid.r},
    })
    _write_json(os.path.join(args.out, "dichotomy.json"), report)
    _exponents_csv(os.path.join(args.out, "exponents.csv"), est)
    if split.envelope:
        _envelope_csv(os.path.join(args.out, "envelope.csv"), split)
    print(f"verdict: {split.verdict} (k={split.k})")
    if split.verdict == "inconclusive":
        _fail(EXIT_INCONCLUSIVE, "inconclusive",
              f"dichotomy verdict inconclusive: {split.witness}")
    return 0


def _damped_perturbation(rng, d, scale):
    """Smoothly ramped perturbation vanishing on the history interval."""
    freqs = rng.uniform(0.5, 2.0, size=d)
    phases = rng.uniform(0, 2 * np.pi, size=d)

    def eta(t):
        u = np.clip(t, 0.0, 1.0)
        ramp, dramp = u * u * (3 - 2 * u), 6 * u * (1 - u) * (1.0 if 0 < t < 1 else 0.0)
        val = scale * ramp * np.sin(freqs * t + phases)
        dval = scale * (dramp * np.sin(freqs * t + phases)
                        + ramp * freqs * np.cos(freqs * t + phases))
        return val, dval

    return eta


def _pseudo_from_injection(spec, grid, horizon, h_int, rng, scale):
    phi = Segment.constant(grid, np.ones(spec.d))
    base = solve(IvpProblem(L=spec, s=0.0, phi=phi, t_end=horizon, step=h_int))
    eta = _damped_perturbation(rng, spec.d, scale)
    pert = [eta(t) for t in base.ts]
    values = base.values + np.stack([p[0] for p in pert])
    derivs = base.derivs + np.stack([p[1] for p in pert])
    hist = extract_segment(base, 0.0, grid) if grid.r > 0 else None
    return Trajectory(base.ts, values, derivs, breakpoints=base.breakpoints,
                      history=hist, history_start=0.0)


def cmd_shadow(args) -> int:
    doc = apply_overrides(load_system(args.system), args.override)
    spec, grid, seq, est, split = _run_pipeline(doc)
    if split.verdict == "inconclusive":
        _fail(EXIT_INCONCLUSIVE, "inconclusive",
              f"dichotomy verdict inconclusive: {split.witness}")
    os.makedirs(args.out, exist_ok=True)
    h_int = doc.get("integrator", {}).get("h_int", 1e-3)
    horizon = seq.window_time(seq.count)

    deltas = [float(x) for x in args.delta_sweep.split(",")] if args.delta_sweep else None

    def one_run(scale):
        # fresh generator per run: sweeps scale one perturbation shape
        rng = np.random.default_rng(args.seed)
        if args.pseudo:
            data = np.loadtxt(args.pseudo, delimiter=",", skiprows=1)
            ts, xs = data[:, 0], data[:, 1:1 + spec.d]
            ds = data[:, 1 + spec.d:1 + 2 * spec.d] if data.shape[1] > 1 + spec.d else None
            y = Trajectory.from_samples(ts, xs, ds)
        else:
            y = _pseudo_from_injection(spec, grid, horizon, h_int, rng, scale)
        try:
            return shadow(spec, y, seq, split, h_int=h_int)
        except NoDichotomyError as exc:
            _fail(EXIT_REFUSAL, "no_dichotomy",
                  f"{exc} (see the dichotomy command output for the witness)")

    report = _report_header(doc)
    if deltas:
        rows = []
        for target in deltas:
            rep = one_run(target)
            rows.append((target, rep.delta, rep.shadow_distance, rep.kappa_hat))
        np.savetxt(os.path.join(args.out, "kappa_sweep.csv"),
                   np.array(rows), delimiter=",",
                   header="scale,delta,shadow_distance,kappa_hat", comments="")
        kappas = [r[3] for r in rows]
        report.update({
            "sweep": [{"scale": r[0], "delta": r[1], "shadow_distance": r[2],
                       "kappa_hat": r[3]} for r in rows],
            "kappa_hat_max": max(kappas),
            "kappa_spread": max(kappas) / max(min(kappas), 1e-300),
        })
        print(f"kappa_hat across sweep: {kappas}")
    else:
        rep = one_run(args.delta)
        report.update(rep.to_dict())
        if rep.corrected is not None:
            rep.corrected.to_csv(os.path.join(args.out, "corrected.csv"))
            report["corrected_csv"] = "corrected.csv"
        print(f"delta={rep.delta:.3e}  distance={rep.shadow_distance:.3e}  "
              f"kappa_hat={rep.kappa_hat:.3f}")
    _write_json(os.path.join(args.out, "shadow.json"), report)
    return 0


def cmd_counterexample(args) -> int:
    n_max = args.n_max
    density = ce.build_spike_density(n_max)
    os.makedirs(args.out, exist_ok=True)
    rng = np.random.default_rng(args.seed)

    integral = ce.check_integral_bound(density, t_max=float(n_max))
    shoulders = ce.check_shoulder_ratios(density, n_max)
    shoulders_ok = all(s.exceeds for s in shoulders)

    forcings = [("constant", lambda t: 1.0)]
    for j in range(3):
        a, b, w = rng.uniform(-1, 1, 2).tolist() + [rng.uniform(0.3, 1.5)]
        forcings.append((f"random-{j}",
                         lambda t, a=a, b=b, w=w: a * np.cos(w * t) + b * np.sin(w * t)))
    hyers = []
    for name, z in forcings:
        rep = ce.hyers_ulam_certificate(density, z, t_max=min(8.0, n_max - 1))
        hyers.append({"forcing": name, "sup_x": rep.sup_x, "sup_z": rep.sup_z,
                      "passed": rep.passed})
    hyers_ok = all(h["passed"] for h in hyers)

    witnesses = ce.refute_dichotomy(density, D_values=[5.0, 1e2, 1e4, 1e6],
                                    lam_values=[0.1, 1.0, 10.0])
    refute_ok = all(w.found for w in witnesses)

    doc = apply_overrides(get_preset("remark2"), args.override)
    _, _, _, est, split = _run_pipeline(doc)
    pipeline_ok = split.verdict == "no_dichotomy"

    report = _report_header()
    report.update({
        "n_max": n_max,
        "integral_bound": {"passed": integral.passed,
                           "min_margin": integral.min_margin,
                           "converged": integral.converged},
        "shoulder_ratios": [{"n": s.n, "ratio": s.ratio, "exceeds": s.exceeds}
                            for s in shoulders],
        "hyers_ulam": hyers,
        "refutation": [{"D": w.D, "lam": w.lam, "n": w.n, "ratio": w.ratio,
                        "bound": w.bound} for w in witnesses],
        "pipeline_verdict": split.verdict,
        "pipeline_witness": split.witness,
        "all_passed": bool(integral.passed and shoulders_ok and hyers_ok
                           and refute_ok and pipeline_ok),
    })
    _write_json(os.path.join(args.out, "counterexample.json"), report)
    ts = np.linspace(0.0, n_max - 1, 2000)
    np.savetxt(os.path.join(args.out, "density.csv"),
               np.column_stack([ts, density.log_v(ts)]),
               delimiter=",", header="t,log_v", comments="")
    for label, ok in [("integral_bound", integral.passed),
                      ("shoulder_ratios", shoulders_ok),
                      ("hyers_ulam", hyers_ok),
                      ("dichotomy_refutation", refute_ok),
                      ("pipeline_no_dichotomy", pipeline_ok)]:
        print(f"{label}: {'PASS' if ok else 'FAIL'}")
    return 0 if report["all_passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddelab",
                                 description="delay-equation dichotomy and shadowing toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, system=True):
        if system:
            p.add_argument("--system", required=True,
                           help="system JSON file or preset name")
        p.add_argument("--out", default="ddelab-out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path document override")

    p = sub.add_parser("integrate", help="solve an initial value problem")
    common(p)
    p.add_argument("--phi", default="1.0", help="constant initial segment, comma-separated")
    p.add_argument("--t-end", type=float, default=5.0)
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("dichotomy", help="run the dichotomy detection pipeline")
    common(p)
    p.set_defaults(func=cmd_dichotomy)

    p = sub.add_parser("shadow", help="correct a pseudo-solution")
    common(p)
    p.add_argument("--pseudo", help="pseudo-solution CSV (t, x..., optional dx...)")
    p.add_argument("--delta", type=float, default=1e-3,
                   help="perturbation scale when no pseudo file is given")
    p.add_argument("--delta-sweep", help="comma-separated perturbation scales")
    p.set_defaults(func=cmd_shadow)

    p = sub.add_parser("counterexample", help="verify the spiked-density example")
    common(p, system=False)
    p.add_argument("--n-max", type=int, default=10)
    p.set_defaults(func=cmd_counterexample)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"DDELAB_ERROR code={exc.code} kind={exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except BlowUpError as exc:
        print(f"DDELAB_ERROR code={EXIT_BLOWUP} kind=blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
