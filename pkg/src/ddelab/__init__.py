"""Numerical toolkit for nonautonomous linear delay differential equations.

Builds discretized evolution operators on segment space, detects or refutes
exponential dichotomies, constructs bounded solutions of forced equations
through dichotomy Green's sums (and with them shadows pseudo-solutions), and
ships a scalar counterexample showing that bounded growth without uniformly
bounded coefficients need not come with a dichotomy.

All reported operator norms and constants use the sup-norm on segments and
the max-norm on R^d.
"""

from .segment_space import (
    Grid,
    Segment,
    Trajectory,
    make_grid,
    eval_segment,
    sup_norm,
    extract_segment,
)
from .coefficients import CoefficientSpec, BoundCertificate, apply, norm_bound
from .integrator import IvpProblem, DefectReport, solve, defect, BlowUpError
from .evolution import (
    EvolutionMatrix,
    TransitionSequence,
    build_evolution,
    compose,
    op_norm,
    singular_values,
    build_sequence,
)
from .dichotomy import (
    ExponentEstimate,
    DichotomySplit,
    ExponentialBound,
    lyapunov_exponents,
    select_unstable_dim,
    default_window,
    estimate_split,
    fit_constants,
    commutation_residual,
    exp_bound_fit,
    analyze_sequence,
)
from .perron_shadow import (
    WindowForcing,
    PerronSolution,
    ShadowReport,
    NoDichotomyError,
    window_increments,
    greens_sum,
    shadow,
)
from .oracle import RootSet, char_roots, scalar_flow
from .counterexample import (
    SpikeDensity,
    build_spike_density,
    check_integral_bound,
    check_shoulder_ratios,
    hyers_ulam_certificate,
    refute_dichotomy,
    remark2_system,
)

__version__ = "0.1.0"
