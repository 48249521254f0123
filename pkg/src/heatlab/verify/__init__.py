"""Empirical checks of the kernel, Harnack, boundary and doubling estimates.

Each check returns an :class:`EstimateReport`.  :func:`run_estimate` looks
checks up by name for the command line.
"""
from __future__ import annotations

from ..report import EstimateReport, merge_reports
from .boundary import (
    Geometry,
    boundary_behavior,
    caloric_lower,
    carleson,
    comparability,
    decay,
    exit_split,
    maximum_principle_check,
    shift_monotone,
)
from .common import N_RANDOM, r_min
from .doubling import adjoint_doubling, doubling_suite, green_doubling, heat_mass, volume_doubling
from .escape import chernoff_bound, mass_escape, tail_masses
from .gaussian import chaining, concentration, envelope_fit, gaussian_envelope, local_clt, on_diagonal
from .harnack import (
    adjoint_harnack,
    backward_harnack,
    boundary_harnack,
    harnack_ratio,
    parabolic_harnack,
    scale_report,
)

NEEDS_M = {"adjoint_harnack", "volume_doubling", "gaussian_envelope", "envelope_fit", "on_diagonal", "chaining",
           "doubling"}


def _harnack(env, M=None, kind="parabolic", **p):
    if kind == "adjoint":
        p["M"] = M
    return harnack_ratio(env, kind, **p)


def _harnack_scales(env, M=None, kind="parabolic", radii=(8, 16, 32), **p):
    if kind == "adjoint":
        p["M"] = M
    return scale_report(env, kind, radii, **p)


ESTIMATES = {
    "mass_escape": lambda env, M=None, **p: mass_escape(env, **p),
    "harnack": _harnack,
    "harnack_scales": _harnack_scales,
    "boundary": lambda env, M=None, kind="carleson", **p: boundary_behavior(env, kind, M, **p),
    "maximum_principle": lambda env, M=None, **p: maximum_principle_check(env, **p),
    "local_clt": lambda env, M=None, **p: local_clt(env, **p),
    "envelope_fit": lambda env, M, **p: envelope_fit(env, M, **p),
    "concentration": lambda env, M=None, **p: concentration(env, **p),
    "on_diagonal": lambda env, M, **p: on_diagonal(env, M, **p),
    "chaining": lambda env, M, **p: chaining(env, M, **p),
    "gaussian_envelope": lambda env, M, **p: gaussian_envelope(env, M, **p),
    "volume_doubling": lambda env, M, **p: volume_doubling(env, M, **p),
    "adjoint_doubling": lambda env, M=None, **p: adjoint_doubling(env, M, **p),
    "green_doubling": lambda env, M=None, **p: green_doubling(env, **p),
    "heat_mass": lambda env, M=None, **p: heat_mass(env, **p),
    "doubling": lambda env, M, **p: doubling_suite(env, M, **p),
}


def run_estimate(name: str, env, M=None, **params) -> list[EstimateReport]:
    """Run a named check; always returns a list of reports."""
    if name not in ESTIMATES:
        raise KeyError(f"unknown estimate {name!r}; known: {', '.join(sorted(ESTIMATES))}")
    if name in NEEDS_M and M is None:
        raise ValueError(f"estimate {name!r} needs an adjoint solution")
    out = ESTIMATES[name](env, M, **params)
    return out if isinstance(out, list) else [out]


__all__ = [
    "EstimateReport", "merge_reports", "ESTIMATES", "NEEDS_M", "run_estimate", "N_RANDOM", "r_min", "Geometry",
    "boundary_behavior", "caloric_lower", "carleson", "comparability", "decay", "exit_split",
    "maximum_principle_check", "shift_monotone", "adjoint_doubling", "doubling_suite", "green_doubling",
    "heat_mass", "volume_doubling", "chernoff_bound", "mass_escape", "tail_masses", "chaining", "concentration",
    "envelope_fit", "gaussian_envelope", "local_clt", "on_diagonal", "adjoint_harnack", "backward_harnack",
    "boundary_harnack", "harnack_ratio", "parabolic_harnack", "scale_report",
]
