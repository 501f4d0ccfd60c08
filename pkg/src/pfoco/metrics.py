"""Regret, cumulative positive violation, and log-log exponent fits.

Intervals ``(s, e)`` are 1-based and inclusive, matching round numbering.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError


def _check_interval(n, s, e):
    if not 1 <= s <= e <= n:
        raise InputError(f"interval ({s}, {e}) outside [1, {n}]")


def regret(trace, problem, s=1, e=None):
    """Sum over ``t`` in ``[s, e]`` of ``f_t(played_t) - f_t(x*)``.

    ``x*`` is the planted comparator.  It is feasible for every sub-interval,
    so this upper-bounds regret against the best point of the interval.
    """
    if problem.comparator is None:
        raise ConfigurationError("regret needs a planted comparator")
    e = len(trace) if e is None else e
    _check_interval(len(trace), s, e)
    ref = problem.comparator_losses()
    return math.fsum(trace.loss[s - 1:e]) - math.fsum(ref[s - 1:e])


def violation(trace, s=1, e=None):
    """Sum over ``t`` in ``[s, e]`` of ``g_t^+(played_t)``."""
    e = len(trace) if e is None else e
    _check_interval(len(trace), s, e)
    return math.fsum(trace.gplus[s - 1:e])


def perturbation_correction(problem, s=1, e=None):
    """How far the planted comparator can be from the interval's best point.

    For quadratic losses ``q ||x - x*||^2 + zeta_t . x`` the unconstrained
    interval minimizer beats ``x*`` by ``||sum zeta||^2 / (4 q L)``, with ``L``
    the interval length.  Zero when the perturbations cancel on the interval.
    """
    e = problem.T if e is None else e
    _check_interval(problem.T, s, e)
    if problem.quad <= 0:
        return math.nan
    S = problem.linear[s - 1:e].sum(axis=0)
    return float(S @ S) / (4.0 * problem.quad * (e - s + 1))


def fit_exponent(points):
    """Least-squares slope of ``log(value)`` against ``log(T)``.

    ``points`` is a sequence of ``(T, value)`` pairs with strictly increasing
    ``T`` and positive values; at least three are required.
    """
    points = list(points)
    if len(points) < 3:
        raise InputError("fit_exponent needs at least three points")
    Ts = np.array([p[0] for p in points], dtype=float)
    vals = np.array([p[1] for p in points], dtype=float)
    if np.any(np.diff(Ts) <= 0):
        raise InputError("horizons must be strictly increasing")
    if np.any(~(vals > 0)):
        raise InputError("fit_exponent needs positive values")
    slope, _ = np.polyfit(np.log(Ts), np.log(vals), 1)
    return float(slope)


@dataclass
class IntervalMetrics:
    s: int
    e: int
    regret: float
    violation: float
    correction: float


@dataclass
class RunMetrics:
    regret: float
    violation: float
    loo_calls: int
    intervals: list = field(default_factory=list)


def summarize(trace, problem, intervals=()):
    """Whole-run metrics plus one :class:`IntervalMetrics` per ``(s, e)``."""
    has_ref = problem.comparator is not None
    rows = []
    for s, e in intervals:
        rows.append(IntervalMetrics(
            s, e,
            regret(trace, problem, s, e) if has_ref else math.nan,
            violation(trace, s, e),
            perturbation_correction(problem, s, e),
        ))
    return RunMetrics(
        regret(trace, problem) if has_ref else math.nan,
        violation(trace),
        trace.total_loo_calls,
        rows,
    )
