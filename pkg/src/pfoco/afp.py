"""Approximately-feasible projections computed with a linear optimization oracle.

``afp(K, y, x0, eps)`` returns a feasible ``x`` and a pulled-in point
``y_tilde`` such that ``y_tilde`` is no farther than ``y`` from any member of
``K`` and ``||x - y_tilde||^2 <= 3 eps``.  Only ``K.loo`` is used.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

MAX_OUTER = 10**3
MAX_INNER = 10**6


@dataclass(frozen=True)
class AfpResult:
    x: np.ndarray
    y_tilde: np.ndarray
    loo_calls: int
    outer_iterations: int


@dataclass(frozen=True)
class SeparationResult:
    """Output of :func:`separating_fw`.

    ``separated`` is true when the squared distance stayed above ``3 eps``;
    then the halfspace ``{z : (x - y).(z - y) >= ||x - y||^2 - eps}`` contains
    the whole set and certifies that ``y`` is far from it.
    """

    x: np.ndarray
    loo_calls: int
    gap: float
    dist_sq: float
    eps: float

    @property
    def separated(self):
        return self.dist_sq > 3 * self.eps


def separating_fw(K, x_start, y, eps, max_iter=MAX_INNER):
    """Frank-Wolfe on ``||x - y||^2 / 2`` over ``K`` with exact line search.

    Stops as soon as the duality gap ``(x - y).(x - v)`` drops to ``eps`` or
    the squared distance drops to ``3 eps``.
    """
    x = np.array(x_start, dtype=float)
    y = np.asarray(y, dtype=float)
    for i in range(1, max_iter + 1):
        d = x - y
        v = K.loo(d)
        gap = float(d @ (x - v))
        dist_sq = float(d @ d)
        if gap <= eps or dist_sq <= 3 * eps:
            return SeparationResult(x, i, gap, dist_sq, eps)
        direction = v - x
        denom = float(direction @ direction)
        if denom == 0.0:
            sigma = 0.0
        else:
            sigma = min(max(float(-d @ direction) / denom, 0.0), 1.0)
        x = x + sigma * direction
    raise NumericError(
        "separating Frank-Wolfe exceeded its iteration cap",
        iterations=max_iter, gap=gap, dist_sq=dist_sq, eps=eps,
    )


def afp(K, y1, x0, eps, callback=None, max_outer=MAX_OUTER, max_inner=MAX_INNER):
    """Approximately-feasible projection of ``y1`` onto ``K``, warm-started at ``x0``.

    Parameters
    ----------
    K : FeasibleSet
    y1 : array
        Point to project.
    x0 : array
        A member of ``K``; typically the previous output.
    eps : float
        Tolerance; the output satisfies ``||x - y_tilde||^2 <= 3 eps``.
    callback : callable, optional
        Called as ``callback(i, dist_sq, loo_calls)`` after every outer
        iteration.

    Returns
    -------
    AfpResult
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    y = np.array(y1, dtype=float)
    x_prev = np.array(x0, dtype=float)
    diff = x_prev - y
    if float(diff @ diff) <= 3 * eps:
        return AfpResult(x_prev, y, 0, 0)
    calls = 0
    for i in range(1, max_outer + 1):
        res = separating_fw(K, x_prev, y, eps, max_iter=max_inner)
        calls += res.loo_calls
        x_i = res.x
        diff = x_i - y
        dist_sq = float(diff @ diff)
        if callback is not None:
            callback(i, dist_sq, calls)
        if dist_sq > 3 * eps:
            y = y - (2.0 / 3.0) * (y - x_i)
            x_prev = x_i
        else:
            return AfpResult(x_i, y, calls, i)
    raise NumericError(
        "approximately-feasible projection exceeded its outer iteration cap",
        iterations=max_outer, dist_sq=dist_sq, eps=eps, loo_calls=calls,
    )


def loo_call_bound(R, eps, dist_sq):
    """Worst-case oracle calls of one :func:`afp` invocation.

    ``dist_sq`` is ``||y1 - x0||^2``.
    """
    if dist_sq <= 0:
        return 0.0
    return 27.0 * R**2 / eps * max(2.25 * math.log(dist_sq / eps) + 1.0, 0.0)
