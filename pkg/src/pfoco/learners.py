"""Blocked projection-free online learners with soft time-varying constraints.

Three learners share the same skeleton: rounds are grouped in blocks of ``K``;
one point is held for a whole block; at the block end an update over the
enclosing ball is followed by an approximately-feasible projection back to
the feasible set (the only place the set is touched, and only through its
linear optimization oracle).

* :func:`run_dpp` -- drift-plus-penalty: minimizes a strongly convex penalty
  objective each block.  Interval (adaptive) guarantees.
* :func:`run_primal_dual` -- first-order primal-dual on a dual-regularized
  Lagrangian.
* :func:`run_bandit` -- the primal-dual learner with one-point gradient
  estimates from function values only, over a shrunk copy of the set.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .afp import afp
from .errors import ConfigurationError, InputError, NumericError
from .geometry import project_ball, shrink
from .problems import RNG_NAME, make_rng

ALGORITHMS = ("dpp", "primal-dual", "bandit")
SCHEDULE_FIELDS = ("K", "eps", "delta", "alpha", "eta", "mu")

# ---------------------------------------------------------------------------
# parameter schedules


def block_size(T):
    """Largest power of two that divides ``T`` and is at most ``sqrt(T)``."""
    if T < 1:
        raise InputError("horizon must be positive")
    K = 1
    while (2 * K) ** 2 <= T and T % (2 * K) == 0:
        K *= 2
    return K


@dataclass(frozen=True)
class ParameterSchedule:
    """Learner parameters for a horizon ``T``.

    Fields a learner does not use are ``None``.  ``c`` is the constant from
    the violation analysis of the drift-plus-penalty learner; it is carried for
    diagnostics only.
    """

    T: int
    K: int
    eps: float
    delta: float
    alpha: float = None
    eta: float = None
    mu: float = None
    c: float = None

    def __post_init__(self):
        if self.T % self.K:
            raise ConfigurationError(f"K={self.K} must divide T={self.T}")
        for name in SCHEDULE_FIELDS[1:]:
            val = getattr(self, name)
            if val is not None and not val >= 0:
                raise ConfigurationError(f"schedule field {name} must be nonnegative, got {val}")

    @property
    def n_blocks(self):
        return self.T // self.K

    def as_dict(self):
        return {k: getattr(self, k) for k in ("T", "K", "eps", "delta", "alpha", "eta", "mu", "c")}


def _apply(sched, overrides, scales):
    overrides = dict(overrides or {})
    scales = dict(scales or {})
    for key in list(overrides) + list(scales):
        if key not in SCHEDULE_FIELDS:
            raise ConfigurationError(f"unknown schedule field {key!r}")
    changes = {}
    for key, factor in scales.items():
        if key == "K":
            raise ConfigurationError("K cannot be scaled; override it instead")
        base = getattr(sched, key)
        if base is None:
            raise ConfigurationError(f"{key} is not used by this learner")
        changes[key] = base * factor
    changes.update(overrides)
    if "K" in changes:
        changes["K"] = int(changes["K"])
    return replace(sched, **changes)


def dpp_schedule(T, R, G_f, G_g, overrides=None, scales=None):
    """delta = sqrt(T), K ~ sqrt(T), alpha = (G_f/R) T^{1/4}, eps = 61 R^2 T^{-1/2} log T."""
    sched = ParameterSchedule(
        T=T, K=block_size(T), eps=61.0 * R**2 * T**-0.5 * math.log(T), delta=math.sqrt(T),
        alpha=G_f / R * T**0.25, c=G_g / (12.0 * R) * T**0.125,
    )
    return _apply(sched, overrides, scales)


def primal_dual_schedule(T, R, G_f, G_g, overrides=None, scales=None):
    """delta = 32 (G_g^2 + G_g R) sqrt(T log T), eta = T^{-3/4}, same K and eps."""
    sched = ParameterSchedule(
        T=T, K=block_size(T), eps=61.0 * R**2 * T**-0.5 * math.log(T),
        delta=32.0 * (G_g**2 + G_g * R) * math.sqrt(T) * math.sqrt(math.log(T)),
        eta=T**-0.75,
    )
    return _apply(sched, overrides, scales)


def bandit_schedule(T, n, R, r, G_f, G_g, M_f, M_g, overrides=None, scales=None):
    """Bandit defaults; ``scales={"delta": s}`` is the usual desk-scale knob."""
    G = max(G_f, G_g, M_f, M_g)
    dim_factor = max(n / r, n / math.sqrt(r), math.sqrt(n), n / (math.sqrt(r) * R))
    sched = ParameterSchedule(
        T=T, K=block_size(T), eps=61.0 * R**2 * T**-0.5 * math.log(T),
        delta=24.0 * math.sqrt(183.0) * G**2 * dim_factor * math.sqrt(T) * math.sqrt(math.log(T)),
        eta=R / G * T**-0.75, mu=math.sqrt(n * r) * T**-0.25,
    )
    return _apply(sched, overrides, scales)


def default_schedule(algorithm, problem, T=None, overrides=None, scales=None):
    """Theorem-default schedule for ``problem`` with optional overrides/scales."""
    T = problem.T if T is None else T
    K = problem.set
    if algorithm == "dpp":
        return dpp_schedule(T, K.outer_radius, problem.G_f, problem.G_g, overrides, scales)
    if algorithm == "primal-dual":
        return primal_dual_schedule(T, K.outer_radius, problem.G_f, problem.G_g, overrides, scales)
    if algorithm == "bandit":
        if K.inner_radius is None:
            raise ConfigurationError(f"bandit learner needs a set with an inner radius, got {K.kind}")
        return bandit_schedule(
            T, K.dim, K.outer_radius, K.inner_radius,
            problem.G_f, problem.G_g, problem.M_f, problem.M_g, overrides, scales,
        )
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")


def bandit_delta_condition(schedule, problem):
    """Whether delta dominates the terms the bandit analysis needs it to.

    The analysis only claims this for "T sufficiently large"; the harness
    reports the answer and never asserts it.
    """
    s, K = schedule, problem.set
    n, r = K.dim, K.inner_radius
    root = math.sqrt(3 * s.eps)
    terms = (
        n**2 * problem.M_g**2 / s.mu**2,
        s.K * problem.G_g**2,
        s.K * s.delta**2 * s.eta**2,
        root * n * problem.M_g / (s.eta * s.mu * math.sqrt(s.K)),
        problem.G_g * (root + s.mu) / s.eta,
        s.mu * problem.M_g / (r * s.eta),
    )
    return s.delta >= 12.0 * max(terms)


# ---------------------------------------------------------------------------
# traces


@dataclass
class LearnerTrace:
    """Per-round record of a run.

    ``loo_calls[t]`` is the cumulative number of oracle calls at the end of
    round ``t``; the block-end update is charged to the last round of its
    block.  ``inner_iterations`` and ``y_shift`` are per block.
    """

    algorithm: str
    played: np.ndarray
    block: np.ndarray
    loss: np.ndarray
    gplus: np.ndarray
    lam: np.ndarray
    loo_calls: np.ndarray
    inner_iterations: np.ndarray
    y_shift: np.ndarray
    schedule: ParameterSchedule
    rng: str = RNG_NAME
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.loss.shape[0]

    @property
    def total_loo_calls(self):
        return int(self.loo_calls[-1]) if len(self) else 0


def _fmt(x):
    return repr(float(x))


def write_trace_csv(trace, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "block", "loss", "gplus", "lambda", "loo_calls"])
        for t in range(len(trace)):
            w.writerow([
                t + 1, int(trace.block[t]), _fmt(trace.loss[t]), _fmt(trace.gplus[t]),
                _fmt(trace.lam[t]), int(trace.loo_calls[t]),
            ])


class _Recorder:
    def __init__(self, T, n, n_blocks):
        self.played = np.empty((T, n))
        self.block = np.empty(T, dtype=np.int64)
        self.loss = np.empty(T)
        self.gplus = np.empty(T)
        self.lam = np.empty(T)
        self.loo_calls = np.empty(T, dtype=np.int64)
        self.inner = np.zeros(n_blocks, dtype=np.int64)
        self.shift = np.zeros(n_blocks)

    def finish(self, algorithm, schedule, **info):
        return LearnerTrace(
            algorithm, self.played, self.block, self.loss, self.gplus, self.lam,
            self.loo_calls, self.inner, self.shift, schedule, RNG_NAME, info,
        )


def _check_problem(problem, schedule):
    if schedule.T != problem.T:
        raise ConfigurationError(f"schedule horizon {schedule.T} != problem horizon {problem.T}")


# ---------------------------------------------------------------------------
# inner solver for the drift-plus-penalty objective


class AffineMaxBlock:
    """Sum over a block of ``max(0, max_i a_{t,i} . x - b_{t,i})``."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.b.ndim != 2 or self.A.shape[:2] != self.b.shape:
            raise InputError("AffineMaxBlock: A must be (k, m, n) and b (k, m)")

    def value(self, x):
        if self.b.shape[1] == 0:
            return 0.0
        vals = self.A @ x - self.b
        return float(np.maximum(vals.max(axis=1), 0.0).sum())

    def subgradient(self, x):
        k, m, n = self.A.shape
        if m == 0:
            return np.zeros(n)
        vals = self.A @ x - self.b
        idx = np.argmax(vals, axis=1)
        rows = np.arange(k)
        active = vals[rows, idx] > 0
        return self.A[rows[active], idx[active]].sum(axis=0)

    @property
    def max_lipschitz(self):
        if self.b.shape[1] == 0:
            return 0.0
        return float(np.linalg.norm(self.A, axis=2).max(axis=1).sum())


class CallableBlock:
    """Sum of black-box ``g_t^+`` accessors, each a ``(value, subgradient)`` pair."""

    def __init__(self, funcs, lipschitz):
        self.funcs = list(funcs)
        self.lipschitz = float(lipschitz)

    def value(self, x):
        return float(sum(f(x) for f, _ in self.funcs))

    def subgradient(self, x):
        return sum((g(x) for _, g in self.funcs), np.zeros_like(x))

    @property
    def max_lipschitz(self):
        return self.lipschitz * len(self.funcs)


def h_value(x, grad_bar, anchor, constraints, delta, alpha):
    d = x - anchor
    pen = 0.0 if delta == 0 or constraints is None else delta * constraints.value(x)
    return float(grad_bar @ d + pen + 0.5 * alpha * (d @ d))


@dataclass(frozen=True)
class InnerResult:
    y: np.ndarray
    iterations: int
    gap: float


def _project_capped_simplex_rows(W):
    """Row-wise projection onto ``{w >= 0, sum(w) <= 1}``."""
    P = np.maximum(W, 0.0)
    over = P.sum(axis=1) > 1.0
    if np.any(over):
        V = W[over]
        U = -np.sort(-V, axis=1)
        css = np.cumsum(U, axis=1) - 1.0
        ks = np.arange(1, V.shape[1] + 1)
        cond = U - css / ks > 0
        rho = V.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(V.shape[0]), rho] / (rho + 1)
        P[over] = np.maximum(V - theta[:, None], 0.0)
    return P


def _minimize_h_dual(grad_bar, anchor, block, delta, alpha, R, tol, max_iter):
    """Accelerated projected gradient ascent on the dual of the penalty objective.

    Writing each ``g_t^+`` as a max over its affine pieces and the zero piece,
    the dual variables live on a product of capped simplices and the primal
    minimizer for fixed duals is a ball projection.  The duality gap certifies
    ``h(y) - min h <= tol``.
    """
    A, b = block.A, block.b
    k, m, n = A.shape
    A2 = A.reshape(k * m, n)
    b2 = b.reshape(k * m)
    spec = np.linalg.norm(A2, 2)
    L = delta**2 * spec**2 / alpha
    W = np.zeros((k, m))
    Z = W
    theta = 1.0
    best_gap = math.inf
    prev_dual = -math.inf

    def primal_of(Wf):
        v = grad_bar + delta * (Wf @ A2)
        return project_ball(anchor - v / alpha, R)

    for it in range(1, max_iter + 1):
        x = primal_of(W.reshape(-1))
        d = x - anchor
        resid = A2 @ x - b2
        dual = float(grad_bar @ d + delta * (W.reshape(-1) @ resid) + 0.5 * alpha * (d @ d))
        primal = h_value(x, grad_bar, anchor, block, delta, alpha)
        gap = primal - dual
        if gap <= tol:
            return InnerResult(x, it, max(gap, 0.0))
        best_gap = min(best_gap, gap)
        if dual < prev_dual:
            # adaptive restart of the momentum
            Z, theta = W, 1.0
        prev_dual = dual
        xz = primal_of(Z.reshape(-1))
        grad = delta * (A2 @ xz - b2).reshape(k, m)
        W_next = _project_capped_simplex_rows(Z + grad / L)
        theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta**2))
        Z = W_next + ((theta - 1.0) / theta_next) * (W_next - W)
        W, theta = W_next, theta_next
    raise NumericError(
        "drift-plus-penalty inner solver did not reach its tolerance",
        iterations=max_iter, gap=best_gap, tol=tol,
    )


def _minimize_h_subgradient(grad_bar, anchor, block, delta, alpha, R, tol, max_iter):
    """Projected subgradient descent, step 2/(alpha (i+1)), weighted averaging."""
    lip = float(np.linalg.norm(grad_bar)) + delta * block.max_lipschitz + 2.0 * alpha * R
    iters = max(1, math.ceil(2.0 * lip**2 / (alpha * tol)))
    if iters > max_iter:
        raise NumericError(
            "subgradient inner solver would exceed its iteration cap",
            required=iters, cap=max_iter, tol=tol,
        )
    x = project_ball(anchor, R)
    avg = np.zeros_like(x)
    wsum = 0.0
    for i in range(1, iters + 1):
        g = grad_bar + delta * block.subgradient(x) + alpha * (x - anchor)
        x = project_ball(x - (2.0 / (alpha * (i + 1))) * g, R)
        avg += i * x
        wsum += i
    return InnerResult(avg / wsum, iters, math.nan)


def minimize_h(grad_bar, anchor, constraints, delta, alpha, R, tol, max_iter=10**6):
    """Approximate minimizer over the ball of radius ``R`` of

        h(x) = grad_bar . (x - anchor) + delta * sum_t g_t^+(x) + alpha/2 ||x - anchor||^2.

    ``constraints`` is an :class:`AffineMaxBlock` (solved through its dual,
    with a duality-gap certificate) or any object with ``value``,
    ``subgradient`` and ``max_lipschitz`` (solved by projected subgradient
    descent with a worst-case iteration count).  The result satisfies
    ``h(y) - min h <= tol`` and so ``||y - y*||^2 <= 2 tol / alpha``.

    Returns
    -------
    InnerResult
    """
    if not tol > 0:
        raise InputError("minimize_h: tol must be positive")
    if not alpha > 0:
        raise InputError("minimize_h: alpha must be positive")
    grad_bar = np.asarray(grad_bar, dtype=float)
    anchor = np.asarray(anchor, dtype=float)
    closed = project_ball(anchor - grad_bar / alpha, R)
    if delta == 0 or constraints is None or constraints.value(closed) == 0.0:
        # the unconstrained minimizer already has zero penalty
        return InnerResult(closed, 0, 0.0)
    if isinstance(constraints, AffineMaxBlock):
        return _minimize_h_dual(grad_bar, anchor, constraints, delta, alpha, R, tol, max_iter)
    return _minimize_h_subgradient(grad_bar, anchor, constraints, delta, alpha, R, tol, max_iter)


# ---------------------------------------------------------------------------
# learners


def run_dpp(problem, schedule, afp_callback=None):
    """Drift-plus-penalty learner.

    Loss subgradients are taken at the infeasible anchor ``y_tilde``, while the
    feasible ``x`` is what gets played.
    """
    _check_problem(problem, schedule)
    if not schedule.alpha or schedule.alpha <= 0:
        raise ConfigurationError("drift-plus-penalty needs alpha > 0")
    K = problem.set
    s = schedule
    R = K.outer_radius
    tol = s.eps * s.alpha / 2.0
    rec = _Recorder(s.T, K.dim, s.n_blocks)
    x = K.initial_point()
    calls = 0
    y_tilde = x.copy()
    for m in range(s.n_blocks):
        rounds = slice(m * s.K, (m + 1) * s.K)
        _play(rec, problem, rounds, x, m, 0.0)
        grad_bar = problem.loss_grads(rounds, y_tilde).mean(axis=0)
        block = AffineMaxBlock(problem.A[rounds], problem.b[rounds])
        inner = minimize_h(grad_bar, y_tilde, block, s.delta, s.alpha, R, tol)
        res = afp(K, inner.y, x, s.eps, callback=afp_callback)
        calls += res.loo_calls
        rec.inner[m] = inner.iterations
        rec.shift[m] = np.linalg.norm(inner.y - y_tilde)
        rec.loo_calls[rounds] = calls - res.loo_calls
        rec.loo_calls[rounds.stop - 1] = calls
        x, y_tilde = res.x, res.y_tilde
    return rec.finish("dpp", s)


def _play(rec, problem, rounds, x, m, lam):
    rec.played[rounds] = x
    rec.block[rounds] = m + 1
    rec.loss[rounds] = problem.losses(rounds, x)
    rec.gplus[rounds] = problem.gplus_values(rounds, x)
    rec.lam[rounds] = lam


def run_primal_dual(problem, schedule, afp_callback=None):
    """Primal-dual learner on the dual-regularized Lagrangian
    ``f_t(x) + lam g_t^+(x) - (delta eta / 2) lam^2``."""
    _check_problem(problem, schedule)
    if schedule.eta is None:
        raise ConfigurationError("primal-dual needs eta")
    K = problem.set
    s = schedule
    R = K.outer_radius
    rec = _Recorder(s.T, K.dim, s.n_blocks)
    x = K.initial_point()
    calls = 0
    y_tilde = x.copy()
    lam = 0.0
    for m in range(s.n_blocks):
        rounds = slice(m * s.K, (m + 1) * s.K)
        _play(rec, problem, rounds, x, m, lam)
        grad_x = problem.loss_grads(rounds, x).sum(axis=0)
        grad_x = grad_x + lam * problem.gplus_grads(rounds, x).sum(axis=0)
        grad_lam = float(np.sum(rec.gplus[rounds] - s.delta * s.eta * lam))
        y_next = project_ball(y_tilde - s.eta * grad_x, R)
        res = afp(K, y_next, x, s.eps, callback=afp_callback)
        calls += res.loo_calls
        rec.shift[m] = np.linalg.norm(y_next - y_tilde)
        rec.loo_calls[rounds] = calls - res.loo_calls
        rec.loo_calls[rounds.stop - 1] = calls
        x, y_tilde = res.x, res.y_tilde
        lam = max(lam + s.eta * grad_lam, 0.0)
    return rec.finish("primal-dual", s)


def sample_unit_sphere(rng, n, size=None):
    """Uniform draw(s) from the unit sphere in R^n (normalized Gaussians)."""
    if n < 1:
        raise InputError("sphere dimension must be at least 1")
    shape = (n,) if size is None else (size, n)
    g = rng.standard_normal(shape)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    while np.any(norms == 0):  # pragma: no cover - probability zero
        g = rng.standard_normal(shape)
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
    return g / norms


def one_point_gradients(values, U, mu):
    """Rows ``(n / mu) * values[t] * U[t]``: the smoothed-gradient estimates."""
    n = U.shape[-1]
    return (n / mu) * np.asarray(values)[..., None] * U


def run_bandit(problem, schedule, rng_seed, afp_callback=None):
    """Bandit primal-dual learner; only ``f_t(z_t)`` and ``g_t(z_t)`` are read.

    Centers live in the shrunk set ``(1 - mu/r) K`` and the played points
    ``z_t = x_m + mu u_t`` stay inside ``K``.
    """
    _check_problem(problem, schedule)
    K = problem.set
    s = schedule
    if K.inner_radius is None:
        raise ConfigurationError(f"bandit learner needs a set with an inner radius, got {K.kind}")
    if s.mu is None or not 0 < s.mu <= K.inner_radius:
        raise ConfigurationError(f"mu must lie in (0, r={K.inner_radius}], got {s.mu}")
    if s.eta is None:
        raise ConfigurationError("bandit learner needs eta")
    Ks = shrink(K, s.mu / K.inner_radius)
    R = K.outer_radius
    n = K.dim
    rng = make_rng(rng_seed)
    rec = _Recorder(s.T, n, s.n_blocks)
    x = Ks.initial_point()
    calls = 0
    y_tilde = x.copy()
    lam = 0.0
    for m in range(s.n_blocks):
        rounds = slice(m * s.K, (m + 1) * s.K)
        U = sample_unit_sphere(rng, n, s.K)
        Z = x + s.mu * U
        f_vals = problem.losses(rounds, Z)
        g_plus = np.maximum(problem.g_values(rounds, Z), 0.0)
        rec.played[rounds] = Z
        rec.block[rounds] = m + 1
        rec.loss[rounds] = f_vals
        rec.gplus[rounds] = g_plus
        rec.lam[rounds] = lam
        grad_x = one_point_gradients(f_vals + lam * g_plus, U, s.mu).sum(axis=0)
        grad_lam = float(np.sum(g_plus - s.delta * s.eta * lam))
        y_next = project_ball(y_tilde - s.eta * grad_x, R)
        res = afp(Ks, y_next, x, s.eps, callback=afp_callback)
        calls += res.loo_calls
        rec.shift[m] = np.linalg.norm(y_next - y_tilde)
        rec.loo_calls[rounds] = calls - res.loo_calls
        rec.loo_calls[rounds.stop - 1] = calls
        x, y_tilde = res.x, res.y_tilde
        lam = max(lam + s.eta * grad_lam, 0.0)
    return rec.finish("bandit", s, rng_seed=rng_seed, centers_set=Ks.describe())


def run(algorithm, problem, schedule, rng_seed=0):
    if algorithm == "dpp":
        return run_dpp(problem, schedule)
    if algorithm == "primal-dual":
        return run_primal_dual(problem, schedule)
    if algorithm == "bandit":
        return run_bandit(problem, schedule, rng_seed)
    raise ConfigurationError(f"unknown algorithm {algorithm!r}")
