"""Online problem instances with precomputed, oblivious round data.

Every instance has losses of the form

    f_t(x) = q * ||x - center||^2 + l_t . x

and constraints given as a max of affine pieces

    g_t(x) = max_i {a_{t,i} . x - b_{t,i}}     (g_t = -1 when there are no pieces).

Round data depend only on the generator, the seed and ``t``.  Rounds are
1-based in the public API (``round(t)``); the batch helpers take 0-based
``slice`` objects and are what the learners use.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Dag, FlowPolytope, PSDCone, pack_sym, set_from_descriptor
from .errors import ConfigurationError, InputError

RNG_NAME = "PCG64"
EMPTY_MAX_VALUE = -1.0


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def subgradient_gplus(g_value, g_subgrad):
    """An element of the subdifferential of ``max(g, 0)``; zero at the kink."""
    g_subgrad = np.asarray(g_subgrad, dtype=float)
    if g_value > 0:
        return g_subgrad.copy()
    return np.zeros_like(g_subgrad)


@dataclass(frozen=True)
class RoundFunctions:
    """Loss and constraint of a single round."""

    t: int
    quad: float
    center: np.ndarray
    linear: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G_f: float
    G_g: float
    M_f: float
    M_g: float
    offset: float = 0.0

    def loss(self, x):
        d = x - self.center
        return float(self.quad * (d @ d) + self.linear @ x + self.offset)

    def loss_grad(self, x):
        return 2.0 * self.quad * (x - self.center) + self.linear

    def _argmax(self, x):
        vals = self.A @ x - self.b
        i = int(np.argmax(vals))
        return i, float(vals[i])

    def g(self, x):
        if self.b.size == 0:
            return EMPTY_MAX_VALUE
        return self._argmax(x)[1]

    def g_grad(self, x):
        if self.b.size == 0:
            return np.zeros_like(x)
        return self.A[self._argmax(x)[0]].copy()

    def gplus(self, x):
        return max(self.g(x), 0.0)

    def gplus_grad(self, x):
        if self.b.size == 0:
            return np.zeros_like(x)
        i, val = self._argmax(x)
        return subgradient_gplus(val, self.A[i])


@dataclass
class ProblemInstance:
    """A horizon of precomputed round data over a feasible set.

    Attributes
    ----------
    set : FeasibleSet
    T : int
    quad : float
        Weight of the quadratic loss term (0 for linear losses).
    center : (n,) array
    linear : (T, n) array
    A : (T, m, n) array
    b : (T, m) array
    comparator : (n,) array or None
        Planted point: a member of the set with ``g_t <= 0`` for all ``t``.
    offset : (T,) array or None
        Per-round constant added to the loss (zero when absent).
    G_f, G_g, M_f, M_g : float
        Subgradient-norm and value bounds over the ball of radius ``R``.
    meta : dict
        Generator name, seed and parameters; enough to regenerate.
    """

    set: object
    T: int
    quad: float
    center: np.ndarray
    linear: np.ndarray
    A: np.ndarray
    b: np.ndarray
    comparator: object
    G_f: float
    G_g: float
    M_f: float
    M_g: float
    meta: dict = field(default_factory=dict)
    offset: object = None

    def __post_init__(self):
        n = self.set.dim
        self.offset = np.zeros(self.T) if self.offset is None else np.asarray(self.offset, dtype=float).reshape(self.T)
        self.linear = np.asarray(self.linear, dtype=float).reshape(self.T, n)
        self.A = np.asarray(self.A, dtype=float).reshape(self.T, -1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(self.T, -1)
        self.center = np.asarray(self.center, dtype=float).reshape(n)
        if self.comparator is not None:
            self.comparator = np.asarray(self.comparator, dtype=float)

    @property
    def n(self):
        return self.set.dim

    @property
    def n_pieces(self):
        return self.b.shape[1]

    def round(self, t):
        if not 1 <= t <= self.T:
            raise InputError(f"round {t} outside [1, {self.T}]")
        i = t - 1
        return RoundFunctions(
            t, self.quad, self.center, self.linear[i], self.A[i], self.b[i],
            self.G_f, self.G_g, self.M_f, self.M_g, float(self.offset[i]),
        )

    # batch helpers: ``rounds`` is a 0-based slice, ``X`` is (n,) or (k, n)

    def losses(self, rounds, X):
        L = self.linear[rounds]
        c = self.offset[rounds]
        d = X - self.center
        if d.ndim == 1:
            return self.quad * (d @ d) + L @ X + c
        return self.quad * np.einsum("ij,ij->i", d, d) + np.einsum("ij,ij->i", L, X) + c

    def loss_grads(self, rounds, X):
        return 2.0 * self.quad * (X - self.center) + self.linear[rounds]

    def g_values(self, rounds, X):
        A, b = self.A[rounds], self.b[rounds]
        if b.shape[1] == 0:
            return np.full(b.shape[0], EMPTY_MAX_VALUE)
        if X.ndim == 1:
            vals = A @ X - b
        else:
            vals = np.einsum("kmn,kn->km", A, X) - b
        return vals.max(axis=1)

    def gplus_values(self, rounds, X):
        return np.maximum(self.g_values(rounds, X), 0.0)

    def gplus_grads(self, rounds, X):
        A, b = self.A[rounds], self.b[rounds]
        k = b.shape[0]
        if b.shape[1] == 0:
            return np.zeros((k, self.n))
        if X.ndim == 1:
            vals = A @ X - b
        else:
            vals = np.einsum("kmn,kn->km", A, X) - b
        idx = np.argmax(vals, axis=1)
        grads = A[np.arange(k), idx]
        active = vals[np.arange(k), idx] > 0
        return grads * active[:, None]

    def comparator_losses(self):
        if self.comparator is None:
            raise ConfigurationError("instance has no planted comparator")
        return self.losses(slice(None), np.broadcast_to(self.comparator, (self.T, self.n)))

    def describe(self):
        return {
            "generator": self.meta.get("generator"),
            "seed": self.meta.get("seed"),
            "horizon": self.T,
            "params": self.meta.get("params", {}),
            "set": self.set.describe(),
            "rng": RNG_NAME,
        }


def _affine_max_bound(A, b, R):
    if b.shape[1] == 0:
        return 1.0
    return float(np.max(np.linalg.norm(A, axis=2) * R + np.abs(b)))


def _unit_rows(rng, shape):
    g = rng.standard_normal(shape)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def _antithetic(rng, T, n, scale):
    """Perturbations with zeta_{2k} = -zeta_{2k-1}; the total is exactly zero."""
    half = (T + 1) // 2
    xi = _unit_rows(rng, (half, n)) * (scale * rng.uniform(size=(half, 1)))
    zeta = np.zeros((T, n))
    zeta[0::2] = xi[: (T + 1) // 2]
    zeta[1::2] = -xi[: T // 2]
    if T % 2:
        zeta[-1] = 0.0
    return zeta


def gen_planted_quadratic(K, T, seed, drift=0.0, n_constraints=2, margin=0.2, G_g=1.0):
    """Quadratic losses centred at a planted point with affine-max constraints.

    ``f_t(x) = ||x - x*||^2 + zeta_t . x`` where the perturbations ``zeta_t``
    have norm at most ``drift`` and cancel in pairs, so ``x*`` minimizes the
    total loss over the whole ball.  Each round carries ``n_constraints``
    halfspaces ``a . x <= a . x* + m`` with ``||a|| = G_g`` and slack ``m``
    drawn uniformly from ``[0, margin]``, so ``x*`` is feasible for all of them.
    """
    if drift < 0:
        raise InputError("drift must be nonnegative")
    rng = make_rng(seed)
    n, R = K.dim, K.outer_radius
    x_star = 0.5 * K._argmin(rng.standard_normal(n))
    zeta = _antithetic(rng, T, n, drift)
    A = G_g * _unit_rows(rng, (T, n_constraints, n))
    b = A @ x_star + margin * rng.uniform(size=(T, n_constraints))
    return ProblemInstance(
        set=K, T=T, quad=1.0, center=x_star, linear=zeta, A=A, b=b, comparator=x_star,
        G_f=4.0 * R + drift, G_g=float(G_g) if n_constraints else 0.0,
        M_f=(2.0 * R) ** 2 + drift * R, M_g=_affine_max_bound(A, b, R),
        meta={
            "generator": "planted_quadratic", "seed": seed,
            "params": {"drift": drift, "n_constraints": n_constraints, "margin": margin, "G_g": G_g},
        },
    )


def gen_capacitated_flow(dag, T, seed, tightness=0.5):
    """Linear edge costs with time-varying edge capacities on a unit-flow polytope.

    Costs are uniform on ``[0, 1]``.  A planted path ``P`` gets capacities
    ``1_P + (1 - tightness) * U``; with ``tightness`` near 1 the capacities
    hug the planted flow.  ``g_t(x) = max_i {x(i) - cap_t(i)}`` on edge flows.
    """
    if not 0.0 < tightness < 1.0:
        raise InputError("tightness must lie in (0, 1)")
    K = FlowPolytope(dag) if isinstance(dag, Dag) else dag
    if not isinstance(K, FlowPolytope):
        raise InputError("capacitated flow needs a DAG or a flow polytope")
    rng = make_rng(seed)
    m = K.dim
    planted = K.flow_of(K._argmin(rng.uniform(size=m)))
    costs = rng.uniform(size=(T, m))
    caps = planted + (1.0 - tightness) * rng.uniform(size=(T, m))
    return capacitated_flow_instance(
        K, costs, caps, planted,
        meta={"generator": "capacitated_flow", "seed": seed, "params": {"tightness": tightness}},
    )


def capacitated_flow_instance(K, costs, caps, planted_flow=None, meta=None):
    """Flow instance from explicit per-round edge costs and capacities.

    Inputs are in edge-flow terms; the instance itself lives in the set's
    anchored coordinates, so the loss carries the anchor path's cost as a
    per-round constant and the capacities are shifted by the anchor.
    """
    costs = np.asarray(costs, dtype=float)
    T, m = costs.shape
    A = np.broadcast_to(np.eye(m), (T, m, m)).copy()
    b = np.asarray(caps, dtype=float).reshape(T, m) - K.anchor
    G_f = float(np.max(np.linalg.norm(costs, axis=1)))
    comparator = None if planted_flow is None else K.point_of(planted_flow)
    return ProblemInstance(
        set=K, T=T, quad=0.0, center=np.zeros(m), linear=costs, A=A, b=b, comparator=comparator,
        G_f=G_f, G_g=1.0, M_f=G_f * K.outer_radius + float(np.max(costs @ K.anchor)),
        M_g=_affine_max_bound(A, b, K.outer_radius),
        meta=meta or {"generator": "capacitated_flow_custom"},
        offset=costs @ K.anchor,
    )


def _random_symmetric(rng, n, count):
    G = rng.standard_normal((count, n, n))
    S = 0.5 * (G + np.swapaxes(G, 1, 2))
    return S / np.linalg.norm(S, axis=(1, 2), keepdims=True)


def gen_psd_affine(n, tau, T, seed, m_t=2, margin=0.2):
    """Linear losses ``Tr(C_t X)`` and affine-max trace constraints on the PSD cone.

    ``C_t`` and ``A_{t,i}`` are random symmetric matrices of unit Frobenius
    norm; ``b_{t,i} = Tr(A_{t,i} X*) + margin * U`` for a planted PSD ``X*``
    with trace ``tau / 2``.
    """
    if n > 30:
        raise InputError("gen_psd_affine supports n <= 30")
    K = PSDCone(n, tau)
    rng = make_rng(seed)
    G = rng.standard_normal((n, n))
    W = G @ G.T
    X_star = pack_sym(0.5 * tau * W / np.trace(W))
    C = np.array([pack_sym(S) for S in _random_symmetric(rng, n, T)])
    if m_t > 0:
        As = _random_symmetric(rng, n, T * m_t)
        A = np.array([pack_sym(S) for S in As]).reshape(T, m_t, K.dim)
        b = A @ X_star + margin * rng.uniform(size=(T, m_t))
    else:
        A = np.zeros((T, 0, K.dim))
        b = np.zeros((T, 0))
    return psd_affine_instance(
        K, C, A, b, X_star,
        meta={"generator": "psd_affine", "seed": seed, "params": {"n": n, "tau": tau, "m_t": m_t, "margin": margin}},
    )


def psd_affine_instance(K, C, A, b, comparator=None, meta=None):
    """PSD instance from packed loss matrices ``C`` (T, d) and pieces ``A`` (T, m, d), ``b``."""
    C = np.asarray(C, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    G_f = float(np.max(np.linalg.norm(C, axis=1)))
    G_g = float(np.max(np.linalg.norm(A, axis=2))) if b.shape[1] else 0.0
    return ProblemInstance(
        set=K, T=C.shape[0], quad=0.0, center=np.zeros(K.dim), linear=C, A=A, b=b,
        comparator=comparator, G_f=G_f, G_g=G_g, M_f=G_f * K.outer_radius,
        M_g=_affine_max_bound(A, b, K.outer_radius),
        meta=meta or {"generator": "psd_affine_custom"},
    )


GENERATORS = ("planted_quadratic", "capacitated_flow", "psd_affine")


def generate(name, K, T, seed, **params):
    """Dispatch to a generator by name."""
    if name == "planted_quadratic":
        return gen_planted_quadratic(K, T, seed, **params)
    if name == "capacitated_flow":
        return gen_capacitated_flow(K, T, seed, **params)
    if name == "psd_affine":
        if not isinstance(K, PSDCone):
            raise InputError("psd_affine needs a PSD cone set")
        return gen_psd_affine(K.size, K.tau, T, seed, **params)
    raise InputError(f"unknown generator {name!r}")


def save_instance(problem, path):
    """Write the recipe of an instance; :func:`load_instance` regenerates it."""
    desc = problem.describe()
    if desc["generator"] not in GENERATORS:
        raise InputError("only generated instances can be serialized")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        desc = json.load(fh)
    K = set_from_descriptor(desc["set"])
    params = dict(desc.get("params", {}))
    if desc["generator"] == "psd_affine":
        params.pop("n", None)
        params.pop("tau", None)
    return generate(desc["generator"], K, desc["horizon"], desc["seed"], **params)
