"""Feasible sets accessed through linear optimization oracles.

Every set exposes a linear optimization oracle (LOO) ``loo(c)`` returning a
minimizer of ``c . x`` over the set, an outer radius ``R`` with ``K ⊆ R·B``,
an optional inner radius ``r`` with ``r·B ⊆ K``, and a membership test.

Matrix-valued sets (the trace-bounded PSD cone) work on symmetric-packed
vectors: the upper triangle in row-major order with off-diagonal entries
scaled by sqrt(2), so that the Euclidean inner product of two packed vectors
equals ``Tr(A^T B)`` of the matrices.
"""

import heapq
import math
import threading

import numpy as np

from .errors import ConfigurationError, InputError, NumericError

DEFAULT_TOL = 1e-9
POWER_STRIDE = 8
MAX_EIG_DIM = 64

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# symmetric packing


def packed_dim(n):
    return n * (n + 1) // 2


def matrix_size(dim):
    """Inverse of :func:`packed_dim`."""
    n = int(round((math.sqrt(8 * dim + 1) - 1) / 2))
    if packed_dim(n) != dim:
        raise InputError(f"{dim} is not a triangular number")
    return n


def pack_sym(M):
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    iu = np.triu_indices(n)
    p = M[iu].copy()
    p[iu[0] != iu[1]] *= _SQRT2
    return p


def unpack_sym(p, n=None):
    p = np.asarray(p, dtype=float)
    if n is None:
        n = matrix_size(p.size)
    iu = np.triu_indices(n)
    vals = p.copy()
    vals[iu[0] != iu[1]] /= _SQRT2
    M = np.zeros((n, n))
    M[iu] = vals
    M[(iu[1], iu[0])] = vals
    return M


# ---------------------------------------------------------------------------
# elementary operations


def project_ball(y, R):
    """Euclidean projection onto the origin-centred ball of radius ``R``."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InputError("project_ball: non-finite input")
    norm = np.linalg.norm(y)
    if norm <= R:
        return y.copy()
    return (R / norm) * y


def min_eigenpair(C, tol=1e-10, max_dim=MAX_EIG_DIM):
    """Smallest eigenvalue and a unit eigenvector of a symmetric matrix.

    Power iteration on ``sigma*I - C`` where ``sigma`` is the Gershgorin upper
    bound on the largest eigenvalue, so the dominant eigenvector of the shifted
    matrix is the eigenvector of ``lambda_min(C)``.  Stops once
    ``||Cv - lambda v|| <= tol * ||C||_F``.  If that has not happened after
    ``ceil(10 n log(n / tol))`` iterations (a near-degenerate bottom of the
    spectrum), a dense symmetric eigensolve supplies the pair instead.

    Raises
    ------
    InputError
        If ``C`` is not square, asymmetric by more than 1e-9, or larger than
        ``max_dim``.
    NumericError
        If neither route meets the residual test (``tol`` below machine
        precision).
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InputError(f"min_eigenpair: expected a square matrix, got shape {C.shape}")
    n = C.shape[0]
    if n > max_dim:
        raise InputError(f"min_eigenpair: dimension {n} exceeds cap {max_dim}")
    if not np.all(np.isfinite(C)):
        raise InputError("min_eigenpair: non-finite entries")
    if np.max(np.abs(C - C.T), initial=0.0) > 1e-9:
        raise InputError("min_eigenpair: matrix is not symmetric")
    C = 0.5 * (C + C.T)

    fro = np.linalg.norm(C)
    if fro == 0.0:
        v = np.zeros(n)
        v[0] = 1.0
        return 0.0, v
    threshold = tol * fro

    radii = np.sum(np.abs(C), axis=1) - np.abs(np.diag(C))
    sigma = float(np.max(np.diag(C) + radii))
    B = sigma * np.eye(n) - C

    # fixed start vector: deterministic, and generic enough to have a
    # component along the wanted eigenvector
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    cap = max(1, math.ceil(10 * n * math.log(max(n, 2) / tol)))
    # advance POWER_STRIDE power steps per pass through a precomputed,
    # rescaled B^stride; the residual is checked between passes
    B_norm = np.linalg.norm(B)
    step = np.linalg.matrix_power(B / B_norm, POWER_STRIDE) if B_norm > 0 else B
    residual = math.inf
    for _ in range(math.ceil(cap / POWER_STRIDE) + 1):
        Cv = C @ v
        lam = float(v @ Cv)
        residual = float(np.linalg.norm(Cv - lam * v))
        if residual <= threshold:
            return lam, v
        w = step @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v lies in the kernel of B, i.e. C v = sigma v already
            return sigma, v
        v = w / nw
    # A tiny gap between the two smallest eigenvalues makes power iteration
    # crawl; finish with a dense solve and hold it to the same residual test.
    vals, vecs = np.linalg.eigh(C)
    v = vecs[:, 0]
    lam = float(v @ C @ v)
    dense_residual = float(np.linalg.norm(C @ v - lam * v))
    if dense_residual <= threshold:
        return lam, v
    raise NumericError(
        "min_eigenpair did not converge", residual=min(residual, dense_residual),
        threshold=threshold, iterations=cap,
    )


# ---------------------------------------------------------------------------
# directed acyclic graphs


class Dag:
    """Directed acyclic graph with a designated source and sink.

    Nodes are ``0..n_nodes-1``; edge ``i`` goes from ``edges[i][0]`` to
    ``edges[i][1]``.  Construction rejects cycles and nodes that do not lie on
    any source-to-sink path.
    """

    def __init__(self, n_nodes, edges, source, sink):
        n_nodes = int(n_nodes)
        edges = [(int(a), int(b)) for a, b in edges]
        if n_nodes < 2:
            raise InputError("a DAG needs at least two nodes")
        if not (0 <= source < n_nodes and 0 <= sink < n_nodes) or source == sink:
            raise InputError("source and sink must be distinct valid nodes")
        for a, b in edges:
            if not (0 <= a < n_nodes and 0 <= b < n_nodes):
                raise InputError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise InputError(f"self-loop at node {a}")
        if not edges:
            raise InputError("graph has no edges")

        self.n_nodes = n_nodes
        self.edges = tuple(edges)
        self.source = int(source)
        self.sink = int(sink)

        out_edges = [[] for _ in range(n_nodes)]
        in_edges = [[] for _ in range(n_nodes)]
        for idx, (a, b) in enumerate(edges):
            out_edges[a].append(idx)
            in_edges[b].append(idx)

        # Kahn's algorithm, smallest ready node first
        indeg = [len(in_edges[v]) for v in range(n_nodes)]
        ready = [v for v in range(n_nodes) if indeg[v] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for idx in out_edges[v]:
                w = edges[idx][1]
                indeg[w] -= 1
                if indeg[w] == 0:
                    heapq.heappush(ready, w)
        if len(order) != n_nodes:
            raise InputError("graph contains a cycle")

        fwd = self._reach(self.source, out_edges, 1)
        bwd = self._reach(self.sink, in_edges, 0)
        bad = [v for v in range(n_nodes) if not (fwd[v] and bwd[v])]
        if bad:
            raise InputError(f"nodes {bad} do not lie on any source-sink path")

        self.order = tuple(order)
        # incoming edges sorted by (tail, edge index): the tie-break order
        self._in_sorted = tuple(
            tuple(sorted(in_edges[v], key=lambda i: (edges[i][0], i))) for v in range(n_nodes)
        )
        self._tails = np.array([a for a, _ in edges], dtype=int)
        self._heads = np.array([b for _, b in edges], dtype=int)

    def _reach(self, start, adjacency, end_index):
        seen = [False] * self.n_nodes
        seen[start] = True
        stack = [start]
        while stack:
            v = stack.pop()
            for idx in adjacency[v]:
                w = self.edges[idx][end_index]
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        return seen

    @property
    def n_edges(self):
        return len(self.edges)

    def shortest_path(self, cost):
        """Min-cost source-sink path as a list of edge indices.

        Dynamic programming in topological order; ties go to the lowest
        predecessor node index, then the lowest edge index.
        """
        dist = [math.inf] * self.n_nodes
        pred = [-1] * self.n_nodes
        dist[self.source] = 0.0
        for v in self.order:
            if v == self.source:
                continue
            best, best_edge = math.inf, -1
            for idx in self._in_sorted[v]:
                d = dist[self.edges[idx][0]] + cost[idx]
                if d < best:
                    best, best_edge = d, idx
            dist[v] = best
            pred[v] = best_edge
        path = []
        v = self.sink
        while v != self.source:
            idx = pred[v]
            path.append(idx)
            v = self.edges[idx][0]
        path.reverse()
        return path

    def longest_path_edges(self):
        """Maximum number of edges on a source-sink path."""
        return int(round(self.max_path_weight(np.ones(self.n_edges))))

    def max_path_weight(self, weight):
        """Largest total edge weight over source-sink paths."""
        best = [-math.inf] * self.n_nodes
        best[self.source] = 0.0
        for v in self.order:
            for idx in self._in_sorted[v]:
                best[v] = max(best[v], best[self.edges[idx][0]] + float(weight[idx]))
        return best[self.sink]

    def incidence(self):
        """Node-edge incidence matrix: +1 at the tail, -1 at the head."""
        N = np.zeros((self.n_nodes, self.n_edges))
        cols = np.arange(self.n_edges)
        N[self._tails, cols] += 1.0
        N[self._heads, cols] -= 1.0
        return N

    def to_text(self):
        lines = [f"{self.n_nodes} {self.source} {self.sink}"]
        lines += [f"{a} {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``n s e`` on the first line, then one ``tail head`` per line."""
        rows = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                rows.append((lineno, [int(p) for p in parts]))
            except ValueError:
                raise InputError(f"line {lineno}: expected integers, got {raw!r}") from None
        if not rows:
            raise InputError("empty DAG description")
        lineno, header = rows[0]
        if len(header) != 3:
            raise InputError(f"line {lineno}: header must be 'n s e'")
        edges = []
        for lineno, vals in rows[1:]:
            if len(vals) != 2:
                raise InputError(f"line {lineno}: edge must be 'tail head'")
            edges.append(tuple(vals))
        return cls(header[0], edges, header[1], header[2])

    def __eq__(self, other):
        return isinstance(other, Dag) and (
            self.n_nodes, self.edges, self.source, self.sink
        ) == (other.n_nodes, other.edges, other.source, other.sink)

    def __hash__(self):
        return hash((self.n_nodes, self.edges, self.source, self.sink))

    def __repr__(self):
        return f"Dag(n_nodes={self.n_nodes}, n_edges={self.n_edges}, source={self.source}, sink={self.sink})"


def read_dag(path):
    with open(path, encoding="utf-8") as fh:
        return Dag.from_text(fh.read())


def write_dag(dag, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dag.to_text())


# ---------------------------------------------------------------------------
# feasible sets


class FeasibleSet:
    """Base class.  Subclasses implement ``_argmin`` and ``_contains``.

    The only mutable state is the LOO call counter, guarded by a lock so a set
    can be shared between threads.
    """

    kind = None

    def __init__(self, dim, outer_radius, inner_radius=None):
        self.dim = int(dim)
        self.outer_radius = float(outer_radius)
        self.inner_radius = None if inner_radius is None else float(inner_radius)
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def R(self):
        return self.outer_radius

    @property
    def r(self):
        return self.inner_radius

    @property
    def loo_calls(self):
        return self._calls

    def reset_counter(self):
        with self._lock:
            self._calls = 0

    def _check_point(self, x, name):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputError(f"{name}: expected shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError(f"{name}: non-finite entries")
        return x

    def loo(self, c):
        """argmin over the set of ``c . x``; counts one oracle call."""
        c = self._check_point(c, "loo")
        with self._lock:
            self._calls += 1
        if not np.any(c):
            # every member is optimal; the origin always is one
            return np.zeros(self.dim)
        return self._argmin(c)

    def contains(self, x, tol=DEFAULT_TOL):
        x = self._check_point(x, "membership")
        return bool(self._contains(x, tol))

    def initial_point(self):
        """The origin, a member of every set; the learners start there."""
        return np.zeros(self.dim)

    def describe(self):
        raise NotImplementedError

    def _argmin(self, c):
        raise NotImplementedError

    def _contains(self, x, tol):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()})"


class Ball(FeasibleSet):
    kind = "ball"

    def __init__(self, n, radius=1.0):
        if radius <= 0:
            raise InputError("ball radius must be positive")
        super().__init__(n, radius, radius)

    def _argmin(self, c):
        return (-self.outer_radius / np.linalg.norm(c)) * c

    def _contains(self, x, tol):
        return np.linalg.norm(x) <= self.outer_radius + tol

    def describe(self):
        return {"kind": self.kind, "n": self.dim, "radius": self.outer_radius}


class Box(FeasibleSet):
    """Axis-aligned box ``[-a_i, a_i]``."""

    kind = "box"

    def __init__(self, n, half_width=1.0):
        a = np.broadcast_to(np.asarray(half_width, dtype=float), (int(n),)).copy()
        if np.any(a <= 0):
            raise InputError("box half-widths must be positive")
        self.half_widths = a
        super().__init__(n, float(np.linalg.norm(a)), float(a.min()))

    def _argmin(self, c):
        return -self.half_widths * np.sign(c)

    def _contains(self, x, tol):
        return np.all(np.abs(x) <= self.half_widths + tol)

    def describe(self):
        hw = self.half_widths
        value = float(hw[0]) if np.all(hw == hw[0]) else hw.tolist()
        return {"kind": self.kind, "n": self.dim, "half_width": value}


class Simplex(FeasibleSet):
    """``{x >= 0, sum(x) <= 1}``, the convex hull of the origin and the unit vectors."""

    kind = "simplex"

    def __init__(self, n):
        super().__init__(n, 1.0, None)

    def _argmin(self, c):
        i = int(np.argmin(c))
        v = np.zeros(self.dim)
        if c[i] < 0:
            v[i] = 1.0
        return v

    def _contains(self, x, tol):
        return np.all(x >= -tol) and x.sum() <= 1.0 + tol

    def describe(self):
        return {"kind": self.kind, "n": self.dim}


class FlowPolytope(FeasibleSet):
    """Unit source-sink flows on a DAG, one coordinate per edge, anchored at a path.

    The flows themselves never include the zero vector, so points are stored
    relative to an anchor flow: ``x = flow - anchor``, with ``anchor`` the
    indicator of the path chosen for an all-zero cost vector.  In these
    coordinates the origin is a member (the anchor path itself), which the
    projection and learner guarantees rely on.  :meth:`flow_of` and
    :meth:`point_of` convert between the two.
    """

    kind = "flow"

    def __init__(self, dag):
        self.dag = dag
        self._incidence = dag.incidence()
        self._demand = np.zeros(dag.n_nodes)
        self._demand[dag.source] = 1.0
        self._demand[dag.sink] = -1.0
        self.anchor = self._path_indicator(np.zeros(dag.n_edges))
        self.anchor.setflags(write=False)
        # ||1_P - anchor||^2 = |anchor| + sum over P of (1 - 2 anchor_e)
        far = self.anchor.sum() + dag.max_path_weight(1.0 - 2.0 * self.anchor)
        super().__init__(dag.n_edges, math.sqrt(far), None)

    def _path_indicator(self, c):
        v = np.zeros(self.dag.n_edges)
        v[self.dag.shortest_path(c)] = 1.0
        return v

    def flow_of(self, x):
        """Edge flows of a point."""
        return np.asarray(x, dtype=float) + self.anchor

    def point_of(self, flow):
        """Point representing the given edge flows."""
        return np.asarray(flow, dtype=float) - self.anchor

    def _argmin(self, c):
        return self._path_indicator(c) - self.anchor

    def _contains(self, x, tol):
        f = x + self.anchor
        if np.any(f < -tol) or np.any(f > 1.0 + tol):
            return False
        return np.max(np.abs(self._incidence @ f - self._demand)) <= tol

    def describe(self):
        return {
            "kind": self.kind,
            "n_nodes": self.dag.n_nodes,
            "source": self.dag.source,
            "sink": self.dag.sink,
            "edges": [list(e) for e in self.dag.edges],
        }


class PSDCone(FeasibleSet):
    """``{X PSD, Tr(X) <= tau}`` on symmetric-packed vectors of length n(n+1)/2."""

    kind = "psd"

    def __init__(self, n, tau=1.0, eig_tol=1e-10):
        if tau <= 0:
            raise InputError("trace bound must be positive")
        self.size = int(n)
        self.tau = float(tau)
        self.eig_tol = eig_tol
        # ||X||_F <= Tr(X) for PSD X
        super().__init__(packed_dim(self.size), self.tau, None)

    def _argmin(self, c):
        lam, v = min_eigenpair(unpack_sym(c, self.size), tol=self.eig_tol)
        if lam >= 0:
            return np.zeros(self.dim)
        return pack_sym(self.tau * np.outer(v, v))

    def _contains(self, x, tol):
        X = unpack_sym(x, self.size)
        return np.linalg.eigvalsh(X)[0] >= -tol and np.trace(X) <= self.tau + tol

    def describe(self):
        return {"kind": self.kind, "n": self.size, "tau": self.tau}


class ShrunkSet(FeasibleSet):
    """``(1 - factor) * K`` for a set ``K`` with an inner radius."""

    kind = "scaled"

    def __init__(self, inner, factor):
        self.inner = inner
        self.factor = float(factor)
        self.scale = 1.0 - self.factor
        super().__init__(inner.dim, self.scale * inner.outer_radius, self.scale * inner.inner_radius)

    def _argmin(self, c):
        return self.scale * self.inner._argmin(c)

    def _contains(self, x, tol):
        return self.inner._contains(x / self.scale, tol)

    def describe(self):
        return {"kind": self.kind, "factor": self.factor, "inner": self.inner.describe()}


def shrink(K, factor):
    """Scale ``K`` towards the origin by ``1 - factor``.

    Points of the result stay inside ``K`` after a perturbation of norm at
    most ``factor * r``.
    """
    factor = float(factor)
    if not 0.0 <= factor < 1.0:
        raise ConfigurationError(f"shrink factor must lie in [0, 1), got {factor}")
    if K.inner_radius is None:
        raise ConfigurationError(f"cannot shrink a {K.kind} set: it has no inner radius")
    return ShrunkSet(K, factor)


def loo_minimize(K, c):
    return K.loo(c)


def membership(K, x, tol=DEFAULT_TOL):
    return K.contains(x, tol)


_KINDS = {"ball", "box", "simplex", "flow", "psd", "scaled"}


def set_from_descriptor(desc):
    """Rebuild a set from the dictionary produced by ``describe()``."""
    desc = dict(desc)
    kind = desc.get("kind")
    if kind not in _KINDS:
        raise InputError(f"unknown set kind {kind!r}")
    if kind == "ball":
        return Ball(desc["n"], desc.get("radius", 1.0))
    if kind == "box":
        return Box(desc["n"], desc.get("half_width", 1.0))
    if kind == "simplex":
        return Simplex(desc["n"])
    if kind == "psd":
        return PSDCone(desc["n"], desc.get("tau", 1.0))
    if kind == "flow":
        if "edges" in desc:
            dag = Dag(desc["n_nodes"], desc["edges"], desc["source"], desc["sink"])
        else:
            dag = read_dag(desc["dag_file"])
        return FlowPolytope(dag)
    return shrink(set_from_descriptor(desc["inner"]), desc["factor"])
