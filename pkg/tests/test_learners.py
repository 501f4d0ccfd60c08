import importlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfoco.errors import ConfigurationError, InputError
from pfoco.geometry import Ball, Box, Dag, FlowPolytope, PSDCone, Simplex, membership, project_ball, shrink
from pfoco.learners import (
    AffineMaxBlock, CallableBlock, ParameterSchedule, bandit_schedule, block_size, default_schedule,
    dpp_schedule, h_value, minimize_h, one_point_gradients, primal_dual_schedule, run, run_bandit,
    run_dpp, run_primal_dual, sample_unit_sphere, write_trace_csv,
)
from pfoco.problems import ProblemInstance, gen_capacitated_flow, gen_planted_quadratic, gen_psd_affine

learners_mod = importlib.import_module("pfoco.learners")

SIX = Dag(6, [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4), (3, 5), (4, 5)], 0, 5)


def trivial_problem(K, T, g_value=None, linear=None):
    """Zero (or given linear) losses; constraints either absent or constant ``g_value``."""
    n = K.dim
    lin = np.zeros((T, n)) if linear is None else np.broadcast_to(linear, (T, n))
    if g_value is None:
        A, b = np.zeros((T, 0, n)), np.zeros((T, 0))
    else:
        A, b = np.zeros((T, 1, n)), np.full((T, 1), -g_value)
    return ProblemInstance(K, T, 0.0, np.zeros(n), lin, A, b, np.zeros(n), 1.0, 1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# schedules


@pytest.mark.parametrize("T,K", [(1, 1), (4, 2), (12, 2), (1024, 32), (2048, 32), (4096, 64), (100, 4), (96, 8)])
def test_block_size(T, K):
    assert block_size(T) == K
    assert T % K == 0 and K * K <= T


def test_dpp_defaults_follow_the_prescription():
    T, R, Gf, Gg = 4096, 2.0, 3.0, 1.5
    s = dpp_schedule(T, R, Gf, Gg)
    assert s.K == 64 and s.delta == pytest.approx(64.0)
    assert s.alpha == pytest.approx(Gf / R * 8.0)
    assert s.eps == pytest.approx(61 * R**2 * math.log(T) / 64.0)
    assert s.c == pytest.approx(Gg / (12 * R) * T ** (1 / 8))


def test_primal_dual_defaults_follow_the_prescription():
    T, R, Gf, Gg = 1024, 1.0, 5.0, 2.0
    s = primal_dual_schedule(T, R, Gf, Gg)
    assert s.eta == pytest.approx(1024 ** -0.75)
    assert s.delta == pytest.approx(32 * (4 + 2) * 32 * math.sqrt(math.log(1024)))
    assert s.K == 32


def test_bandit_defaults_follow_the_prescription():
    T, n, R, r = 4096, 3, 2.0, 0.5
    s = bandit_schedule(T, n, R, r, G_f=1.0, G_g=2.0, M_f=4.0, M_g=3.0)
    assert s.mu == pytest.approx(math.sqrt(n * r) / 8.0)
    assert s.eta == pytest.approx(R / 4.0 * 4096 ** -0.75)
    dim = max(n / r, n / math.sqrt(r), math.sqrt(n), n / (math.sqrt(r) * R))
    assert s.delta == pytest.approx(24 * math.sqrt(183) * 16 * dim * 64 * math.sqrt(math.log(T)))


def test_schedule_overrides_and_scales():
    P = gen_planted_quadratic(Ball(2), 256, 0)
    base = default_schedule("dpp", P)
    s = default_schedule("dpp", P, overrides={"K": 8, "alpha": 2.0}, scales={"eps": 0.5})
    assert (s.K, s.alpha) == (8, 2.0)
    assert s.eps == pytest.approx(0.5 * base.eps)
    assert s.delta == base.delta
    with pytest.raises(ConfigurationError):
        default_schedule("dpp", P, overrides={"K": 48})
    with pytest.raises(ConfigurationError):
        default_schedule("dpp", P, overrides={"zeta": 1.0})
    with pytest.raises(ConfigurationError):
        default_schedule("dpp", P, scales={"mu": 2.0})
    with pytest.raises(ConfigurationError):
        default_schedule("bandit", gen_planted_quadratic(Simplex(2), 16, 0))
    with pytest.raises(ConfigurationError):
        ParameterSchedule(T=16, K=4, eps=-1.0, delta=1.0)


# ---------------------------------------------------------------------------
# shared invariants


def full_info_cases():
    return [
        ("ball", gen_planted_quadratic(Ball(4), 256, 1, drift=0.1)),
        ("box", gen_planted_quadratic(Box(3, [0.5, 1.0, 1.0]), 256, 2, drift=0.1)),
        ("simplex", gen_planted_quadratic(Simplex(4), 256, 3, drift=0.1)),
        ("flow", gen_capacitated_flow(SIX, 256, 4)),
        ("psd", gen_psd_affine(3, 1.0, 256, 5)),
    ]


@pytest.mark.parametrize("algorithm", ["dpp", "primal-dual"])
@pytest.mark.parametrize("name,P", full_info_cases(), ids=[c[0] for c in full_info_cases()])
def test_full_information_invariants(algorithm, name, P):
    s = default_schedule(algorithm, P, scales={"eps": 0.01})
    tr = run(algorithm, P, s)
    K = P.set
    assert len(tr) == P.T
    for x in tr.played:
        assert membership(K, x, 1e-7)
    assert np.all(tr.lam >= 0)
    assert np.all(np.diff(tr.loo_calls) >= 0)
    np.testing.assert_array_equal(tr.block, np.repeat(np.arange(1, s.n_blocks + 1), s.K))
    # the played point changes only at block boundaries
    for m in range(s.n_blocks):
        blk = tr.played[m * s.K:(m + 1) * s.K]
        assert np.all(blk == blk[0])
    # recorded values are the round functions at the played points
    for t in (0, P.T // 2, P.T - 1):
        rf = P.round(t + 1)
        assert tr.loss[t] == pytest.approx(rf.loss(tr.played[t]), abs=1e-12)
        assert tr.gplus[t] == pytest.approx(rf.gplus(tr.played[t]), abs=1e-12)
    # deterministic
    tr2 = run(algorithm, P, s)
    np.testing.assert_array_equal(tr.played, tr2.played)
    np.testing.assert_array_equal(tr.loo_calls, tr2.loo_calls)


def test_loo_counter_agrees_with_trace():
    P = gen_planted_quadratic(Ball(5), 1024, 7, drift=0.1)
    s = default_schedule("primal-dual", P, scales={"eps": 0.001})
    P.set.reset_counter()
    tr = run_primal_dual(P, s)
    assert tr.total_loo_calls == P.set.loo_calls > 0


# ---------------------------------------------------------------------------
# drift-plus-penalty


def test_dpp_with_nothing_to_learn_stays_put():
    P = trivial_problem(Ball(3), 64)
    tr = run_dpp(P, default_schedule("dpp", P))
    assert np.all(tr.played == 0)
    assert np.all(tr.loss == 0)


def test_dpp_single_block_solves_once(monkeypatch):
    calls = {"afp": 0, "inner": 0}
    real_afp, real_inner = learners_mod.afp, learners_mod.minimize_h

    def afp_spy(*a, **k):
        calls["afp"] += 1
        return real_afp(*a, **k)

    def inner_spy(*a, **k):
        calls["inner"] += 1
        return real_inner(*a, **k)

    monkeypatch.setattr(learners_mod, "afp", afp_spy)
    monkeypatch.setattr(learners_mod, "minimize_h", inner_spy)
    P = gen_planted_quadratic(Ball(3), 64, 0)
    tr = run_dpp(P, default_schedule("dpp", P, overrides={"K": 64}))
    assert calls == {"afp": 1, "inner": 1}
    assert len(tr.inner_iterations) == 1
    assert np.all(tr.played == tr.played[0])


def test_dpp_loss_gradients_are_taken_at_the_anchor(monkeypatch):
    seen = []
    real = learners_mod.minimize_h

    def spy(grad_bar, anchor, *a, **k):
        seen.append((np.array(grad_bar), np.array(anchor)))
        return real(grad_bar, anchor, *a, **k)

    monkeypatch.setattr(learners_mod, "minimize_h", spy)
    P = gen_planted_quadratic(Ball(2), 64, 3, drift=0.2)
    s = default_schedule("dpp", P, scales={"eps": 0.001})
    run_dpp(P, s)
    for m, (g, y) in enumerate(seen):
        rows = slice(m * s.K, (m + 1) * s.K)
        np.testing.assert_allclose(g, P.loss_grads(rows, y).mean(axis=0), atol=1e-12)


# ---------------------------------------------------------------------------
# primal-dual


def test_primal_dual_dual_stays_zero_without_violations():
    P = trivial_problem(Ball(3), 256, g_value=-1.0, linear=np.array([1.0, 0.0, 0.0]))
    tr = run_primal_dual(P, default_schedule("primal-dual", P))
    assert np.all(tr.lam == 0.0)


def test_dual_variable_follows_closed_form_recursion():
    # with g^+ = v constant and zero loss gradients the point never moves and
    # lam_{m+1} = a lam_m + eta K v with a = 1 - eta^2 delta K; for a in (0, 1)
    # no clipping happens and lam_m = eta K v (1 - a^m) / (1 - a)
    v = 0.3
    P = trivial_problem(Ball(2), 1024, g_value=v)
    s = default_schedule("primal-dual", P, scales={"delta": 0.1})
    a = 1.0 - s.eta * s.delta * s.eta * s.K
    assert 0.0 < a < 1.0
    tr = run_primal_dual(P, s)
    assert np.all(tr.played == 0)
    m = np.arange(s.n_blocks)
    expected = s.eta * s.K * v * (1.0 - a**m) / (1.0 - a)
    np.testing.assert_allclose(tr.lam[:: s.K], expected, rtol=1e-12, atol=1e-12)


def test_dual_variable_is_clipped_when_regularization_overshoots():
    # at desk-scale T the default delta makes a < 0, and the projection onto
    # lam >= 0 takes over; compare against a scalar loop
    v = 0.3
    P = trivial_problem(Ball(2), 1024, g_value=v)
    s = default_schedule("primal-dual", P)
    assert 1.0 - s.eta**2 * s.delta * s.K < 0
    lam, expected = 0.0, []
    for _ in range(s.n_blocks):
        expected.append(lam)
        lam = max(lam + s.eta * s.K * (v - s.delta * s.eta * lam), 0.0)
    tr = run_primal_dual(P, s)
    np.testing.assert_allclose(tr.lam[:: s.K], expected, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------------------
# bandit


def test_bandit_plays_inside_the_set_with_large_smoothing():
    K = Ball(3, 1.0)
    P = gen_planted_quadratic(K, 10_000, 1, drift=0.1)
    s = default_schedule("bandit", P, overrides={"K": 100, "mu": 0.999}, scales={"eps": 0.01, "delta": 0.001})
    tr = run_bandit(P, s, rng_seed=3)
    assert np.all(np.linalg.norm(tr.played, axis=1) <= 1.0 + 1e-9)
    for z in tr.played:
        assert membership(K, z, 1e-9)
    assert np.all(tr.lam >= 0)


def test_bandit_perturbations_have_radius_mu_around_block_centers(monkeypatch):
    seen = []
    real = learners_mod.afp

    def spy(K, y, x, eps, callback=None):
        res = real(K, y, x, eps, callback=callback)
        seen.append(res.x)
        return res

    monkeypatch.setattr(learners_mod, "afp", spy)
    K = Box(2, 1.0)
    P = gen_planted_quadratic(K, 1024, 2, drift=0.1)
    s = default_schedule("bandit", P, scales={"eps": 0.01, "delta": 0.001})
    tr = run_bandit(P, s, rng_seed=5)
    centers = [np.zeros(2)] + seen[:-1]
    Ks = shrink(K, s.mu / K.inner_radius)
    for m, c in enumerate(centers):
        assert membership(Ks, c, 1e-7)
        blk = tr.played[m * s.K:(m + 1) * s.K]
        np.testing.assert_allclose(np.linalg.norm(blk - c, axis=1), s.mu, rtol=1e-12)
        for z in blk:
            assert membership(K, z, 1e-7)


def test_bandit_is_deterministic_given_the_seed():
    P = gen_planted_quadratic(Ball(2), 256, 0, drift=0.1)
    s = default_schedule("bandit", P, scales={"eps": 0.01, "delta": 0.001})
    a, b, c = run_bandit(P, s, 1), run_bandit(P, s, 1), run_bandit(P, s, 2)
    np.testing.assert_array_equal(a.played, b.played)
    assert not np.array_equal(a.played, c.played)


def test_bandit_configuration_errors():
    P = gen_planted_quadratic(Ball(2), 64, 0)
    s = default_schedule("bandit", P)
    with pytest.raises(ConfigurationError):
        run_bandit(P, default_schedule("bandit", P, overrides={"mu": 1.5}), 0)
    Q = gen_planted_quadratic(Simplex(2), 64, 0)
    with pytest.raises(ConfigurationError):
        run_bandit(Q, s, 0)


# ---------------------------------------------------------------------------
# sphere sampling and the one-point estimator


def test_unit_sphere_in_one_dimension_is_a_fair_sign():
    u = sample_unit_sphere(np.random.default_rng(0), 1, 10_000)
    assert set(np.unique(u)) == {-1.0, 1.0}
    assert abs(np.mean(u > 0) - 0.5) <= 0.02


@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_unit_sphere_samples_have_unit_norm(n, seed):
    u = sample_unit_sphere(np.random.default_rng(seed), n, 50)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)


def test_unit_sphere_is_centered():
    U = sample_unit_sphere(np.random.default_rng(1), 3, 1_000_000)
    se = U.std(axis=0) / math.sqrt(U.shape[0])
    assert np.all(np.abs(U.mean(axis=0)) <= 3 * se)


def test_one_point_estimate_of_a_linear_function_is_unbiased():
    rng = np.random.default_rng(2)
    n, mu, N = 4, 0.3, 1_000_000
    a, x = np.array([1.0, -2.0, 0.5, 0.0]), np.array([0.1, 0.2, -0.3, 0.0])
    U = sample_unit_sphere(rng, n, N)
    est = one_point_gradients((x + mu * U) @ a, U, mu)
    se = est.std(axis=0) / math.sqrt(N)
    assert np.all(np.abs(est.mean(axis=0) - a) <= 3 * se)


# ---------------------------------------------------------------------------
# inner solver


def test_minimize_h_without_penalty_is_the_projected_step():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g, y = rng.standard_normal(3), rng.standard_normal(3)
        alpha, tol = rng.uniform(0.5, 5.0), 1e-6
        block = AffineMaxBlock(rng.standard_normal((4, 2, 3)), rng.standard_normal((4, 2)))
        res = minimize_h(g, y, block, 0.0, alpha, 1.0, tol)
        closed = project_ball(y - g / alpha, 1.0)
        assert np.linalg.norm(res.y - closed) <= math.sqrt(2 * tol / alpha)


def test_minimize_h_at_a_satisfied_origin_returns_origin():
    block = AffineMaxBlock(np.ones((3, 1, 2)), np.ones((3, 1)))
    res = minimize_h(np.zeros(2), np.zeros(2), block, 10.0, 1.0, 1.0, 1e-8)
    np.testing.assert_allclose(res.y, 0.0, atol=math.sqrt(2e-8))


def grid_minimum(grad, anchor, A, b, delta, alpha, R, step=1e-6):
    xs = np.arange(-R, R + step / 2, step)
    pen = np.maximum((A[:, :, 0][None] * xs[:, None, None] - b[None]).max(axis=2), 0.0).sum(axis=1)
    h = grad * (xs - anchor) + delta * pen + 0.5 * alpha * (xs - anchor) ** 2
    i = int(np.argmin(h))
    return xs[i], h[i]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minimize_h_matches_grid_search_in_one_dimension(seed):
    rng = np.random.default_rng(seed)
    k, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    A = rng.standard_normal((k, m, 1))
    b = rng.uniform(-0.5, 0.5, (k, m))
    grad, anchor = rng.normal(), rng.uniform(-1, 1)
    delta, alpha, tol = rng.uniform(0.1, 5.0), rng.uniform(0.5, 5.0), 1e-7
    res = minimize_h(np.array([grad]), np.array([anchor]), AffineMaxBlock(A, b), delta, alpha, 1.0, tol)
    x_grid, h_grid = grid_minimum(grad, anchor, A, b, delta, alpha, 1.0)
    assert abs(res.y[0] - x_grid) <= math.sqrt(2 * tol / alpha) + 1e-6
    h_res = h_value(res.y, np.array([grad]), np.array([anchor]), AffineMaxBlock(A, b), delta, alpha)
    assert h_res <= h_grid + tol + 1e-9


def test_dual_and_subgradient_solvers_agree():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 2, 2))
    b = rng.uniform(-0.3, 0.1, (3, 2))
    grad, anchor = rng.standard_normal(2), rng.standard_normal(2) * 0.5
    block = AffineMaxBlock(A, b)
    funcs = [
        (lambda x, i=i: max(float((A[i] @ x - b[i]).max()), 0.0),
         lambda x, i=i: A[i][int(np.argmax(A[i] @ x - b[i]))] * float((A[i] @ x - b[i]).max() > 0))
        for i in range(3)
    ]
    lip = float(np.linalg.norm(A, axis=2).max())
    tol, alpha = 1e-3, 2.0
    fast = minimize_h(grad, anchor, block, 1.5, alpha, 1.0, tol)
    slow = minimize_h(grad, anchor, CallableBlock(funcs, lip), 1.5, alpha, 1.0, tol)
    assert slow.iterations > 0 and math.isnan(slow.gap) and fast.gap <= tol
    assert np.linalg.norm(fast.y - slow.y) <= 2 * math.sqrt(2 * tol / alpha)


def test_minimize_h_rejects_bad_tolerance():
    block = AffineMaxBlock(np.ones((1, 1, 2)), np.zeros((1, 1)))
    with pytest.raises(InputError):
        minimize_h(np.zeros(2), np.ones(2), block, 1.0, 1.0, 1.0, 0.0)
    with pytest.raises(InputError):
        minimize_h(np.zeros(2), np.ones(2), block, 1.0, 0.0, 1.0, 1e-3)


# ---------------------------------------------------------------------------
# trace CSV


def test_trace_csv_format(tmp_path):
    P = gen_planted_quadratic(Ball(2), 16, 0)
    tr = run_dpp(P, default_schedule("dpp", P))
    path = tmp_path / "trace.csv"
    write_trace_csv(tr, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0] == "t,block,loss,gplus,lambda,loo_calls"
    assert len(lines) == 17
    first = lines[1].split(",")
    assert first[0] == "1" and float(first[2]) == tr.loss[0]
