import math
import warnings

import numpy as np
import pytest

from dynrecip.em import (BETA_FLOOR, DegenerateFitWarning, _e_step, _fast_numerators,
                         _numerators, beta_constants, e_step, fit, initialize, m_step_full_dyn,
                         m_step_w_dyn, m_step_w_static, solve_beta, update_beta)
from dynrecip.errors import EmptyNetworkError, ValidationError
from dynrecip.generator import GeneratorConfig, generate
from dynrecip.model import (Hyperparams, NetworkStats, Variant, log_likelihood,
                            regularized_objective)
from dynrecip.temporal_graph import TemporalNetwork

from oracles import beta_root_quadratic


def small_net(seed, N=8, S=3, p=0.3):
    rng = np.random.default_rng(seed)
    A = (rng.random((S, N, N)) < p).astype(np.int64)
    for t in range(S):
        np.fill_diagonal(A[t], 0)
    return TemporalNetwork.from_dense(A)


def planted(seed=0, N=60, T=3, deg=4.0):
    return generate(GeneratorConfig(n_nodes=N, K=2, avg_degree=deg, T=T, seed=seed))


# -- beta -------------------------------------------------------------------

def test_beta_root_known_constants():
    # quadratic 10 b^2 - 14 b + 3 = 0
    assert solve_beta(3.0, 10.0, 1.0) == pytest.approx(0.2641101056459326, abs=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_beta_root_matches_quadratic(seed):
    rng = np.random.default_rng(seed)
    c1, c2, c3 = rng.uniform(0.1, 100, 3)
    assert solve_beta(c1, c2, c3) == pytest.approx(beta_root_quadratic(c1, c2, c3), abs=1e-10)


def test_beta_without_persisting_edges():
    assert solve_beta(3.0, 10.0, 0.0) == pytest.approx(0.3)
    assert solve_beta(5.0, 2.0, 0.0) == 1.0


def test_beta_floor_when_nothing_changes():
    with pytest.warns(DegenerateFitWarning):
        assert solve_beta(0.0, 10.0, 4.0) == BETA_FLOOR


def test_update_beta_maximizes_objective_over_grid():
    net, _ = planted(1)
    h = Hyperparams(K=2)
    p = initialize(net, 2, "w-dyn", np.random.default_rng(0))
    best = p.with_(beta=update_beta(net, p))
    top = regularized_objective(net, best, h)
    for b in np.linspace(0.01, 0.99, 99):
        assert regularized_objective(net, p.with_(beta=b), h) <= top + 1e-9


def test_update_beta_needs_a_transition():
    net = small_net(0, S=1)
    p = initialize(net, 2, "w-static", np.random.default_rng(0))
    with pytest.raises(ValidationError):
        update_beta(net, p)


# -- E-step -------------------------------------------------------------------

def event_bound(state, params, stats, rho1, phi):
    """Jensen bound of sum_e w_e log(lambda_e + eta R_e) for given responsibilities."""
    prod, _ = stats.event_rates(params)
    rho2 = 1 - rho1
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(phi > 0, phi * np.log(prod / (rho1[:, None, None] * phi)), 0).sum(axis=(1, 2))
        b = np.where(rho2 > 0, rho2 * np.log(params.eta * state.rec / rho2), 0)
    return float((state.weight * (rho1 * a + b)).sum())


def test_e_step_makes_the_bound_tight_and_is_optimal():
    net, _ = planted(2)
    rng = np.random.default_rng(5)
    p = initialize(net, 2, "w-dyn", rng)
    stats = NetworkStats.build(net, 1)
    state = e_step(net, p)
    assert np.allclose(state.rho1 + state.rho2, 1)
    assert np.allclose(state.phi.sum(axis=(1, 2)), 1)
    prod, lam = stats.event_rates(p)
    exact = float((state.weight * np.log(lam + p.eta * state.rec)).sum())
    tight = event_bound(state, p, stats, state.rho1, state.phi)
    assert tight == pytest.approx(exact, rel=1e-12)
    for _ in range(5):
        phi = state.phi * rng.uniform(0.5, 1.5, state.phi.shape)
        phi /= phi.sum(axis=(1, 2), keepdims=True)
        assert event_bound(state, p, stats, state.rho1, phi) <= tight + 1e-9


def test_e_step_zero_denominator_convention():
    net = small_net(3, N=4, S=2)
    p = initialize(net, 2, "w-dyn", np.random.default_rng(0)).with_(eta=0.0)
    p = p.with_(w=np.zeros_like(p.w))
    state = e_step(net, p)
    assert np.all(state.rho1 == 1.0)
    assert np.allclose(state.phi, 0.25)


@pytest.mark.parametrize("variant", list(Variant))
def test_factor_numerators_match_responsibility_numerators(variant):
    net, _ = planted(3)
    p = initialize(net, 2, variant, np.random.default_rng(1))
    stats = NetworkStats.build(net, 1)
    per_step = p.variant is Variant.FULL_DYN
    slow = _numerators(stats, _e_step(stats, p), per_step)
    fast = _fast_numerators(stats, p, stats.event_factors(p), per_step)
    for a, b in zip(slow, fast):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_factor_numerators_with_zero_rates():
    net = small_net(4, N=5, S=3)
    p = initialize(net, 2, "w-dyn", np.random.default_rng(0))
    w = p.w.copy()
    w[1] = 0.0
    p = p.with_(w=w)
    stats = NetworkStats.build(net, 1)
    for eta in (0.0, 0.7):
        q = p.with_(eta=eta)
        slow = _numerators(stats, _e_step(stats, q), False)
        fast = _fast_numerators(stats, q, stats.event_factors(q), False)
        for a, b in zip(slow, fast):
            assert np.allclose(a, b)


# -- M-step -------------------------------------------------------------------

@pytest.mark.parametrize("variant,fn", [("w-static", m_step_w_static), ("w-dyn", m_step_w_dyn),
                                        ("full-dyn", m_step_full_dyn)])
def test_single_em_step_does_not_decrease_objective(variant, fn):
    net, _ = planted(4)
    h = Hyperparams(K=2)
    p = initialize(net, 2, variant, np.random.default_rng(2))
    new = fn(net, e_step(net, p), p, h)
    assert regularized_objective(net, new, h) >= regularized_objective(net, p, h) - 1e-8


def test_m_step_rejects_wrong_variant():
    net = small_net(0)
    p = initialize(net, 2, "w-dyn", np.random.default_rng(0))
    with pytest.raises(ValidationError):
        m_step_w_static(net, e_step(net, p), p, Hyperparams(K=2))


def test_eta_update_is_near_a_coordinate_maximum():
    # the update maximizes the bound; near a fixed point the bound and the objective agree
    net, _ = planted(5)
    h = Hyperparams(K=2)
    p = fit(net, Hyperparams(K=2, n_restarts=1, max_iter=50)).params
    new = m_step_w_dyn(net, e_step(net, p), p, h)
    top = regularized_objective(net, new, h)
    for eta in np.linspace(0, 2 * new.eta + 0.1, 81):
        assert regularized_objective(net, new.with_(eta=eta), h) <= top + 1e-6 * abs(top)


# -- fit ------------------------------------------------------------------------

@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("rec_lag", [0, 1])
def test_traces_are_non_decreasing(variant, rec_lag):
    net, _ = planted(6, N=40, T=3)
    res = fit(net, Hyperparams(K=2, n_restarts=2, max_iter=150), variant, rec_lag=rec_lag)
    assert np.all(np.diff(res.objective_trace) >= -1e-8)


def test_ablation_keeps_eta_at_zero():
    net, _ = planted(7)
    res = fit(net, Hyperparams(K=2, n_restarts=2, max_iter=100), fix_eta=0.0)
    assert res.params.eta == 0.0


def test_fit_is_deterministic_and_thread_independent():
    net, _ = planted(8)
    h = Hyperparams(K=2, n_restarts=3, max_iter=80, seed=11)
    a = fit(net, h)
    b = fit(net, h, n_jobs=3)
    assert a.params.to_json() == b.params.to_json()
    assert a.objective_trace == b.objective_trace
    assert a.restart_seed == b.restart_seed


def test_best_restart_is_selected():
    net, _ = planted(9)
    res = fit(net, Hyperparams(K=2, n_restarts=4, max_iter=60))
    assert res.objective == max(res.restart_objectives)
    assert res.restart_seed == (0, int(np.argmax(res.restart_objectives)))


def test_single_snapshot_dyn_and_static_agree():
    net = small_net(10, N=12, S=1)
    h = Hyperparams(K=2, n_restarts=2, max_iter=60, seed=3)
    a = fit(net, h, "w-dyn")
    b = fit(net, h, "w-static")
    assert np.allclose(a.params.u, b.params.u)
    assert np.allclose(a.params.v, b.params.v)
    assert np.allclose(a.params.w[0], b.params.w)
    assert np.allclose(a.objective_trace, b.objective_trace)


def test_permutation_equivariance():
    net, _ = planted(11, N=30)
    perm = np.random.default_rng(0).permutation(30)
    A = net.dense()[:, perm][:, :, perm]
    pnet = TemporalNetwork.from_dense(A)
    h = Hyperparams(K=2, n_restarts=1, max_iter=40)
    init = initialize(net, 2, "w-dyn", np.random.default_rng(4))
    pinit = init.with_(u=init.u[perm], v=init.v[perm])
    a = fit(net, h, init=init)
    b = fit(pnet, h, init=pinit)
    assert np.allclose(a.params.u[perm], b.params.u, rtol=1e-9, atol=1e-12)
    assert np.allclose(a.params.v[perm], b.params.v, rtol=1e-9, atol=1e-12)
    assert a.params.eta == pytest.approx(b.params.eta, rel=1e-9)


def test_stationarity_at_convergence():
    net, _ = planted(12, N=40, deg=5.0)
    h = Hyperparams(K=2, n_restarts=1, tolerance=1e-12, max_iter=4000)
    p = fit(net, h).params
    eps = 1e-6

    def grad(make):
        return (regularized_objective(net, make(eps), h) -
                regularized_objective(net, make(-eps), h)) / (2 * eps)

    assert abs(grad(lambda d: p.with_(eta=p.eta + d))) < 1e-4 * max(1, net.n_edges(1))
    assert abs(grad(lambda d: p.with_(beta=p.beta + d))) < 1e-4 * max(1, net.n_edges(1))
    k = np.unravel_index(np.argmax(p.w), p.w.shape)

    def bump(d):
        w = p.w.copy()
        w[k] += d * p.w[k]
        return p.with_(w=w)

    assert abs(grad(bump)) < 1e-3


def test_all_persisting_edges_warn_and_floor_beta():
    A = np.zeros((3, 4, 4), dtype=np.int64)
    A[:, 0, 1] = A[:, 1, 2] = A[:, 2, 0] = A[:, 3, 0] = 1
    net = TemporalNetwork.from_dense(A)
    with pytest.warns(DegenerateFitWarning):
        res = fit(net, Hyperparams(K=1, n_restarts=1, max_iter=30))
    assert res.params.beta == BETA_FLOOR
    assert np.isfinite(res.objective)


def test_empty_network_raises():
    net = TemporalNetwork(0, (np.zeros((0, 0)),))
    with pytest.raises(EmptyNetworkError):
        fit(net, Hyperparams(K=1))


def test_single_node_fit_is_finite():
    net = TemporalNetwork.from_dense(np.zeros((2, 1, 1), dtype=np.int64))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFitWarning)
        res = fit(net, Hyperparams(K=1, n_restarts=1, max_iter=20))
    assert np.isfinite(res.objective)


def test_observed_mask_of_ones_equals_unmasked():
    net, _ = planted(13, N=20)
    h = Hyperparams(K=2, n_restarts=1, max_iter=30)
    a = fit(net, h)
    b = fit(net, h, observed=np.ones((net.n_steps, 20, 20)))
    assert np.allclose(a.objective_trace, b.objective_trace)


def test_hidden_last_step_entries_do_not_influence_the_fit():
    # entries of the last snapshot enter no other factor, so flipping hidden ones is invisible
    net, _ = planted(14, N=20)
    rng = np.random.default_rng(0)
    mask = np.ones((net.n_steps, 20, 20))
    mask[-1] = rng.random((20, 20)) < 0.7
    A = net.dense()
    hidden = mask[-1] == 0
    A[-1][hidden] = 1 - A[-1][hidden]
    np.fill_diagonal(A[-1], 0)
    h = Hyperparams(K=2, n_restarts=1, max_iter=30)
    a = fit(net, h, observed=mask)
    b = fit(TemporalNetwork.from_dense(A), h, observed=mask)
    assert np.allclose(a.objective_trace, b.objective_trace)
    assert np.allclose(a.params.u, b.params.u)


def test_log_likelihood_of_fit_is_finite():
    net, _ = planted(15)
    res = fit(net, Hyperparams(K=2, n_restarts=1, max_iter=40))
    assert math.isfinite(log_likelihood(net, res.params))


# -- coordinate-scan oracle ----------------------------------------------------

def _scan_max(f, lo, hi):
    """Maximizer of a concave 1-D function: bracket on a grid, then root-find its slope."""
    from scipy.optimize import brentq
    grid = np.linspace(lo, hi, 401)
    vals = [f(x) for x in grid]
    k = int(np.argmax(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]

    def slope(x):
        h = 1e-6 * max(abs(x), 1e-3)
        return (f(x + h) - f(x - h)) / (2 * h)

    if slope(a) <= 0:
        return a
    if slope(b) >= 0:
        return b
    return brentq(slope, a, b, xtol=1e-12)


@pytest.mark.parametrize("variant", ["w-dyn", "w-static"])
def test_m_step_matches_coordinate_scan_of_the_bound(variant):
    from oracles import elbo
    rng = np.random.default_rng(21)
    A = np.array([[[0, 1, 1], [1, 0, 0], [1, 1, 0]],
                  [[0, 1, 0], [1, 0, 1], [0, 1, 0]],
                  [[0, 0, 1], [1, 0, 1], [1, 1, 0]]])
    net = TemporalNetwork.from_dense(A)
    h = Hyperparams(K=2)
    p = initialize(net, 2, variant, rng)
    p = p.with_(w=p.w + 0.3)
    state = e_step(net, p)
    keys = list(zip(state.t.tolist(), state.i.tolist(), state.j.tolist()))
    rho1 = dict(zip(keys, state.rho1))
    phi = dict(zip(keys, state.phi))
    new = (m_step_w_dyn if variant == "w-dyn" else m_step_w_static)(net, state, p, h)

    def bound(q):
        return elbo(A, q, rho1, phi, h.a, h.b)

    cur = p
    for name in ("u", "v", "w"):
        arr = getattr(new, name)
        for idx in np.ndindex(arr.shape):
            def f(x, name=name, idx=idx):
                a = getattr(cur, name).copy()
                a[idx] = x
                return bound(cur.with_(**{name: a}))
            best = _scan_max(f, 1e-9, 5 * arr[idx] + 1)
            assert best == pytest.approx(arr[idx], abs=1e-6)
        cur = cur.with_(**{name: arr})
    eta = _scan_max(lambda x: bound(cur.with_(eta=x)), 1e-9, 5 * new.eta + 1)
    assert eta == pytest.approx(new.eta, abs=1e-6)
    cur = cur.with_(eta=new.eta)
    beta = _scan_max(lambda x: bound(cur.with_(beta=x)), 1e-9, 1 - 1e-9)
    assert beta == pytest.approx(new.beta, abs=1e-6)


def test_converged_fit_is_a_fixed_point():
    net, _ = planted(16, N=30, deg=4.0)
    h = Hyperparams(K=2, n_restarts=1, tolerance=1e-15, max_iter=20000, check_every=50)
    p = fit(net, h).params
    again = m_step_w_dyn(net, e_step(net, p), p, h)
    for name in ("u", "v", "w"):
        assert np.allclose(getattr(again, name), getattr(p, name), rtol=1e-8, atol=1e-10)
    assert again.eta == pytest.approx(p.eta, rel=1e-8)
    assert again.beta == pytest.approx(p.beta, rel=1e-8)


def test_constant_network_full_dyn_fixed_point():
    A0 = (np.random.default_rng(4).random((12, 12)) < 0.3).astype(np.int64)
    np.fill_diagonal(A0, 0)
    net = TemporalNetwork.from_dense(np.stack([A0, A0, A0]))
    h = Hyperparams(K=2, n_restarts=1, tolerance=1e-15, max_iter=20000, check_every=50)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFitWarning)
        p = fit(net, h, "full-dyn").params
        again = m_step_full_dyn(net, e_step(net, p), p, h)
    for name in ("u", "v", "w", "beta"):
        assert np.allclose(getattr(again, name), getattr(p, name), rtol=1e-8, atol=1e-10)
    assert again.eta == pytest.approx(p.eta, abs=1e-10)
