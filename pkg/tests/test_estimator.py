import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppdre.basis import GaussianBasis
from ppdre.estimator import (
    FitConfig, PPRatioModel, Projection, _step_terms, canonicalize, empirical_loss, fit, fit_projection,
    loss_grad, profile_beta,
)
from ppdre.worlds import gen_gaussian_pair

from oracles import brute_force_beta, central_difference, criterion, random_instance


def _args(inst, beta=None):
    head = (inst["a"], GaussianBasis(inst["gamma"]))
    if beta is not None:
        head = head + (beta,)
    return head + (inst["lam"], inst["w_q"], inst["w_p"], inst["X_q"], inst["X_p"])


def _sorted(inst):
    inst = dict(inst)
    inst["gamma"] = np.sort(inst["gamma"])
    return inst


# ---------------------------------------------------------------------------
# profiled coefficients

def test_profile_beta_matches_brute_force():
    r = np.random.default_rng(1)
    for _ in range(40):
        inst = _sorted(random_instance(r))
        beta = profile_beta(*_args(inst))
        ref = brute_force_beta(inst["a"], inst["gamma"], inst["lam"], inst["w_q"], inst["w_p"],
                               inst["X_q"], inst["X_p"])
        assert np.max(np.abs(beta - ref)) <= 2e-3


def test_profile_beta_scalar_hand_case():
    # every basis evaluation equals c, so the normal equation is c^2 beta = c
    X = np.zeros((4, 2))
    basis = GaussianBasis(np.array([0.7]))
    c = np.exp(-0.5 * 0.7**2)
    beta = profile_beta(np.array([1.0, 0.0]), basis, 0.0, np.ones(4), np.ones(4), X, X)
    np.testing.assert_allclose(beta, [1 / c], rtol=1e-12)


def test_profile_beta_ridge_limit():
    inst = _sorted(random_instance(np.random.default_rng(2), J=2))
    norms = []
    for lam in (0.1, 1.0, 10.0, 1e3, 1e12):
        inst["lam"] = lam
        norms.append(np.linalg.norm(profile_beta(*_args(inst))))
    assert all(b <= a for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-10


@given(seed=st.integers(0, 2**31), lam=st.sampled_from([0.5, 1.0, 5.0, 10.0]), J=st.integers(1, 20))
def test_profiled_beta_is_stationary(seed, lam, J):
    r = np.random.default_rng(seed)
    inst = _sorted(random_instance(r, J=J, n_max=40))
    inst["gamma"] = np.sort(r.uniform(-2, 2, J))
    inst["lam"] = lam
    beta = profile_beta(*_args(inst))
    phi_q = np.exp(-0.5 * ((inst["X_q"] @ inst["a"])[:, None] - inst["gamma"]) ** 2)
    phi_p = np.exp(-0.5 * ((inst["X_p"] @ inst["a"])[:, None] - inst["gamma"]) ** 2)
    Z = inst["w_q"][:, None] * phi_q
    W = phi_p.T @ inst["w_p"] / phi_p.shape[0]
    grad = 2 * (Z.T @ Z / Z.shape[0] + lam * np.eye(J)) @ beta - 2 * W
    assert np.max(np.abs(grad)) <= 1e-8 * (1 + np.linalg.norm(W))


# ---------------------------------------------------------------------------
# loss and gradients

def test_empirical_loss_zero_beta():
    inst = _sorted(random_instance(np.random.default_rng(3), J=2))
    assert empirical_loss(*_args(inst, np.zeros(2))) == 0.0


def test_empirical_loss_matches_definition_and_expansion():
    r = np.random.default_rng(4)
    for _ in range(20):
        inst = _sorted(random_instance(r))
        beta = r.standard_normal(inst["gamma"].size)
        got = empirical_loss(*_args(inst, beta))
        ref = criterion(inst["a"], inst["gamma"], beta, inst["lam"], inst["w_q"], inst["w_p"],
                        inst["X_q"], inst["X_p"])
        assert got == pytest.approx(float(ref), rel=1e-12, abs=1e-14)
        phi_q = np.exp(-0.5 * ((inst["X_q"] @ inst["a"])[:, None] - inst["gamma"]) ** 2)
        phi_p = np.exp(-0.5 * ((inst["X_p"] @ inst["a"])[:, None] - inst["gamma"]) ** 2)
        Z = inst["w_q"][:, None] * phi_q
        W = phi_p.T @ inst["w_p"]
        quad = beta @ (Z.T @ Z / len(Z) + inst["lam"] * np.eye(beta.size)) @ beta - 2 * beta @ W / len(phi_p)
        assert got == pytest.approx(quad, rel=1e-12, abs=1e-14)


def test_profiled_beta_is_local_minimum():
    r = np.random.default_rng(5)
    inst = _sorted(random_instance(r, J=2))
    inst["lam"] = 0.0
    inst["X_q"] = r.standard_normal((30, inst["a"].size))
    inst["w_q"] = np.ones(30)
    beta = profile_beta(*_args(inst))
    base = empirical_loss(*_args(inst, beta))
    for _ in range(20):
        assert empirical_loss(*_args(inst, beta + 1e-3 * r.standard_normal(2))) >= base


def _relerr(an, fd):
    return np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)


def test_loss_grad_matches_central_differences():
    r = np.random.default_rng(6)
    for _ in range(50):
        inst = _sorted(random_instance(r, J=int(r.integers(1, 6)), n_max=20))
        beta = r.standard_normal(inst["gamma"].size)
        g_a, g_gamma = loss_grad(*_args(inst, beta))
        f_a = lambda a: empirical_loss(a, GaussianBasis(inst["gamma"]), beta, inst["lam"], inst["w_q"],
                                       inst["w_p"], inst["X_q"], inst["X_p"])
        # gamma perturbations keep the sort order at h = 1e-5 for these draws
        f_g = lambda g: float(criterion(inst["a"], g, beta, inst["lam"], inst["w_q"], inst["w_p"],
                                        inst["X_q"], inst["X_p"]))
        assert np.max(_relerr(g_a, central_difference(f_a, inst["a"]))) <= 1e-4
        assert np.max(_relerr(g_gamma, central_difference(f_g, inst["gamma"]))) <= 1e-4


def test_loss_grad_zero_beta_and_duplication():
    r = np.random.default_rng(7)
    inst = _sorted(random_instance(r, J=3))
    g_a, g_gamma = loss_grad(*_args(inst, np.zeros(3)))
    assert not g_a.any() and not g_gamma.any()
    beta = r.standard_normal(3)
    g1 = loss_grad(*_args(inst, beta))
    dup = dict(inst, w_q=np.tile(inst["w_q"], 2), w_p=np.tile(inst["w_p"], 2),
               X_q=np.vstack([inst["X_q"]] * 2), X_p=np.vstack([inst["X_p"]] * 2))
    g2 = loss_grad(*_args(dup, beta))
    np.testing.assert_allclose(g1[0], g2[0], rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(g1[1], g2[1], rtol=1e-12, atol=1e-15)


def test_fused_step_agrees_with_public_functions():
    r = np.random.default_rng(8)
    inst = _sorted(random_instance(r, J=6, n_max=30))
    beta, loss, g_a, g_gamma = _step_terms(inst["a"], inst["gamma"], inst["lam"], inst["w_q"], inst["w_p"],
                                           inst["X_q"], inst["X_p"])
    np.testing.assert_allclose(beta, profile_beta(*_args(inst)), rtol=1e-12)
    # the profiled criterion drops the constant-free form lam|b|^2 + mean terms
    assert loss == pytest.approx(empirical_loss(*_args(inst, beta)), rel=1e-10)
    ref = loss_grad(*_args(inst, beta))
    np.testing.assert_allclose(g_a, ref[0], rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(g_gamma, ref[1], rtol=1e-10, atol=1e-14)


# ---------------------------------------------------------------------------
# model objects

def _projection(a, gamma, beta, floor=0.05):
    return Projection.from_arrays(np.asarray(a, float), np.asarray(gamma, float), np.asarray(beta, float), floor)


def test_constant_model():
    m = PPRatioModel(3)
    assert m(np.zeros(3)) == 1.0
    np.testing.assert_array_equal(m(np.ones((4, 3))), 1.0)


def test_truncation_branch():
    p = _projection([1.0, 0.0], [0.0], [-1.0], floor=0.3)
    m = PPRatioModel(2, [p])
    assert m(np.array([0.2, 5.0])) == 0.3


def test_product_of_factors():
    r = np.random.default_rng(9)
    ps = [_projection(v / np.linalg.norm(v), r.uniform(-1, 1, 4), r.uniform(0.1, 1, 4))
          for v in r.standard_normal((2, 3))]
    m = PPRatioModel(3, ps)
    X = r.standard_normal((10, 3))
    np.testing.assert_allclose(m(X), ps[0](X) * ps[1](X), rtol=1e-12)


def test_projection_rejects_bad_inputs():
    with pytest.raises(ValueError):
        _projection([1.0, 1.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        _projection([1.0, 0.0], [0.0], [1.0], floor=0.0)


def test_canonicalize_example():
    p = _projection([-1.0, 0.0], [0.5], [1.0])
    c = canonicalize(p)
    np.testing.assert_array_equal(c.a, [1.0, 0.0])
    np.testing.assert_array_equal(c.gamma, [-0.5])
    X = np.random.default_rng(10).standard_normal((20, 2))
    np.testing.assert_allclose(c(X), p(X), rtol=0, atol=1e-12)
    assert canonicalize(c) is c


@given(seed=st.integers(0, 2**31), d=st.integers(1, 5), J=st.integers(1, 6))
def test_canonicalize_invariance_and_idempotence(seed, d, J):
    r = np.random.default_rng(seed)
    a = r.standard_normal(d)
    p = _projection(a / np.linalg.norm(a), r.uniform(-2, 2, J), r.standard_normal(J))
    c = canonicalize(p)
    X = r.standard_normal((20, d))
    assert np.max(np.abs(c(X) - p(X))) <= 1e-12
    assert c.a[np.flatnonzero(c.a)[0]] > 0
    cc = canonicalize(c)
    np.testing.assert_array_equal(cc.a, c.a)
    np.testing.assert_array_equal(cc.gamma, c.gamma)


@given(seed=st.integers(0, 2**31), K=st.integers(1, 4))
def test_evaluate_bounded_below_by_floors(seed, K):
    r = np.random.default_rng(seed)
    ps = []
    for _ in range(K):
        a = r.standard_normal(2)
        ps.append(_projection(a / np.linalg.norm(a), r.uniform(-2, 2, 3), r.standard_normal(3),
                              floor=float(r.uniform(1e-3, 1))))
    m = PPRatioModel(2, ps)
    X = 10 * r.standard_normal((50, 2))
    assert np.all(m(X) >= np.prod([p.floor for p in ps]) * (1 - 1e-15))
    assert np.all(m(X) > 0)


def test_serialization_round_trip_is_exact():
    r = np.random.default_rng(11)
    ps = [_projection(v / np.linalg.norm(v), r.uniform(-1, 1, 5), r.standard_normal(5), 0.0123)
          for v in r.standard_normal((3, 4))]
    m = PPRatioModel(4, ps)
    back = PPRatioModel.from_dict(json.loads(m.to_json()))
    X = r.standard_normal((100, 4))
    np.testing.assert_array_equal(back(X), m(X))


# ---------------------------------------------------------------------------
# fitting

def test_fit_projection_on_identical_samples():
    X = np.random.default_rng(12).standard_normal((400, 2))
    proj = fit_projection(PPRatioModel(2), X, X, FitConfig(J=20, lam=0.5, lr=0.05, max_inner_iters=300))
    assert abs(np.linalg.norm(proj.a) - 1) <= 1e-12
    assert 0.8 <= np.mean(proj(X)) <= 1.2
    assert proj.info["loss"] == min(proj.info["loss_history"])


def test_profiling_never_increases_loss_at_fixed_directions():
    # replays the alternating scheme: at each new (a, gamma) the fresh beta
    # beats the stale beta carried over from the previous iterate
    from ppdre.numerics import AdamState, adam_step

    data = gen_gaussian_pair(2, 300, 300, seed=3)
    X_q, X_p = data.X_q, data.X_p
    ones_q, ones_p = np.ones(len(X_q)), np.ones(len(X_p))
    r = np.random.default_rng(0)
    a = r.standard_normal(2)
    a /= np.linalg.norm(a)
    gamma = np.sort(r.uniform(-3, 3, 10))
    state = AdamState.zeros(12)
    beta_prev = None
    for _ in range(30):
        beta, loss, g_a, g_g = _step_terms(a, gamma, 0.5, ones_q, ones_p, X_q, X_p)
        if beta_prev is not None:
            stale = float(criterion(a, gamma, beta_prev, 0.5, ones_q, ones_p, X_q, X_p))
            assert loss <= stale + 1e-12
        params, state = adam_step(np.concatenate([a, gamma]), np.concatenate([g_a, g_g]), state, 0.05)
        a = params[:2] / np.linalg.norm(params[:2])
        gamma, beta_prev = params[2:], beta


def test_fit_zero_and_determinism():
    data = gen_gaussian_pair(2, 300, 300, seed=1)
    assert fit(data.X_p, data.X_q, K=0).K == 0
    cfg = FitConfig(J=10, lam=0.5, lr=0.05, max_inner_iters=100, seed=4)
    m1 = fit(data.X_p, data.X_q, cfg, K=2)
    m2 = fit(data.X_p, data.X_q, cfg, K=2)
    assert m1.to_json() == m2.to_json()
    assert m1.K == 2


def test_fit_rejects_mismatched_dimensions():
    with pytest.raises(ValueError):
        fit(np.zeros((5, 2)), np.zeros((5, 3)), K=1)
