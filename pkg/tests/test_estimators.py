import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import instances, series_value
from lstdkit.estimators import (
    bayes_map,
    brm_design,
    brm_sample,
    episodic_lstd,
    episodic_lstd_design,
    episodic_value,
    lds_model,
    lds_sample,
    lds_series,
    lds_solve,
    lstd_design,
    lstd_pinv,
    lstd_pinv_design,
    lstd_sample,
    quadratic_form_k,
    sample_system,
    td_iterate_design,
    td_iterate_sample,
    td_iterate_system,
    design_system,
)
from lstdkit.exceptions import MaxItersExceeded, MissingAltSample, SingularGram, SingularSystem
from lstdkit.instances import terminating_chain, two_step_episode
from lstdkit.mrp import (
    EpisodicMrp,
    Mrp,
    Trajectory,
    exact_value,
    sample_episodes,
    sample_trajectory,
    stationary_weights,
)

# balanced edge counts: row sums equal column sums, so an Euler circuit exists
CENSUS_COUNTS = np.array([[2, 3, 1], [2, 1, 3], [2, 2, 0]])


def census_walk():
    """A closed walk using every transition i->j exactly CENSUS_COUNTS[i, j] times."""
    g = nx.MultiDiGraph()
    for i, j in zip(*np.nonzero(CENSUS_COUNTS)):
        g.add_edges_from([(int(i), int(j))] * int(CENSUS_COUNTS[i, j]))
    edges = list(nx.eulerian_circuit(g, source=0))
    return np.array([edges[0][0]] + [v for _, v in edges])


def census_mrp(gamma=0.8):
    rows = CENSUS_COUNTS.sum(axis=1, keepdims=True)
    return Mrp(CENSUS_COUNTS / rows, [1.0, -2.0, 0.5], gamma)


def test_census_walk_is_exact():
    states = census_walk()
    counts = np.zeros((3, 3), int)
    np.add.at(counts, (states[:-1], states[1:]), 1)
    np.testing.assert_array_equal(counts, CENSUS_COUNTS)


@pytest.mark.parametrize("phi", [np.eye(3), np.array([[1.0, 0.3], [0.2, 1.0], [-0.5, 0.7]])])
def test_sample_lstd_on_census_matches_design(phi):
    mrp = census_mrp()
    states = census_walk()
    traj = Trajectory.from_states(states, phi, mrp.mean_reward[states])
    design = lstd_design(mrp, phi)
    np.testing.assert_allclose(stationary_weights(mrp).weights,
                               CENSUS_COUNTS.sum(axis=1) / CENSUS_COUNTS.sum(), atol=1e-12)
    np.testing.assert_allclose(lstd_sample(traj, 0.8).w, design.w, atol=1e-8)
    _, _, est = lds_sample(traj, 0.8)
    np.testing.assert_allclose(est.w, design.w, atol=1e-8)


# ---------------------------------------------------------------------------
# LSTD

def test_lstd_tabular_two_state(two_state):
    mrp, fmap = two_state
    np.testing.assert_allclose(lstd_design(mrp, fmap).w, [5.5, 4.5], atol=1e-12)


@given(instances())
def test_lstd_fixpoint(inst):
    est = lstd_design(inst.mrp, inst.fmap, inst.xi)
    phi, m = inst.phi, inst.mrp
    v = phi @ est.w
    xi = inst.xi.weights
    # Phi w is the Xi-projection of T(Phi w): residual orthogonal to the features
    resid = m.mean_reward + m.discount * m.transition @ v - v
    scale = max(1.0, np.max(np.abs(v)))
    assert np.max(np.abs(phi.T @ (xi * resid))) <= 1e-9 * scale


def test_lstd_gamma_zero_is_weighted_regression():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(4), size=4)
    r = rng.standard_normal(4)
    phi = rng.standard_normal((4, 2))
    mrp = Mrp(p, r, 0.0)
    xi = stationary_weights(mrp).weights
    root = np.sqrt(xi)[:, None]
    oracle, *_ = np.linalg.lstsq(root * phi, root[:, 0] * r, rcond=None)
    np.testing.assert_allclose(lstd_design(mrp, phi).w, oracle, atol=1e-12)


def test_lstd_zero_rewards(two_state):
    mrp, fmap = two_state
    zero = Mrp(mrp.transition, [0.0, 0.0], mrp.discount)
    assert np.all(lstd_design(zero, fmap).w == 0.0)
    traj = sample_trajectory(zero, fmap, 100, seed=0)
    assert np.all(lstd_sample(traj, 0.9).w == 0.0)


def test_lstd_sample_consistency(two_state_noisy):
    mrp, fmap = two_state_noisy
    traj = sample_trajectory(mrp, fmap, 100_000, seed=1)
    assert np.max(np.abs(lstd_sample(traj, 0.9).w - [5.5, 4.5])) <= 0.05


def test_lstd_singular_features():
    mrp = census_mrp()
    with pytest.raises(SingularSystem):
        lstd_design(mrp, np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]))


# ---------------------------------------------------------------------------
# pseudo-inverse LSTD

def test_pinv_duplicate_column_matches_single(two_state):
    mrp, _ = two_state
    phi1 = np.array([[1.0], [2.0]])
    phi2 = np.hstack([phi1, phi1])
    v1 = phi1 @ lstd_design(mrp, phi1).w
    est = lstd_pinv_design(mrp, phi2)
    np.testing.assert_allclose(phi2 @ est.w, v1, atol=1e-10)
    # minimum-norm split of the single weight
    np.testing.assert_allclose(est.w[0], est.w[1], atol=1e-12)
    assert est.diagnostics["rank"] == 1


def test_pinv_equals_lstd_when_invertible(two_state_noisy):
    mrp, fmap = two_state_noisy
    traj = sample_trajectory(mrp, np.array([[1.0, 0.5], [0.2, 1.0]]), 2000, seed=3)
    np.testing.assert_allclose(lstd_pinv(traj, 0.9).w, lstd_sample(traj, 0.9).w, atol=1e-10)


def test_pinv_zero_features(two_state):
    mrp, _ = two_state
    traj = sample_trajectory(mrp, np.zeros((2, 2)), 50, seed=0)
    assert np.all(lstd_pinv(traj, 0.9).w == 0.0)


# ---------------------------------------------------------------------------
# BRM

def brm_objective(mrp, phi, xi, w):
    v = phi @ w
    return xi @ (mrp.mean_reward + mrp.discount * mrp.transition @ v - v) ** 2


def grid_minimise(fn, center, half_width, points=41, levels=4):
    """Nested grid search on a 2-D box; each level zooms to two cells around the best point."""
    c = np.asarray(center, dtype=float)
    h = half_width
    for _ in range(levels):
        axis = np.linspace(-h, h, points)
        grid = [(c[0] + a, c[1] + b) for a in axis for b in axis]
        c = np.array(min(grid, key=lambda w: fn(np.array(w))))
        h = 2 * (axis[1] - axis[0])
    return c, h


def test_brm_matches_grid_search():
    p = np.array([[0.1, 0.6, 0.3], [0.4, 0.2, 0.4], [0.5, 0.25, 0.25]])
    mrp = Mrp(p, [1.0, 0.0, -1.0], 0.7)
    phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    xi = stationary_weights(mrp).weights
    best, h = grid_minimise(lambda w: brm_objective(mrp, phi, xi, w), [0.0, 0.0], 10.0)
    est = brm_design(mrp, phi)
    assert np.max(np.abs(est.w - best)) <= h
    assert brm_objective(mrp, phi, xi, est.w) <= brm_objective(mrp, phi, xi, best) + 1e-12


def test_brm_tabular_and_gamma_zero(two_state):
    mrp, fmap = two_state
    np.testing.assert_allclose(brm_design(mrp, fmap).w, [5.5, 4.5], atol=1e-10)
    m0 = Mrp(census_mrp().transition, [1.0, -2.0, 0.5], 0.0)
    phi = np.array([[1.0, 0.3], [0.2, 1.0], [-0.5, 0.7]])
    np.testing.assert_allclose(brm_design(m0, phi).w, lstd_design(m0, phi).w, atol=1e-12)


def test_brm_sample_deterministic_chain_is_least_squares():
    # with deterministic successors both draws coincide and BRM is plain regression on Psi
    phi = np.array([[1.0, 0.5], [0.3, 1.0]])
    states = np.arange(51) % 2
    traj = Trajectory.from_states(states, phi, np.where(states == 0, 1.0, -1.0),
                                  alt_states=(states + 1) % 2)
    psi = phi[states[:-1]] - 0.9 * phi[states[1:]]
    oracle, *_ = np.linalg.lstsq(psi, traj.rewards[:-1], rcond=None)
    np.testing.assert_allclose(brm_sample(traj, 0.9).w, oracle, atol=1e-10)


def test_brm_sample_consistency():
    p = np.array([[0.1, 0.6, 0.3], [0.4, 0.2, 0.4], [0.5, 0.25, 0.25]])
    mrp = Mrp(p, [1.0, 0.0, -1.0], 0.7)
    phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    traj = sample_trajectory(mrp, phi, 100_000, seed=6, with_alt=True)
    assert np.max(np.abs(brm_sample(traj, 0.7).w - brm_design(mrp, phi).w)) <= 0.05


def test_brm_sample_needs_second_draw(two_state):
    mrp, fmap = two_state
    with pytest.raises(MissingAltSample):
        brm_sample(sample_trajectory(mrp, fmap, 10, seed=0), 0.9)


def test_brm_sample_zero_rewards(two_state):
    mrp, fmap = two_state
    zero = Mrp(mrp.transition, [0.0, 0.0], 0.9)
    assert np.all(brm_sample(sample_trajectory(zero, fmap, 100, seed=0, with_alt=True), 0.9).w == 0)


# ---------------------------------------------------------------------------
# LDS view

def test_lds_scalar_by_hand(two_state):
    mrp, _ = two_state
    phi = np.array([[1.0], [2.0]])
    f, q = lds_model(mrp, phi)
    # Phi'XiPhi = 2.5, Phi'XiPPhi = 2.25, Phi'Xi r = 0.5
    assert f[0, 0] == pytest.approx(0.9)
    assert q[0] == pytest.approx(0.2)
    w = lds_solve(f, q, 0.9).w
    assert w[0] == pytest.approx(0.2 / (1 - 0.81))
    np.testing.assert_allclose(w, lstd_design(mrp, phi).w, atol=1e-12)


def test_lds_tabular_model_is_the_chain(two_state):
    mrp, fmap = two_state
    f, q = lds_model(mrp, fmap)
    np.testing.assert_allclose(f, mrp.transition, atol=1e-14)
    np.testing.assert_allclose(q, mrp.mean_reward, atol=1e-14)


def test_lds_series_converges_geometrically():
    f = np.array([[0.5, 0.3], [0.1, 0.7]])
    q = np.array([1.0, -0.5])
    gamma = 0.9
    w = lds_solve(f, q, gamma).w
    partial = lds_series(f, q, gamma, 400)
    err = np.max(np.abs(partial - w), axis=1)
    rho = gamma * np.max(np.abs(np.linalg.eigvals(f)))
    t = np.arange(400)
    # error after t+1 terms is O((t+1) rho^(t+1)) at worst
    assert np.all(err[50:] <= 10 * (t[50:] + 2) * rho ** (t[50:] + 1) * np.abs(w).max() + 1e-13)
    np.testing.assert_allclose(partial[-1], series_value(f, q, gamma, 400), atol=1e-12)


@given(instances())
def test_lds_agrees_with_lstd(inst):
    f, q = lds_model(inst.mrp, inst.fmap, inst.xi)
    w_lds = lds_solve(f, q, inst.mrp.discount).w
    w = lstd_design(inst.mrp, inst.fmap, inst.xi).w
    assert np.max(np.abs(w_lds - w)) <= 1e-8 * max(1.0, np.max(np.abs(w)))


def test_lds_sample_identical_states():
    mrp = Mrp([[1.0]], [2.0], 0.5)
    traj = sample_trajectory(mrp, np.eye(1), 10, seed=0)
    f, q, est = lds_sample(traj, 0.5)
    np.testing.assert_array_equal(f, [[1.0]])
    assert q[0] == 2.0
    assert est.w[0] == pytest.approx(4.0)


def test_lds_sample_unvisited_state_has_singular_gram():
    traj = Trajectory.from_states([0, 0, 0, 0], np.eye(2), [1.0] * 4)
    with pytest.raises(SingularGram):
        lds_sample(traj, 0.5)


def test_lds_sample_zero_rewards(two_state):
    mrp, fmap = two_state
    zero = Mrp(mrp.transition, [0.0, 0.0], 0.9)
    _, q, est = lds_sample(sample_trajectory(zero, fmap, 100, seed=1), 0.9)
    assert np.all(q == 0) and np.all(est.w == 0)


# ---------------------------------------------------------------------------
# TD iteration

def test_td_two_state_small_step(two_state):
    mrp, fmap = two_state
    est, trace = td_iterate_design(mrp, fmap, alpha=0.1, tol=1e-10)
    np.testing.assert_allclose(est.w, [5.5, 4.5], atol=1e-8)
    assert est.diagnostics["alpha"] == 0.1
    assert trace.ndim == 1 and trace.size > 0


def test_td_started_at_fixpoint_stays(two_state):
    mrp, fmap = two_state
    est, _ = td_iterate_design(mrp, fmap, w0=[5.5, 4.5])
    assert est.diagnostics["iterations"] <= 1
    np.testing.assert_allclose(est.w, [5.5, 4.5], atol=1e-12)


def test_td_zero_rewards_stays_at_zero(two_state):
    mrp, fmap = two_state
    zero = Mrp(mrp.transition, [0.0, 0.0], 0.9)
    est, _ = td_iterate_design(zero, fmap)
    assert np.all(est.w == 0.0)


def test_td_max_iters(two_state):
    mrp, fmap = two_state
    with pytest.raises(MaxItersExceeded):
        td_iterate_design(mrp, fmap, alpha=1e-4, max_iters=10)


def test_td_non_contracting_system():
    s = design_system(census_mrp(), np.eye(3))
    bad = type(s)(s.x, -s.y / s.gamma * 3, s.rewards, s.weights, s.gamma, "design")
    with pytest.raises(SingularSystem):
        td_iterate_system(bad)


@given(instances(max_states=6, max_features=3))
def test_td_agrees_with_lstd(inst):
    w = lstd_design(inst.mrp, inst.fmap, inst.xi).w
    est, _ = td_iterate_design(inst.mrp, inst.fmap, inst.xi)
    assert np.max(np.abs(est.w - w)) <= 1e-8 * max(1.0, np.max(np.abs(w)))


def test_td_sample_runs_and_tracks(two_state_noisy):
    mrp, fmap = two_state_noisy
    traj = sample_trajectory(mrp, fmap, 50_000, seed=2)
    est, deltas = td_iterate_sample(traj, 0.9, a=1.0, b=10.0)
    assert deltas.shape == (len(traj) - 1,)
    errs = [np.max(np.abs(td_iterate_sample(traj.head(n), 0.9)[0].w - [5.5, 4.5]))
            for n in (500, 5000, 50_000)]
    assert errs[0] > errs[1] > errs[2]
    # a / (b + t) with a = 1 is slow at gamma = 0.9; a larger a gets close
    fast, _ = td_iterate_sample(traj, 0.9, a=20.0)
    assert np.max(np.abs(fast.w - [5.5, 4.5])) < 0.1
    with pytest.raises(ValueError):
        td_iterate_sample(traj, 0.9, a=0.0)


# ---------------------------------------------------------------------------
# quadratic form

@given(instances())
def test_quadratic_form_minimiser_is_lstd(inst):
    w = lstd_design(inst.mrp, inst.fmap, inst.xi).w
    scale = max(1.0, np.max(np.abs(w)))
    for variant in ("projected", "unnormalised"):
        kmat, est = quadratic_form_k(inst.mrp, inst.fmap, inst.xi, variant)
        np.testing.assert_allclose(kmat, kmat.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(kmat)) >= -1e-10 * max(1.0, np.abs(kmat).max())
        assert np.max(np.abs(est.w - w)) <= 1e-8 * scale
    assert est.diagnostics["projection_identity_gap"] == 0.0


def test_quadratic_form_identity_gap(two_state):
    mrp, _ = two_state
    _, est = quadratic_form_k(mrp, np.array([[1.0], [2.0]]))
    assert est.diagnostics["projection_identity_gap"] <= 1e-12
    with pytest.raises(ValueError):
        quadratic_form_k(mrp, np.eye(2), variant="other")


def test_quadratic_form_tabular_recovers_value(two_state):
    mrp, fmap = two_state
    _, est = quadratic_form_k(mrp, fmap)
    np.testing.assert_allclose(est.w, exact_value(mrp), atol=1e-10)


# ---------------------------------------------------------------------------
# episodic

def test_one_step_episodes_give_mean_rewards():
    emrp = EpisodicMrp([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]], [3.0, 0.0], 0.9)
    batch = sample_episodes(emrp, np.eye(2), 20, seed=0)
    # only the start state is visited; use a constant feature
    est = episodic_lstd(batch.with_features(np.ones((2, 1))), 0.9)
    assert est.w[0] == pytest.approx(3.0)


def test_two_step_episode_exact():
    emrp, fmap = two_step_episode()
    batch = sample_episodes(emrp, fmap, 5, seed=0)
    assert episodic_lstd(batch, emrp.discount).w.tolist() == [1.0, 0.0]
    np.testing.assert_allclose(episodic_lstd_design(emrp, fmap).w, [1.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(episodic_value(emrp), [1.0, 0.0])


def backward_values(pt, r, gamma, horizon=2000):
    n = len(r)
    v = np.zeros(n)
    for _ in range(horizon):
        v = r + gamma * pt[:, :n] @ v
    return v


def test_episodic_value_against_backward_induction():
    emrp, fmap = terminating_chain()
    oracle = backward_values(emrp.transition_t, emrp.mean_reward, emrp.discount)
    np.testing.assert_allclose(episodic_value(emrp), oracle, atol=1e-10)
    np.testing.assert_allclose(episodic_lstd_design(emrp, fmap).w, oracle, atol=1e-9)


def test_episodic_consistency():
    emrp, fmap = terminating_chain()
    batch = sample_episodes(emrp, fmap, 10_000, seed=1)
    w = episodic_lstd(batch, emrp.discount).w
    assert np.max(np.abs(w - episodic_value(emrp))) <= 0.05


def test_episodic_empty_batch():
    emrp, fmap = two_step_episode()
    with pytest.raises(ValueError):
        episodic_lstd(sample_episodes(emrp, fmap, 0, seed=0), 0.5)


# ---------------------------------------------------------------------------
# Bayesian MAP

def test_bayes_map_reduces_to_lstd(two_state_noisy):
    mrp, _ = two_state_noisy
    phi = np.array([[1.0, 0.5], [0.2, 1.0]])
    traj = sample_trajectory(mrp, phi, 500, seed=7)
    g = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(bayes_map(traj, 0.9, g).w, lstd_sample(traj, 0.9).w, atol=1e-9)


def test_bayes_map_prior_shrinks(two_state_noisy):
    mrp, fmap = two_state_noisy
    traj = sample_trajectory(mrp, fmap, 500, seed=7)
    w_weak = bayes_map(traj, 0.9, np.eye(2), 1e-6 * np.eye(2)).w
    w_strong = bayes_map(traj, 0.9, np.eye(2), 1e12 * np.eye(2)).w
    assert np.linalg.norm(w_strong) < 1e-3 < np.linalg.norm(w_weak)
    with pytest.raises(ValueError):
        bayes_map(traj, 0.9, np.array([[1.0, 2.0], [0.0, 1.0]]))


# ---------------------------------------------------------------------------
# four-way agreement on sampled data

@given(instances(max_states=6, max_features=3, transient=False), st.integers(0, 2**31))
def test_sample_estimators_agree(inst, seed):
    traj = sample_trajectory(inst.mrp, inst.fmap, 300, seed=seed)
    s = sample_system(traj, inst.mrp.discount)
    try:
        ref = lstd_sample(traj, inst.mrp.discount).w
    except (SingularSystem, SingularGram):
        return
    scale = max(1.0, np.max(np.abs(ref)))
    try:
        _, _, lds = lds_sample(traj, inst.mrp.discount)
    except (SingularSystem, SingularGram):
        return
    assert np.max(np.abs(lds.w - ref)) <= 1e-7 * scale
    assert np.max(np.abs(lstd_pinv(traj, inst.mrp.discount).w - ref)) <= 1e-7 * scale
    try:
        td, _ = td_iterate_system(s)
    except SingularSystem:
        return  # sample A need not have eigenvalues in the right half-plane
    assert np.max(np.abs(td.w - ref)) <= 1e-7 * scale
