import numpy as np
import pytest

from momentum_gtd.mdp import (FeatureMap, TabularMDP, build_environment, build_random_walk,
                              policy_matrix, sample_iid_batch, uniform_policy)
from momentum_gtd.model import (ModelError, ModelMatrices, compute_model, dump_model,
                                load_model_dump, mspbe, mspbe_gradient, neu, rmspbe,
                                stationary_distribution)

from conftest import ENV_NAMES


def test_stationary_symmetric():
    np.testing.assert_allclose(stationary_distribution(np.full((2, 2), 0.5)), [0.5, 0.5])


def test_stationary_reducible_fails():
    with pytest.raises(ModelError):
        stationary_distribution(np.eye(2))


def test_stationary_rejects_non_stochastic():
    with pytest.raises(ValueError):
        stationary_distribution(np.array([[0.5, 0.6], [0.5, 0.5]]))


def test_stationary_nonconvergence_names_residual():
    P = np.array([[0.999999, 0.000001], [0.000002, 0.999998]])
    with pytest.raises(ModelError, match="residual"):
        stationary_distribution(P, max_iter=3)


@pytest.mark.parametrize("name", ["rw5", "rw19", "boyan14"])
def test_stationary_matches_eigenvector(name, envs):
    # dense eigen-decomposition oracle for the restart-augmented chain
    mdp, policy, _ = envs[name]
    P = policy_matrix(mdp, policy, restart=True)
    vals, vecs = np.linalg.eig(P.T)
    k = np.argmin(np.abs(vals - 1))
    ref = np.real(vecs[:, k])
    ref /= ref.sum()
    np.testing.assert_allclose(stationary_distribution(P), ref, atol=1e-10)


@pytest.mark.parametrize("name", ENV_NAMES)
def test_model_invariants(name, envs, models):
    mdp, policy, _ = envs[name]
    m = models[name]
    P = policy_matrix(mdp, policy, restart=True)
    assert np.all(m.d_pi >= 0) and abs(m.d_pi.sum() - 1) < 1e-12
    np.testing.assert_allclose(m.d_pi @ P, m.d_pi, atol=1e-10)
    np.testing.assert_allclose(m.C_bar, m.C_bar.T, atol=1e-15)
    assert np.min(np.linalg.eigvalsh(m.C_bar)) > 0
    assert np.max(np.linalg.eigvalsh(0.5 * (m.A_bar + m.A_bar.T))) < 0
    np.testing.assert_allclose(m.A_bar @ m.theta_star + m.b_bar, 0, atol=1e-10)
    assert m.D.shape == (mdp.n_states, mdp.n_states)
    with pytest.raises(ValueError):
        m.A_bar[0, 0] = 1.0


def test_zero_rewards_give_zero_solution():
    mdp, feats = build_random_walk(5, 0.0, 0.0)
    m = compute_model(mdp, uniform_policy(mdp.n_states), feats)
    np.testing.assert_array_equal(m.b_bar, 0)
    np.testing.assert_allclose(m.theta_star, 0, atol=1e-15)


def test_tabular_rw5_recovers_true_values():
    # with one feature per live state the TD fixed point is the true value function
    mdp, _ = build_random_walk(5, 0.0, 1.0)
    phi = np.zeros((7, 5))
    phi[1:6] = np.eye(5)
    m = compute_model(mdp, uniform_policy(7), FeatureMap(phi))
    np.testing.assert_allclose(phi[1:6] @ m.theta_star, np.arange(1, 6) / 6, atol=1e-12)


def test_monte_carlo_A_b(envs, models):
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    b = sample_iid_batch(m, mdp, policy, feats, np.random.default_rng(0), 10**6)
    A_hat = np.einsum("ni,nj->ij", b.phi, m.gamma * b.phi_next - b.phi) / len(b.s)
    b_hat = (b.r[:, None] * b.phi).mean(axis=0)
    np.testing.assert_allclose(A_hat, m.A_bar, atol=5e-3)
    np.testing.assert_allclose(b_hat, m.b_bar, atol=5e-3)


def _scalar_model():
    one = np.array([[1.0]])
    return ModelMatrices(-one, np.array([1.0]), one, one, np.array([1.0]), np.array([1.0]), 0.0)


def test_mspbe_scalar():
    m = _scalar_model()
    assert mspbe(np.zeros(1), m) == 1.0
    assert rmspbe(np.zeros(1), m) == 1.0
    assert mspbe(np.ones(1), m) == 0.0


@pytest.mark.parametrize("name", ENV_NAMES)
def test_mspbe_zero_at_solution(name, models):
    assert mspbe(models[name].theta_star, models[name]) <= 1e-18
    assert neu(models[name].theta_star, models[name]) <= 1e-18


def test_mspbe_definitional_projector(envs, models):
    # ||Phi theta - Pi T Phi theta||_D^2 with the explicit projector
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    P = policy_matrix(mdp, policy)
    Phi = feats.phi
    Phi_next = np.where(mdp.terminal[:, None], 0.0, Phi)
    D = np.diag(m.d_pi)
    R = np.einsum("sa,sat,sat->s", policy.probs, mdp.transition, mdp.reward)
    Pi = Phi @ np.linalg.solve(Phi.T @ D @ Phi, Phi.T @ D)
    rng = np.random.default_rng(1)
    for _ in range(10):
        theta = rng.standard_normal(feats.dim)
        V = Phi @ theta
        err = V - Pi @ (R + m.gamma * P @ Phi_next @ theta)
        ref = err @ D @ err
        assert abs(mspbe(theta, m) - ref) <= 1e-10 * max(1.0, ref)


def test_neu_values(models):
    m = models["boyan14"]
    assert neu(np.zeros(m.dim), m) == pytest.approx(m.b_bar @ m.b_bar, rel=1e-15)


def test_neu_monte_carlo(envs, models):
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    theta = np.random.default_rng(2).standard_normal(m.dim)
    b = sample_iid_batch(m, mdp, policy, feats, np.random.default_rng(3), 10**6)
    delta = b.r + m.gamma * b.phi_next @ theta - b.phi @ theta
    est = (delta[:, None] * b.phi).mean(axis=0)
    assert abs(est @ est - neu(theta, m)) <= 1e-2 * neu(theta, m)


@pytest.mark.parametrize("name", ["boyan14", "rw5"])
def test_mspbe_hessian_and_gradient(name, models):
    m = models[name]
    d = m.dim
    H_ref = 2 * m.A_bar.T @ np.linalg.solve(m.C_bar, m.A_bar)
    rng = np.random.default_rng(4)
    theta = rng.standard_normal(d)
    h = 1e-3
    H = np.empty((d, d))
    E = np.eye(d) * h
    for i in range(d):
        for j in range(d):
            H[i, j] = (mspbe(theta + E[i] + E[j], m) - mspbe(theta + E[i] - E[j], m)
                       - mspbe(theta - E[i] + E[j], m) + mspbe(theta - E[i] - E[j], m)) / (4 * h * h)
    assert np.max(np.abs(H - H_ref)) <= 1e-6 * np.max(np.abs(H_ref))
    for _ in range(20):
        theta = rng.standard_normal(d)
        g = np.array([(mspbe(theta + E[i], m) - mspbe(theta - E[i], m)) / (2 * h) for i in range(d)])
        ref = mspbe_gradient(theta, m)
        assert np.linalg.norm(g - ref) <= 1e-6 * max(np.linalg.norm(ref), 1e-12)


def test_rank_deficient_support_fails():
    # state 2 is unreachable, so only its feature would separate the two columns
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[1, 0, 0] = P[2, 0, 2] = 1.0
    mdp = TabularMDP(P, np.zeros_like(P), np.zeros(3, bool), 0.9, np.array([1.0, 0, 0]))
    phi = np.array([[0.5, 0.5], [0.5, 0.5], [1.0, 0.0]])
    with pytest.raises(ModelError):
        compute_model(mdp, uniform_policy(3), FeatureMap(phi))


def test_dump_roundtrip(models, tmp_path):
    m = models["rw19"]
    path = tmp_path / "model.txt"
    text = dump_model(m, path)
    assert path.read_text() == text
    blocks = load_model_dump(text)
    assert np.array_equal(blocks["A"], m.A_bar)
    assert np.array_equal(blocks["b"], m.b_bar)
    assert np.array_equal(blocks["C"], m.C_bar)
    assert np.array_equal(blocks["d_pi"], m.d_pi)
    assert np.array_equal(blocks["theta_star"], m.theta_star)
