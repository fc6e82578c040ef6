import math

import mpmath
import numpy as np
import pytest

from momentum_gtd.algorithms import (DivergenceError, LearnerState, ScheduleSpec, StepSizes,
                                     eta_settling_step, expected_directions, make_learner,
                                     sampled_directions, schedule_at, step_gtd, step_gtd2,
                                     step_momentum_three_form, step_momentum_two_form,
                                     step_tdc, step_vanilla, td_error)
from momentum_gtd.experiments import load_preset
from momentum_gtd.mdp import Transition, sample_episode, sample_iid_batch
from momentum_gtd.model import rmspbe

THREE_TS_BOYAN = dict(regime="three_ts", alpha_exp=0.25, beta_exp=0.125, rho_exp=0.2, w=0.1)


def _tr(phi, phi_next, r):
    phi, phi_next = np.atleast_1d(np.asarray(phi, float)), np.atleast_1d(np.asarray(phi_next, float))
    return Transition(0, 0, float(r), 1, not np.any(phi_next), phi, phi_next)


def _steps(alpha, beta, rho=0.0, xi=0.0, eta=0.0):
    return StepSizes(alpha, beta, rho, xi, eta)


def _stream(env, n, seed=0):
    mdp, policy, feats = env
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        out.extend(sample_episode(mdp, policy, feats, rng))
    return out[:n]


# --- schedules -------------------------------------------------------------

def test_schedule_t0():
    for spec in (ScheduleSpec("vanilla", 0.3, 0.7), ScheduleSpec(**THREE_TS_BOYAN)):
        s = schedule_at(spec, 0)
        assert s.alpha == 1.0 and s.beta == 1.0
        if spec.regime != "vanilla":
            assert s.rho == 1.0


def test_schedule_identities():
    spec = ScheduleSpec(**THREE_TS_BOYAN)
    for t in (0, 1, 5, 1000):
        s, prev = schedule_at(spec, t), (schedule_at(spec, t - 1).rho if t else 1.0)
        assert s.xi == s.alpha / s.rho
        assert s.eta == (s.rho - spec.w * s.alpha) / prev
    assert schedule_at(spec, 10).alpha == 11.0 ** -0.25


def test_eta_one_for_w0_constant_rho():
    # rho exponent tiny enough that rho_t / rho_{t-1} == 1 in floating point is not needed:
    # with w = 0 and a constant rho the formula gives eta = rho / rho
    class Const:
        regime, alpha_exp, beta_exp, rho_exp, w, c1, c2 = "three_ts", 0.0, 0.0, 0.0, 0.0, 1.0, 1.0
    for t in (1, 2, 50):
        assert schedule_at(Const, t).eta == 1.0


def test_eta1_high_precision():
    mpmath.mp.dps = 50
    ref = (mpmath.mpf(2) ** mpmath.mpf("-0.2") - mpmath.mpf("0.1") * mpmath.mpf(2) ** mpmath.mpf("-0.25")) / 1
    eta1 = schedule_at(ScheduleSpec(**THREE_TS_BOYAN), 1).eta
    assert abs(eta1 - float(ref)) <= 1e-15


def test_eta_tends_to_one():
    spec = ScheduleSpec(**THREE_TS_BOYAN)
    vals = [schedule_at(spec, 10 ** k).eta for k in range(1, 16, 2)]
    gaps = np.abs(np.array(vals) - 1)
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 0.2


@pytest.mark.parametrize("preset", ["boyan_three_ts", "rw5_three_ts", "rw19_three_ts",
                                    "randmdp_three_ts"])
def test_eta_settling_step(preset):
    spec = load_preset(preset).algorithms[0].schedule
    T = eta_settling_step(spec, tol=0.01)
    assert math.isfinite(T) and T > 1
    # 1 - eta_t ~ w t^-(alpha - rho): the bound is crossed once, near (w / tol)^(1/xi)
    approx = (spec.w / 0.01) ** (1 / spec.xi_exp)
    assert 0.1 < T / approx < 10
    from momentum_gtd.algorithms import _eta
    assert abs(_eta(spec, T) - 1) < 0.01 and abs(_eta(spec, T * 0.99) - 1) >= 0.01


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleSpec("vanilla", 0.0, 0.5)
    with pytest.raises(ValueError):
        ScheduleSpec("one_ts", 0.25, 0.125, 0.125, w=0.5)
    with pytest.raises(ValueError):
        ScheduleSpec("one_ts", 0.3, 0.125, 0.125, w=1.0)
    with pytest.raises(ValueError):
        ScheduleSpec("three_ts", 0.25, 0.3, 0.2, w=0.1)  # beta > rho
    with pytest.raises(ValueError):
        ScheduleSpec("three_ts", 0.25, 0.125, 0.2, w=0.0)
    with pytest.raises(ValueError):
        ScheduleSpec("three_ts", 0.25, 0.125)
    with pytest.warns(UserWarning, match="square summable"):
        ScheduleSpec(**THREE_TS_BOYAN)


def test_one_ts_scale_constants():
    spec = ScheduleSpec("one_ts", 1.4, 0.7, 0.7, w=1.0, c1=2.0, c2=3.0)
    for t in (0, 3, 99):
        s = schedule_at(spec, t)
        assert s.beta == pytest.approx(2.0 * s.xi, rel=1e-12)
        assert s.rho == pytest.approx(3.0 * s.xi, rel=1e-12)


# --- vanilla steppers ------------------------------------------------------

def test_gtd_u_zero_leaves_theta():
    state = LearnerState(np.array([0.3, -0.2]), np.zeros(2))
    new = step_gtd(state, _tr([0.6, 0.8], [0.0, 1.0], 1.0), _steps(0.5, 0.5), 0.9)
    np.testing.assert_array_equal(new.theta, state.theta)


def test_gtd_hand_example():
    state = LearnerState(np.zeros(1), np.zeros(1))
    new = step_gtd(state, _tr(1.0, 0.0, 1.0), _steps(0.1, 0.1), 0.9)
    assert new.theta[0] == 0.0 and new.u[0] == pytest.approx(0.1)
    assert new.t == 1


def test_gtd2_examples():
    state = LearnerState(np.zeros(1), np.zeros(1))
    new = step_gtd2(state, _tr(1.0, 0.0, 0.0), _steps(0.1, 0.1), 0.9)
    np.testing.assert_array_equal(new.theta, 0.0)
    np.testing.assert_array_equal(new.u, 0.0)
    state = LearnerState(np.zeros(1), np.array([0.5]))
    new = step_gtd2(state, _tr(1.0, 0.0, 1.0), _steps(0.0, 0.1), 0.9)
    assert new.u[0] == pytest.approx(0.55)


def test_tdc_reduces_to_td0():
    theta = np.array([0.2, -0.1])
    tr = _tr([0.6, 0.8], [1.0, 0.0], 0.5)
    gamma = 0.9
    td0 = theta + 0.3 * td_error(theta, tr, gamma) * tr.phi
    new = step_tdc(LearnerState(theta, np.zeros(2)), tr, _steps(0.3, 0.1), gamma)
    np.testing.assert_allclose(new.theta, td0, rtol=0, atol=1e-15)
    # gamma = 0 removes the correction whatever u is
    td0 = theta + 0.3 * td_error(theta, tr, 0.0) * tr.phi
    new = step_tdc(LearnerState(theta, np.array([5.0, -3.0])), tr, _steps(0.3, 0.1), 0.0)
    np.testing.assert_allclose(new.theta, td0, rtol=0, atol=1e-15)


def test_simultaneous_update():
    # the u-update must read the pre-update theta
    theta, u = np.array([1.0]), np.array([1.0])
    tr = _tr(1.0, 0.0, 0.0)
    new = step_gtd(LearnerState(theta, u), tr, _steps(1.0, 1.0), 0.0)
    assert new.u[0] == pytest.approx(-1.0 - 1.0 + 1.0)  # delta(theta=1) = -1


def test_gtd_iid_error_decreases(envs, models):
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    spec = load_preset("rw5_vanilla").algorithms[0].schedule
    learner = make_learner("gtd", "vanilla", spec, m.dim, gamma=mdp.gamma)
    batch = sample_iid_batch(m, mdp, policy, feats, np.random.default_rng(0), 10**4)
    init = np.linalg.norm(learner.theta - m.theta_star)
    learner.run(batch[i] for i in range(len(batch.s)))
    assert np.linalg.norm(learner.theta - m.theta_star) < init


def test_tdc_boyan_rmspbe_decreases(envs, models):
    m = models["boyan14"]
    spec = load_preset("boyan_vanilla").algorithms[2].schedule
    learner = make_learner("tdc", "vanilla", spec, m.dim, gamma=m.gamma)
    before = rmspbe(learner.theta, m)
    learner.run(_stream(envs["boyan14"], 10**4))
    assert rmspbe(learner.theta, m) < 0.5 * before


def test_gtd2_u_tracks_projection(envs, models):
    # with theta frozen (alpha = 0) u converges to C^-1 (A theta + b)
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    theta = np.array([0.3, -0.2, 0.5])
    state = LearnerState(theta, np.zeros(3))
    batch = sample_iid_batch(m, mdp, policy, feats, np.random.default_rng(1), 2 * 10**5)
    for i in range(len(batch.s)):
        state = step_gtd2(state, batch[i], _steps(0.0, 1.0 / (1 + i) ** 0.7), mdp.gamma)
    target = np.linalg.solve(m.C_bar, m.A_bar @ theta + m.b_bar)
    assert np.linalg.norm(state.u - target) < 0.05 * np.linalg.norm(target) + 1e-2
    np.testing.assert_array_equal(state.theta, theta)


def test_divergence_error_carries_step():
    state = LearnerState(np.array([5e7]), np.array([1e9]), t=17)
    with pytest.raises(DivergenceError) as info:
        step_gtd(state, _tr(1.0, 0.0, 0.0), _steps(1.0, 1.0), 0.0)
    assert info.value.step == 17
    state = LearnerState(np.array([0.0]), np.array([np.nan]))
    with pytest.raises(DivergenceError):
        step_gtd2(state, _tr(1.0, 0.0, 0.0), _steps(1.0, 1.0), 0.0)


# --- momentum steppers -----------------------------------------------------

@pytest.mark.parametrize("algo", ["gtd", "gtd2", "tdc"])
def test_two_form_zero_eta_equals_vanilla(algo):
    rng = np.random.default_rng(7)
    theta, prev, u = rng.standard_normal((3, 4))
    tr = Transition(0, 0, 0.7, 1, False, rng.random(4) / 2, rng.random(4) / 2)
    steps = _steps(0.3, 0.2, rho=0.5, xi=0.6, eta=0.0)
    a = step_momentum_two_form(algo, LearnerState(theta, u, theta_prev=prev), tr, steps, 0.9)
    b = step_vanilla(algo, LearnerState(theta, u), tr, steps, 0.9)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.u, b.u)
    # first step with theta_prev = theta has no momentum either
    steps = steps._replace(eta=0.8)
    a = step_momentum_two_form(algo, LearnerState(theta, u, theta_prev=theta), tr, steps, 0.9)
    assert np.array_equal(a.theta, b.theta)


@pytest.mark.parametrize("algo", ["gtd", "gtd2", "tdc"])
def test_single_step_forms_agree(algo):
    spec = ScheduleSpec(**THREE_TS_BOYAN)
    rng = np.random.default_rng(8)
    tr = Transition(0, 0, -3.0, 1, False, rng.random(4) / 2, rng.random(4) / 2)
    u0 = rng.standard_normal(4)
    two = make_learner(algo, "two_form", spec, 4, u0=u0, gamma=0.95)
    three = make_learner(algo, "three_form", spec, 4, u0=u0, gamma=0.95)
    np.testing.assert_allclose(two.step(tr).theta, three.step(tr).theta, rtol=0, atol=1e-15)


def test_three_form_zero_start_stays():
    spec = ScheduleSpec(**THREE_TS_BOYAN)
    learner = make_learner("gtd", "three_form", spec, 2, gamma=0.9)
    for _ in range(5):
        learner.step(_tr([0.6, 0.8], [0.0, 0.0], 0.0))
    np.testing.assert_array_equal(learner.theta, 0.0)
    np.testing.assert_array_equal(learner.state.v, 0.0)


@pytest.mark.parametrize("algo", ["gtd", "gtd2", "tdc"])
def test_form_equivalence_rw5(algo, envs):
    spec = load_preset("rw5_three_ts").algorithms[0].schedule
    stream = _stream(envs["rw5"], 10**4, seed=3)
    two = make_learner(algo, "two_form", spec, 3, gamma=1.0)
    three = make_learner(algo, "three_form", spec, 3, gamma=1.0)
    worst, stopped = 0.0, [None, None]
    for tr in stream:
        for k, learner in enumerate((two, three)):
            try:
                learner.step(tr)
            except DivergenceError as exc:
                stopped[k] = exc.step
        if stopped != [None, None]:
            break
        a, b = two.theta, three.theta
        # relative: iterates can grow large on this schedule before the guard trips
        worst = max(worst, float(np.linalg.norm(a - b)) / max(1.0, float(np.linalg.norm(a))))
    assert stopped[0] == stopped[1]
    assert worst <= 1e-8


@pytest.mark.parametrize("algo", ["gtd", "gtd2", "tdc"])
def test_form_equivalence_one_ts(algo, envs):
    spec = load_preset("boyan_one_ts").algorithms[0].schedule
    stream = _stream(envs["boyan14"], 2000, seed=4)
    two = make_learner(algo, "two_form", spec, 4, gamma=0.95)
    three = make_learner(algo, "three_form", spec, 4, gamma=0.95)
    for tr in stream:
        np.testing.assert_allclose(two.step(tr).theta, three.step(tr).theta, rtol=1e-9, atol=1e-9)


def test_make_learner_contracts():
    van = ScheduleSpec("vanilla", 0.25, 0.125)
    three = ScheduleSpec(**THREE_TS_BOYAN)
    with pytest.raises(ValueError):
        make_learner("gtd", "vanilla", three, 3, gamma=1.0)
    with pytest.raises(ValueError):
        make_learner("gtd", "two_form", van, 3, gamma=1.0)
    with pytest.raises(ValueError):
        make_learner("td", "vanilla", van, 3, gamma=1.0)
    with pytest.raises(ValueError):
        make_learner("gtd", "three_form", ScheduleSpec("one_ts", 0.25, 0.125, 0.125, w=0.5), 3, gamma=1.0)
    learner = make_learner("gtd", "three_form", three, 3, gamma=1.0)
    np.testing.assert_array_equal(learner.theta, 0.0)
    np.testing.assert_array_equal(learner.state.v, 0.0)
    learner = make_learner("gtd", "two_form", three, 3, theta0=[1, 2, 3], gamma=1.0)
    np.testing.assert_array_equal(learner.state.theta_prev, [1, 2, 3])


def test_batched_learner_matches_single(envs, models):
    mdp, policy, feats = envs["rw5"]
    m = models["rw5"]
    spec = ScheduleSpec("three_ts", 0.25, 0.125, 0.2, w=0.1)
    batches = [sample_iid_batch(m, mdp, policy, feats, np.random.default_rng(s), 500) for s in range(3)]
    batched = make_learner("gtd", "three_form", spec, 3, gamma=1.0, batch=(3,))
    singles = [make_learner("gtd", "three_form", spec, 3, gamma=1.0) for _ in range(3)]
    for k in range(500):
        phi = np.stack([b.phi[k] for b in batches])
        phi_next = np.stack([b.phi_next[k] for b in batches])
        r = np.array([b.r[k] for b in batches])
        batched.step(Transition(None, None, r, None, None, phi, phi_next))
        for learner, b in zip(singles, batches):
            learner.step(b[k])
    for i, learner in enumerate(singles):
        np.testing.assert_allclose(batched.theta[i], learner.theta, rtol=1e-12, atol=1e-14)


# --- expected directions ---------------------------------------------------

@pytest.mark.parametrize("algo", ["gtd", "gtd2", "tdc"])
def test_martingale_noise_mean_zero(algo, envs, models):
    mdp, policy, feats = envs["boyan14"]
    m = models["boyan14"]
    rng = np.random.default_rng(11)
    v, u, theta = rng.standard_normal((3, m.dim))
    batch = sample_iid_batch(m, mdp, policy, feats, rng, 2 * 10**5)
    h, g, _ = sampled_directions(algo, batch, m.gamma, 0.1, v, u, theta)
    h_bar, g_bar, _ = expected_directions(algo, m, 0.1, v, u, theta)
    for samples, mean in ((h, h_bar), (g, g_bar)):
        noise = samples - mean
        se = noise.std(axis=0, ddof=1) / np.sqrt(len(noise))
        assert np.all(np.abs(noise.mean(axis=0)) <= 3 * se + 1e-15)
