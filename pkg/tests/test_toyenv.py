import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rad.fixture import FIXTURE_PATH, generate_env
from rad.toyenv import (
    SoftmaxPolicy,
    ToyEnv,
    action_probs,
    exact_cdf_gradient,
    exact_cost_law,
    exact_expected_rtilde,
    kl_regularized_reward,
    load_env,
    log_prob,
    sample_batch,
    save_env,
    score_function,
)


def env_from(cost, reward=None, p=None, ref=None):
    cost = np.asarray(cost, float)
    p = np.full(cost.shape[0], 1 / cost.shape[0]) if p is None else p
    reward = np.zeros_like(cost) if reward is None else reward
    ref = np.zeros_like(cost) if ref is None else ref
    return ToyEnv(p, reward, cost, ref)


def random_env(rng, n_x=3, n_y=4):
    p = rng.dirichlet(np.ones(n_x))
    p[-1] = 1 - p[:-1].sum()
    return ToyEnv(p, rng.normal(size=(n_x, n_y)), np.round(rng.normal(size=(n_x, n_y)), 1),
                  rng.normal(size=(n_x, n_y)))


def enumerate_expectation(env, policy, per_outcome):
    """sum_x p(x) sum_y pi(y|x) f(x, y) grad log pi(y|x), by brute force."""
    total = np.zeros(env.cost.shape)
    for x in range(env.n_x):
        for y in range(env.n_y):
            mass = env.context_probs[x] * action_probs(policy, x)[y]
            total += mass * per_outcome[x, y] * score_function(policy, x, y)
    return total


def test_action_prob_examples():
    pol = SoftmaxPolicy(np.zeros((1, 4)))
    assert np.allclose(action_probs(pol, 0), 0.25)
    assert np.allclose(action_probs(SoftmaxPolicy([[7.0, 7.0, 7.0]]), 0), 1 / 3)
    p = action_probs(SoftmaxPolicy([[0.0, np.log(3)]]), 0)
    assert np.allclose(p, [0.25, 0.75], atol=1e-15)
    assert log_prob(SoftmaxPolicy([[0.0, np.log(3)]]), 0, 1) == pytest.approx(np.log(0.75))
    with pytest.raises(ValueError):
        action_probs(pol, 1)
    with pytest.raises(ValueError):
        log_prob(pol, 0, 4)


def test_env_validation():
    with pytest.raises(ValueError):
        ToyEnv([0.5, 0.6], np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ToyEnv([0.5, 0.5], np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ToyEnv([1.0], [[np.nan]], [[0.0]], [[0.0]])


def test_sample_batch_examples():
    env = env_from([[1.0, 2.0], [3.0, 4.0]])
    b = sample_batch(env, env.ref_policy, 1, 2, 0)
    assert len(b) == 2 and b.x[0] == b.x[1]
    big = sample_batch(env, env.ref_policy, 50, 3, 1)
    for g in range(50):
        assert len(set(big.x[big.prompt_group == g].tolist())) == 1
    single = env_from([[5.0]])
    s = sample_batch(single, single.ref_policy, 4, 2, 0)
    assert set(s.cost.tolist()) == {5.0} and set(s.y.tolist()) == {0}
    a = sample_batch(env, env.ref_policy, 20, 2, 9)
    again = sample_batch(env, env.ref_policy, 20, 2, 9)
    assert a.episodes() == again.episodes()
    with pytest.raises(ValueError):
        sample_batch(env, env.ref_policy, 3, 1, 0)


def test_episode_logprobs_exact(rng):
    env = random_env(rng)
    pol = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    for ep in sample_batch(env, pol, 10, 2, 4).episodes():
        assert ep.logprob_theta == log_prob(pol, ep.x, ep.y)
        assert ep.logprob_ref == log_prob(env.ref_policy, ep.x, ep.y)
        assert ep.cost == env.cost[ep.x, ep.y]


def test_kl_reward_examples():
    class Ep:
        reward, logprob_theta, logprob_ref = 1.0, -1.0, -1.0

    assert kl_regularized_reward(Ep, 0.1) == 1.0
    Ep.logprob_theta = 1.0
    assert kl_regularized_reward(Ep, 0.1) == pytest.approx(0.8)
    assert kl_regularized_reward(Ep, 0.0) == 1.0


def test_cost_law_examples():
    env = env_from([[0.0, 1.0]])
    assert exact_cost_law(env, env.ref_policy) == [(0.0, 0.5), (1.0, 0.5)]
    env = env_from([[0.0, 1.0], [2.0, 3.0]])
    assert exact_cost_law(env, env.ref_policy) == [(0.0, 0.25), (1.0, 0.25), (2.0, 0.25), (3.0, 0.25)]
    det = SoftmaxPolicy([[-1e9, 0.0], [0.0, -1e9]])
    assert exact_cost_law(env, det) == [(1.0, 0.5), (2.0, 0.5)]
    merged = env_from([[1.0, 1.0], [1.0, 2.0]])
    assert exact_cost_law(merged, merged.ref_policy) == [(1.0, 0.75), (2.0, 0.25)]


def test_cdf_gradient_examples():
    env = env_from([[0.0, 1.0]])
    assert np.allclose(exact_cdf_gradient(env, env.ref_policy, 0.5), [[0.25, -0.25]])
    r = random_env(np.random.default_rng(1))
    pol = SoftmaxPolicy(np.ones(r.cost.shape))
    assert not exact_cdf_gradient(r, pol, r.cost.min() - 1).any()
    assert not exact_cdf_gradient(r, pol, r.cost.max()).any()


def test_cdf_estimator_identity_by_enumeration(rng):
    for _ in range(5):
        env = random_env(rng)
        pol = SoftmaxPolicy(rng.normal(size=env.cost.shape))
        for t in np.unique(env.cost):
            est = enumerate_expectation(env, pol, (env.cost <= t).astype(float))
            grad = exact_cdf_gradient(env, pol, t)
            assert np.abs(est - grad).max() <= 1e-12
            assert np.allclose(grad.sum(axis=1), 0, atol=1e-15)


def _objective(env, logits, beta):
    return exact_expected_rtilde(env, SoftmaxPolicy(logits), beta)[0]


def test_expected_rtilde_finite_differences(rng):
    env = random_env(rng, 3, 4)
    logits = rng.normal(size=env.cost.shape)
    value, grad = exact_expected_rtilde(env, SoftmaxPolicy(logits), 0.3)
    h = 1e-5
    fd = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        e = np.zeros_like(logits)
        e[idx] = h
        fd[idx] = (_objective(env, logits + e, 0.3) - _objective(env, logits - e, 0.3)) / (2 * h)
    assert np.abs(fd - grad).max() <= 1e-6
    assert np.allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_expected_rtilde_examples(rng):
    env = random_env(rng)
    v, _ = exact_expected_rtilde(env, env.ref_policy, 5.0)
    plain = np.sum(env.context_probs[:, None] * env.ref_policy.probs() * env.reward)
    assert v == pytest.approx(plain, abs=1e-14)
    single = ToyEnv([1.0], [[2.5]], [[0.0]], [[0.0]])
    assert exact_expected_rtilde(single, single.ref_policy, 0.1)[0] == 2.5


@given(st.integers(0, 10_000), st.floats(-20, 20))
def test_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    env = random_env(rng)
    logits = rng.normal(size=env.cost.shape)
    shift = np.full((env.n_x, 1), c)
    a, b = SoftmaxPolicy(logits), SoftmaxPolicy(logits + shift)
    la, lb = exact_cost_law(env, a), exact_cost_law(env, b)
    assert [v for v, _ in la] == [v for v, _ in lb]
    assert np.allclose([p for _, p in la], [p for _, p in lb], atol=1e-12)
    assert abs(sum(p for _, p in la) - 1) <= 1e-12
    t = float(np.median(env.cost))
    assert np.abs(exact_cdf_gradient(env, a, t) - exact_cdf_gradient(env, b, t)).max() <= 1e-12


def test_monte_carlo_cdf_estimator(rng):
    env = random_env(rng)
    pol = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    t = float(np.median(env.cost))
    batch = sample_batch(env, pol, 50_000, 2, 17)
    ind = (batch.cost <= t).astype(float)
    pi = pol.probs()
    n = len(batch)
    est = np.zeros((n,) + env.cost.shape)
    est[np.arange(n), batch.x] = -pi[batch.x] * ind[:, None]
    est[np.arange(n), batch.x, batch.y] += ind
    se = est.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(est.mean(axis=0) - exact_cdf_gradient(env, pol, t)) <= 4 * se + 1e-15)


def test_fixture_roundtrip(tmp_path):
    env = load_env(FIXTURE_PATH)
    assert (env.n_x, env.n_y) == (3, 5)
    assert env.meta["kappa"] > 0
    fresh = generate_env()
    for k in ("reward", "cost", "ref_logits", "context_probs"):
        assert np.array_equal(getattr(env, k), getattr(fresh, k))
    assert env.meta == fresh.meta
    out = tmp_path / "env.json"
    save_env(env, out)
    assert load_env(out).to_dict() == env.to_dict()


def test_fixture_rejects_bad_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"context_probs": [1.0], "reward": [[1.0]], "cost": [[1.0, 2.0]], "ref_logits": [[0.0]]}))
    with pytest.raises(ValueError):
        load_env(p)
    p.write_text(json.dumps({"context_probs": [1.0]}))
    with pytest.raises(ValueError):
        load_env(p)
