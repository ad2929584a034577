"""Built-in invariant suite behind ``rad check``.

Each check draws randomized instances from a fixed internal seed and raises
``AssertionError`` on a violation. Oracles are independent of the code under
test where one exists (e.g. ``math.erfc`` for the normal CDF, a pure-Python
splitmix for the seed contract, finite differences for gradients).
"""

from __future__ import annotations

import math
import traceback

import numpy as np

from . import spectra, transport
from .distributions import empirical_cdf, empirical_quantile, make_levels, quantile_particles
from .dominance import dominance_difference, fsd_dominates, fsd_loss
from .evaluation import matchup, safe_proportion
from .seeding import GAMMA, uniforms
from .spectra import KINDS, DiscreteWeights, Spectrum, discretize_weights, spectral_risk
from .toyenv import (
    SoftmaxPolicy,
    ToyEnv,
    cost_law_arrays,
    exact_cdf_gradient,
    exact_expected_rtilde,
    sample_batch,
)
from .trainer import RadConfig, dual_update, policy_gradient, rad_score, rloo_advantages, train

SEED = 20240617
CHECKS = {}


def check(name):
    def register(fn):
        CHECKS[name] = fn
        return fn
    return register


def _rng(offset=0):
    return np.random.default_rng(SEED + offset)


def _random_env(rng, n_x=3, n_y=4) -> ToyEnv:
    p = rng.dirichlet(np.ones(n_x))
    p[-1] = 1.0 - p[:-1].sum()
    return ToyEnv(p, rng.normal(size=(n_x, n_y)), np.round(rng.normal(size=(n_x, n_y)), 2),
                  rng.normal(size=(n_x, n_y)))


def _score_table(env, policy):
    # grad log pi(y|x) for every (x, y): shape (n_x, n_y, n_x, n_y)
    pi = policy.probs()
    out = np.zeros(env.cost.shape + env.cost.shape)
    for x in range(env.n_x):
        for y in range(env.n_y):
            out[x, y, x] = -pi[x]
            out[x, y, x, y] += 1.0
    return out


def _expect(env, policy, per_outcome, table):
    mass = env.context_probs[:, None] * policy.probs()
    return np.einsum("xy,xy,xyab->ab", mass, per_outcome, table)


# --- distributions ----------------------------------------------------------

@check("quantile-monotonicity")
def _():
    rng = _rng(1)
    for _ in range(50):
        s = rng.normal(size=rng.integers(1, 40))
        q = np.sort(rng.uniform(1e-9, 1.0, 30))
        assert np.all(np.diff(empirical_quantile(s, q)) >= 0)


@check("galois-connection")
def _():
    rng = _rng(2)
    for _ in range(50):
        s = np.round(rng.normal(size=rng.integers(1, 40)), 1)
        for q in rng.uniform(1e-9, 1.0, 20):
            assert empirical_cdf(s, empirical_quantile(s, q)) >= q


@check("n-equals-m-identity")
def _():
    rng = _rng(3)
    for m in range(1, 65):
        s = np.round(rng.normal(size=m), 2)
        assert np.array_equal(quantile_particles(s, m).particles, np.sort(s))


@check("levels-integrate-one")
def _():
    for n in (1, 2, 7, 16, 1000):
        assert np.sum(np.ones_like(make_levels(n))) / n == 1.0


# --- spectra ----------------------------------------------------------------

@check("normal-cdf-accuracy")
def _():
    z = np.linspace(-8.0, 8.0, 1601)
    oracle = np.array([0.5 * math.erfc(-v / math.sqrt(2.0)) for v in z])
    got = np.asarray(spectra.normal_cdf(z), dtype=float)
    assert np.max(np.abs(got - oracle)) <= 1e-9
    assert abs(float(spectra.normal_cdf(1.96)) - 0.975002105) < 5e-10


@check("normal-quantile-roundtrip")
def _():
    p = np.concatenate([np.geomspace(1e-8, 0.5, 200), 1.0 - np.geomspace(1e-8, 0.5, 200)])
    assert np.max(np.abs(spectra.normal_cdf(spectra.normal_quantile(p)) - p)) <= 1e-8


@check("spectrum-normalization")
def _():
    levels = make_levels(10_000)
    for kind in KINDS:
        if kind == "var":
            continue
        spec = Spectrum.from_token(kind)
        w = discretize_weights(spec, levels, normalize=(kind == "wang"))
        assert abs(w.weights.mean() - 1.0) <= 1e-3, kind


@check("spectrum-monotone")
def _():
    q = make_levels(2000)
    for kind in KINDS:
        if kind == "var":
            continue
        assert np.all(np.diff(spectra.weight(Spectrum.from_token(kind), q)) >= 0), kind


@check("cvar-cross-check")
def _():
    rng = _rng(4)
    for n, alpha in ((10, 0.9), (16, 0.75), (20, 0.5)):
        x = quantile_particles(rng.normal(size=200), n)
        w = discretize_weights(Spectrum("cvar", alpha=alpha), x.levels)
        top = int(round((1 - alpha) * n))
        assert abs(spectral_risk(x, w) - x.particles[-top:].mean()) <= 1e-12


@check("srm-translation")
def _():
    rng = _rng(5)
    for kind in KINDS:
        x = quantile_particles(rng.normal(size=100), 16)
        w = discretize_weights(Spectrum.from_token(kind), x.levels, normalize=True)
        c = rng.normal() * 5
        shifted = quantile_particles(x.particles + c, 16)
        assert abs(spectral_risk(shifted, w) - spectral_risk(x, w) - c) <= 1e-12 * (1 + abs(c)) * 16


# --- transport --------------------------------------------------------------

@check("marginal-feasibility")
def _():
    rng = _rng(6)
    for _ in range(10):
        x, y = rng.uniform(size=12), rng.uniform(size=9)
        a, b = rng.dirichlet(np.ones(12)), rng.dirichlet(np.ones(9))
        a[-1], b[-1] = 1 - a[:-1].sum(), 1 - b[:-1].sum()
        P = transport.sinkhorn(transport.fsd_cost_matrix(x, y), a, b, chi=0.02)
        assert np.all(P.plan >= 0)
        assert np.abs(P.plan.sum(1) - a).max() <= 1e-9
        assert np.abs(P.plan.sum(0) - b).max() <= 1e-9


@check("symmetric-plan")
def _():
    rng = _rng(7)
    for _ in range(5):
        A = rng.uniform(size=(8, 8))
        C = A + A.T
        P = transport.sinkhorn(C, chi=0.05).plan
        assert np.abs(P - P.T).max() <= 1e-8


@check("ot-convergence")
def _():
    rng = _rng(8)
    for _ in range(10):
        x, y = np.sort(rng.uniform(size=32)), np.sort(rng.uniform(size=32))
        C = transport.fsd_cost_matrix(x, y)
        exact = transport.exact_fsd(x, y)
        gaps = [abs(transport.plan_cost(transport.sinkhorn(C, chi=c), C) - exact)
                for c in (0.1, 0.03, 0.01, 0.003, 0.001)]
        assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:])), gaps
        assert gaps[-1] <= 5e-3


@check("particle-gradient-fd")
def _():
    rng = _rng(9)
    chi, h = 0.05, 1e-5
    done = 0
    while done < 5:
        x, y = rng.uniform(size=8), rng.uniform(size=8)
        if np.min(np.abs(x[:, None] - y[None, :])) <= 1e-3:
            continue
        P = transport.sinkhorn(transport.fsd_cost_matrix(x, y), chi=chi, tol=1e-13)
        g = transport.particle_gradient(P, x, y)

        def value(xx):
            C = transport.fsd_cost_matrix(xx, y)
            return transport.entropic_value(transport.sinkhorn(C, chi=chi, tol=1e-13), C, chi)

        for i in range(8):
            e = np.zeros(8)
            e[i] = h
            fd = (value(x + e) - value(x - e)) / (2 * h)
            assert abs(fd - g[i]) <= 1e-4 * max(abs(g[i]), 1e-3), (i, fd, g[i])
        done += 1


@check("w1-decomposition")
def _():
    rng = _rng(10)
    for _ in range(50):
        x, y = np.sort(rng.normal(size=20)), np.sort(rng.normal(size=20))
        w1 = np.sum(np.abs(x - y)) / 20
        assert abs(transport.exact_fsd(x, y) + transport.exact_fsd(y, x) - w1) <= 1e-15 * 20


# --- dominance --------------------------------------------------------------

def _pairs(rng, count=30, n=16):
    for _ in range(count):
        yield (quantile_particles(rng.normal(size=rng.integers(n, 80)), n),
               quantile_particles(rng.normal(0.3, 2.0, size=rng.integers(n, 80)), n))


def _weights(kind, n=16):
    return discretize_weights(Spectrum.from_token(kind), make_levels(n))


@check("proposition-identity")
def _():
    rng = _rng(11)
    for X, Y in _pairs(rng):
        for kind in KINDS:
            w = _weights(kind)
            lhs = fsd_loss(X, Y, w) - fsd_loss(Y, X, w)
            rhs = spectral_risk(Y, w) - spectral_risk(X, w)
            assert abs(lhs - rhs) <= 1e-12, (kind, lhs, rhs)


@check("sandwich-bounds")
def _():
    rng = _rng(12)
    for X, Y in _pairs(rng):
        for kind in KINDS:
            w = _weights(kind)
            d = spectral_risk(Y, w) - spectral_risk(X, w)
            assert -fsd_loss(Y, X, w) - 1e-12 <= d <= fsd_loss(X, Y, w) + 1e-12


@check("corollary-improvement")
def _():
    rng = _rng(13)
    for _ in range(30):
        Y = quantile_particles(rng.normal(size=64), 16)
        X = quantile_particles(Y.particles - rng.exponential(0.5, 16), 16)
        assert fsd_dominates(Y, X)
        for kind in KINDS:
            w = _weights(kind)
            kappa = fsd_loss(X, Y, w)
            assert spectral_risk(X, w) <= spectral_risk(Y, w) - kappa + 1e-12


@check("zero-loss-characterization")
def _():
    rng = _rng(14)
    for X, Y in _pairs(rng):
        for A, B in ((X, Y), (Y, X), (X, X)):
            assert (fsd_loss(A, B) == 0.0) == fsd_dominates(A, B)


@check("transport-consistency")
def _():
    rng = _rng(15)
    for X, Y in _pairs(rng):
        assert fsd_loss(X, Y) == transport.exact_fsd(X.particles, Y.particles)


# --- toy environment --------------------------------------------------------

@check("cdf-estimator-identity")
def _():
    rng = _rng(16)
    for _ in range(5):
        env = _random_env(rng)
        policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
        table = _score_table(env, policy)
        for t in np.unique(env.cost):
            ind = (env.cost <= t).astype(float)
            got = _expect(env, policy, ind, table)
            assert np.abs(got - exact_cdf_gradient(env, policy, t)).max() <= 1e-12


@check("softmax-shift-invariance")
def _():
    rng = _rng(17)
    env = _random_env(rng)
    logits = rng.normal(size=env.cost.shape)
    a, b = SoftmaxPolicy(logits), SoftmaxPolicy(logits + rng.normal(size=(env.n_x, 1)) * 3)
    assert np.abs(a.probs() - b.probs()).max() <= 1e-12
    assert np.abs(cost_law_arrays(env, a)[1] - cost_law_arrays(env, b)[1]).max() <= 1e-12
    t = float(np.median(env.cost))
    assert np.abs(exact_cdf_gradient(env, a, t) - exact_cdf_gradient(env, b, t)).max() <= 1e-12


@check("cost-law-mass")
def _():
    rng = _rng(18)
    for _ in range(10):
        env = _random_env(rng)
        probs = cost_law_arrays(env, SoftmaxPolicy(rng.normal(size=env.cost.shape)))[1]
        assert abs(probs.sum() - 1.0) <= 1e-12


@check("cdf-estimator-monte-carlo")
def _():
    rng = _rng(19)
    env = _random_env(rng)
    policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    t = float(np.median(env.cost))
    batch = sample_batch(env, policy, 20_000, 2, SEED)
    ind = (batch.cost <= t).astype(float)
    samples = np.zeros((len(batch),) + env.cost.shape)
    pi = policy.probs()
    samples[np.arange(len(batch)), batch.x] = -pi[batch.x] * ind[:, None]
    samples[np.arange(len(batch)), batch.x, batch.y] += ind
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(len(batch))
    exact = exact_cdf_gradient(env, policy, t)
    assert np.all(np.abs(mean - exact) <= 4 * se + 1e-15)


# --- trainer ----------------------------------------------------------------

@check("score-gradient-identity")
def _():
    rng = _rng(20)
    for _ in range(5):
        env = _random_env(rng)
        policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
        beta = 0.3
        h = env.reward - beta * (policy.log_probs() - env.ref_policy.log_probs())
        got = _expect(env, policy, h, _score_table(env, policy))
        assert np.abs(got - exact_expected_rtilde(env, policy, beta)[1]).max() <= 1e-10


@check("constraint-term-identity")
def _():
    rng = _rng(21)
    env = _random_env(rng)
    policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    q = np.sort(rng.choice(env.cost.ravel(), 6))
    g = -rng.uniform(0, 1 / 6, 6)
    w = DiscreteWeights(rng.uniform(0, 2, 6), normalized=False)
    lam = 1.7

    class Ep:
        cost = env.cost
        reward = np.zeros(env.cost.shape)
        logprob_theta = logprob_ref = np.zeros(env.cost.shape)

    term = rad_score(Ep, q, g, w, lam, 0.0)
    got = _expect(env, policy, term, _score_table(env, policy))
    want = lam * sum(wi * -gi * exact_cdf_gradient(env, policy, qi) for wi, gi, qi in zip(w.weights, g, q))
    assert np.abs(got - want).max() <= 1e-10


@check("rloo-unbiased")
def _():
    # k = 2: the baseline of sample 1 is sample 2's score, independent of sample 1
    rng = _rng(22)
    env = _random_env(rng)
    policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    s = rng.normal(size=env.cost.shape)
    table = _score_table(env, policy)
    pi, n_x = policy.probs(), env.n_x
    total = np.zeros(env.cost.shape)
    for x in range(n_x):
        baseline = pi[x] @ s[x]
        total += env.context_probs[x] * np.einsum("y,yab->ab", pi[x], table[x]) * baseline
    assert np.abs(total).max() <= 1e-12
    assert np.allclose(rloo_advantages([[3.0, 1.0]]), [[2.0, -2.0]])


@check("lambda-nonnegative")
def _():
    rng = _rng(23)
    for _ in range(1000):
        lam = dual_update(rng.exponential(), rng.normal() * 3, rng.exponential(), rng.exponential())
        assert lam >= 0.0


@check("particle-gradient-sign")
def _():
    rng = _rng(24)
    for _ in range(10):
        x, y = np.sort(rng.normal(size=10)), np.sort(rng.normal(size=10))
        P = transport.sinkhorn(transport.fsd_cost_matrix(x, y), chi=0.01)
        g = transport.particle_gradient(P, x, y)
        assert np.all(g <= 0) and np.all(g >= -P.plan.sum(1) - 1e-15)


@check("training-determinism")
def _():
    rng = _rng(25)
    env = _random_env(rng, 3, 5)
    cfg = RadConfig(steps=3, batch_prompts=32, n_particles=8, kappa=0.1, seed=7)
    a, b = train(env, cfg), train(env, cfg)
    assert a.history == b.history
    assert np.array_equal(a.policy.logits, b.policy.logits)


@check("policy-gradient-form")
def _():
    rng = _rng(26)
    env = _random_env(rng)
    policy = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    batch = sample_batch(env, policy, 8, 2, 3)
    adv = rng.normal(size=len(batch))
    pi = policy.probs()
    want = np.zeros(env.cost.shape)
    for e in range(len(batch)):
        want[batch.x[e]] -= adv[e] * pi[batch.x[e]]
        want[batch.x[e], batch.y[e]] += adv[e]
    assert np.abs(policy_gradient(policy, batch, adv) - want / len(batch)).max() <= 1e-12


# --- evaluation and seeding -------------------------------------------------

@check("safe-rate-monotone")
def _():
    rng = _rng(27)
    c = rng.normal(size=200)
    ts = np.sort(rng.normal(size=30))
    rates = [safe_proportion(c, t) for t in ts]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


@check("matchup-dominance-identity")
def _():
    rng = _rng(28)
    env = _random_env(rng, 3, 5)
    blue = SoftmaxPolicy(rng.normal(size=env.cost.shape))
    red = env.ref_policy
    r1 = matchup(env, blue, red, KINDS, n_prompts=400, seed=5)
    r2 = matchup(env, blue, red, KINDS, n_prompts=400, seed=5)
    assert r1 == r2
    from .evaluation import paired_samples

    xs, yb, yr = paired_samples(env, blue, red, 400, 5)
    for kind in KINDS:
        w = _weights(kind)
        rho_b = spectral_risk(quantile_particles(env.cost[xs, yb], 16), w)
        rho_r = spectral_risk(quantile_particles(env.cost[xs, yr], 16), w)
        assert abs(r1.dominance[kind] - (rho_r - rho_b)) <= 1e-9
    swapped = matchup(env, red, blue, KINDS, n_prompts=400, seed=5)
    assert all(abs(swapped.dominance[k] + r1.dominance[k]) <= 1e-12 for k in KINDS)


def _splitmix_reference(seed, step, index, draw):
    mask = (1 << 64) - 1
    gamma = int(GAMMA)

    def fmix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        return z ^ (z >> 31)

    h = fmix((seed + gamma) & mask)
    for v in (step, index, draw):
        h = fmix(((h ^ v) + gamma) & mask)
    return (h >> 11) * 2.0**-53


@check("seed-contract")
def _():
    rng = _rng(29)
    for _ in range(20):
        seed, step = int(rng.integers(0, 2**63)), int(rng.integers(0, 2**40))
        idx = rng.integers(0, 2**32, 8)
        got = uniforms(seed, step, idx.astype(np.uint64), 1)
        want = [_splitmix_reference(seed, step, int(i), 1) for i in idx]
        assert np.array_equal(got, np.array(want))


def run_checks(names=None, verbose=False) -> list[str]:
    """Run the named checks (all by default); returns the names that failed."""
    failed = []
    for name in names or list(CHECKS):
        try:
            CHECKS[name]()
        except Exception:  # noqa: BLE001 - any error is a failed check
            failed.append(name)
            if verbose:
                print(f"FAIL {name}")
                traceback.print_exc()
            continue
        if verbose:
            print(f"pass {name}")
    return failed
