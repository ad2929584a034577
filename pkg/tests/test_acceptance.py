"""Acceptance criteria AC1-AC9, each at its stated tolerance and time budget."""

import json
import math
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

from rad import cli
from rad.distributions import make_levels, quantile_particles
from rad.dominance import fsd_loss
from rad.evaluation import matchup, policy_cvar
from rad.fixture import FIXTURE_PATH
from rad.spectra import KINDS, Spectrum, discretize_weights, spectral_risk, weight
from rad.toyenv import (
    cost_law_arrays,
    exact_cdf_gradient,
    exact_expected_rtilde,
    expected_cost,
    load_env,
    sample_batch,
)
from rad.trainer import exact_particles, rad_score, resolve_kappa, resolve_tau, train
from rad.transport import entropic_value, exact_fsd, fsd_cost_matrix, particle_gradient, plan_cost, sinkhorn

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CHIS = (0.1, 0.03, 0.01, 0.003, 0.001)


def load_config(name):
    path = CONFIGS / name
    env_path, _, config = cli.parse_run_config(json.loads(path.read_text()), path.parent)
    return load_env(env_path), config


def score_table(env, policy):
    pi = policy.probs()
    out = np.zeros(env.cost.shape + env.cost.shape)
    for x in range(env.n_x):
        for y in range(env.n_y):
            out[x, y, x] = -pi[x]
            out[x, y, x, y] += 1.0
    return out


def enumerate_expectation(env, policy, per_outcome):
    mass = env.context_probs[:, None] * policy.probs()
    return np.einsum("xy,xy,xyab->ab", mass, per_outcome, score_table(env, policy))


def test_ac1_fsd_ot_equivalence(report):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    gaps = np.zeros((100, len(CHIS)))
    for k in range(100):
        x, y = np.sort(rng.uniform(size=64)), np.sort(rng.uniform(size=64))
        C = fsd_cost_matrix(x, y)
        exact = exact_fsd(x, y)
        for j, chi in enumerate(CHIS):
            gaps[k, j] = plan_cost(sinkhorn(C, chi=chi), C) - exact
    elapsed = time.perf_counter() - start
    worst = np.abs(gaps[:, -1]).max()
    monotone = bool(np.all(np.diff(gaps, axis=1) <= 1e-12))
    ok = worst <= 5e-3 and monotone and elapsed < 10
    report("AC1", ok, f"max |gap| at chi=0.001 {worst:.2e} (<=5e-3), monotone={monotone}, {elapsed:.1f}s (<10s)")
    assert worst <= 5e-3
    assert monotone
    assert elapsed < 10


def test_ac2_particle_gradient(report):
    rng = np.random.default_rng(2)
    chi, h = 0.05, 1e-5
    start = time.perf_counter()

    def solve(xx, y):
        C = fsd_cost_matrix(xx, y)
        return sinkhorn(C, chi=chi, tol=1e-14, max_iter=100_000), C

    worst, done = 0.0, 0
    while done < 20:
        x, y = rng.uniform(size=8), rng.uniform(size=8)
        if np.abs(x[:, None] - y[None, :]).min() < 1e-3:
            continue
        done += 1
        g = particle_gradient(solve(x, y)[0], x, y)
        for i in range(8):
            e = np.zeros(8)
            e[i] = h
            fd = (entropic_value(*solve(x + e, y), chi) - entropic_value(*solve(x - e, y), chi)) / (2 * h)
            den = max(abs(g[i]), abs(fd))
            worst = max(worst, 0.0 if den == 0 else abs(fd - g[i]) / den)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed < 5
    report("AC2", ok, f"worst relative error {worst:.2e} (<=1e-4), {elapsed:.1f}s (<5s)")
    assert worst <= 1e-4
    assert elapsed < 5


def test_ac3_estimator_identities(report):
    env = load_env(FIXTURE_PATH)
    policy = env.ref_policy
    start = time.perf_counter()

    # (a) enumerated indicator REINFORCE against the analytic CDF gradient
    err_a = 0.0
    for t in np.unique(env.cost):
        got = enumerate_expectation(env, policy, (env.cost <= t).astype(float))
        err_a = max(err_a, np.abs(got - exact_cdf_gradient(env, policy, t)).max())

    # (b) Monte Carlo over 1e5 episodes at the median cost
    t = float(np.median(env.cost))
    batch = sample_batch(env, policy, 50_000, 2, 7)
    ind = (batch.cost <= t).astype(float)
    pi = policy.probs()
    samples = np.zeros((len(batch),) + env.cost.shape)
    rows = np.arange(len(batch))
    samples[rows, batch.x] = -pi[batch.x] * ind[:, None]
    samples[rows, batch.x, batch.y] += ind
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(len(batch))
    z = np.abs(mean - exact_cdf_gradient(env, policy, t)) / np.where(se > 0, se, np.inf)
    worst_z = float(z.max())

    # (c) lambda term: expectation of the score against its composition
    n = 16
    values, probs = cost_law_arrays(env, policy)
    q = exact_particles(env, policy, n).particles
    ref = exact_particles(env, env.ref_policy, n).particles - 0.1
    g = particle_gradient(sinkhorn(fsd_cost_matrix(q, ref), chi=0.01), q, ref)
    w = discretize_weights(Spectrum.from_token("wang"), make_levels(n))
    lam = 1.3

    class Outcomes:
        cost = env.cost
        reward = np.zeros(env.cost.shape)
        logprob_theta = logprob_ref = np.zeros(env.cost.shape)

    got = enumerate_expectation(env, policy, rad_score(Outcomes, q, g, w, lam, 0.0))
    want = lam * sum(wi * -gi * exact_cdf_gradient(env, policy, qi) for wi, gi, qi in zip(w.weights, g, q))
    err_c = np.abs(got - want).max()
    elapsed = time.perf_counter() - start

    ok = err_a <= 1e-12 and worst_z <= 4 and err_c <= 1e-10 and elapsed < 30 and np.abs(g).max() > 0
    report("AC3", ok, f"(a) {err_a:.1e} (<=1e-12), (b) max |z| {worst_z:.2f} (<=4), "
                      f"(c) {err_c:.1e} (<=1e-10), {elapsed:.1f}s (<30s)")
    assert err_a <= 1e-12
    assert worst_z <= 4
    assert np.abs(g).max() > 0
    assert err_c <= 1e-10
    assert elapsed < 30


def test_ac4_srm_decomposition(report):
    rng = np.random.default_rng(4)
    n = 16
    levels = make_levels(n)
    weights = {k: discretize_weights(Spectrum.from_token(k), levels) for k in KINDS}
    start = time.perf_counter()
    worst_id, sandwich = 0.0, True
    for _ in range(50):
        X = quantile_particles(rng.normal(size=rng.integers(n, 200)), n)
        Y = quantile_particles(rng.normal(rng.normal(), rng.uniform(0.2, 3), size=rng.integers(n, 200)), n)
        for w in weights.values():
            fwd, rev = fsd_loss(X, Y, w), fsd_loss(Y, X, w)
            d = spectral_risk(Y, w) - spectral_risk(X, w)
            worst_id = max(worst_id, abs((fwd - rev) - d))
            sandwich &= (-rev - 1e-12 <= d <= fwd + 1e-12) and fwd >= 0 and rev >= 0
    elapsed = time.perf_counter() - start
    ok = worst_id <= 1e-12 and sandwich and elapsed < 5
    report("AC4", ok, f"max identity error {worst_id:.1e} (<=1e-12), sandwich={sandwich}, {elapsed:.2f}s (<5s)")
    assert worst_id <= 1e-12
    assert sandwich
    assert elapsed < 5


def test_ac5_rad_uniform(report):
    env, config = load_config("fixture_rad_mean.json")
    assert config.spectrum == "mean" and config.steps == 2000
    kappa = resolve_kappa(env, config)
    start = time.perf_counter()
    state = train(env, config)
    elapsed = time.perf_counter() - start
    last = state.history[-1]
    r0 = exact_expected_rtilde(env, env.ref_policy, config.beta)[0]
    cost, ref_cost = expected_cost(env, state.policy), expected_cost(env, env.ref_policy)
    bound = ref_cost - kappa + last.lfsd_rev + 0.05 * kappa
    checks = {
        "fwd": last.lfsd_fwd >= 0.95 * kappa,
        "rev": last.lfsd_rev <= 0.1 * kappa,
        "cost": cost <= bound,
        "reward": last.exp_reward > r0,
        "time": elapsed < 120,
    }
    report("AC5", all(checks.values()),
           f"fwd {last.lfsd_fwd:.4f} (>={0.95 * kappa:.4f}), rev {last.lfsd_rev:.4f} (<={0.1 * kappa:.4f}), "
           f"cost {cost:.4f} (<={bound:.4f}), r~ {last.exp_reward:.4f} (>{r0:.4f}), {elapsed:.0f}s (<120s)")
    assert all(checks.values()), checks


def test_ac6_rad_cvar(report):
    env, config = load_config("fixture_rad_cvar.json")
    assert config.spectrum == "cvar" and config.alpha == 0.9
    start = time.perf_counter()
    state = train(env, config)
    elapsed = time.perf_counter() - start
    trained, ref = policy_cvar(env, state.policy, 0.9), policy_cvar(env, env.ref_policy, 0.9)
    result = matchup(env, state.policy, env.ref_policy, [Spectrum.from_token("cvar")], n_prompts=1000, seed=0)
    dom = result.dominance["cvar"]
    ok = trained < ref and dom > 0 and elapsed < 120
    report("AC6", ok, f"CVaR0.9 trained {trained:.4f} < ref {ref:.4f}, matchup cvar dominance {dom:+.4f} (>0), "
                      f"{elapsed:.0f}s (<120s)")
    assert trained < ref
    assert dom > 0
    assert elapsed < 120


def test_ac7_safe_rlhf(report):
    env, config = load_config("fixture_safe_rlhf.json")
    assert config.mode == "safe-rlhf"
    tau = resolve_tau(env, config)
    ref_cost = expected_cost(env, env.ref_policy)
    start = time.perf_counter()
    state = train(env, config)
    elapsed = time.perf_counter() - start
    cost = expected_cost(env, state.policy)
    bound = tau + 0.05 * abs(tau - ref_cost)
    ok = cost <= bound and elapsed < 120
    report("AC7", ok, f"final cost {cost:.4f} (<={bound:.4f}, tau {tau:.4f}), {elapsed:.1f}s (<120s)")
    assert cost <= bound
    assert elapsed < 120


def test_ac8_determinism(tmp_path, capsys, report):
    cfg = json.loads((CONFIGS / "fixture_rad_cvar.json").read_text())
    cfg.update(env=str(FIXTURE_PATH), steps=100)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes = [cli.main(["train", "--config", str(path), "--output", str(tmp_path / d)]) for d in ("a", "b")]
    same = (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    check_code = cli.main(["check"])
    capsys.readouterr()
    ok = codes == [0, 0] and same and check_code == 0
    report("AC8", ok, f"train exit codes {codes}, identical history={same}, check exit {check_code}")
    assert codes == [0, 0]
    assert same
    assert check_code == 0


def wang_integral(lam):
    # closed form of the printed Wang weight's integral over (0, 1)
    Phi = mpmath.ncdf
    return float(Phi(lam / mpmath.sqrt(2)) / (1 - Phi(lam)))


def test_ac9_spectrum_normalization(report):
    q = (np.arange(10_000) + 0.5) / 10_000
    errs = {}
    for kind in KINDS:
        if kind == "var":
            continue
        spec = Spectrum.from_token(kind)
        total = float(np.mean(weight(spec, q)))
        if kind == "wang":
            total /= wang_integral(spec.lam)
        errs[kind] = abs(total - 1.0)
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= 1e-3
    report("AC9", ok, f"worst |integral - 1| {errs[worst]:.1e} ({worst}) (<=1e-3)")
    for kind, err in errs.items():
        assert err <= 1e-3, kind
