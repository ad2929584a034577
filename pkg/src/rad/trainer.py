"""Dominance-constrained policy gradient (RAD) and the expected-cost baseline.

The policy maximizes the KL-regularized reward subject to
``fsd_loss(C_theta, C_ref, w) >= kappa`` through the Lagrangian

    max_theta min_{lam >= 0}  E[r_tilde] + lam * (fsd_loss(C_theta, C_ref, w) - kappa)

One step samples a batch, summarizes its pooled costs by quantile particles,
solves an entropic transport problem against the frozen reference particles,
turns the particle gradients into per-episode scores, applies a leave-one-out
REINFORCE update to the logits and a projected step to the multiplier.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .distributions import EmpiricalCostDistribution, make_levels, quantile_particles
from .dominance import fsd_loss
from .seeding import Stream
from .spectra import DiscreteWeights, Spectrum, discretize_weights, spectral_risk
from .toyenv import (
    Batch,
    SoftmaxPolicy,
    ToyEnv,
    cost_law_arrays,
    exact_expected_rtilde,
    expected_cost,
    kl_regularized_reward,
    law_quantile,
    sample_actions,
    sample_batch,
    sample_contexts,
)
from .transport import exact_fsd, fsd_cost_matrix, particle_gradient, sinkhorn

MODES = ("rad", "safe-rlhf")
REF_SOURCES = ("exact", "sample")
# substream step slot reserved for drawing the cached reference sample
REF_SAMPLE_STEP = 2**63


@dataclass(frozen=True)
class RadConfig:
    chi: float = 0.01
    beta: float = 0.1
    kappa: float | None = None
    n_particles: int = 16
    spectrum: str = "mean"
    alpha: float | None = None
    spectrum_lambda: float | None = None
    bandwidth: float | None = None
    normalize_weights: bool = True
    batch_prompts: int = 64
    samples_per_prompt: int = 2
    lr_theta: float = 0.05
    lr_lambda: float = 0.01
    lambda_init: float = 0.0
    steps: int = 2000
    seed: int = 0
    mode: str = "rad"
    tau: float | None = None
    ref_quantile_source: str = "exact"
    ref_sample_size: int | None = None
    sinkhorn_tol: float = 1e-9
    sinkhorn_max_iter: int = 10_000

    def __post_init__(self):
        if not self.chi > 0:
            raise ValueError("chi must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.kappa is not None and self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.batch_prompts < 1 or self.samples_per_prompt < 2:
            raise ValueError("need batch_prompts >= 1 and samples_per_prompt >= 2")
        if self.batch_prompts * self.samples_per_prompt < 4 * self.n_particles:
            raise ValueError(
                f"batch of {self.batch_prompts * self.samples_per_prompt} samples is too small "
                f"for {self.n_particles} particles (need at least {4 * self.n_particles})"
            )
        if not (self.lr_theta > 0 and self.lr_lambda > 0):
            raise ValueError("step sizes must be positive")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.ref_quantile_source not in REF_SOURCES:
            raise ValueError(f"ref_quantile_source must be one of {REF_SOURCES}")
        if self.ref_quantile_source == "sample":
            if self.ref_sample_size is None or self.ref_sample_size < self.n_particles:
                raise ValueError("ref_sample_size must be given and at least n_particles")
        self.spectrum_spec  # validates spectrum parameters

    @property
    def spectrum_spec(self) -> Spectrum:
        return Spectrum.from_token(
            self.spectrum, alpha=self.alpha, lam=self.spectrum_lambda, bandwidth=self.bandwidth
        )

    def weights(self) -> DiscreteWeights:
        return discretize_weights(self.spectrum_spec, make_levels(self.n_particles), self.normalize_weights)

    def replace(self, **changes) -> "RadConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    exp_reward: float
    exp_cost: float
    lfsd_fwd: float
    lfsd_rev: float
    dominance_diff: float
    lam: float
    srm_theta: float
    srm_ref: float


HISTORY_HEADER = (
    "step", "exp_reward", "exp_cost", "lfsd_fwd", "lfsd_rev",
    "dominance_diff", "lambda", "srm_theta", "srm_ref",
)


@dataclass
class TrainerState:
    policy: SoftmaxPolicy
    lam: float
    step: int
    ref: EmpiricalCostDistribution
    history: list[HistoryRecord] = field(default_factory=list)


def exact_particles(env: ToyEnv, policy: SoftmaxPolicy, n: int) -> EmpiricalCostDistribution:
    """Quantile particles of the enumerated cost law of ``policy``."""
    values, probs = cost_law_arrays(env, policy)
    levels = make_levels(n)
    return EmpiricalCostDistribution(law_quantile(values, probs, levels), levels, source_size=0)


def estimate_ref_quantiles(env: ToyEnv, config: RadConfig) -> EmpiricalCostDistribution:
    """Reference particles, frozen for a whole run."""
    if config.ref_quantile_source == "exact":
        return exact_particles(env, env.ref_policy, config.n_particles)
    m = config.ref_sample_size
    if m is None or m < config.n_particles:
        raise ValueError("ref_sample_size must be at least n_particles")
    stream = Stream(config.seed, REF_SAMPLE_STEP)
    idx = np.arange(m, dtype=np.uint64)
    xs = sample_contexts(env, stream, idx)
    ys = sample_actions(env.ref_policy, xs, stream, idx)
    return quantile_particles(env.cost[xs, ys], config.n_particles)


def best_achievable_particles(env: ToyEnv, n: int) -> EmpiricalCostDistribution:
    """Particles of the policy that always picks the cheapest action."""
    best = env.cost.min(axis=1)
    values, inverse = np.unique(best, return_inverse=True)
    probs = np.bincount(inverse, weights=env.context_probs, minlength=values.size)
    levels = make_levels(n)
    return EmpiricalCostDistribution(law_quantile(values, probs, levels), levels, source_size=0)


def default_kappa(env: ToyEnv, n: int = 16, fraction: float = 0.25) -> float:
    """``fraction`` of the largest achievable FSD gap below the reference."""
    ref = exact_particles(env, env.ref_policy, n)
    best = best_achievable_particles(env, n)
    return fraction * exact_fsd(best.particles, ref.particles)


def default_tau(env: ToyEnv, kappa: float) -> float:
    """Mean-cost threshold matched to ``kappa``: reference mean cost minus kappa."""
    return expected_cost(env, env.ref_policy) - kappa


def resolve_kappa(env: ToyEnv, config: RadConfig) -> float:
    if config.kappa is not None:
        return float(config.kappa)
    if "kappa" in env.meta:
        return float(env.meta["kappa"])
    return default_kappa(env, config.n_particles)


def resolve_tau(env: ToyEnv, config: RadConfig) -> float:
    if config.tau is not None:
        return float(config.tau)
    if "tau" in env.meta:
        return float(env.meta["tau"])
    return default_tau(env, resolve_kappa(env, config))


def rad_score(ep, q, g, w: DiscreteWeights | None, lam: float, beta: float):
    """Per-episode score ``r_tilde + lam * sum_i w_i * (-g_i) * 1[cost <= q_i]``.

    ``ep`` is an :class:`~rad.toyenv.Episode` or a whole
    :class:`~rad.toyenv.Batch`; ``g`` are the (non-positive) particle
    gradients of the transport value.
    """
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    if np.any(g > 0):
        raise ValueError("particle gradients of the FSD cost must be non-positive")
    coef = -g if w is None else w.weights * -g
    cost = np.asarray(ep.cost, dtype=float)
    below = cost[..., None] <= q
    out = kl_regularized_reward(ep, beta) + lam * (below @ coef)
    return float(out) if np.ndim(out) == 0 else out


def rloo_advantages(scores) -> np.ndarray:
    """Leave-one-out advantages for one prompt group (``k >= 2`` scores)."""
    s = np.asarray(scores, dtype=float)
    k = s.shape[-1]
    if k < 2:
        raise ValueError("leave-one-out baseline needs at least 2 samples")
    return s - (s.sum(axis=-1, keepdims=True) - s) / (k - 1)


def policy_gradient(policy: SoftmaxPolicy, batch: Batch, weights: np.ndarray) -> np.ndarray:
    """``(1/n) * sum_e weights_e * grad log pi(y_e|x_e)`` for a batch."""
    probs = policy.probs()
    grad = np.zeros(policy.shape)
    np.add.at(grad, (batch.x, batch.y), weights)
    per_ctx = np.bincount(batch.x, weights=weights, minlength=policy.shape[0])
    grad -= per_ctx[:, None] * probs
    return grad / len(batch)


def dual_update(lam: float, lfsd_hat: float, kappa: float, lr_lambda: float) -> float:
    """Projected step on the multiplier of ``fsd_loss >= kappa``."""
    return max(0.0, lam - lr_lambda * (lfsd_hat - kappa))


def _grouped_advantages(scores: np.ndarray, k: int) -> np.ndarray:
    return rloo_advantages(scores.reshape(-1, k)).ravel()


def init_state(env: ToyEnv, config: RadConfig) -> TrainerState:
    return TrainerState(
        policy=SoftmaxPolicy(np.array(env.ref_logits)),
        lam=float(config.lambda_init),
        step=0,
        ref=estimate_ref_quantiles(env, config),
    )


def _record(env, state, config, w, ref_exact) -> HistoryRecord:
    theta = exact_particles(env, state.policy, config.n_particles)
    fwd = fsd_loss(theta, ref_exact, w)
    rev = fsd_loss(ref_exact, theta, w)
    value, _ = exact_expected_rtilde(env, state.policy, config.beta)
    return HistoryRecord(
        step=state.step,
        exp_reward=value,
        exp_cost=expected_cost(env, state.policy),
        lfsd_fwd=fwd,
        lfsd_rev=rev,
        dominance_diff=fwd - rev,
        lam=state.lam,
        srm_theta=spectral_risk(theta, w),
        srm_ref=spectral_risk(ref_exact, w),
    )


def rad_step(env: ToyEnv, state: TrainerState, config: RadConfig, rng: Stream | None = None,
             *, kappa: float | None = None) -> TrainerState:
    """One RAD update; returns a new state with one more history record."""
    stream = rng if rng is not None else Stream(config.seed, state.step)
    kappa = resolve_kappa(env, config) if kappa is None else kappa
    w = config.weights()
    k = config.samples_per_prompt
    batch = sample_batch(env, state.policy, config.batch_prompts, k, stream)

    theta_q = quantile_particles(batch.cost, config.n_particles)
    ref_q = state.ref
    plan = sinkhorn(
        fsd_cost_matrix(theta_q.particles, ref_q.particles),
        chi=config.chi, tol=config.sinkhorn_tol, max_iter=config.sinkhorn_max_iter,
    )
    g = particle_gradient(plan, theta_q.particles, ref_q.particles)
    scores = rad_score(batch, theta_q.particles, g, w, state.lam, config.beta)
    adv = _grouped_advantages(scores, k)
    grad = policy_gradient(state.policy, batch, adv)

    policy = SoftmaxPolicy(state.policy.logits + config.lr_theta * grad)
    lfsd_hat = fsd_loss(theta_q, ref_q, w)
    lam = dual_update(state.lam, lfsd_hat, kappa, config.lr_lambda)
    new = TrainerState(policy, lam, state.step + 1, state.ref, list(state.history))
    new.history.append(_record(env, new, config, w, _ref_exact(env, config)))
    return new


def safe_rlhf_step(env: ToyEnv, state: TrainerState, config: RadConfig, rng: Stream | None = None,
                   *, tau: float | None = None) -> TrainerState:
    """One expected-cost constrained update (score ``r_tilde - lam * cost``)."""
    stream = rng if rng is not None else Stream(config.seed, state.step)
    tau = resolve_tau(env, config) if tau is None else tau
    k = config.samples_per_prompt
    batch = sample_batch(env, state.policy, config.batch_prompts, k, stream)
    scores = kl_regularized_reward(batch, config.beta) - state.lam * batch.cost
    adv = _grouped_advantages(scores, k)
    grad = policy_gradient(state.policy, batch, adv)
    policy = SoftmaxPolicy(state.policy.logits + config.lr_theta * grad)
    lam = max(0.0, state.lam + config.lr_lambda * (float(np.mean(batch.cost)) - tau))
    new = TrainerState(policy, lam, state.step + 1, state.ref, list(state.history))
    new.history.append(_record(env, new, config, config.weights(), _ref_exact(env, config)))
    return new


def _ref_exact(env, config):
    return exact_particles(env, env.ref_policy, config.n_particles)


def train(env: ToyEnv, config: RadConfig, callback=None) -> TrainerState:
    """Run ``config.steps`` steps of ``config.mode`` from the reference policy.

    History records describe the policy and multiplier after each step, with
    losses and risks evaluated exactly on the enumerated cost laws.
    """
    state = init_state(env, config)
    if config.mode == "rad":
        kappa = resolve_kappa(env, config)
        step = lambda s: rad_step(env, s, config, kappa=kappa)  # noqa: E731
    else:
        tau = resolve_tau(env, config)
        step = lambda s: safe_rlhf_step(env, s, config, tau=tau)  # noqa: E731
    for _ in range(config.steps):
        state = step(state)
        if callback is not None:
            callback(state)
    return state


def history_rows(history) -> list[list[str]]:
    return [
        [str(r.step)] + [fmt(v) for v in (r.exp_reward, r.exp_cost, r.lfsd_fwd, r.lfsd_rev,
                                          r.dominance_diff, r.lam, r.srm_theta, r.srm_ref)]
        for r in history
    ]


def fmt(v: float) -> str:
    """Nine significant digits (correctly rounded, ties to even)."""
    return format(float(v), ".9g")


def write_history_csv(history, path) -> None:
    lines = [",".join(HISTORY_HEADER)] + [",".join(row) for row in history_rows(history)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
