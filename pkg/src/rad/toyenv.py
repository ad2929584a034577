"""An enumerable contextual bandit with softmax policies.

Contexts play the role of prompts and actions the role of responses; reward
and cost are fixed tables. Everything a sampled estimator approximates can
be computed here exactly by summing over the ``n_x * n_y`` outcomes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from .seeding import DRAW_ACTION, DRAW_CONTEXT, Stream

ENV_KEYS = ("context_probs", "reward", "cost", "ref_logits")


def _table(values, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValueError(f"{name} must be a non-empty 2-d table")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Tabular policy ``pi(y|x) = softmax(logits[x])[y]``."""

    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", _table(self.logits, "logits"))

    @property
    def shape(self):
        return self.logits.shape

    def log_probs(self) -> np.ndarray:
        return log_softmax(self.logits, axis=1)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


@dataclass(frozen=True)
class ToyEnv:
    context_probs: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    ref_logits: np.ndarray
    # optional fixture metadata (e.g. the constraint level kappa)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        p = np.array(self.context_probs, dtype=float).ravel()
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("context_probs must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("context_probs must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "context_probs", p)
        for name in ("reward", "cost", "ref_logits"):
            object.__setattr__(self, name, _table(getattr(self, name), name))
        shape = (p.size, self.reward.shape[1])
        for name in ("reward", "cost", "ref_logits"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def n_x(self) -> int:
        return self.context_probs.size

    @property
    def n_y(self) -> int:
        return self.reward.shape[1]

    @property
    def ref_policy(self) -> SoftmaxPolicy:
        return SoftmaxPolicy(self.ref_logits)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ENV_KEYS}
        out.update(self.meta)
        return out


def load_env(path) -> ToyEnv:
    """Read an env fixture JSON; extra scalar keys are kept in ``meta``."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("env fixture must be a JSON object")
    missing = [k for k in ENV_KEYS if k not in data]
    if missing:
        raise ValueError(f"env fixture missing keys: {missing}")
    meta = {k: v for k, v in data.items() if k not in ENV_KEYS}
    return ToyEnv(*(data[k] for k in ENV_KEYS), meta=meta)


def save_env(env: ToyEnv, path) -> None:
    Path(path).write_text(json.dumps(env.to_dict(), indent=2) + "\n")


def _check_index(policy, x, y=None):
    n_x, n_y = policy.shape
    if not 0 <= x < n_x:
        raise ValueError(f"context index {x} out of range [0, {n_x})")
    if y is not None and not 0 <= y < n_y:
        raise ValueError(f"action index {y} out of range [0, {n_y})")


def action_probs(policy: SoftmaxPolicy, x: int) -> np.ndarray:
    _check_index(policy, x)
    return np.exp(log_softmax(policy.logits[x]))


def log_prob(policy: SoftmaxPolicy, x: int, y: int) -> float:
    _check_index(policy, x, y)
    return float(log_softmax(policy.logits[x])[y])


def score_function(policy: SoftmaxPolicy, x: int, y: int) -> np.ndarray:
    """``grad_theta log pi(y|x)``: ``e_y - pi(.|x)`` in row ``x``, zero elsewhere."""
    g = np.zeros(policy.shape)
    g[x] = -action_probs(policy, x)
    g[x, y] += 1.0
    return g


@dataclass(frozen=True)
class Episode:
    x: int
    y: int
    reward: float
    cost: float
    logprob_theta: float
    logprob_ref: float
    prompt_group: int


@dataclass(frozen=True)
class Batch:
    """Column-oriented episodes; ``episodes()`` gives the row view."""

    x: np.ndarray
    y: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    logprob_theta: np.ndarray
    logprob_ref: np.ndarray
    prompt_group: np.ndarray

    def __len__(self):
        return self.x.size

    def episodes(self) -> list[Episode]:
        return [
            Episode(int(self.x[i]), int(self.y[i]), float(self.reward[i]), float(self.cost[i]),
                    float(self.logprob_theta[i]), float(self.logprob_ref[i]), int(self.prompt_group[i]))
            for i in range(len(self))
        ]


def _inverse_cdf(cdf_rows, u):
    # first index whose cumulative probability exceeds u
    idx = (cdf_rows <= u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def sample_contexts(env: ToyEnv, stream: Stream, groups: np.ndarray) -> np.ndarray:
    u = stream.uniforms(groups, DRAW_CONTEXT)
    cdf = np.cumsum(env.context_probs)
    return np.minimum(np.searchsorted(cdf, u, side="right"), env.n_x - 1)


def sample_actions(policy: SoftmaxPolicy, xs: np.ndarray, stream: Stream, index: np.ndarray) -> np.ndarray:
    u = stream.uniforms(index, DRAW_ACTION)
    cdf = np.cumsum(policy.probs(), axis=1)
    return _inverse_cdf(cdf[xs], u)


def sample_batch(env: ToyEnv, policy: SoftmaxPolicy, prompts: int, samples_per_prompt: int,
                 rng, rloo: bool = True) -> Batch:
    """Draw ``prompts * samples_per_prompt`` episodes.

    Group ``b`` draws its context from substream index ``b``; episode
    ``e = b * k + j`` draws its action from index ``e``. ``rng`` is a
    :class:`~rad.seeding.Stream` or an integer seed (step 0).
    """
    if prompts < 1:
        raise ValueError("need at least one prompt")
    if samples_per_prompt < 1 or (rloo and samples_per_prompt < 2):
        raise ValueError("leave-one-out baselines need at least 2 samples per prompt")
    stream = rng if isinstance(rng, Stream) else Stream(int(rng))
    k = samples_per_prompt
    groups = np.arange(prompts, dtype=np.uint64)
    ctx = sample_contexts(env, stream, groups)
    xs = np.repeat(ctx, k)
    index = np.arange(prompts * k, dtype=np.uint64)
    ys = sample_actions(policy, xs, stream, index)
    return Batch(
        x=xs,
        y=ys,
        reward=env.reward[xs, ys],
        cost=env.cost[xs, ys],
        logprob_theta=policy.log_probs()[xs, ys],
        logprob_ref=env.ref_policy.log_probs()[xs, ys],
        prompt_group=np.repeat(np.arange(prompts), k),
    )


def kl_regularized_reward(ep, beta: float):
    """``r - beta * (log pi_theta - log pi_ref)``; works on an Episode or a Batch."""
    return ep.reward - beta * (ep.logprob_theta - ep.logprob_ref)


def exact_cost_law(env: ToyEnv, policy: SoftmaxPolicy) -> list[tuple[float, float]]:
    """The cost distribution as sorted ``(value, probability)`` pairs, ties merged."""
    values, probs = cost_law_arrays(env, policy)
    keep = probs > 0
    return list(zip(values[keep].tolist(), probs[keep].tolist()))


def cost_law_arrays(env: ToyEnv, policy: SoftmaxPolicy):
    mass = env.context_probs[:, None] * policy.probs()
    values, inverse = np.unique(env.cost.ravel(), return_inverse=True)
    probs = np.bincount(inverse.ravel(), weights=mass.ravel(), minlength=values.size)
    return values, probs


def law_quantile(values, probs, q):
    """Left-continuous quantile of a discrete law at levels ``q``."""
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    # a 1e-12 allowance absorbs rounding in the cumulative sum
    idx = np.searchsorted(cdf, np.asarray(q, dtype=float) - 1e-12, side="left")
    return np.asarray(values)[np.minimum(idx, len(values) - 1)]


def exact_cdf_gradient(env: ToyEnv, policy: SoftmaxPolicy, t: float) -> np.ndarray:
    """``grad_theta P(cost <= t)`` by enumeration.

    Row ``x`` is ``p(x) * pi(.|x) * (ind(.) - <pi(.|x), ind>)`` where ``ind``
    marks the actions with cost at most ``t``.
    """
    pi = policy.probs()
    ind = (env.cost <= t).astype(float)
    centered = ind - np.sum(pi * ind, axis=1, keepdims=True)
    return env.context_probs[:, None] * pi * centered


def exact_expected_rtilde(env: ToyEnv, policy: SoftmaxPolicy, beta: float):
    """Exact ``E[r - beta * log(pi/pi_ref)]`` and its gradient in the logits."""
    pi = policy.probs()
    h = env.reward - beta * (policy.log_probs() - env.ref_policy.log_probs())
    value = float(np.sum(env.context_probs[:, None] * pi * h))
    # the -beta * grad(log pi) term has zero mean under pi, leaving the score form
    grad = env.context_probs[:, None] * pi * (h - np.sum(pi * h, axis=1, keepdims=True))
    return value, grad


def expected_cost(env: ToyEnv, policy: SoftmaxPolicy) -> float:
    return float(np.sum(env.context_probs[:, None] * policy.probs() * env.cost))


def expected_reward(env: ToyEnv, policy: SoftmaxPolicy) -> float:
    return float(np.sum(env.context_probs[:, None] * policy.probs() * env.reward))
