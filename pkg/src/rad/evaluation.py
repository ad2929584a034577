"""Comparing two policies: safe-response rates, reward win rates, dominance tables.

Both policies answer the same sampled prompts, and each action is drawn with
the same uniform for blue and red (common random numbers), which removes most
of the sampling noise from paired comparisons.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dominance import dominance_report
from .seeding import Stream
from .spectra import Spectrum
from .toyenv import SoftmaxPolicy, ToyEnv, cost_law_arrays, sample_actions, sample_contexts

SAFETY_OUTCOMES = ("safe_safe", "safe_unsafe", "unsafe_safe", "unsafe_unsafe")


def safe_proportion(costs, threshold: float = 0.0) -> float:
    """Fraction of costs at or below ``threshold``."""
    c = np.asarray(costs, dtype=float).ravel()
    if c.size == 0:
        raise ValueError("need at least one cost")
    return float(np.count_nonzero(c <= threshold) / c.size)


def win_rate(blue_rewards, red_rewards) -> float:
    """Fraction of pairs where blue's reward is strictly higher; ties are losses."""
    b = np.asarray(blue_rewards, dtype=float).ravel()
    r = np.asarray(red_rewards, dtype=float).ravel()
    if b.size != r.size:
        raise ValueError(f"paired lists differ in length: {b.size} vs {r.size}")
    if b.size == 0:
        raise ValueError("need at least one pair")
    return float(np.count_nonzero(b > r) / b.size)


def winrate_by_safety(blue_rewards, red_rewards, blue_costs, red_costs, threshold: float = 0.0) -> dict:
    """Blue's win rate split by the (blue, red) safety outcome of each prompt.

    Returns ``{outcome: (count, win_rate)}``; the rate is NaN for empty cells.
    """
    b_safe = np.asarray(blue_costs, dtype=float) <= threshold
    r_safe = np.asarray(red_costs, dtype=float) <= threshold
    wins = np.asarray(blue_rewards, dtype=float) > np.asarray(red_rewards, dtype=float)
    out = {}
    for name, bs, rs in zip(SAFETY_OUTCOMES, (1, 1, 0, 0), (1, 0, 1, 0)):
        cell = (b_safe == bool(bs)) & (r_safe == bool(rs))
        n = int(cell.sum())
        out[name] = (n, float(wins[cell].mean()) if n else float("nan"))
    return out


@dataclass(frozen=True)
class MatchupResult:
    blue_safe_rate: float
    red_safe_rate: float
    blue_winrate: float
    dominance: dict
    n_prompts: int
    by_safety: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "blue_safe_rate": self.blue_safe_rate,
            "red_safe_rate": self.red_safe_rate,
            "blue_winrate": self.blue_winrate,
            "dominance": dict(self.dominance),
            "n_prompts": self.n_prompts,
        }


def paired_samples(env: ToyEnv, blue: SoftmaxPolicy, red: SoftmaxPolicy, n_prompts: int, seed: int):
    """Draw ``n_prompts`` contexts and one action per policy with shared uniforms.

    Returns ``(xs, blue_actions, red_actions)``.
    """
    stream = Stream(int(seed), 0)
    idx = np.arange(n_prompts, dtype=np.uint64)
    xs = sample_contexts(env, stream, idx)
    return xs, sample_actions(blue, xs, stream, idx), sample_actions(red, xs, stream, idx)


def _spectrum(s) -> Spectrum:
    return s if isinstance(s, Spectrum) else Spectrum.from_token(s)


def matchup(env: ToyEnv, blue: SoftmaxPolicy, red: SoftmaxPolicy, spectra=("mean",),
            n_prompts: int = 1000, n_particles: int = 16, seed: int = 0,
            threshold: float = 0.0, normalize: bool = False) -> MatchupResult:
    """Blue-versus-red comparison on common prompts.

    A positive dominance entry means blue's cost law is better (lower
    spectral risk) than red's under that spectrum.
    """
    if n_prompts < n_particles:
        raise ValueError(f"n_prompts ({n_prompts}) must be at least n_particles ({n_particles})")
    for p in (blue, red):
        if p.shape != (env.n_x, env.n_y):
            raise ValueError(f"policy shape {p.shape} does not match env {(env.n_x, env.n_y)}")
    xs, yb, yr = paired_samples(env, blue, red, n_prompts, seed)
    cb, cr = env.cost[xs, yb], env.cost[xs, yr]
    rb, rr = env.reward[xs, yb], env.reward[xs, yr]
    dominance = {}
    for s in spectra:
        spec = _spectrum(s)
        dominance[spec.token] = dominance_report(cb, cr, spec, n_particles, normalize=normalize).difference
    return MatchupResult(
        blue_safe_rate=safe_proportion(cb, threshold),
        red_safe_rate=safe_proportion(cr, threshold),
        blue_winrate=win_rate(rb, rr),
        dominance=dominance,
        n_prompts=int(n_prompts),
        by_safety=winrate_by_safety(rb, rr, cb, cr, threshold),
    )


def write_by_safety_csv(result: MatchupResult, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["outcome", "count", "blue_winrate"])
        for name in SAFETY_OUTCOMES:
            n, rate = result.by_safety[name]
            out.writerow([name, n, format(rate, ".9g")])


def exact_cvar(values, probs, alpha: float) -> float:
    """``(1/(1-alpha)) * integral_alpha^1 Q(q) dq`` for a discrete law."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    order = np.argsort(v, kind="stable")
    v, p = v[order], p[order] / p.sum()
    upper = np.cumsum(p)
    lower = upper - p
    # length of each atom's quantile interval that lies above alpha
    overlap = np.clip(upper - np.maximum(lower, alpha), 0.0, None)
    return float(overlap @ v / (1.0 - alpha))


def policy_cvar(env: ToyEnv, policy: SoftmaxPolicy, alpha: float) -> float:
    values, probs = cost_law_arrays(env, policy)
    return exact_cvar(values, probs, alpha)
