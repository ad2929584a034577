"""Train RAD and the expected-cost baseline on the bundled toy env and compare.

Usage: python3 demos/train_and_compare.py [steps]
"""

import sys

import numpy as np

from rad.evaluation import matchup, policy_cvar
from rad.fixture import fixture_env
from rad.spectra import KINDS, Spectrum
from rad.toyenv import expected_cost
from rad.trainer import RadConfig, exact_particles, resolve_kappa, resolve_tau, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
env = fixture_env()
common = dict(batch_prompts=128, samples_per_prompt=2, lr_theta=0.05, lr_lambda=1.0, steps=steps)
runs = {
    "rad-mean": RadConfig(mode="rad", spectrum="mean", **common),
    "safe-rlhf": RadConfig(mode="safe-rlhf", **common),
}
print(f"kappa={resolve_kappa(env, runs['rad-mean']):.4f} tau={resolve_tau(env, runs['safe-rlhf']):.4f}")

ref_q = exact_particles(env, env.ref_policy, 16).particles
policies = {}
for name, config in runs.items():
    state = train(env, config)
    policies[name] = state.policy
    last = state.history[-1]
    q = exact_particles(env, state.policy, 16).particles
    print(f"\n{name}: reward {last.exp_reward:.3f} cost {expected_cost(env, state.policy):.3f} "
          f"cvar0.9 {policy_cvar(env, state.policy, 0.9):.3f} lambda {last.lam:.2f}")
    print("  quantile shift vs ref:", np.round(q - ref_q, 3))

print(f"\nref: cost {expected_cost(env, env.ref_policy):.3f} cvar0.9 {policy_cvar(env, env.ref_policy, 0.9):.3f}")
specs = [Spectrum.from_token(k) for k in KINDS]
result = matchup(env, policies["rad-mean"], policies["safe-rlhf"], specs, n_prompts=1000, seed=0)
print(f"\nrad-mean (blue) vs safe-rlhf (red): blue safe {result.blue_safe_rate:.3f} "
      f"red safe {result.red_safe_rate:.3f} blue win rate {result.blue_winrate:.3f}")
for kind, d in result.dominance.items():
    print(f"  dominance[{kind}] = {d:+.4f}")
