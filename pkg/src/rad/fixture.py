"""The pinned desk-scale environment used by the acceptance runs.

Three equally likely contexts and five actions. Costs and rewards are
independent standard normals and reference logits are normals with scale
0.5, all rounded to three decimals and drawn once from ``FIXTURE_SEED``.
The constraint levels ``kappa`` and ``tau`` are computed from the tables and
stored alongside them.

Regenerate the committed file with ``python -m rad.fixture``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .toyenv import ToyEnv, load_env, save_env
from .trainer import default_kappa, default_tau

FIXTURE_SEED = 2
FIXTURE_PATH = Path(__file__).parent / "data" / "toy_env.json"


def generate_env(seed: int = FIXTURE_SEED, n_x: int = 3, n_y: int = 5, n_particles: int = 16) -> ToyEnv:
    rng = np.random.default_rng(seed)
    cost = np.round(rng.normal(0.0, 1.0, (n_x, n_y)), 3)
    reward = np.round(rng.normal(0.0, 1.0, (n_x, n_y)), 3)
    ref_logits = np.round(rng.normal(0.0, 0.5, (n_x, n_y)), 3)
    env = ToyEnv(np.full(n_x, 1.0 / n_x), reward, cost, ref_logits)
    kappa = default_kappa(env, n_particles)
    meta = {"kappa": kappa, "tau": default_tau(env, kappa), "generator_seed": seed}
    return ToyEnv(env.context_probs, reward, cost, ref_logits, meta=meta)


def fixture_env() -> ToyEnv:
    return load_env(FIXTURE_PATH)


if __name__ == "__main__":
    save_env(generate_env(), FIXTURE_PATH)
    print(f"wrote {FIXTURE_PATH}")
