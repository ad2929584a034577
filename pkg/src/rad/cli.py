"""Command-line front end.

Exit codes: 0 success, 1 failed invariant check, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .distributions import read_cost_samples
from .dominance import dominance_report
from .errors import ConvergenceError, DegenerateSpectrumError
from .evaluation import matchup, write_by_safety_csv
from .spectra import KINDS, Spectrum
from .toyenv import SoftmaxPolicy, load_env
from .trainer import (
    RadConfig,
    TrainerState,
    init_state,
    rad_step,
    resolve_kappa,
    resolve_tau,
    safe_rlhf_step,
    write_history_csv,
)

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

BUNDLED_ENV = Path(__file__).parent / "data" / "toy_env.json"
RUN_KEYS = ("env", "output_dir")
DEFAULT_OUTPUT = "rad-run"


class InputError(ValueError):
    pass


def round9(obj):
    """Recursively round floats to 9 significant digits for JSON output."""
    if isinstance(obj, float):
        return float(format(obj, ".9g"))
    if isinstance(obj, dict):
        return {k: round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round9(v) for v in obj]
    return obj


def _dump(obj) -> str:
    return json.dumps(round9(obj), indent=2) + "\n"


# --- config -----------------------------------------------------------------

def _field_checker(annotation: str):
    optional = "None" in annotation
    base = annotation.replace("| None", "").strip()

    def check(name, value):
        if value is None:
            if optional:
                return None
            raise InputError(f"config key {name!r} may not be null")
        if base == "bool":
            ok = isinstance(value, bool)
        elif base == "int":
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif base == "float":
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        else:
            ok = isinstance(value, str)
        if not ok:
            raise InputError(f"config key {name!r} must be {base}, got {value!r}")
        return value

    return check


_CHECKERS = {f.name: _field_checker(f.type) for f in dataclasses.fields(RadConfig)}


def parse_run_config(data, base_dir: Path):
    """Validate a run-config object; returns ``(env_path, output_dir, RadConfig)``."""
    if not isinstance(data, dict):
        raise InputError("config must be a JSON object")
    unknown = sorted(set(data) - set(_CHECKERS) - set(RUN_KEYS))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")
    values = {k: _CHECKERS[k](k, v) for k, v in data.items() if k in _CHECKERS}
    try:
        config = RadConfig(**values)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    env_path = data.get("env")
    if env_path is None:
        env_path = BUNDLED_ENV
    elif not isinstance(env_path, str):
        raise InputError("config key 'env' must be a path string")
    env_path = (base_dir / env_path).resolve()
    if not env_path.is_file():
        raise InputError(f"env fixture not found: {env_path}")
    out = data.get("output_dir", DEFAULT_OUTPUT)
    if not isinstance(out, str):
        raise InputError("config key 'output_dir' must be a path string")
    return env_path, (base_dir / out).resolve(), config


def resolved_config(env_path: Path, output_dir: Path, config: RadConfig, env) -> dict:
    """Every setting needed to replay the run, with kappa and tau made explicit."""
    full = config.replace(kappa=resolve_kappa(env, config), tau=resolve_tau(env, config))
    out = {"env": str(env_path), "output_dir": str(output_dir)}
    out.update(dataclasses.asdict(full))
    return out


# --- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    path = Path(args.config)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed config JSON: {exc}") from exc
    env_path, out_dir, config = parse_run_config(data, path.parent)
    if args.output is not None:
        out_dir = Path(args.output).resolve()
    try:
        env = load_env(env_path)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad env fixture: {exc}") from exc
    config.weights()  # a degenerate spectrum fails here, before anything is written
    run_cfg = resolved_config(env_path, out_dir, config, env)
    kappa, tau = run_cfg["kappa"], run_cfg["tau"]

    state = init_state(env, config)
    step = rad_step if config.mode == "rad" else safe_rlhf_step
    bound = {"kappa": kappa} if config.mode == "rad" else {"tau": tau}
    error = None
    try:
        for _ in range(config.steps):
            state = step(env, state, config, **bound)
    except ConvergenceError as exc:
        error = exc

    out_dir.mkdir(parents=True, exist_ok=True)
    write_history_csv(state.history, out_dir / "history.csv")
    (out_dir / "final_state.json").write_text(_dump(state_dict(state)))
    # exact floats here so the emitted config replays the run bit for bit
    (out_dir / "run_config.json").write_text(json.dumps(run_cfg, indent=2) + "\n")
    if error is not None:
        print(f"error: step {state.step + 1}: {error}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def state_dict(state: TrainerState) -> dict:
    return {"logits": state.policy.logits.tolist(), "lambda": state.lam, "step": state.step}


def load_policy(path, env) -> SoftmaxPolicy:
    """A policy from a state JSON, or the env's reference policy for ``ref``."""
    if str(path) == "ref":
        return env.ref_policy
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read state file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed state JSON {path}: {exc}") from exc
    if not isinstance(data, dict) or "logits" not in data:
        raise InputError(f"state file {path} has no 'logits'")
    try:
        policy = SoftmaxPolicy(data["logits"])
    except (ValueError, TypeError) as exc:
        raise InputError(f"bad logits in {path}: {exc}") from exc
    if policy.shape != (env.n_x, env.n_y):
        raise InputError(f"logits in {path} have shape {policy.shape}, env is {(env.n_x, env.n_y)}")
    return policy


def _spectrum(token: str) -> Spectrum:
    try:
        return Spectrum.from_token(token)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_dominance(args) -> int:
    try:
        x = read_cost_samples(args.x)
        y = read_cost_samples(args.y)
    except OSError as exc:
        raise InputError(f"cannot read samples: {exc}") from exc
    spec = _spectrum(args.spectrum)
    if args.n < 1:
        raise InputError("--n must be at least 1")
    report = dominance_report(x, y, spec, args.n, normalize=args.normalize)
    sys.stdout.write(_dump(report.to_dict()))
    return EXIT_OK


def cmd_matchup(args) -> int:
    try:
        env = load_env(args.env)
    except OSError as exc:
        raise InputError(f"cannot read env: {exc}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad env fixture: {exc}") from exc
    blue = load_policy(args.blue, env)
    red = load_policy(args.red, env)
    spectra = [_spectrum(t.strip()) for t in args.spectra.split(",") if t.strip()]
    if not spectra:
        raise InputError("--spectra needs at least one token")
    if args.prompts < args.n:
        raise InputError("--prompts must be at least --n")
    result = matchup(env, blue, red, spectra, n_prompts=args.prompts, n_particles=args.n,
                     seed=args.seed, threshold=args.threshold, normalize=args.normalize)
    text = _dump(result.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    if args.by_safety:
        write_by_safety_csv(result, args.by_safety)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    failed = run_checks(verbose=True)
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rad", description="Dominance-constrained alignment on toy bandits.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run RAD or the expected-cost baseline from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--output", help="output directory (overrides output_dir in the config)")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("dominance", help="dominance report for two cost-sample files")
    d.add_argument("--x", required=True)
    d.add_argument("--y", required=True)
    d.add_argument("--spectrum", required=True, choices=KINDS)
    d.add_argument("--n", type=int, default=16)
    d.add_argument("--normalize", action="store_true")
    d.set_defaults(func=cmd_dominance)

    m = sub.add_parser("matchup", help="compare two policies on common prompts")
    m.add_argument("--env", required=True)
    m.add_argument("--blue", required=True, help="state JSON, or 'ref' for the reference policy")
    m.add_argument("--red", required=True, help="state JSON, or 'ref' for the reference policy")
    m.add_argument("--spectra", default=",".join(KINDS), help="comma-separated spectrum tokens")
    m.add_argument("--prompts", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--n", type=int, default=16, help="quantile particles")
    m.add_argument("--threshold", type=float, default=0.0, help="safety threshold on cost")
    m.add_argument("--normalize", action="store_true")
    m.add_argument("--out", help="also write the JSON result here")
    m.add_argument("--by-safety", help="write win rates split by safety outcome to this CSV")
    m.set_defaults(func=cmd_matchup)

    c = sub.add_parser("check", help="run the built-in invariant suite")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (ConvergenceError, DegenerateSpectrumError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
