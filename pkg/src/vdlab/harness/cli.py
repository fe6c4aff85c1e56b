"""Command-line entry point: ``vdlab {run,certify,bayes,errors,plot}``."""

import argparse
import json
import os
import sys

import numpy as np

from ..envs import env_from_spec, load_env, rollout
from ..exceptions import (
    ConfigurationError,
    ParseError,
    RejectedInputError,
    ShapeError,
)
from ..mixer import AdditiveMixer, mix
from ..oracle import (
    AliasSampleSet,
    ExpertPolicy,
    PenaltyMatrix,
    bayes_expected_loss,
    bayes_optimal_local,
    certify_lossy,
    error_breakdown,
    exact_q,
)
from ..valuestore import TabularUtility, load_checkpoint
from .plotting import render_curves
from .runner import run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
_VALIDATION_ERRORS = (
    ConfigurationError,
    RejectedInputError,
    ParseError,
    ShapeError,
    FileNotFoundError,
    json.JSONDecodeError,
)


def _dump(obj):
    print(json.dumps(obj, indent=2, default=_json_default))


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, (np.ndarray, tuple, frozenset, set)):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _store_values(store, env, state, obs=None):
    """Per-agent action values ``(n_agents, n_actions)`` at one state."""
    A = env.n_agents
    if store.input_space == "state":
        if isinstance(store, TabularUtility):
            inputs = np.full((A, 1), env.state_id(state), dtype=np.int64)
        else:
            inputs = np.broadcast_to(env.state_vector(state), (A, 1, env.state_dim))
    else:
        obs = env.observe_all(state) if obs is None else obs
        if isinstance(store, TabularUtility):
            inputs = np.asarray(obs, dtype=np.int64)[:, None]
        else:
            inputs = np.stack([env.observation_vector(o, i) for i, o in enumerate(obs)])[:, None, :]
    return store.values(inputs)[:, 0, :]


# ------------------------------------------------------------- commands


def cmd_run(args):
    results = run_experiment(args.config, force=args.force, seeds=args.seed)
    failed = [r for r in results if r.diverged]
    for r in results:
        status = f"diverged: {r.message}" if r.diverged else "ok"
        print(f"{r.stem}: {status}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_certify(args):
    env = load_env(args.env)
    cert = certify_lossy(env, exact_q(env), reachable_only=not args.all_states)
    out = cert.to_dict()
    out["lossy"] = cert.lossy
    _dump(out)
    return EXIT_OK


def cmd_bayes(args):
    env = load_env(args.env)
    ckpt = load_checkpoint(args.checkpoint)
    if "experts" not in ckpt:
        raise ConfigurationError(f"{args.checkpoint} holds no 'experts' store")
    experts = ckpt["experts"]
    states = [s for s in sorted(env.reachable_states()) if not env.terminal_states[s]]
    greedy = {s: np.argmax(_store_values(experts, env, s), axis=-1) for s in states}
    expert = ExpertPolicy(greedy, env.n_actions)
    penalty = PenaltyMatrix.zero_one(env.n_actions)
    report = []
    for agent in range(env.n_agents):
        groups = {}
        for s in states:
            groups.setdefault(int(env.observe(s, agent)), []).append(s)
        for tau, members in sorted(groups.items()):
            alias = AliasSampleSet.from_states(tau, members)
            q = bayes_optimal_local(expert, alias, agent)
            risk = [bayes_expected_loss(expert, alias, penalty, u, agent) for u in range(env.n_actions)]
            report.append(
                {
                    "agent": agent,
                    "observation": tau,
                    "states": members,
                    "expert_actions": [int(greedy[s][agent]) for s in members],
                    "q": q.tolist(),
                    "expected_loss": risk,
                    "best_action": int(np.argmax(q)),
                }
            )
    _dump(report)
    return EXIT_OK


def cmd_errors(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    gamma = cfg.get("gamma", 0.99)
    if "env" not in cfg:
        for key in ("error_dec", "error_other"):
            if key not in cfg:
                raise ConfigurationError(f"field '{key}': required in synthetic mode")
        _dump(error_breakdown(cfg["error_dec"], cfg["error_other"], gamma).to_dict())
        return EXIT_OK
    here = os.path.dirname(os.path.abspath(args.config))
    env = load_env(os.path.join(here, cfg["env"])) if isinstance(cfg["env"], str) else env_from_spec(cfg["env"])
    if "checkpoint" not in cfg:
        raise ConfigurationError("field 'checkpoint': required in empirical mode")
    ckpt = load_checkpoint(os.path.join(here, cfg["checkpoint"]))
    which = cfg.get("store", "learners")
    if which not in ckpt:
        raise ConfigurationError(f"field 'store': checkpoint has no {which!r}")
    store = ckpt[which]
    mixer = ckpt.get("mixer", AdditiveMixer(env.n_agents))
    gamma = cfg.get("gamma", env.discount)

    def q_hat(state, joint_action):
        values = _store_values(store, env, state)
        utilities = values[np.arange(env.n_agents), list(joint_action)]
        return mix(mixer, utilities, env.state_vector(state) if mixer.state_dim else None)

    def policy(state, obs):
        return tuple(int(a) for a in np.argmax(_store_values(store, env, state, obs), axis=-1))

    ep = rollout(env, policy, np.random.default_rng(cfg.get("seed", 0)))
    result = error_breakdown(
        cfg.get("error_dec"), None, gamma, env=env, q_exact=exact_q(env, gamma), q_hat=q_hat, trace=ep.transitions
    )
    _dump(result.to_dict())
    return EXIT_OK


def cmd_plot(args):
    out = args.output or os.path.join(os.path.dirname(os.path.abspath(args.aggregate)), "curves.svg")
    render_curves(args.aggregate, out)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(prog="vdlab", description="Value-decomposition experiments and oracles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a seeded multi-run experiment")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output_dir")
    p.add_argument("--seed", type=int, action="append", help="override the seed list (repeatable)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="check whether an environment's decomposition is lossy")
    p.add_argument("env")
    p.add_argument("--all-states", action="store_true", help="check unreachable states too")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("bayes", help="per-observation Bayes-optimal local actions of an expert")
    p.add_argument("env")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_bayes)

    p = sub.add_parser("errors", help="error-accumulation breakdown, synthetic or measured")
    p.add_argument("config")
    p.set_defaults(func=cmd_errors)

    p = sub.add_parser("plot", help="render an aggregate CSV to SVG")
    p.add_argument("aggregate")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # top-level boundary
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
