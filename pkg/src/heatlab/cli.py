"""Command-line entry point for the laboratory.

Verbs: gen-family, solve-exact, decide, solve-observable, embed, train,
bench, eval, decpomdp-solve, decpomdp-train.

Conventions: results go to standard output or files, diagnostics to
standard error.  Exit 0 on success, 1 on domain errors (infeasible
family, search cap exceeded, inconsistent observation, bad instance
file), 2 on usage errors.  Every run writes a config.json echoing the
resolved configuration into --out-dir; train and bench accept
--config <config.json> to reproduce a previous run byte-for-byte
(timing columns excluded).  The only environment variable honored is
HEAT_LOG (log verbosity: debug, info, warning).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import decpomdp as dp
from . import env, pomdp, train
from .errors import DomainError, HeatError
from .policy import BasePolicy, load_checkpoint, save_checkpoint

log = logging.getLogger("heat")


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def nonnegative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO,
             "warning": logging.WARNING}.get(
        os.environ.get("HEAT_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(name)s %(levelname)s %(message)s")


def _echo_config(out_dir: str, doc: dict) -> None:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_morphs(text: str, count: int) -> list[int]:
    if text == "all":
        return list(range(count))
    try:
        idx = [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise DomainError(f"cannot parse morphology list {text!r}")
    if not idx or any(i < 0 or i >= count for i in idx):
        raise DomainError(f"morphology indices {text!r} outside 0..{count - 1}")
    return idx


def _composite_from_args(args) -> tuple[pomdp.CompositePomdp, list[env.TabularMdp]]:
    manifest = env.FamilyManifest.load(args.family)
    masks = manifest.train_masks if args.split == "train" else manifest.eval_masks
    idx = _parse_morphs(args.morphs, len(masks))
    mdps = [env.compile_mdp(masks[i], manifest.params) for i in idx]
    prior = None
    if args.prior is not None:
        prior = np.array([float(tok) for tok in args.prior.split(",")])
    composite = pomdp.compose_gaitchain(mdps, prior=prior,
                                        reveal_morphology=args.reveal)
    return composite, mdps


def _print_result(args, doc: dict, text: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(doc, sort_keys=True))
    else:
        print(text)


def cmd_gen_family(args) -> int:
    params = env.GaitChainParams(
        kmax=args.kmax, fail_prob=args.fail_prob,
        reset_penalty=args.reset_penalty, cycle_reward=args.cycle_reward,
        gamma=args.gamma, episode_len=args.episode_len)
    manifest = env.generate_family(args.kmax, args.train, args.eval,
                                   args.seed, params=params)
    manifest.save(args.out)
    _echo_config(args.out_dir, {"verb": "gen-family", "kmax": args.kmax,
                                "train": args.train, "eval": args.eval,
                                "seed": args.seed, "out": str(args.out),
                                "params": params.to_dict()})
    log.info("wrote family manifest to %s", args.out)
    return 0


def cmd_solve_exact(args) -> int:
    composite, _ = _composite_from_args(args)
    value = pomdp.exact_value(composite, None, args.horizon, use_memo=args.memo)
    _echo_config(args.out_dir, {"verb": "solve-exact", "family": str(args.family),
                                "split": args.split, "morphs": args.morphs,
                                "horizon": args.horizon, "reveal": args.reveal,
                                "prior": args.prior, "memo": args.memo})
    _print_result(args, {"V_star": value, "horizon": args.horizon},
                  f"V*={value:.17g}")
    return 0


def cmd_decide(args) -> int:
    composite, _ = _composite_from_args(args)
    query = pomdp.ThresholdQuery(horizon=args.horizon, threshold=args.K)
    decision, value = pomdp.decide_threshold(composite, query)
    _echo_config(args.out_dir, {"verb": "decide", "family": str(args.family),
                                "split": args.split, "morphs": args.morphs,
                                "horizon": args.horizon, "K": args.K,
                                "reveal": args.reveal, "prior": args.prior})
    _print_result(args, {"V_star": value, "K": args.K, "decision": decision},
                  f"V*={value:.17g} decision={'true' if decision else 'false'}")
    return 0


def cmd_solve_observable(args) -> int:
    manifest = env.FamilyManifest.load(args.family)
    masks = manifest.train_masks if args.split == "train" else manifest.eval_masks
    idx = _parse_morphs(args.morphs, len(masks))
    mdps = [env.compile_mdp(masks[i], manifest.params) for i in idx]
    prior = None
    if args.prior is not None:
        prior = np.array([float(tok) for tok in args.prior.split(",")])
    value = pomdp.solve_observable(mdps, prior, args.horizon)
    _echo_config(args.out_dir, {"verb": "solve-observable",
                                "family": str(args.family), "split": args.split,
                                "morphs": args.morphs, "horizon": args.horizon,
                                "prior": args.prior})
    _print_result(args, {"V_star": value, "horizon": args.horizon},
                  f"V*={value:.17g}")
    return 0


def cmd_embed(args) -> int:
    composite = pomdp.load_pomdp_json(args.pomdp)
    value = pomdp.exact_value(composite, None, args.horizon, use_memo=args.memo)
    _echo_config(args.out_dir, {"verb": "embed", "pomdp": str(args.pomdp),
                                "horizon": args.horizon, "memo": args.memo})
    _print_result(args, {"V_star": value, "horizon": args.horizon},
                  f"V*={value:.17g}")
    return 0


def _config_from_file(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DomainError(f"cannot read config {path}: {exc}") from exc


def cmd_train(args) -> int:
    if args.config:
        doc = _config_from_file(args.config)
        config = train.RunConfig.from_dict(doc)
        family = config.family
        if family is None:
            raise DomainError("stored config lacks a family manifest")
    else:
        family = env.FamilyManifest.load(args.family)
        config = train.RunConfig(
            scenario=args.scenario, cycles=args.cycles,
            steps_per_cycle=args.steps, learning_rate=args.lr,
            seed=args.seed, family=family, hidden_width=args.hidden,
            per_slot_memory_width=args.mem_width, message_width=args.msg_width,
            entropy=args.entropy)
    policy, records = train.run_scenario(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = config.to_dict()
    doc["verb"] = "train"
    _echo_config(args.out_dir, doc)
    train.write_bench_csv(out / "bench.csv", records)
    train.write_curves_csv(out / "curves.csv", records)
    save_checkpoint(policy, out / "final.ckpt",
                    extra={"training_seed": config.seed})
    last_cycle = max(r.cycle for r in records)
    final = [r.mean_return for r in records if r.cycle == last_cycle]
    print(f"final_mean_return={float(np.mean(final)):.17g}")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        doc = _config_from_file(args.config)
        config = train.RunConfig.from_dict(doc)
        family = config.family
        scenarios = doc.get("scenarios", list(train.SCENARIOS))
        if family is None:
            raise DomainError("stored config lacks a family manifest")
    else:
        family = env.FamilyManifest.load(args.family)
        scenarios = args.scenarios.split(",") if args.scenarios else list(train.SCENARIOS)
        config = train.RunConfig(
            scenario=scenarios[0], cycles=args.cycles,
            steps_per_cycle=args.steps, learning_rate=args.lr,
            seed=args.seed, family=family, hidden_width=args.hidden)
    bench_path = train.run_benchmark(family, scenarios, config, args.out_dir)
    with open(bench_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    records = [train.BenchRecord(
        scenario=r["scenario"], cycle=int(r["cycle"]),
        morphology_id=int(r["morphology_id"]), episodes=int(r["episodes"]),
        mean_return=float(r["mean_return"]),
        t_generate_ns=int(r["t_generate_ns"]),
        t_optimize_ns=int(r["t_optimize_ns"]),
        param_count=int(r["param_count"]),
        hidden_mem_bytes=int(r["hidden_mem_bytes"]),
        theta_version=int(r["theta_version"])) for r in rows]
    fit = train.fit_scaling(records)
    print(f"scaling_fit slope={fit.slope:.6g} intercept={fit.intercept:.6g} "
          f"r2={fit.r_squared:.6f}")
    if "single_mem" in scenarios and "single_nomem" in scenarios:
        ratio = train.memory_overhead_ratio(records)
        print(f"memory_overhead ratio={ratio:.4f}")
    return 0


def eval_policy(checkpoint: str | Path, family: env.FamilyManifest, split: str,
                episodes: int, seed: int) -> tuple[list[tuple[int, float]], float]:
    """Frozen-policy evaluation: per-morphology mean discounted return over
    the given number of fixed-length episodes, plus the split average."""
    policy = load_checkpoint(checkpoint)
    _check_compat(policy, family)
    mdps = env.compile_family(family, split=split)
    T = family.params.episode_len
    rows = []
    for i, mdp in enumerate(mdps):
        stream = np.random.SeedSequence(seed, spawn_key=(0, i))
        rng = np.random.Generator(np.random.PCG64(stream))
        trajs, _ = train.rollout(mdp, policy, episodes * T, rng, episode_len=T)
        rows.append((mdp.morphology_id, train.mean_discounted_return(trajs)))
    average = float(np.mean([r[1] for r in rows]))
    return rows, average


def _check_compat(policy: BasePolicy, family: env.FamilyManifest) -> None:
    if policy.n_actions != family.kmax + 1:
        raise DomainError(
            f"checkpoint expects {policy.n_actions} actions, family needs "
            f"{family.kmax + 1}")
    if policy.obs_alphabet != env.N_OUTCOMES:
        raise DomainError("checkpoint observation alphabet does not match")
    if policy.arch == "modular" and policy.kmax != family.kmax:
        raise DomainError("modular checkpoint slot count does not match family")


def cmd_eval(args) -> int:
    family = env.FamilyManifest.load(args.family)
    rows, average = eval_policy(args.checkpoint, family, args.split,
                                args.episodes, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(args.out_dir, {"verb": "eval", "checkpoint": str(args.checkpoint),
                                "family": str(args.family), "split": args.split,
                                "episodes": args.episodes, "seed": args.seed})
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["morphology_id", "episodes", "mean_return"])
        for morph_id, ret in rows:
            writer.writerow([morph_id, args.episodes, repr(ret)])
    for morph_id, ret in rows:
        print(f"J morphology={morph_id} mean_return={ret:.17g}")
    print(f"J_avg={average:.17g}")
    return 0


def cmd_decpomdp_solve(args) -> int:
    dec = dp.load_decpomdp_json(args.instance)
    jp, value = dp.brute_force(dec, args.horizon, cap=args.cap)
    _echo_config(args.out_dir, {"verb": "decpomdp-solve",
                                "instance": str(args.instance),
                                "horizon": args.horizon, "cap": args.cap})
    _print_result(args,
                  {"V_star": value,
                   "policy": [list(lp.encoding()) for lp in jp.locals]},
                  f"V*={value:.17g}")
    return 0


def cmd_decpomdp_train(args) -> int:
    dec = dp.load_decpomdp_json(args.instance)
    config = {"episodes": args.episodes, "learning_rate": args.lr,
              "message_bits": args.message_bits, "seed": args.seed,
              "horizon": args.horizon}
    learners, rows = dp.dtde_train(dec, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = dict(config)
    doc["verb"] = "decpomdp-train"
    doc["instance"] = str(args.instance)
    _echo_config(args.out_dir, doc)
    dp.write_curve_csv(out / "curve.csv", rows)
    final = dp.evaluate_stochastic(dec, learners, args.horizon,
                                   message_bits=args.message_bits)
    print(f"final_value={final:.17g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heat",
        description="Desk-scale laboratory for cross-morphology training")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p):
        p.add_argument("--out-dir", default=".",
                       help="directory for config.json and file outputs")

    def add_solver_flags(p):
        p.add_argument("--family", required=True)
        p.add_argument("--morphs", default="all",
                       help="comma-separated morphology indices, or 'all'")
        p.add_argument("--split", choices=["train", "eval"], default="train")
        p.add_argument("--horizon", type=positive_int, required=True)
        p.add_argument("--prior", default=None,
                       help="comma-separated prior weights (default uniform)")
        p.add_argument("--json", action="store_true")

    p = sub.add_parser("gen-family", help="sample a morphology family manifest")
    p.add_argument("--kmax", type=positive_int, default=5)
    p.add_argument("--train", type=positive_int, default=12)
    p.add_argument("--eval", type=positive_int, default=5)
    p.add_argument("--seed", type=nonnegative_int, default=0)
    p.add_argument("--fail-prob", type=float, default=0.1)
    p.add_argument("--reset-penalty", type=float, default=0.0)
    p.add_argument("--cycle-reward", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--episode-len", type=positive_int, default=100)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_gen_family)

    p = sub.add_parser("solve-exact", help="exact belief-space value")
    add_solver_flags(p)
    p.add_argument("--reveal", action="store_true",
                   help="use the morphology-revealing observation channel")
    p.add_argument("--memo", action="store_true",
                   help="enable the belief-rounding transposition table")
    add_common(p)
    p.set_defaults(func=cmd_solve_exact)

    p = sub.add_parser("decide", help="threshold decision on the exact value")
    add_solver_flags(p)
    p.add_argument("--reveal", action="store_true")
    p.add_argument("--K", type=float, required=True)
    add_common(p)
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("solve-observable",
                       help="fully-observable decomposition value")
    add_solver_flags(p)
    add_common(p)
    p.set_defaults(func=cmd_solve_observable)

    p = sub.add_parser("embed", help="solve a standalone POMDP instance file")
    p.add_argument("--pomdp", required=True)
    p.add_argument("--horizon", type=positive_int, required=True)
    p.add_argument("--memo", action="store_true")
    p.add_argument("--json", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="run one training scenario")
    p.add_argument("--scenario", choices=list(train.SCENARIOS))
    p.add_argument("--family")
    p.add_argument("--cycles", type=positive_int, default=50)
    p.add_argument("--steps", type=positive_int, default=5000)
    p.add_argument("--lr", type=positive_float, default=0.01)
    p.add_argument("--seed", type=nonnegative_int, default=0)
    p.add_argument("--hidden", type=positive_int, default=16)
    p.add_argument("--mem-width", type=positive_int, default=8)
    p.add_argument("--msg-width", type=positive_int, default=8)
    p.add_argument("--entropy", action="store_true",
                   help="add the 0.01-weight entropy bonus to the loss")
    p.add_argument("--config", default=None,
                   help="reproduce a previous run from its config.json")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="benchmark scenarios plus the scaling study")
    p.add_argument("--family")
    p.add_argument("--scenarios", default=None,
                   help="comma-separated scenario subset (default: all)")
    p.add_argument("--cycles", type=positive_int, default=3)
    p.add_argument("--steps", type=positive_int, default=5000)
    p.add_argument("--lr", type=positive_float, default=0.01)
    p.add_argument("--seed", type=nonnegative_int, default=0)
    p.add_argument("--hidden", type=positive_int, default=16)
    p.add_argument("--config", default=None)
    add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="evaluate a frozen checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--family", required=True)
    p.add_argument("--split", choices=["train", "eval"], default="eval")
    p.add_argument("--episodes", type=positive_int, default=20)
    p.add_argument("--seed", type=nonnegative_int, default=0)
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decpomdp-solve", help="brute-force optimal joint policy")
    p.add_argument("--instance", required=True)
    p.add_argument("--horizon", type=positive_int, default=1)
    p.add_argument("--cap", type=positive_int, default=10 ** 7)
    p.add_argument("--json", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_decpomdp_solve)

    p = sub.add_parser("decpomdp-train", help="independent decentralized learners")
    p.add_argument("--instance", required=True)
    p.add_argument("--episodes", type=positive_int, default=4000)
    p.add_argument("--lr", type=positive_float, default=0.2)
    p.add_argument("--message-bits", type=int, choices=[0, 1], default=0)
    p.add_argument("--seed", type=nonnegative_int, default=0)
    p.add_argument("--horizon", type=positive_int, default=1)
    add_common(p)
    p.set_defaults(func=cmd_decpomdp_train)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb == "train" and not args.config and \
                (args.scenario is None or args.family is None):
            parser.error("train requires --scenario and --family (or --config)")
        if args.verb == "bench" and not args.config and args.family is None:
            parser.error("bench requires --family (or --config)")
    except SystemExit as exc:
        # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
