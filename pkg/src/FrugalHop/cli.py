"""
Command-line entry point for FrugalHop.

Registers one sub-command per pipeline stage (index, rollout, datagen,
eval, reward, train-stop, bootstrap), merges the config file with flag
overrides and writes a run manifest next to every output.

Exit codes: 0 on success, 1 on validation errors (bad flags, config or
input files), 2 on runtime and transport failures.
"""

import sys
import argparse
import logging
from typing import Any, Callable, Dict, List, Optional, Sequence

from pydantic import ValidationError

from .bootstrap import bootstrap_prompts
from .config import RunConfig, load_config, settings
from .datagen import export_sft_jsonl, generate_dataset
from .domain import Dataset, load_corpus, load_dataset
from .errors import FrugalHopError
from .metrics import CSV_HEADER, evaluate_run
from .policy import Policy, load_policy_spec
from .prompts import load_prompt_sets, save_prompt_sets
from .retrieval import RemoteRetriever, Retriever, build_index, load_index, save_index
from .reward import RewardConfig, h_star_histogram, reference_recalls, score_rollout
from .rollout import Rollout, RolloutConfig, read_rollouts, run_rollouts, write_rollouts
from .tools.files import write_csv, write_json, write_jsonl, write_manifest
from .trainer import (
    StoppingPolicyParams,
    SyntheticStoppingEnv,
    evaluate_stopping_policy,
    exhaust_budget_baseline,
    load_env,
    train_stopping_policy,
)

# Configure logger
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

REWARD_CSV_HEADER = ["example_id", "h_term", "h_star", "case", "stop_reward", "format_reward", "combined"]


def _add_config_options(parser: argparse.ArgumentParser, *names: str) -> None:
    """Add RunConfig override flags; every default is None so file values survive."""
    options = {
        "budget": dict(type=int, help="Search budget B"),
        "k": dict(type=int, help="Documents per search"),
        "k1": dict(type=float, help="BM25 term saturation"),
        "b": dict(type=float, help="BM25 length normalization"),
        "r_max": dict(flag="--r-max", type=float, help="Reward clamp R_max"),
        "alpha": dict(type=float, help="PERFECT bonus weight"),
        "tau": dict(type=float, help="Answerability recall threshold"),
        "mixture": dict(type=float, help="Probability of sourcing a question from the no-FINISH run"),
        "source_policy": dict(flag="--source-policy", choices=["mixture", "finish_only"]),
        "limit": dict(type=int, help="Use only the first N questions"),
        "seed": dict(type=int),
        "workers": dict(type=int, help="Questions processed concurrently"),
        "group_size": dict(flag="--v", type=int, help="Group size for advantages"),
        "steps": dict(type=int),
        "learning_rate": dict(flag="--learning-rate", type=float),
        "tasks_per_step": dict(flag="--tasks-per-step", type=int),
        "candidate_count": dict(flag="--candidates", type=int, help="Candidate prompt sets to score"),
        "keep": dict(type=int, help="Prompt sets kept"),
        "demos_per_set": dict(flag="--demos-per-set", type=int),
    }
    for name in names:
        kwargs = dict(options[name])
        flag = kwargs.pop("flag", f"--{name}")
        parser.add_argument(flag, dest=name, default=None, **kwargs)
    if "budget" in names:
        parser.add_argument("--no-initial-retrieval", dest="initial_retrieval", action="store_const",
                            const=False, default=None, help="Skip retrieval for the question itself")
        parser.add_argument("--free-initial", dest="count_initial_in_searches", action="store_const",
                            const=False, default=None, help="Do not count the initial retrieval as a search")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name) for name in RunConfig.model_fields if hasattr(args, name)}
    config = load_config(args.config, overrides)
    logger.info(f"Running '{args.command}' with config: {config.model_dump()}")
    return config


def _workers(config: RunConfig) -> int:
    return config.workers or settings.workers


def _rollout_config(config: RunConfig) -> RolloutConfig:
    return RolloutConfig(budget=config.budget, k=config.k, initial_retrieval=config.initial_retrieval,
                         count_initial_in_searches=config.count_initial_in_searches)


def _reward_config(config: RunConfig) -> RewardConfig:
    return RewardConfig(r_max=config.r_max, alpha=config.alpha, tau=config.tau, budget=config.budget)


def _open_retriever(index_dir: Optional[str]) -> Retriever:
    """The local index when given, otherwise the remote retriever from the environment."""
    if index_dir:
        return load_index(index_dir)
    if settings.remote_retriever_url:
        logger.info(f"Using remote retriever at {settings.remote_retriever_url}")
        return RemoteRetriever(settings.remote_retriever_url, timeout=settings.request_timeout)
    raise ValueError("no retriever: pass --index or set REMOTE_RETRIEVER_URL")


def _manifest(args: argparse.Namespace, output: str, config: RunConfig, inputs: Dict[str, Any],
              argv: Sequence[str]) -> None:
    write_manifest(output, args.command, config.model_dump(), inputs=inputs, argv=argv)


def _gold_by_id(dataset: Dataset) -> Dict[str, frozenset]:
    return {example.id: example.gold_titles for example in dataset}


def _check_budget(rollouts: Sequence[Rollout], config: RunConfig) -> None:
    for rollout in rollouts:
        if rollout.budget != config.budget:
            raise ValueError(f"rollout {rollout.example_id} was run with budget {rollout.budget}, "
                             f"but --budget is {config.budget}")


def cmd_index_build(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    corpus = load_corpus(args.corpus)
    index = build_index(corpus, k1=config.k1, b=config.b, include_title=args.title)
    save_index(index, args.out)
    _manifest(args, args.out, config, {"corpus": args.corpus}, argv)
    print(f"Indexed {len(index)} documents into {args.out}")
    return EXIT_OK


def cmd_rollout_run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    dataset = load_dataset(args.dataset, limit=config.limit)
    retriever = _open_retriever(args.index)
    policy = Policy(load_policy_spec(args.policy))
    if args.no_finish:
        policy = policy.with_options(allow_finish=False)
    if args.prompts:
        policy = policy.with_options(prompt_set=load_prompt_sets(args.prompts)[0])
    try:
        rollouts = run_rollouts(dataset.examples, policy, retriever, _rollout_config(config),
                                workers=_workers(config), with_answers=not args.no_answers)
    finally:
        policy.close()
    write_rollouts(rollouts, args.out)
    _manifest(args, args.out, config, {"dataset": args.dataset, "index": args.index, "policy": args.policy,
                                       "prompts": args.prompts}, argv)
    mean_searches = sum(r.h_term for r in rollouts) / max(len(rollouts), 1)
    print(f"Wrote {len(rollouts)} rollouts to {args.out} (mean searches {mean_searches:.2f})")
    return EXIT_OK


def cmd_datagen(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    dataset = load_dataset(args.dataset, limit=config.limit)
    prompts = load_prompt_sets(args.prompts)
    retriever = _open_retriever(args.index)
    policy = Policy(load_policy_spec(args.policy))
    try:
        runs, records = generate_dataset(dataset, prompts, policy, retriever, _rollout_config(config),
                                         mixture=config.mixture, seed=config.seed,
                                         source_policy=config.source_policy, workers=_workers(config))
    finally:
        policy.close()
    export_sft_jsonl(records, args.out)
    if args.runs:
        write_jsonl(args.runs, (
            {"example_id": run.example_id, "source": run.source.value if run.source else None,
             "no_finish": run.no_finish.rollout.to_record(), "with_finish": run.with_finish.rollout.to_record()}
            for run in runs
        ))
    _manifest(args, args.out, config, {"dataset": args.dataset, "prompts": args.prompts, "index": args.index,
                                       "policy": args.policy}, argv)
    print(f"Wrote {len(records)} records from {len(runs)} questions to {args.out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    rollouts = read_rollouts(args.rollouts)
    dataset = load_dataset(args.dataset)
    report = evaluate_run(rollouts, dataset)
    write_json(args.out, report.to_report())
    if args.csv:
        write_csv(args.csv, CSV_HEADER, report.csv_rows())
    _manifest(args, args.out, config, {"rollouts": args.rollouts, "dataset": args.dataset}, argv)
    summary = report.to_report()
    print(" ".join(f"{key}={value}" for key, value in summary.items()))
    return EXIT_OK


def _reference_finals(args: argparse.Namespace, gold: Dict[str, frozenset]) -> Dict[str, float]:
    if not args.reference:
        return {}
    return reference_recalls(read_rollouts(args.reference), gold)


def _score_all(args: argparse.Namespace, config: RunConfig):
    rollouts = read_rollouts(args.rollouts)
    _check_budget(rollouts, config)
    gold = _gold_by_id(load_dataset(args.gold))
    finals = _reference_finals(args, gold)
    cfg = _reward_config(config)
    scored = []
    for rollout in rollouts:
        titles = gold.get(rollout.example_id)
        if not titles:
            logger.warning(f"Skipping {rollout.example_id}: no gold titles")
            continue
        scored.append((rollout, score_rollout(rollout, titles, cfg, finals.get(rollout.example_id))))
    return scored


def cmd_reward_analyze(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    scored = _score_all(args, config)
    rows = [
        [rollout.example_id, b.h_term, b.h_star, b.case.value, b.stop_reward, b.format_reward, b.combined]
        for rollout, b in scored
    ]
    write_csv(args.out, REWARD_CSV_HEADER, rows)
    _manifest(args, args.out, config, {"rollouts": args.rollouts, "gold": args.gold,
                                       "reference": args.reference}, argv)
    print(f"Scored {len(rows)} rollouts into {args.out}")
    return EXIT_OK


def cmd_reward_histogram(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    scored = _score_all(args, config)
    table = h_star_histogram((b.h_star for _, b in scored), config.budget)
    write_csv(args.out, ["h_star", "count"], table)
    _manifest(args, args.out, config, {"rollouts": args.rollouts, "gold": args.gold,
                                       "reference": args.reference}, argv)
    print(" ".join(f"{h}:{count}" for h, count in table))
    return EXIT_OK


def cmd_train_stop(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    env = load_env(args.env) if args.env else SyntheticStoppingEnv(budget=config.budget, seed=config.seed)
    cfg = _reward_config(config).model_copy(update={"budget": env.budget})
    params = StoppingPolicyParams(learning_rate=config.learning_rate, seed=config.seed)
    before = evaluate_stopping_policy(env, params, cfg, greedy=False, seed=config.seed)
    trained, curve = train_stopping_policy(env, params, cfg, group_size=config.group_size, steps=config.steps,
                                           tasks_per_step=config.tasks_per_step)
    after = evaluate_stopping_policy(env, trained, cfg, greedy=True, seed=config.seed)
    baseline = exhaust_budget_baseline(env, cfg)
    write_csv(args.out, ["step", "mean_abs_error"], ((i + 1, value) for i, value in enumerate(curve)))
    if args.summary:
        write_json(args.summary, {
            "weights": list(trained.weights),
            "untrained": before.model_dump(),
            "trained": after.model_dump(),
            "exhaust_budget": baseline.model_dump(),
        })
    _manifest(args, args.out, config, {"env": args.env}, argv)
    print(f"mean |h_term - h*|: {before.mean_abs_error:.3f} -> {after.mean_abs_error:.3f}; "
          f"mean searches {after.mean_searches:.2f} (exhaust budget {baseline.mean_searches:.2f})")
    return EXIT_OK


def cmd_bootstrap(args: argparse.Namespace, argv: Sequence[str]) -> int:
    config = _resolve_config(args)
    seed_examples = load_dataset(args.dataset, limit=config.limit)
    validation = load_dataset(args.validation).examples if args.validation else None
    retriever = _open_retriever(args.index)
    policy = Policy(load_policy_spec(args.policy))
    try:
        kept = bootstrap_prompts(policy, seed_examples.examples, retriever, _rollout_config(config),
                                 candidate_count=config.candidate_count, keep=config.keep,
                                 demos_per_set=config.demos_per_set, validation=validation,
                                 seed=config.seed, workers=_workers(config))
    finally:
        policy.close()
    save_prompt_sets(kept, args.out)
    _manifest(args, args.out, config, {"dataset": args.dataset, "validation": args.validation,
                                       "index": args.index, "policy": args.policy}, argv)
    print(f"Kept {len(kept)} prompt sets in {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with every sub-command registered."""
    parser = argparse.ArgumentParser(prog="frugalhop", description="Budgeted multi-hop retrieval toolkit")
    parser.add_argument("--config", default=None, help="Flat key = value config file")
    sub = parser.add_subparsers(dest="command")

    # index
    index = sub.add_parser("index", help="Corpus indexing")
    index_sub = index.add_subparsers(dest="action")
    sp = index_sub.add_parser("build", help="Build a BM25 index from a corpus JSONL")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True, help="Index directory")
    sp.add_argument("--title", action="store_true",
                    help="Prefix each document's text with its title before indexing")
    _add_config_options(sp, "k1", "b")
    sp.set_defaults(func=cmd_index_build, command="index build")

    # rollout
    rollout = sub.add_parser("rollout", help="Budgeted rollouts")
    rollout_sub = rollout.add_subparsers(dest="action")
    sp = rollout_sub.add_parser("run", help="Run one rollout per question")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--index", default=None, help="Index directory (else REMOTE_RETRIEVER_URL)")
    sp.add_argument("--policy", required=True, help="Policy spec JSON")
    sp.add_argument("--prompts", default=None, help="Prompt sets JSON; the first one drives the policy")
    sp.add_argument("--out", required=True)
    sp.add_argument("--no-finish", action="store_true", help="Suppress FINISH until the budget is spent")
    sp.add_argument("--no-answers", action="store_true", help="Skip answer generation")
    _add_config_options(sp, "budget", "k", "limit", "seed", "workers")
    sp.set_defaults(func=cmd_rollout_run, command="rollout run")

    # datagen
    sp = sub.add_parser("datagen", help="Generate supervised step records")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--prompts", required=True, help="Bootstrapped prompt sets JSON")
    sp.add_argument("--index", default=None)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--runs", default=None, help="Also write both greedy runs per question as JSONL")
    _add_config_options(sp, "budget", "k", "limit", "mixture", "source_policy", "seed", "workers")
    sp.set_defaults(func=cmd_datagen, command="datagen")

    # eval
    sp = sub.add_parser("eval", help="Score rollouts against a dataset")
    sp.add_argument("--rollouts", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", required=True, help="Report JSON")
    sp.add_argument("--csv", default=None, help="Per-example scores CSV")
    sp.set_defaults(func=cmd_eval, command="eval")

    # reward
    reward = sub.add_parser("reward", help="Stopping reward analysis")
    reward_sub = reward.add_subparsers(dest="action")
    for name, func, help_text in (
        ("analyze", cmd_reward_analyze, "Per-rollout reward breakdown CSV"),
        ("histogram", cmd_reward_histogram, "Frequency of optimal search counts"),
    ):
        sp = reward_sub.add_parser(name, help=help_text)
        sp.add_argument("--rollouts", required=True)
        sp.add_argument("--gold", required=True, help="Dataset JSONL with gold titles")
        sp.add_argument("--reference", default=None, help="Reference (no-FINISH) rollouts for h*")
        sp.add_argument("--out", required=True)
        _add_config_options(sp, "budget", "r_max", "alpha", "tau")
        sp.set_defaults(func=func, command=f"reward {name}")

    # train-stop
    sp = sub.add_parser("train-stop", help="Train the toy stopping policy")
    sp.add_argument("--env", default=None, help="Synthetic environment JSON")
    sp.add_argument("--out", required=True, help="Learning curve CSV")
    sp.add_argument("--summary", default=None, help="Weights and before/after evaluation JSON")
    _add_config_options(sp, "budget", "r_max", "alpha", "tau", "group_size", "steps", "learning_rate",
                        "tasks_per_step", "seed")
    sp.set_defaults(func=cmd_train_stop, command="train-stop")

    # bootstrap
    sp = sub.add_parser("bootstrap", help="Bootstrap few-shot prompt sets")
    sp.add_argument("--dataset", required=True, help="Seed questions")
    sp.add_argument("--validation", default=None, help="Validation questions (defaults to the seed set)")
    sp.add_argument("--index", default=None)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--out", required=True)
    _add_config_options(sp, "budget", "k", "limit", "candidate_count", "keep", "demos_per_set", "seed",
                        "workers")
    sp.set_defaults(func=cmd_bootstrap, command="bootstrap")

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse argv and dispatch to the sub-command.

    Returns:
        Process exit code
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_VALIDATION

    func: Optional[Callable[[argparse.Namespace, Sequence[str]], int]] = getattr(args, "func", None)
    if func is None:
        parser.print_usage(sys.stderr)
        print("frugalhop: error: missing or unknown command", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        return func(args, argv)
    except (ValueError, ValidationError) as e:
        logger.error(f"'{args.command}' failed validation: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FrugalHopError, OSError) as e:
        logger.error(f"'{args.command}' failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error in '{args.command}'")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
