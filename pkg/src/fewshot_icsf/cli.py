"""Command-line interface for reproducible few-shot IC/SF experiments.

Subcommands: run-experiment, augment, train, evaluate, gradcheck,
gen-synthetic. Exit codes: 0 success, 2 configuration errors, 3 data
errors, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import (AugmentLevel, AugmentMethod, AugmentationConfig,
                      AugmentResources, MockTranslationClient,
                      SubprocessTranslationClient, augment_utterances)
from .contrastive import ContrastiveConfig, ContrastiveLevel
from .corpus import (Dataset, DatasetFormatError, build_slot_value_dict,
                     dataset_records, load_dataset, load_split,
                     make_split_atis_style, make_split_snips_style, save_split)
from .encoder import EncoderError, load_params, save_params
from .episode import SamplerConfig, SamplingError
from .evaluation import evaluate, summarize_episodes
from .experiment import (ConfigError, ExperimentConfig, derive_label,
                         load_config, parse_config, run_experiment)
from .protonet import PrototypeError
from .synthetic import BUILTIN_GRAMMARS, generate, load_grammar
from .syntax import SyntaxConfig, SyntaxMode
from .trainer import NonFiniteLossError, build_resources, meta_train, write_training_log
from . import gradcheck as gradcheck_mod

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_DATA_ERRORS = (DatasetFormatError, SamplingError, FileNotFoundError,
                EncoderError, PrototypeError)


def _add_variant_flags(p):
    p.add_argument("--lambda-ic", type=float, default=None)
    p.add_argument("--lambda-sf", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--cl", choices=["ic", "icsf", "off"], default=None)
    p.add_argument("--cl-level", choices=["s-mtrain", "sq-mtrain"], default=None)
    p.add_argument("--aug", choices=["slotlist", "bt", "eda"], default=None)
    p.add_argument("--aug-level",
                   choices=["s-mtrain", "sq-mtrain", "s-mtrain-mtest", "s-mtest"],
                   default=None)
    p.add_argument("--syntax", choices=["feat", "mtl", "chunk", "off"],
                   default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewshot-icsf",
        description="Few-shot joint intent classification and slot filling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run-experiment",
                       help="multi-seed train + evaluate, appends a table row")
    p.add_argument("--config", type=Path, default=None,
                   help="JSON experiment config; flags override its fields")
    p.add_argument("--dataset", type=Path, default=None)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--out", type=Path, default=None)
    _add_variant_flags(p)

    p = sub.add_parser("gen-synthetic", help="write a synthetic corpus file")
    p.add_argument("--grammar", default="snips",
                   help="builtin grammar name (snips, atis) or a spec file")
    p.add_argument("--n-per-intent", type=int, default=None)
    p.add_argument("--total", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("augment", help="double a dataset file with one method")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--method", choices=["slotlist", "bt", "eda"],
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eda-alpha", type=float, default=0.1)
    p.add_argument("--bt-temperature", type=float, default=0.7)
    p.add_argument("--bt-server", nargs="+", default=None, metavar="ARGV",
                   help="translate via this line-protocol subprocess instead "
                        "of the in-process mock")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="meta-train one seed, write a checkpoint")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split-file", type=Path, default=None)
    p.add_argument("--split-style", choices=["snips", "atis"], default="snips")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--kmax", type=int, default=20)
    p.add_argument("--learning-rate", type=float, default=5e-5)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--log", type=Path, default=None)
    p.add_argument("--save-split", type=Path, default=None)
    _add_variant_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on test episodes")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--split-file", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--kmax", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    _add_variant_flags(p)

    p = sub.add_parser("gradcheck",
                       help="finite-difference checks for every loss component")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt", choices=list(gradcheck_mod.ALL_COMPONENTS),
                   default=None, help="test hook: corrupt one component")

    return parser


def _variant_overrides(args, record: dict) -> dict:
    """Apply the shared variant flags onto a config record (flags win)."""
    if getattr(args, "cl", None) is not None:
        if args.cl == "off":
            record["contrastive"] = None
        else:
            c = dict(record.get("contrastive") or {})
            c.setdefault("lambda_ic", 0.06)
            c["lambda_sf"] = c.get("lambda_sf", 0.06) if args.cl == "icsf" else 0.0
            record["contrastive"] = c
    if getattr(args, "cl_level", None) is not None:
        c = dict(record.get("contrastive") or {})
        c["level"] = args.cl_level
        record["contrastive"] = c
    if getattr(args, "lambda_ic", None) is not None:
        c = dict(record.get("contrastive") or {})
        c["lambda_ic"] = args.lambda_ic
        record["contrastive"] = c
    if getattr(args, "lambda_sf", None) is not None:
        c = dict(record.get("contrastive") or {})
        c["lambda_sf"] = args.lambda_sf
        record["contrastive"] = c
    if getattr(args, "aug", None) is not None:
        a = dict(record.get("augmentation") or {})
        a["method"] = args.aug
        record["augmentation"] = a
    if getattr(args, "aug_level", None) is not None:
        a = dict(record.get("augmentation") or {})
        a["level"] = args.aug_level
        record["augmentation"] = a
    if getattr(args, "syntax", None) is not None:
        if args.syntax == "off":
            record["syntax"] = None
        else:
            s = dict(record.get("syntax") or {})
            s["mode"] = [args.syntax]
            record["syntax"] = s
    if getattr(args, "beta", None) is not None:
        s = dict(record.get("syntax") or {})
        s.setdefault("mode", ["mtl"])
        s["beta"] = args.beta
        record["syntax"] = s
    return record


def _experiment_config(args) -> ExperimentConfig:
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            try:
                record = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"config: invalid JSON ({e.msg})") from e
    else:
        record = {}
    if args.dataset is not None:
        record["dataset"] = str(args.dataset)
        record.pop("synthetic", None)
    if args.kmax is not None:
        record["kmax"] = args.kmax
    if args.seeds is not None:
        record["seeds"] = args.seeds
    if args.episodes is not None:
        record.setdefault("train", {})
        record["train"] = dict(record["train"])
        record["train"]["episodes"] = args.episodes
    if args.out is not None:
        record["out"] = str(args.out)
    record = _variant_overrides(args, record)
    return parse_config(record)


def _cmd_run_experiment(args) -> int:
    cfg = _experiment_config(args)
    result = run_experiment(cfg, log_progress=lambda m: print(m, flush=True))
    s = result.summary
    print(f"{result.label}: IC {s.ic_mean:.4f} +/- {s.ic_std:.4f}, "
          f"SF {s.sf_mean:.4f} +/- {s.sf_std:.4f} "
          f"({s.n_seeds} seeds, {s.n_episodes} episodes)")
    print(f"results appended to {result.results_path}")
    return EXIT_OK


def _cmd_gen_synthetic(args) -> int:
    if args.grammar in BUILTIN_GRAMMARS:
        grammar = BUILTIN_GRAMMARS[args.grammar]()
    else:
        grammar = load_grammar(args.grammar)
    n_per = args.n_per_intent
    if n_per is None and args.total is None:
        n_per = 60
    ds = generate(grammar, n_per_intent=n_per, total=args.total, seed=args.seed)
    from .corpus import save_dataset
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds.utterances)} utterances, "
          f"{len(ds.intent_vocab)} intents to {args.out}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    dataset = load_dataset(args.dataset)
    method = AugmentMethod(args.method)
    cfg = AugmentationConfig(method=method, eda_alpha=args.eda_alpha,
                             bt_sampling_temperature=args.bt_temperature,
                             seed=args.seed)
    # standalone augmentation treats the whole file as meta-train data
    all_classes = frozenset(u.intent for u in dataset.utterances)
    pseudo_split = _whole_dataset_split(all_classes, seed=args.seed)
    client = (SubprocessTranslationClient(args.bt_server) if args.bt_server
              else MockTranslationClient(seed=args.seed))
    resources = AugmentResources(
        slot_value_dict=build_slot_value_dict(dataset, pseudo_split),
        translation_client=client,
        slot_vocab=dataset.slot_vocab)
    rng = np.random.default_rng(args.seed)
    doubled, synth = augment_utterances(dataset.utterances, cfg, resources, rng)

    flags = {a.utterance.id: a.verbatim_copy for a in synth}
    records = []
    for u in doubled:
        rec = {"tokens": list(u.tokens),
               "intent": dataset.intent_vocab.label(u.intent), "id": u.id}
        if u.slots is not None:
            rec["slots"] = [dataset.slot_vocab.label(s) for s in u.slots]
        if u.id in flags:
            rec["aug_verbatim"] = flags[u.id]
        records.append(rec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    n_verbatim = sum(1 for v in flags.values() if v)
    print(f"wrote {len(records)} records ({n_verbatim} verbatim duplicates) "
          f"to {args.out}")
    if hasattr(client, "close"):
        client.close()
    return EXIT_OK


def _whole_dataset_split(classes: frozenset, seed: int):
    """A degenerate split putting every class in meta-train.

    Unused sentinel ids pad both sides to satisfy the 3-class size rule.
    """
    from .corpus import SplitSpec

    sentinel = (max(classes) if classes else 0) + 1
    train = frozenset(classes)
    if len(train) < 3:
        train = train | frozenset(range(sentinel + 10, sentinel + 13))
    return SplitSpec(meta_train=train,
                     meta_test=frozenset({sentinel, sentinel + 1, sentinel + 2}),
                     dev=frozenset(), seed=seed)


def _train_artifacts(args):
    dataset = load_dataset(args.dataset)
    if args.split_file is not None:
        split = load_split(dataset, args.split_file)
    elif args.split_style == "snips":
        split = make_split_snips_style(dataset, seed=args.seed)
    else:
        split = make_split_atis_style(dataset, seed=args.seed)
    return dataset, split


def _variant_configs(args):
    contrastive = None
    if getattr(args, "cl", None) and args.cl != "off":
        contrastive = ContrastiveConfig(
            lambda_ic=args.lambda_ic if args.lambda_ic is not None else 0.06,
            lambda_sf=(args.lambda_sf if args.lambda_sf is not None else 0.06)
            if args.cl == "icsf" else 0.0,
            level=ContrastiveLevel(args.cl_level or "sq-mtrain"))
    augmentation = None
    if getattr(args, "aug", None):
        augmentation = AugmentationConfig(
            method=AugmentMethod(args.aug),
            level=AugmentLevel(args.aug_level or "s-mtrain"),
            seed=args.seed)
    syntax = None
    if getattr(args, "syntax", None) and args.syntax != "off":
        syntax = SyntaxConfig(mode={SyntaxMode(args.syntax)},
                              beta=args.beta if args.beta is not None else 0.01)
    return contrastive, augmentation, syntax


def _cmd_train(args) -> int:
    from .trainer import TrainConfig

    dataset, split = _train_artifacts(args)
    contrastive, augmentation, syntax = _variant_configs(args)
    cfg = TrainConfig(episodes=args.episodes, learning_rate=args.learning_rate,
                      kmax=args.kmax, seed=args.seed, contrastive=contrastive,
                      augmentation=augmentation, syntax=syntax)
    params, log = meta_train(dataset, split, cfg)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_params(params, args.out)
    if args.log is not None:
        write_training_log(log, args.log)
    if args.save_split is not None:
        save_split(split, dataset, args.save_split)
    print(f"trained {args.episodes} episodes; final loss "
          f"{log[-1].l_total:.4f}; checkpoint at {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .trainer import TrainConfig

    dataset = load_dataset(args.dataset)
    split = load_split(dataset, args.split_file)
    params = load_params(args.checkpoint)
    contrastive, augmentation, syntax = _variant_configs(args)
    resources = build_resources(dataset, split,
                                TrainConfig(kmax=args.kmax, seed=args.seed))
    test_aug = (augmentation if augmentation is not None
                and augmentation.level.at_test else None)
    metrics = evaluate(params, dataset, split, SamplerConfig(kmax=args.kmax),
                       args.episodes, resources, test_augmentation=test_aug,
                       syntax=syntax, seed=args.seed)
    result = summarize_episodes(metrics, seed=args.seed)
    print(f"IC accuracy {result.ic_mean:.4f}, slot F1 "
          f"{'n/a' if result.sf_mean is None else format(result.sf_mean, '.4f')} "
          f"over {result.n_episodes} episodes "
          f"({result.n_excluded_f1} excluded from F1)")
    if args.out is not None:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("episode,ic_accuracy,slot_f1,support_size,query_size\n")
            for i, m in enumerate(metrics):
                f1 = "" if m.slot_f1 is None else f"{m.slot_f1:.6f}"
                fh.write(f"{i},{m.ic_accuracy:.6f},{f1},{m.support_size},"
                         f"{m.query_size}\n")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    reports = gradcheck_mod.run_all(dim=args.dim, seed=args.seed,
                                    instances=args.instances,
                                    corrupt=args.corrupt)
    failed = []
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max rel error {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:.0e}, {r.instances} instances, "
              f"{r.seconds:.2f}s)")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("all gradient checks passed")
    return EXIT_OK


_COMMANDS = {
    "run-experiment": _cmd_run_experiment,
    "gen-synthetic": _cmd_gen_synthetic,
    "augment": _cmd_augment,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _DATA_ERRORS as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
