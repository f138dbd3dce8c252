"""Reproducible multi-seed experiments and the results table format.

A run re-splits intent classes per seed, meta-trains, evaluates a fixed
number of test episodes, and appends one aggregate row to a CSV shaped
like the standard IC-accuracy / slot-F1 comparison tables. Everything is
derived from seeds; rerunning a config reproduces the files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import ALL_EDA_OPS, AugmentLevel, AugmentMethod, AugmentationConfig, EdaOp
from .contrastive import ContrastiveConfig, ContrastiveLevel
from .corpus import Dataset, load_dataset, make_split_atis_style, make_split_snips_style
from .encoder import EncoderConfig
from .episode import SamplerConfig
from .evaluation import MetricsSummary, aggregate, evaluate, summarize_episodes
from .synthetic import BUILTIN_GRAMMARS, generate, load_grammar
from .syntax import SyntaxConfig, SyntaxMode
from .trainer import TrainConfig, build_resources, meta_train, write_training_log


class ConfigError(Exception):
    """Invalid experiment configuration; message carries the field path."""


def _fail(path, message):
    raise ConfigError(f"{path}: {message}")


def _pick(record, path, key, default=None, required=False):
    if key not in record or record[key] is None:
        if required:
            _fail(f"{path}.{key}" if path else key, "is required")
        return default
    return record[key]


def _number(record, path, key, default, minimum=None, strict_min=None):
    value = _pick(record, path, key, default)
    full = f"{path}.{key}" if path else key
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        _fail(full, f"must be a number, got {value!r}")
    if minimum is not None and value < minimum:
        _fail(full, f"must be >= {minimum}")
    if strict_min is not None and value <= strict_min:
        _fail(full, f"must be > {strict_min}")
    return value


def _integer(record, path, key, default, minimum=None):
    value = _number(record, path, key, default, minimum=minimum)
    if int(value) != value:
        _fail(f"{path}.{key}" if path else key, "must be an integer")
    return int(value)


def _enum(record, path, key, enum_cls, default):
    raw = _pick(record, path, key, default)
    if isinstance(raw, enum_cls):
        return raw
    try:
        return enum_cls(raw)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        _fail(f"{path}.{key}" if path else key,
              f"must be one of {options}, got {raw!r}")


@dataclass(frozen=True)
class SyntheticSource:
    grammar: str = "snips"  # builtin name or a grammar-spec file path
    n_per_intent: int | None = 60
    total: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class SplitPlan:
    style: str = "snips"  # or "atis"
    n_train: int = 7
    n_test: int = 3
    min_count: int = 15


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str | None = None
    synthetic: SyntheticSource | None = SyntheticSource()
    split: SplitPlan = SplitPlan()
    kmax: int = 20
    seeds: int = 5
    base_seed: int = 0
    n_test_episodes: int = 100
    episodes: int = 50
    learning_rate: float = 5e-5
    optimizer: str = "adam"
    encoder: EncoderConfig = EncoderConfig()
    contrastive: ContrastiveConfig | None = None
    augmentation: AugmentationConfig | None = None
    syntax: SyntaxConfig | None = None
    max_query_per_class: int = 10
    min_way: int = 3
    label: str | None = None
    out: str = "results.csv"

    def __post_init__(self):
        if self.seeds < 1:
            raise ConfigError("seeds: must be >= 1")
        if self.dataset_path is None and self.synthetic is None:
            raise ConfigError("dataset: either a dataset path or a synthetic "
                              "source is required")

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            episodes=self.episodes, learning_rate=self.learning_rate,
            optimizer=self.optimizer, kmax=self.kmax, seed=seed,
            max_query_per_class=self.max_query_per_class, min_way=self.min_way,
            encoder=self.encoder, contrastive=self.contrastive,
            augmentation=self.augmentation, syntax=self.syntax)


def parse_config(record: dict) -> ExperimentConfig:
    """Validate a nested config record, reporting errors with field paths."""
    if not isinstance(record, dict):
        raise ConfigError("config: must be an object")
    known = {"dataset", "synthetic", "split", "kmax", "seeds", "base_seed",
             "n_test_episodes", "train", "encoder", "contrastive",
             "augmentation", "syntax", "sampler", "label", "out"}
    for key in record:
        if key not in known:
            _fail(key, "unknown field")

    dataset_path = _pick(record, "", "dataset")
    synth = None
    if "synthetic" in record and record["synthetic"] is not None:
        s = record["synthetic"]
        n_per = _pick(s, "synthetic", "n_per_intent")
        total = _pick(s, "synthetic", "total")
        if n_per is None and total is None:
            n_per = 60
        synth = SyntheticSource(
            grammar=_pick(s, "synthetic", "grammar", "snips"),
            n_per_intent=None if n_per is None else _integer(
                s, "synthetic", "n_per_intent", 60, minimum=1),
            total=None if total is None else _integer(
                s, "synthetic", "total", None, minimum=1),
            seed=_integer(s, "synthetic", "seed", 0))
    elif dataset_path is None:
        synth = SyntheticSource()

    sp = record.get("split") or {}
    style = _pick(sp, "split", "style", "snips")
    if style not in ("snips", "atis"):
        _fail("split.style", f"must be snips or atis, got {style!r}")
    defaults = {"snips": (7, 3), "atis": (5, 7)}[style]
    split = SplitPlan(
        style=style,
        n_train=_integer(sp, "split", "n_train", defaults[0], minimum=3),
        n_test=_integer(sp, "split", "n_test", defaults[1], minimum=3),
        min_count=_integer(sp, "split", "min_count", 15, minimum=0))

    tr = record.get("train") or {}
    enc = record.get("encoder") or {}
    sampler = record.get("sampler") or {}

    contrastive = None
    if record.get("contrastive") is not None:
        c = record["contrastive"]
        try:
            contrastive = ContrastiveConfig(
                lambda_ic=_number(c, "contrastive", "lambda_ic", 0.06, minimum=0),
                lambda_sf=_number(c, "contrastive", "lambda_sf", 0.06, minimum=0),
                temperature=_number(c, "contrastive", "temperature", 0.1,
                                    strict_min=0),
                level=_enum(c, "contrastive", "level", ContrastiveLevel,
                            ContrastiveLevel.SUPPORT_QUERY_MTRAIN),
                normalize=bool(_pick(c, "contrastive", "normalize", True)))
        except ValueError as e:
            raise ConfigError(f"contrastive: {e}") from e

    augmentation = None
    if record.get("augmentation") is not None:
        a = record["augmentation"]
        ops = _pick(a, "augmentation", "eda_ops")
        if ops is None:
            eda_ops = ALL_EDA_OPS
        else:
            eda_ops = frozenset(
                _enum({"op": o}, "augmentation.eda_ops", "op", EdaOp, None)
                for o in ops)
        try:
            augmentation = AugmentationConfig(
                method=_enum(a, "augmentation", "method", AugmentMethod,
                             AugmentMethod.SLOT_LIST),
                level=_enum(a, "augmentation", "level", AugmentLevel,
                            AugmentLevel.SUPPORT_MTRAIN),
                eda_alpha=_number(a, "augmentation", "eda_alpha", 0.1, minimum=0),
                eda_ops=eda_ops,
                bt_sampling_temperature=_number(
                    a, "augmentation", "bt_temperature", 0.7, minimum=0),
                seed=_integer(a, "augmentation", "seed", 0))
        except ValueError as e:
            raise ConfigError(f"augmentation: {e}") from e

    syntax = None
    if record.get("syntax") is not None:
        s = record["syntax"]
        modes = _pick(s, "syntax", "mode", ["feat"])
        if isinstance(modes, str):
            modes = [modes]
        try:
            syntax = SyntaxConfig(
                mode=frozenset(_enum({"m": m}, "syntax.mode", "m", SyntaxMode,
                                     None) for m in modes),
                beta=_number(s, "syntax", "beta", 0.01, minimum=0))
        except ValueError as e:
            raise ConfigError(f"syntax: {e}") from e

    try:
        encoder = EncoderConfig(
            dim=_integer(enc, "encoder", "dim", 64, minimum=1),
            ff_dim=_integer(enc, "encoder", "ff_dim", 128, minimum=1),
            n_layers=_integer(enc, "encoder", "n_layers", 1, minimum=1),
            max_len=_integer(enc, "encoder", "max_len", 32, minimum=2))
    except ValueError as e:
        raise ConfigError(f"encoder: {e}") from e

    return ExperimentConfig(
        dataset_path=dataset_path,
        synthetic=synth,
        split=split,
        kmax=_integer(record, "", "kmax", 20, minimum=3),
        seeds=_integer(record, "", "seeds", 5, minimum=1),
        base_seed=_integer(record, "", "base_seed", 0),
        n_test_episodes=_integer(record, "", "n_test_episodes", 100, minimum=1),
        episodes=_integer(tr, "train", "episodes", 50, minimum=1),
        learning_rate=_number(tr, "train", "learning_rate", 5e-5, minimum=0),
        optimizer=_pick(tr, "train", "optimizer", "adam"),
        encoder=encoder,
        contrastive=contrastive,
        augmentation=augmentation,
        syntax=syntax,
        max_query_per_class=_integer(sampler, "sampler", "max_query_per_class",
                                     10, minimum=1),
        min_way=_integer(sampler, "sampler", "min_way", 3, minimum=2),
        label=_pick(record, "", "label"),
        out=_pick(record, "", "out", "results.csv"))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            record = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON ({e.msg})") from e
    return parse_config(record)


def derive_label(cfg: ExperimentConfig) -> str:
    if cfg.label:
        return cfg.label
    parts = []
    if cfg.contrastive is not None:
        parts.append("CL (IC + SF)" if cfg.contrastive.lambda_sf > 0
                     else "CL (IC)")
    if cfg.augmentation is not None:
        name = {AugmentMethod.SLOT_LIST: "Slot-list",
                AugmentMethod.BACKTRANSLATION: "Backtranslation",
                AugmentMethod.EDA: "EDA"}[cfg.augmentation.method]
        parts.append(f"DA ({name})")
    if cfg.syntax is not None:
        names = {SyntaxMode.MULTITASK_LOSS: "Multi-task POS loss",
                 SyntaxMode.FEATURE_CONCAT: "POS-tag features",
                 SyntaxMode.NOUN_CHUNK_FEATURES: "Noun-parser features"}
        parts.extend(names[m] for m in sorted(cfg.syntax.mode,
                                              key=lambda m: m.value))
    return ", ".join(parts) if parts else "Baseline"


def derive_level(cfg: ExperimentConfig) -> str:
    levels = []
    if cfg.contrastive is not None:
        levels.append(cfg.contrastive.level.value)
    if cfg.augmentation is not None:
        levels.append(cfg.augmentation.level.value)
    return "+".join(levels) if levels else "-"


def _build_dataset(cfg: ExperimentConfig) -> tuple:
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path), Path(cfg.dataset_path).stem
    src = cfg.synthetic
    if src.grammar in BUILTIN_GRAMMARS:
        grammar = BUILTIN_GRAMMARS[src.grammar]()
        name = f"synthetic-{src.grammar}"
    else:
        grammar = load_grammar(src.grammar)
        name = f"synthetic-{Path(src.grammar).stem}"
    ds = generate(grammar, n_per_intent=src.n_per_intent, total=src.total,
                  seed=src.seed)
    return ds, name


def _make_split(cfg: ExperimentConfig, dataset: Dataset, seed: int):
    if cfg.split.style == "snips":
        return make_split_snips_style(dataset, cfg.split.n_train,
                                      cfg.split.n_test, seed=seed)
    return make_split_atis_style(dataset, cfg.split.min_count,
                                 cfg.split.n_train, cfg.split.n_test, seed=seed)


RESULTS_HEADER = ("config,level,dataset,kmax,n_seeds,n_episodes,"
                  "ic_mean,ic_std,sf_mean,sf_std")


def _csv_field(value: str) -> str:
    if "," in value or '"' in value:
        return '"' + value.replace('"', '""') + '"'
    return value


def format_results_row(label, level, dataset_name, kmax,
                       summary: MetricsSummary) -> str:
    return (f"{_csv_field(label)},{level},{dataset_name},{kmax},"
            f"{summary.n_seeds},{summary.n_episodes},"
            f"{summary.ic_mean:.4f},{summary.ic_std:.4f},"
            f"{summary.sf_mean:.4f},{summary.sf_std:.4f}")


@dataclass
class ExperimentResult:
    summary: MetricsSummary
    label: str
    dataset_name: str
    results_path: Path
    log_paths: list = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, log_progress=None) -> ExperimentResult:
    """Per seed: re-split, meta-train, evaluate; then append one table row."""
    dataset, dataset_name = _build_dataset(cfg)
    out_path = Path(cfg.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sampler_cfg = SamplerConfig(kmax=cfg.kmax,
                                max_query_per_class=cfg.max_query_per_class,
                                min_way=cfg.min_way)
    test_aug = (cfg.augmentation
                if cfg.augmentation is not None and cfg.augmentation.level.at_test
                else None)

    seed_results = []
    log_paths = []
    for i in range(cfg.seeds):
        seed = cfg.base_seed + i
        split = _make_split(cfg, dataset, seed)
        train_cfg = cfg.train_config(seed)
        resources = build_resources(dataset, split, train_cfg)
        params, train_log = meta_train(dataset, split, train_cfg,
                                       resources=resources)
        log_path = out_path.with_suffix(f".seed{seed}.log.jsonl")
        write_training_log(train_log, log_path)
        log_paths.append(log_path)
        metrics = evaluate(params, dataset, split, sampler_cfg,
                           cfg.n_test_episodes, resources,
                           test_augmentation=test_aug, syntax=cfg.syntax,
                           seed=seed)
        seed_results.append(summarize_episodes(metrics, seed=seed))
        if log_progress is not None:
            log_progress(f"seed {seed}: ic={seed_results[-1].ic_mean:.4f} "
                         f"sf={seed_results[-1].sf_mean}")

    summary = aggregate(seed_results)
    label = derive_label(cfg)
    row = format_results_row(label, derive_level(cfg), dataset_name, cfg.kmax,
                             summary)
    new_file = not out_path.exists()
    with open(out_path, "a", encoding="utf-8") as fh:
        if new_file:
            fh.write(RESULTS_HEADER + "\n")
        fh.write(row + "\n")
    return ExperimentResult(summary=summary, label=label,
                            dataset_name=dataset_name, results_path=out_path,
                            log_paths=log_paths)
