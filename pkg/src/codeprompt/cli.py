"""Command-line entry point: ``codeprompt {prepare-data,pretrain,train,eval,ablate} CONFIG``.

Each command reads one declarative YAML or JSON config. Relative paths inside
a config resolve against the config file's directory; outputs go under
``--output-dir``, else ``$CODEPROMPT_OUTPUT``, else ``./runs``. Flags never
override config values.

Exit codes: 0 success, 2 configuration/input error, 3 invariant failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch
import yaml

from .backbone import EncoderConfig, file_sha256, load_checkpoint, pretrain_mlm, save_checkpoint
from .corpus import (SchemaError, balance_binary, filter_by_length, label_counts, load_examples, save_examples,
                     split_examples, strip_comments)
from .dialects import DialectSpec, clone_examples, generate_dialect_corpus, pretraining_documents
from .evalharness import (AblationGrid, MissingSplitError, ModelConfig, Protocol, RunRecord, accuracy, check_record,
                          precision_recall, run_ablation, run_protocol)
from .tokenizer import Tokenizer
from .tuning import TrainConfig, load_prompt_model, zero_shot_apply

OUTPUT_ENV = "CODEPROMPT_OUTPUT"
PARTITIONS = ("train", "validation", "test")


class ConfigError(Exception):
    """Bad or missing config value; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvariantFailure(Exception):
    pass


class Context:
    def __init__(self, config_path: Path, output_dir: Path):
        self.config_path = config_path
        self.base = config_path.parent
        self.out = output_dir
        self.config = _read_config(config_path)

    def get(self, key, default=..., section=None):
        cfg = self.config if section is None else self.config.get(section) or {}
        name = key if section is None else f"{section}.{key}"
        if key not in cfg:
            if default is ...:
                raise ConfigError(name, "missing required key")
            return default
        return cfg[key]

    def path(self, key, section=None, must_exist=True, default=...):
        value = self.get(key, default, section)
        if value is None:
            return None
        name = key if section is None else f"{section}.{key}"
        p = Path(value)
        if not p.is_absolute():
            p = self.base / p
        if must_exist and not p.exists():
            raise ConfigError(name, f"path does not exist: {p}")
        return p

    def section(self, key, cls, required=False):
        raw = self.get(key, None if not required else ...)
        if raw is None:
            return cls()
        try:
            return cls(**raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(key, str(e)) from e


def _read_config(path: Path) -> dict:
    if not path.exists():
        raise ConfigError("config", f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return data


def _print_counts(name, examples):
    counts = label_counts(examples)
    print(f"{name}: {len(examples)} examples (positive {counts[1]}, negative {counts[0]})")


# prepare-data

def cmd_prepare_data(ctx: Context) -> int:
    ctx.out.mkdir(parents=True, exist_ok=True)
    seed = ctx.get("seed", 0)
    if "dialect" in ctx.config:
        spec = ctx.section("dialect", DialectSpec)
        corpus = generate_dialect_corpus(spec)
        sizes = ctx.get("splits", {"train": 250, "validation": 100, "test": 100})
        try:
            cuts = [int(sizes[p]) for p in PARTITIONS]
        except KeyError as e:
            raise ConfigError(f"splits.{e.args[0]}", "missing required key") from e
        if sum(cuts) > len(corpus.clone_pairs_a):
            raise ConfigError("splits", f"needs {sum(cuts)} clone pairs, corpus has {len(corpus.clone_pairs_a)}")
        for tag, snippets, pairs in (("dialectA", corpus.corpus_a, corpus.clone_pairs_a),
                                     ("dialectB", corpus.corpus_b, corpus.clone_pairs_b)):
            start = 0
            for k, (part, n) in enumerate(zip(PARTITIONS, cuts)):
                examples = clone_examples(snippets, pairs[start:start + n], seed=seed + k + 1)
                start += n
                save_examples(examples, ctx.out / tag / f"{part}.jsonl")
                _print_counts(f"{tag}/{part}", examples)
        docs = pretraining_documents(corpus, seed=seed, paired=ctx.get("paired_documents", False))
        with open(ctx.out / "corpus.jsonl", "w", encoding="utf-8") as fh:
            for d in docs:
                row = {"text": d} if isinstance(d, str) else {"text_a": d[0], "text_b": d[1]}
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        print(f"corpus: {len(docs)} documents")
        return 0

    path = ctx.path("input")
    try:
        examples = load_examples(path)
    except SchemaError as e:
        raise ConfigError("input", str(e)) from e
    if ctx.get("strip_comments", True):
        examples = [replace(ex, text_a=strip_comments(ex.text_a) or ex.text_a,
                            text_b=strip_comments(ex.text_b) or ex.text_b) for ex in examples]
    if ctx.get("length_filter", None):
        lf = ctx.get("length_filter")
        tok = Tokenizer.build([t for ex in examples for t in ex.pair])
        examples = filter_by_length(examples, tok, lf.get("min_tokens", 125), lf.get("max_tokens", 250))
    examples = balance_binary(examples, seed=seed)
    split = split_examples(examples, tuple(ctx.get("fractions", (0.8, 0.1, 0.1))), seed=seed)
    tag = ctx.get("language", split.source_language) or "data"
    for part in PARTITIONS:
        items = getattr(split, part)
        save_examples(items, ctx.out / tag / f"{part}.jsonl")
        _print_counts(f"{tag}/{part}", items)
    return 0


# pretrain

def _load_documents(path: Path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if "text" in row:
                docs.append(row["text"])
            elif "text_a" in row and "text_b" in row:
                docs.append((row["text_a"], row["text_b"]))
            else:
                raise ConfigError("corpus", f"line {i} has neither 'text' nor 'text_a'/'text_b'")
    return docs


def cmd_pretrain(ctx: Context) -> int:
    docs = _load_documents(ctx.path("corpus"))
    flat = [t for d in docs for t in (d if isinstance(d, tuple) else (d,))]
    vocab = ctx.get("vocabulary", {}) or {}
    tok = Tokenizer.build(flat, min_count=vocab.get("min_count", 1), max_size=vocab.get("max_size"))
    seed = ctx.get("seed", 0)
    enc = dict(ctx.get("encoder", {}) or {})
    enc.setdefault("seed", seed)
    try:
        config = EncoderConfig(vocab_size=tok.vocab_size, **enc)
    except (TypeError, ValueError) as e:
        raise ConfigError("encoder", str(e)) from e
    backbone = pretrain_mlm(docs, config, mask_rate=ctx.get("mask_rate", 0.15), steps=ctx.get("steps", 1000),
                            seed=seed, tokenizer=tok, batch_size=ctx.get("batch_size", 32),
                            peak_lr=ctx.get("peak_lr", 1e-3), weight_decay=ctx.get("weight_decay", 0.01))
    info = backbone.pretrain_log
    print(f"held-out MLM loss: initial {info['initial_heldout_loss']:.4f} final {info['final_heldout_loss']:.4f}")
    out = ctx.out / ctx.get("output", "backbone.npz")
    save_checkpoint(out, backbone, metadata={"pretrain": info})
    print(f"checkpoint {out} sha256 {file_sha256(out)}")
    return 0


# train / eval / ablate

def _datasets(ctx: Context) -> dict:
    raw = ctx.get("datasets")
    if not isinstance(raw, dict):
        raise ConfigError("datasets", "must map split names to files")
    out = {}
    for name in raw:
        p = ctx.path(name, section="datasets")
        try:
            out[name] = load_examples(p)
        except SchemaError as e:
            raise ConfigError(f"datasets.{name}", str(e)) from e
    return out


def _backbone(ctx: Context):
    return load_checkpoint(ctx.path("backbone"))[0]


def _record_checks(records) -> int:
    for rec in records:
        failed = check_record(rec)
        if failed:
            raise InvariantFailure(f"run {rec.run_id}: invariant failed: {', '.join(failed)}")
    return 0


def cmd_train(ctx: Context) -> int:
    """Tune on the source splits; write the tuned checkpoint and a RunRecord.

    With a ``target_test`` split the run is a full protocol (train, optional
    few-shot continuation, target evaluation).
    """
    data = _datasets(ctx)
    protocol = ctx.section("protocol", Protocol)
    model_cfg = ctx.section("model", ModelConfig)
    train_cfg = ctx.section("train", TrainConfig)
    few = ctx.get("few_shot_train", None)
    few_cfg = TrainConfig(**few) if few else None
    if "target_test" not in data:
        # no target split: score the source validation split in its place
        data["target_test"] = data.get("source_validation") or data.get("source_train")
        if data["target_test"] is None:
            raise ConfigError("datasets.source_train", "missing required split")
    try:
        rec = run_protocol(protocol, data, model_cfg, train_cfg, _backbone(ctx), out_dir=ctx.out,
                           few_shot_config=few_cfg)
    except MissingSplitError as e:
        raise ConfigError(f"datasets.{e.split}", "missing required split") from e
    print(f"run {rec.run_id}: target accuracy {rec.metrics['target_accuracy']:.4f} "
          f"(best epoch {rec.metrics['best_epoch']})")
    return _record_checks([rec])


def cmd_eval(ctx: Context) -> int:
    """Evaluate a tuned checkpoint on ``test``, or run a full protocol config."""
    if "checkpoint" not in ctx.config:
        return cmd_train(ctx)
    model, meta = load_prompt_model(ctx.path("checkpoint"))
    test_path = ctx.path("test")
    examples = load_examples(test_path)
    before = model.parameter_hashes()
    preds = zero_shot_apply(model, [ex.pair for ex in examples])
    gold = [ex.label for ex in examples]
    acc = accuracy(preds.labels, gold)
    precision, recall = precision_recall(preds.labels, gold)
    run_id = ctx.get("name", f"eval-{file_sha256(ctx.path('checkpoint'))[:8]}-{file_sha256(test_path)[:8]}")
    rec = RunRecord(
        run_id=run_id,
        protocol={"kind": "zero_shot", "target_language": examples[0].language if examples else ""},
        template=model.template.to_dict(), verbalizer=model.verbalizer.to_list(),
        train_config=meta.get("train_config", {}), history=[],
        metrics={"target_accuracy": acc, "target_precision": precision, "target_recall": recall,
                 "target_test_size": len(examples), "declared_test_size": len(gold)},
        seeds={}, parameter_hashes={"initial_backbone": {k: v for k, v in before.items() if k != "prompt_table"},
                                    "final": preds.parameter_hashes},
        artifacts={"checkpoint": str(ctx.path("checkpoint")), "test": str(test_path)},
    )
    rec.save(ctx.out / f"{rec.run_id}.json")
    print(f"run {rec.run_id}: target accuracy {acc:.4f} on {len(examples)} examples")
    return _record_checks([rec])


def cmd_ablate(ctx: Context) -> int:
    data = _datasets(ctx)
    grid = ctx.section("grid", AblationGrid, required=True)
    records, table = run_ablation(grid, ctx.section("protocol", Protocol), data, ctx.section("model", ModelConfig),
                                  ctx.section("train", TrainConfig), _backbone(ctx), out_dir=ctx.out)
    (ctx.out / "summary.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return _record_checks(records)


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="codeprompt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", type=Path, help="YAML or JSON config file")
        p.add_argument("-o", "--output-dir", type=Path, default=None,
                       help=f"output directory (default: ${OUTPUT_ENV} or ./runs)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    out = args.output_dir or Path(os.environ.get(OUTPUT_ENV, "runs"))
    try:
        ctx = Context(args.config.resolve(), out)
        return COMMANDS[args.command](ctx)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, yaml.YAMLError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return 2
    except (InvariantFailure, FloatingPointError, RuntimeError) as e:
        print(f"invariant failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
