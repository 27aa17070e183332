"""Experiment protocols (zero-shot, few-shot cross-language, monolingual) and ablations."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backbone import file_sha256, parameter_hashes
from .corpus import POSITIVE, TaskExample
from .dialects import DialectCorpus, clone_examples
from .estimator import PromptTuningClassifier
from .prompting import PLACEMENTS
from .tuning import PromptModel, TrainConfig, save_prompt_model, zero_shot_apply
from .verbalizer import DEFAULT_CANDIDATES

PROTOCOL_KINDS = ("zero_shot", "few_shot_cross", "monolingual")

# Training-set sizes used in the reference experiments; the desk-scale runs
# default to 500 source examples and 200 test examples instead.
REFERENCE_SIZES = {
    "zero_shot_source": (5000, 500),
    "few_shot_target": (32, 100, 300, 500, 700),
    "monolingual": (300, 100),
    "ablation_source": 700,
}
DESK_SIZES = {"source_train": 500, "source_validation": 100, "target_test": 200}


@dataclass
class Protocol:
    kind: str = "zero_shot"
    source_language: str = "dialectA"
    target_language: str = "dialectB"
    source_train_size: int = 500
    target_train_size: int = 0
    task: str = "clone_detection"

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ValueError(f"protocol kind must be one of {PROTOCOL_KINDS}")
        if self.kind == "zero_shot" and self.target_train_size != 0:
            raise ValueError("zero_shot protocols use no target training data")
        if self.kind == "few_shot_cross" and self.target_train_size < 1:
            raise ValueError("few_shot_cross needs target_train_size >= 1; use kind='zero_shot' for none")
        if self.kind == "monolingual" and self.source_language != self.target_language:
            raise ValueError("monolingual protocols train and test on one language")


@dataclass
class ModelConfig:
    prompt_count: int = 10
    placement: str = "uniform"
    mask_position: str = "tail"
    include_cls: bool = True
    separator: str | None = None
    candidates: list = field(default_factory=lambda: [list(c) for c in DEFAULT_CANDIDATES])
    budget: int | None = None

    def template_dict(self):
        return {"prompt_count": self.prompt_count, "placement": self.placement,
                "mask_position": self.mask_position, "include_cls": self.include_cls,
                "separator": self.separator}


@dataclass
class AblationGrid:
    placements: Sequence[str] | None = None
    prompt_counts: Sequence[int] | None = None
    source_languages: Sequence[str] | None = None

    def __post_init__(self):
        dims = [self.placements, self.prompt_counts, self.source_languages]
        if all(not d for d in dims):
            raise ValueError("ablation grid is empty")
        for p in self.placements or ():
            if p not in PLACEMENTS:
                raise ValueError(f"unknown placement {p!r}")

    def points(self, base: ModelConfig, base_language: str):
        placements = list(self.placements or [base.placement])
        counts = list(self.prompt_counts or [base.prompt_count])
        languages = list(self.source_languages or [base_language])
        return list(itertools.product(placements, counts, languages))


@dataclass
class RunRecord:
    run_id: str
    protocol: dict
    template: dict
    verbalizer: list
    train_config: dict
    history: list
    metrics: dict
    seeds: dict
    parameter_hashes: dict
    artifacts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    created_at: float = 0.0

    def to_dict(self, with_timestamp=True) -> dict:
        d = asdict(self)
        if not with_timestamp:
            d.pop("created_at")
        return d

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def accuracy(predictions, gold_labels) -> float:
    pred = np.asarray(predictions)
    gold = np.asarray(gold_labels)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty prediction set")
    return float(np.mean(pred == gold))


def precision_recall(predictions, gold_labels) -> tuple[float, float]:
    pred = np.asarray(predictions) == POSITIVE
    gold = np.asarray(gold_labels) == POSITIVE
    tp = float(np.sum(pred & gold))
    precision = tp / pred.sum() if pred.sum() else 0.0
    recall = tp / gold.sum() if gold.sum() else 0.0
    return float(precision), float(recall)


class MissingSplitError(KeyError):
    def __init__(self, split):
        super().__init__(f"missing dataset split {split!r}")
        self.split = split


def _take(datasets, key, n=None):
    if key not in datasets or datasets[key] is None:
        raise MissingSplitError(key)
    items = list(datasets[key])
    if n is not None:
        if len(items) < n:
            raise ValueError(f"split {key!r} has {len(items)} examples, protocol asks for {n}")
        items = items[:n]
    return items


def _xy(examples: Sequence[TaskExample]):
    return [ex.pair for ex in examples], np.array([ex.label for ex in examples])


def _run_id(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_protocol(protocol: Protocol, datasets: Mapping[str, Sequence[TaskExample]], model_config: ModelConfig,
                 train_config: TrainConfig, backbone, out_dir=None, few_shot_config: TrainConfig | None = None,
                 name: str | None = None) -> RunRecord:
    """Train on the source split, optionally continue on target data, test on the target split.

    ``datasets`` keys: ``source_train``, ``source_validation`` (optional),
    ``target_train`` (few-shot only), ``target_validation`` (optional),
    ``target_test``. With ``out_dir`` the tuned checkpoint and the record are
    written there.
    """
    source_train = _take(datasets, "source_train", protocol.source_train_size)
    source_val = list(datasets.get("source_validation") or [])
    target_test = _take(datasets, "target_test")
    target_train = []
    if protocol.kind == "few_shot_cross":
        target_train = _take(datasets, "target_train", protocol.target_train_size)

    clf = PromptTuningClassifier(
        backbone=backbone, prompt_count=model_config.prompt_count, placement=model_config.placement,
        mask_position=model_config.mask_position, include_cls=model_config.include_cls,
        separator=model_config.separator, candidates=[tuple(c) for c in model_config.candidates],
        budget=model_config.budget, batch_size=train_config.batch_size, epochs=train_config.epochs,
        peak_lr=train_config.peak_lr, weight_decay=train_config.weight_decay,
        freeze_policy=train_config.freeze_policy, trainable_sets=train_config.trainable_sets,
        max_grad_norm=train_config.max_grad_norm, task=protocol.task, language=protocol.source_language,
        seed=train_config.seed,
    )
    hashes_before = parameter_hashes(backbone)
    X, y = _xy(source_train)
    Xv, yv = _xy(source_val) if source_val else (None, None)
    clf.fit(X, y, Xv, yv)
    history = [dict(h, phase="source") for h in clf.history_]
    best_epoch = clf.best_checkpoint_.epoch
    source_val_acc = clf.best_checkpoint_.validation_accuracy

    if target_train:
        cont = few_shot_config or train_config
        clf.set_params(warm_start=True, epochs=cont.epochs, peak_lr=cont.peak_lr, batch_size=cont.batch_size,
                       language=protocol.target_language)
        tv = list(datasets.get("target_validation") or [])
        Xt, yt = _xy(target_train)
        Xtv, ytv = _xy(tv) if tv else (None, None)
        clf.fit(Xt, yt, Xtv, ytv)
        history += [dict(h, phase="target") for h in clf.history_]

    model: PromptModel = clf.model_
    predictions = zero_shot_apply(model, [ex.pair for ex in target_test])
    gold = [ex.label for ex in target_test]
    precision, recall = precision_recall(predictions.labels, gold)
    metrics = {
        "target_accuracy": accuracy(predictions.labels, gold),
        "target_precision": precision,
        "target_recall": recall,
        "target_test_size": len(target_test),
        "source_train_size": len(source_train),
        "target_train_size": len(target_train),
        "source_validation_accuracy": source_val_acc,
        "best_epoch": best_epoch,
    }
    config = {
        "protocol": asdict(protocol),
        "template": model.template.to_dict(),
        "verbalizer": model.verbalizer.to_list(),
        "train_config": train_config.to_dict(),
        "few_shot_config": few_shot_config.to_dict() if few_shot_config else None,
        "budget": model.budget,
        "backbone": hashes_before,
    }
    record = RunRecord(
        run_id=name or _run_id(config),
        protocol=asdict(protocol),
        template=model.template.to_dict(),
        verbalizer=model.verbalizer.to_list(),
        train_config=train_config.to_dict(),
        history=history,
        metrics=metrics,
        seeds={"train": train_config.seed, "prompt_init": train_config.seed},
        parameter_hashes={"initial_backbone": hashes_before, "final": model.parameter_hashes()},
        extra={"few_shot_config": config["few_shot_config"], "budget": model.budget,
               "freeze_policy": train_config.freeze_policy},
        created_at=time.time(),
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt = save_prompt_model(out_dir / f"{record.run_id}.npz", model, {"run_id": record.run_id, "train_config": train_config.to_dict()})
        record.artifacts = {"checkpoint": ckpt.name, "checkpoint_sha256": file_sha256(ckpt)}
        record.save(out_dir / f"{record.run_id}.json")
    record.model = model  # not serialized; handy for callers
    return record


def check_record(record: RunRecord) -> list[str]:
    """Invariant self-checks; returns the names of the failed ones."""
    failures = []
    m = record.metrics
    if not 0.0 <= m["target_accuracy"] <= 1.0:
        failures.append("accuracy_in_unit_interval")
    if m.get("declared_test_size") is not None and m["declared_test_size"] != m["target_test_size"]:
        failures.append("test_size_matches_split")
    frozen = set()
    if record.train_config.get("freeze_policy") == "frozen_backbone":
        frozen = {"encoder", "word_embeddings"}
    if "mlm_head" not in record.train_config.get("trainable_sets", ()):
        frozen.add("mlm_head")
    before = record.parameter_hashes.get("initial_backbone", {})
    after = record.parameter_hashes.get("final", {})
    for group in sorted(frozen):
        if group in before and before[group] != after.get(group):
            failures.append(f"frozen_group_unchanged:{group}")
    return failures


def run_ablation(grid: AblationGrid, base_protocol: Protocol, datasets, model_config: ModelConfig,
                 train_config: TrainConfig, backbone, source_datasets: Mapping[str, Mapping] | None = None,
                 out_dir=None) -> tuple[list[RunRecord], str]:
    """One run per grid point, all with the base seed; returns records and a CSV summary.

    Source-language sweeps take their training splits from
    ``source_datasets[language]``; the target test split stays shared.
    """
    records = []
    for placement, count, language in grid.points(model_config, base_protocol.source_language):
        cfg = ModelConfig(**{**asdict(model_config), "placement": placement, "prompt_count": count})
        data = dict(datasets)
        protocol = base_protocol
        if language != base_protocol.source_language:
            if not source_datasets or language not in source_datasets:
                raise KeyError(f"missing source datasets for language {language!r}")
            data.update({k: v for k, v in source_datasets[language].items() if k.startswith("source_")})
            protocol = Protocol(**{**asdict(base_protocol), "source_language": language})
        name = f"{placement}-k{count}-{language}"
        rec = run_protocol(protocol, data, cfg, train_config, backbone, out_dir=out_dir, name=name)
        rec.extra["grid_point"] = {"placement": placement, "prompt_count": count, "source_language": language}
        if out_dir is not None:
            rec.save(Path(out_dir) / f"{rec.run_id}.json")
        records.append(rec)
    return records, summary_table(records)


def summary_table(records: Sequence[RunRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["placement", "prompt_count", "source_language", "target_accuracy", "best_epoch"])
    rows = []
    for rec in records:
        g = rec.extra.get("grid_point") or {"placement": rec.template["placement"],
                                            "prompt_count": rec.template["prompt_count"],
                                            "source_language": rec.protocol["source_language"]}
        rows.append([g["placement"], g["prompt_count"], g["source_language"],
                     f"{rec.metrics['target_accuracy']:.4f}", rec.metrics["best_epoch"]])
    # keyed merge: row order does not depend on execution order
    for row in sorted(rows, key=lambda r: (r[0], int(r[1]), r[2])):
        writer.writerow(row)
    return buf.getvalue()


def _scores(model, pairs, batch_size=64):
    if hasattr(model, "predict_proba"):
        return np.asarray(model.predict_proba(pairs))[:, 1]
    return zero_shot_apply(model, pairs, batch_size).scores


def rank_candidates(model, query: str, candidate_snippets: Sequence[str]) -> list[tuple[int, str, float]]:
    """Rank code snippets for a natural-language query, best first.

    Returns ``(input_index, snippet, score)`` triples. Ties keep input order.
    """
    candidates = list(candidate_snippets)
    if not candidates:
        raise ValueError("no candidates to rank")
    scores = _scores(model, [(code, query) for code in candidates])
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])  # sorted() is stable
    return [(i, candidates[i], float(scores[i])) for i in order]


def method_name_rank1_accuracy(model, bodies: Sequence[str], true_names: Sequence[str],
                               name_vocabulary: Sequence[str]) -> float:
    """Full-enumeration method-name evaluation: score every vocabulary name per body."""
    if len(bodies) != len(true_names):
        raise ValueError("bodies and names differ in length")
    names = list(dict.fromkeys(name_vocabulary))
    hits = 0
    for body, name in zip(bodies, true_names):
        scores = _scores(model, [(body, n) for n in names])
        best = max(range(len(names)), key=lambda i: (scores[i], -i))
        hits += names[best] == name
    return hits / len(bodies)


def dialect_datasets(corpus: DialectCorpus, source_pairs: int = 250, validation_pairs: int = 100,
                     target_train_pairs: int = 350, test_pairs: int = 100, test_offset: int | None = None,
                     seed: int = 0, swap: bool = False) -> dict[str, list[TaskExample]]:
    """Balanced clone-detection splits from a dialect corpus.

    Disjoint ranges of clone pairs feed source train/validation (dialect A),
    target train/validation and target test (dialect B). Each pair range
    yields ``2 * pairs`` examples. ``swap`` exchanges the roles of A and B.
    """
    src, tgt = (corpus.corpus_b, corpus.corpus_a) if swap else (corpus.corpus_a, corpus.corpus_b)
    pairs = corpus.clone_pairs_a
    n = len(pairs)
    cuts = [0, source_pairs, source_pairs + validation_pairs]
    t0 = cuts[2]
    test_start = test_offset if test_offset is not None else n - test_pairs
    if t0 + target_train_pairs + validation_pairs > test_start or test_start + test_pairs > n:
        raise ValueError("corpus too small for the requested split sizes")
    return {
        "source_train": clone_examples(src, pairs[0:cuts[1]], seed=seed + 1),
        "source_validation": clone_examples(src, pairs[cuts[1]:cuts[2]], seed=seed + 2),
        "target_test": clone_examples(tgt, pairs[test_start:test_start + test_pairs], seed=seed + 3),
        "target_train": clone_examples(tgt, pairs[t0:t0 + target_train_pairs], seed=seed + 4),
        "target_validation": clone_examples(tgt, pairs[t0 + target_train_pairs:
                                                       t0 + target_train_pairs + validation_pairs], seed=seed + 5),
    }


def monolingual_datasets(datasets: Mapping[str, Sequence[TaskExample]]) -> dict:
    """Re-key target-language splits so a monolingual protocol trains and tests on them."""
    return {
        "source_train": datasets["target_train"],
        "source_validation": datasets.get("target_validation"),
        "target_test": datasets["target_test"],
    }

