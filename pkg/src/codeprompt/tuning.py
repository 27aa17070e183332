"""Prompt tuning cast as masked-token prediction.

Training targets the gold candidate word with a full-vocabulary cross
entropy at the mask position; evaluation goes through the verbalizer's
candidate-restricted softmax.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .backbone import FREEZE_POLICIES, load_checkpoint, parameter_hashes, save_checkpoint
from .corpus import DatasetSplit, TaskExample
from .prompting import PromptTable, PromptTemplate, assemble_batch, render_ids
from .schedule import LRSchedule, lr_at
from .verbalizer import Verbalizer

logger = logging.getLogger(__name__)

TRAINABLE_SETS = ("prompt_table", "mlm_head", "backbone")

__all__ = [
    "TrainConfig", "Checkpoint", "PromptModel", "LRSchedule", "lr_at", "mlm_loss", "train",
    "zero_shot_apply", "few_shot_continue", "Predictions", "save_prompt_model", "load_prompt_model",
]


@dataclass
class TrainConfig:
    batch_size: int = 10
    epochs: int = 20
    peak_lr: float = 3e-5
    weight_decay: float = 0.01
    seed: int = 0
    freeze_policy: str = "frozen_backbone"
    trainable_sets: tuple = ("prompt_table", "mlm_head")
    max_grad_norm: float | None = 1.0
    eval_batch_size: int = 64

    def __post_init__(self):
        self.trainable_sets = tuple(self.trainable_sets)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be non-negative")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ValueError(f"freeze_policy must be one of {FREEZE_POLICIES}")
        unknown = set(self.trainable_sets) - set(TRAINABLE_SETS)
        if unknown:
            raise ValueError(f"unknown trainable sets {sorted(unknown)}")
        if self.freeze_policy == "frozen_backbone" and "backbone" in self.trainable_sets:
            raise ValueError("frozen_backbone excludes 'backbone' from trainable_sets")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trainable_sets"] = list(self.trainable_sets)
        return d


def mlm_loss(logits, gold_candidate_id: int) -> torch.Tensor:
    """Cross entropy of one mask-position prediction against a one-hot gold word."""
    logits = torch.as_tensor(logits)
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    if not 0 <= gold_candidate_id < logits.shape[-1]:
        raise IndexError("gold id outside the vocabulary")
    return -F.log_softmax(logits, dim=-1)[..., gold_candidate_id]


class PromptModel(nn.Module):
    """Backbone + prompt table + template + verbalizer, ready to score pairs."""

    def __init__(self, backbone, template: PromptTemplate, verbalizer: Verbalizer,
                 prompts: PromptTable | None = None, budget: int | None = None, prompt_seed: int = 0):
        super().__init__()
        self.backbone = backbone
        self.template = template
        self.verbalizer = verbalizer
        self.prompts = prompts if prompts is not None else PromptTable(
            template.prompt_count, backbone.hidden_dim, seed=prompt_seed)
        if self.prompts.prompt_count != template.prompt_count:
            raise ValueError("prompt table size does not match the template")
        self.budget = budget or backbone.max_sequence_length
        if self.budget > backbone.max_sequence_length:
            raise ValueError("budget exceeds the backbone's max_sequence_length")
        self._ids_cache: dict[str, list[int]] = {}

    def _ids(self, text):
        ids = self._ids_cache.get(text)
        if ids is None:
            ids = self._ids_cache[text] = self.backbone.tokenizer.encode(text)
        return ids

    def render(self, example):
        text_a, text_b = (example.text_a, example.text_b) if hasattr(example, "text_a") else example
        return render_ids(self.template, self._ids(text_a), self._ids(text_b), self.backbone.tokenizer,
                          self.budget)

    def forward(self, examples) -> torch.Tensor:
        """Vocabulary logits at the mask position, one row per example."""
        seqs = [self.render(ex) for ex in examples]
        emb, attn, mask_index = assemble_batch(seqs, self.backbone, self.prompts)
        hidden = self.backbone.forward_hidden(emb, attn)
        at_mask = hidden[torch.arange(len(seqs)), mask_index]
        return self.backbone.mlm_logits(at_mask)

    def trainable_parameters(self, trainable_sets) -> dict[str, nn.Parameter]:
        named = {}
        if "prompt_table" in trainable_sets:
            named["prompts.vectors"] = self.prompts.vectors
        groups = self.backbone.parameter_groups()
        by_id = {id(p): f"backbone.{n}" for n, p in self.backbone.named_parameters()}
        chosen = []
        if "mlm_head" in trainable_sets:
            chosen += groups["mlm_head"]
        if "backbone" in trainable_sets:
            chosen += groups["encoder"] + groups["word_embeddings"]
        for p in chosen:
            named[by_id[id(p)]] = p
        return named

    def parameter_hashes(self) -> dict[str, str]:
        return parameter_hashes(self.backbone, self.prompts)


@dataclass
class Checkpoint:
    epoch: int
    state: dict
    validation_accuracy: float

    def restore(self, model: PromptModel) -> None:
        params = dict(model.named_parameters())
        with torch.no_grad():
            for name, value in self.state.items():
                params[name].copy_(value)


@dataclass
class Predictions:
    labels: np.ndarray
    scores: np.ndarray
    parameter_hashes: dict = field(default_factory=dict)


@torch.no_grad()
def _predict(model: PromptModel, examples, batch_size):
    model.eval()
    labels, scores = [], []
    for i in range(0, len(examples), batch_size):
        logits = model(examples[i:i + batch_size])
        lab, _ = model.verbalizer.predict(logits)
        labels.append(lab.numpy())
        scores.append(model.verbalizer.positive_probability(logits).numpy())
    if not labels:
        return np.zeros(0, dtype=int), np.zeros(0)
    return np.concatenate(labels), np.concatenate(scores)


def _accuracy(model, examples, batch_size):
    if not examples:
        return float("nan")
    pred, _ = _predict(model, examples, batch_size)
    return float(np.mean(pred == np.array([ex.label for ex in examples])))


def zero_shot_apply(model: PromptModel, target_examples: Sequence, batch_size: int = 64) -> Predictions:
    """Pure inference on target-language examples; verifies nothing was mutated."""
    before = model.parameter_hashes()
    labels, scores = _predict(model, list(target_examples), batch_size)
    after = model.parameter_hashes()
    if before != after:
        raise RuntimeError("parameters changed during zero-shot inference")
    return Predictions(labels, scores, after)


def _set_trainable(model: PromptModel, config: TrainConfig):
    trainable = model.trainable_parameters(config.trainable_sets)
    keep = {id(p) for p in trainable.values()}
    for p in model.parameters():
        p.requires_grad_(id(p) in keep)
    return trainable


def train(model: PromptModel, split: DatasetSplit, config: TrainConfig) -> tuple[Checkpoint, list[dict]]:
    """Tune ``model`` on ``split.train``; keep the epoch with the best validation accuracy.

    The model is left holding the selected checkpoint. Parameters outside
    ``config.trainable_sets`` are never touched. The history holds one record
    per epoch: ``{epoch, train_loss, train_accuracy, val_accuracy, lr_last}``.
    """
    train_set = list(split.train)
    if not train_set:
        raise ValueError("training split is empty")
    val_set = list(split.validation) or train_set
    model.backbone.freeze_policy = config.freeze_policy
    trainable = _set_trainable(model, config)
    gold = torch.tensor([model.verbalizer.gold_id(ex.label) for ex in train_set])
    labels = torch.tensor([ex.label for ex in train_set])

    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    schedule = LRSchedule(steps_per_epoch, steps_per_epoch * config.epochs, config.peak_lr)
    params = list(trainable.values())
    optimizer = torch.optim.AdamW(params, lr=0.0, weight_decay=config.weight_decay) if params else None

    def snapshot(epoch, acc):
        state = {name: p.detach().clone() for name, p in trainable.items()}
        return Checkpoint(epoch, state, acc)

    best = None
    history = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
        loss_sum, correct = 0.0, 0
        lr = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = [train_set[i] for i in idx]
            logits = model(batch)
            loss = F.cross_entropy(logits, gold[idx])
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
            lr = lr_at(schedule, step)
            if optimizer is not None:
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad()
                loss.backward()
                if config.max_grad_norm:
                    torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
                optimizer.step()
            step += 1
            loss_sum += loss.item() * len(idx)
            pred, _ = model.verbalizer.predict(logits)
            correct += int((pred == labels[idx]).sum())
        val_acc = _accuracy(model, val_set, config.eval_batch_size)
        history.append({"epoch": epoch, "train_loss": loss_sum / len(train_set),
                        "train_accuracy": correct / len(train_set), "val_accuracy": val_acc,
                        "lr_last": lr})
        logger.info("epoch %d loss %.4f train_acc %.3f val_acc %.3f", epoch, loss_sum / len(train_set),
                    correct / len(train_set), val_acc)
        if best is None or val_acc > best.validation_accuracy:
            best = snapshot(epoch, val_acc)
    best.restore(model)
    for p in model.parameters():
        p.requires_grad_(True)
    model.eval()
    return best, history


def few_shot_continue(model: PromptModel, few_target_examples: Sequence[TaskExample], config: TrainConfig,
                      validation: Sequence[TaskExample] | None = None) -> tuple[Checkpoint, list[dict]]:
    """Keep training an already tuned model on a handful of target-language examples."""
    few = list(few_target_examples)
    if not few:
        raise ValueError("few-shot continuation needs at least one example")
    lang = few[0].language
    split = DatasetSplit(few, list(validation or []), [], lang, lang)
    return train(model, split, config)


def save_prompt_model(path, model: PromptModel, metadata: dict | None = None):
    """Checkpoint a tuned model: backbone arrays plus the prompt table, template and verbalizer."""
    meta = {
        "template": model.template.to_dict(),
        "verbalizer": model.verbalizer.to_list(),
        "budget": model.budget,
        "prompt_init": model.prompts.init_scheme,
    }
    meta.update(metadata or {})
    return save_checkpoint(path, model.backbone, {"prompt_table": model.prompts.vectors}, meta)


def load_prompt_model(path) -> tuple[PromptModel, dict]:
    backbone, extra, meta = load_checkpoint(path)
    if "template" not in meta or "prompt_table" not in extra:
        raise ValueError(f"{path} is a backbone checkpoint, not a tuned prompt model")
    template = PromptTemplate.from_dict(meta["template"])
    verbalizer = Verbalizer(backbone.tokenizer, [tuple(c) for c in meta["verbalizer"]])
    prompts = PromptTable(template.prompt_count, backbone.hidden_dim)
    with torch.no_grad():
        prompts.vectors.copy_(extra["prompt_table"])
    model = PromptModel(backbone, template, verbalizer, prompts=prompts, budget=meta["budget"])
    model.eval()
    return model, meta
