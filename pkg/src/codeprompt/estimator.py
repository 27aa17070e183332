"""scikit-learn style front end for prompt tuning.

``PromptTuningClassifier`` takes pairs of texts as ``X`` and 0/1 labels as
``y``, so it can be cloned, grid-searched and cross-validated like any other
classifier. The wrapped backbone is deep-copied at ``fit`` time; the instance
passed to the constructor is never modified.
"""

from __future__ import annotations

import copy

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import NEGATIVE, POSITIVE, DatasetSplit, TaskExample
from .prompting import PromptTable, PromptTemplate
from .tuning import PromptModel, TrainConfig, train, zero_shot_apply
from .verbalizer import DEFAULT_CANDIDATES, Verbalizer


def check_pairs(X) -> list[tuple[str, str]]:
    """Coerce ``X`` to a list of ``(text_a, text_b)`` string pairs.

    Accepts TaskExample objects, 2-tuples, or a 2-column array/DataFrame.
    """
    if hasattr(X, "to_numpy"):
        X = X.to_numpy()
    if isinstance(X, np.ndarray):
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError(f"expected an array of shape (n_samples, 2), got {X.shape}")
        X = X.tolist()
    pairs = []
    for i, item in enumerate(X):
        if isinstance(item, TaskExample):
            item = item.pair
        if len(item) != 2:
            raise ValueError(f"sample {i} is not a pair")
        a, b = item
        if not isinstance(a, str) or not isinstance(b, str) or not a or not b:
            raise ValueError(f"sample {i} must hold two non-empty strings")
        pairs.append((a, b))
    if not pairs:
        raise ValueError("found 0 samples")
    return pairs


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"y must be 1-d with {n_samples} entries")
    if not np.isin(y, (NEGATIVE, POSITIVE)).all():
        raise ValueError("labels must be 0 or 1")
    return y.astype(int)


def _examples(pairs, y, task, language):
    return [TaskExample(task=task, text_a=a, text_b=b, label=int(lab), language=language)
            for (a, b), lab in zip(pairs, y)]


class PromptTuningClassifier(ClassifierMixin, BaseEstimator):
    """Binary pair classifier driven by a masked language model and soft prompts.

    Parameters mirror :class:`PromptTemplate` and :class:`TrainConfig`.
    ``prompt_init_words`` seeds the prompt vectors from word embeddings
    instead of a random normal draw. With ``warm_start=True`` a second call
    to :meth:`fit` keeps training the already tuned model, which is how
    few-shot continuation on a target language is expressed.
    """

    def __init__(self, backbone=None, prompt_count=10, placement="uniform", mask_position="tail",
                 include_cls=True, separator=None, candidates=DEFAULT_CANDIDATES, budget=None,
                 batch_size=10, epochs=20, peak_lr=3e-5, weight_decay=0.01,
                 freeze_policy="frozen_backbone", trainable_sets=("prompt_table", "mlm_head"),
                 max_grad_norm=1.0, prompt_init_words=None, task="clone_detection", language="",
                 warm_start=False, seed=0):
        self.backbone = backbone
        self.prompt_count = prompt_count
        self.placement = placement
        self.mask_position = mask_position
        self.include_cls = include_cls
        self.separator = separator
        self.candidates = candidates
        self.budget = budget
        self.batch_size = batch_size
        self.epochs = epochs
        self.peak_lr = peak_lr
        self.weight_decay = weight_decay
        self.freeze_policy = freeze_policy
        self.trainable_sets = trainable_sets
        self.max_grad_norm = max_grad_norm
        self.prompt_init_words = prompt_init_words
        self.task = task
        self.language = language
        self.warm_start = warm_start
        self.seed = seed

    def _template(self):
        return PromptTemplate(prompt_count=self.prompt_count, placement=self.placement,
                              mask_position=self.mask_position, include_cls=self.include_cls,
                              separator=self.separator)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, peak_lr=self.peak_lr,
                           weight_decay=self.weight_decay, seed=self.seed, freeze_policy=self.freeze_policy,
                           trainable_sets=tuple(self.trainable_sets), max_grad_norm=self.max_grad_norm)

    def _build_model(self):
        if self.backbone is None:
            raise ValueError("a backbone is required")
        backbone = copy.deepcopy(self.backbone)
        template = self._template()
        prompts = None
        if self.prompt_init_words is not None:
            words = list(self.prompt_init_words)
            if len(words) != template.prompt_count:
                raise ValueError("prompt_init_words must have prompt_count entries")
            prompts = PromptTable.from_words(words, backbone)
        verbalizer = Verbalizer(backbone.tokenizer, self.candidates)
        return PromptModel(backbone, template, verbalizer, prompts=prompts, budget=self.budget,
                           prompt_seed=self.seed)

    def fit(self, X, y, X_val=None, y_val=None):
        pairs = check_pairs(X)
        y = check_labels(y, len(pairs))
        if not (self.warm_start and hasattr(self, "model_")):
            self.model_ = self._build_model()
        train_set = _examples(pairs, y, self.task, self.language)
        val_set = []
        if X_val is not None:
            val_pairs = check_pairs(X_val)
            val_set = _examples(val_pairs, check_labels(y_val, len(val_pairs)), self.task, self.language)
        split = DatasetSplit(train_set, val_set, [], self.language, self.language)
        self.best_checkpoint_, self.history_ = train(self.model_, split, self.train_config())
        self.classes_ = np.array([NEGATIVE, POSITIVE])
        self.n_features_in_ = 2
        return self

    def _apply(self, X):
        check_is_fitted(self, "model_")
        return zero_shot_apply(self.model_, check_pairs(X))

    def predict(self, X):
        return self._apply(X).labels

    def predict_proba(self, X):
        scores = self._apply(X).scores
        return np.column_stack([1.0 - scores, scores])

    def decision_function(self, X):
        """Candidate logit gap (positive minus negative word) per pair."""
        check_is_fitted(self, "model_")
        pairs = check_pairs(X)
        model = self.model_
        model.eval()
        out = []
        with torch.no_grad():
            for i in range(0, len(pairs), 64):
                cand = model.verbalizer.candidate_logits(model(pairs[i:i + 64])).double()
                pos = torch.tensor([lab == POSITIVE for lab in model.verbalizer.labels])
                out.append((cand[:, pos].logsumexp(-1) - cand[:, ~pos].logsumexp(-1)).numpy())
        return np.concatenate(out)

    def parameter_hashes(self) -> dict[str, str]:
        check_is_fitted(self, "model_")
        return self.model_.parameter_hashes()
