from __future__ import annotations

from typing import Sequence

import torch

from .corpus import NEGATIVE, POSITIVE, ConfigurationError
from .tokenizer import split_words

DEFAULT_CANDIDATES = (("yes", POSITIVE), ("no", NEGATIVE))


class Verbalizer:
    """Maps candidate words at the mask position to task labels.

    Candidate ids are resolved once, here, so a word missing from the
    vocabulary fails at construction rather than at prediction time.
    """

    def __init__(self, tokenizer, candidates: Sequence[tuple[str, int]] = DEFAULT_CANDIDATES):
        candidates = [(str(w), int(label)) for w, label in candidates]
        words = [w for w, _ in candidates]
        if len(set(words)) != len(words):
            raise ConfigurationError("candidate words must be distinct")
        if {label for _, label in candidates} != {POSITIVE, NEGATIVE}:
            raise ConfigurationError("every label needs at least one candidate word")
        ids = []
        for w in words:
            if split_words(w) != [w] or w not in tokenizer:
                raise ConfigurationError(f"candidate word {w!r} is not a single in-vocabulary token")
            ids.append(tokenizer.token_to_id(w))
        self.candidates = candidates
        self.candidate_ids = ids
        self.labels = [label for _, label in candidates]

    def gold_id(self, label: int) -> int:
        """Token id trained as the target for ``label`` (its first candidate)."""
        for (w, lab), i in zip(self.candidates, self.candidate_ids):
            if lab == label:
                return i
        raise KeyError(label)

    def candidate_logits(self, logits: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(logits)[..., self.candidate_ids]

    def predict(self, logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Batched :func:`predict_label`: returns ``(labels, scores)`` tensors."""
        cand = self.candidate_logits(logits).detach().double()
        if cand.dim() == 1:
            cand = cand.unsqueeze(0)
        probs = cand.softmax(dim=-1)
        best = cand.max(dim=-1, keepdim=True).values
        tied = cand == best
        labels = torch.tensor(self.labels)
        # among tied maxima a negative candidate wins
        neg = torch.tensor([lab == NEGATIVE for lab in self.labels])
        prefer = tied & neg
        choose_from = torch.where(prefer.any(dim=-1, keepdim=True), prefer, tied)
        winner = choose_from.int().argmax(dim=-1)
        return labels[winner], probs.gather(-1, winner[:, None]).squeeze(-1)

    def positive_probability(self, logits: torch.Tensor) -> torch.Tensor:
        cand = self.candidate_logits(logits).detach().double()
        probs = cand.softmax(dim=-1)
        pos = torch.tensor([lab == POSITIVE for lab in self.labels])
        return probs[..., pos].sum(dim=-1)

    def swapped(self) -> "Verbalizer":
        """Same words with positive and negative labels exchanged."""
        v = object.__new__(Verbalizer)
        v.candidates = [(w, 1 - lab) for w, lab in self.candidates]
        v.candidate_ids = list(self.candidate_ids)
        v.labels = [lab for _, lab in v.candidates]
        return v

    def to_list(self) -> list[list]:
        return [[w, lab] for w, lab in self.candidates]


def predict_label(logits, verbalizer: Verbalizer) -> tuple[int, float]:
    labels, scores = verbalizer.predict(torch.as_tensor(logits))
    return int(labels[0]), float(scores[0])


def ranking_score(logits, verbalizer: Verbalizer) -> float:
    return float(verbalizer.positive_probability(torch.as_tensor(logits)))
