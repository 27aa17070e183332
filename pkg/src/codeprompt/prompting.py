"""Prompt templates: where the trainable prompt slots and the mask go."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch
from torch import nn

PLACEMENTS = ("head", "middle", "uniform", "tail")
MASK_POSITIONS = ("tail", "head")
MAX_PROMPTS = 64


@dataclass(frozen=True)
class PromptTemplate:
    prompt_count: int = 10
    placement: str = "uniform"
    mask_position: str = "tail"
    include_cls: bool = True
    separator: str | None = None

    def __post_init__(self):
        if not 0 <= self.prompt_count <= MAX_PROMPTS:
            raise ValueError(f"prompt_count must lie in [0, {MAX_PROMPTS}]")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"placement must be one of {PLACEMENTS}")
        if self.mask_position not in MASK_POSITIONS:
            raise ValueError(f"mask_position must be one of {MASK_POSITIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PromptTemplate":
        return cls(**d)


@dataclass(frozen=True)
class MaskedSequence:
    """A rendered model input.

    ``items`` holds vocabulary ids (``[CLS]``/``[MASK]``/``[SEP]`` included as
    their special ids) and prompt slots encoded as negative numbers: ``-i`` is
    prompt slot ``i`` (1-based).
    """

    items: tuple[int, ...]
    mask_index: int
    segment_spans: tuple[tuple[int, int], tuple[int, int]]

    def __len__(self):
        return len(self.items)

    @property
    def prompt_slots(self) -> list[int]:
        return [-t for t in self.items if t < 0]


def allocate_positions(placement: str, prompt_count: int, len_a: int = 0, len_b: int = 0) -> tuple[int, int, int]:
    """Split ``prompt_count`` prompts over the three gaps (before x1, between, after x2).

    For ``tail`` the third gap sits after the mask. ``uniform`` spreads the
    prompts as evenly as possible, remainder going to the front gaps first.
    """
    m = prompt_count
    if m < 0:
        raise ValueError("prompt_count must be non-negative")
    if placement == "head":
        return (m, 0, 0)
    if placement == "middle":
        return (0, m, 0)
    if placement == "tail":
        return (0, 0, m)
    if placement == "uniform":
        base, rem = divmod(m, 3)
        return tuple(base + (1 if i < rem else 0) for i in range(3))
    raise ValueError(f"unknown placement {placement!r}")


def truncation_cuts(len_a: int, len_b: int, available: int) -> tuple[int, int]:
    """Tokens to drop from each segment so that both fit in ``available``.

    The cut is proportional to segment length (rounded for x1, the rest from
    x2) and always leaves at least one token in each segment.
    """
    total = len_a + len_b
    excess = total - available
    if excess <= 0:
        return (0, 0)
    if available < 2:
        raise ValueError("budget leaves no room for the code segments")
    cut_a = int(round(excess * len_a / total))
    cut_a = min(max(cut_a, 0), len_a - 1)
    cut_b = excess - cut_a
    if cut_b > len_b - 1:
        cut_b = len_b - 1
        cut_a = excess - cut_b
    return (cut_a, cut_b)


def render(template: PromptTemplate, example, tokenizer, budget: int) -> MaskedSequence:
    """Render ``example`` (anything with ``text_a``/``text_b``, or a pair) into a masked sequence.

    Layout for the default tail mask::

        [CLS] P(gap1) x1 [SEP]? P(gap2) x2 P(gap3) [MASK]

    with ``tail`` placement moving the prompts behind the mask. Only the code
    segments are ever truncated.
    """
    text_a, text_b = (example.text_a, example.text_b) if hasattr(example, "text_a") else example
    ids_a = tokenizer.encode(text_a)
    ids_b = tokenizer.encode(text_b)
    return render_ids(template, ids_a, ids_b, tokenizer, budget)


def render_ids(template: PromptTemplate, ids_a: Sequence[int], ids_b: Sequence[int], tokenizer,
               budget: int) -> MaskedSequence:
    m = template.prompt_count
    sep = [] if template.separator is None else [tokenizer.token_to_id(template.separator)]
    fixed = int(template.include_cls) + m + 1 + len(sep)
    available = budget - fixed
    if available < 2 or not ids_a or not ids_b:
        raise ValueError(f"budget {budget} cannot hold the template plus one token of each segment")
    cut_a, cut_b = truncation_cuts(len(ids_a), len(ids_b), available)
    ids_a = list(ids_a[: len(ids_a) - cut_a])
    ids_b = list(ids_b[: len(ids_b) - cut_b])

    g1, g2, g3 = allocate_positions(template.placement, m, len(ids_a), len(ids_b))
    slots = iter(range(1, m + 1))
    items: list[int] = []
    if template.include_cls:
        items.append(tokenizer.cls_id)
    mask_index = -1
    if template.mask_position == "head":
        mask_index = len(items)
        items.append(tokenizer.mask_id)
    items.extend(-next(slots) for _ in range(g1))
    span_a = (len(items), len(items) + len(ids_a))
    items.extend(ids_a)
    items.extend(sep)
    items.extend(-next(slots) for _ in range(g2))
    span_b = (len(items), len(items) + len(ids_b))
    items.extend(ids_b)
    if template.placement != "tail":
        items.extend(-next(slots) for _ in range(g3))
    if template.mask_position == "tail":
        mask_index = len(items)
        items.append(tokenizer.mask_id)
    if template.placement == "tail":
        items.extend(-next(slots) for _ in range(g3))
    return MaskedSequence(tuple(items), mask_index, (span_a, span_b))


class PromptTable(nn.Module):
    """``m x hidden_dim`` trainable prompt vectors."""

    def __init__(self, prompt_count: int, hidden_dim: int, std: float = 0.02, seed: int = 0,
                 init_embeddings: torch.Tensor | None = None):
        super().__init__()
        if init_embeddings is not None:
            if tuple(init_embeddings.shape) != (prompt_count, hidden_dim):
                raise ValueError("init_embeddings must have shape (prompt_count, hidden_dim)")
            data = init_embeddings.detach().clone()
            self.init_scheme = "copy_of_word_embeddings"
        else:
            gen = torch.Generator().manual_seed(seed)
            data = torch.randn(prompt_count, hidden_dim, generator=gen) * std
            self.init_scheme = f"random_normal({std})"
        self.vectors = nn.Parameter(data)

    @classmethod
    def from_words(cls, words: Sequence[str], backbone) -> "PromptTable":
        ids = [backbone.tokenizer.token_to_id(w) for w in words]
        return cls(len(ids), backbone.hidden_dim, init_embeddings=backbone.embed_ids(ids))

    @property
    def prompt_count(self) -> int:
        return self.vectors.shape[0]


def assemble_embeddings(seq: MaskedSequence, backbone, prompts: PromptTable) -> torch.Tensor:
    """Input embeddings for one rendered sequence (``len(seq) x hidden_dim``)."""
    return assemble_batch([seq], backbone, prompts)[0][0]


def assemble_batch(seqs: Sequence[MaskedSequence], backbone, prompts: PromptTable | None):
    """Pad a batch and splice prompt vectors into the word-embedding sequence.

    Returns ``(embeddings, attention_mask, mask_index)``.
    """
    n = max(len(s) for s in seqs)
    pad = backbone.tokenizer.pad_id
    items = torch.full((len(seqs), n), pad, dtype=torch.long)
    attn = torch.zeros((len(seqs), n), dtype=torch.bool)
    for r, s in enumerate(seqs):
        items[r, : len(s)] = torch.tensor(s.items, dtype=torch.long)
        attn[r, : len(s)] = True
    is_prompt = items < 0
    m = prompts.prompt_count if prompts is not None else 0
    if is_prompt.any() and int((-items[is_prompt]).max()) > m:
        raise IndexError(f"prompt slot index exceeds prompt table size {m}")
    emb = backbone.embed_ids(items.clamp(min=0).masked_fill(is_prompt, pad))
    if is_prompt.any():
        # slot i lives in row i-1 of the table
        slot_rows = (-items).clamp(min=1) - 1
        emb = torch.where(is_prompt.unsqueeze(-1), prompts.vectors[slot_rows], emb)
    mask_index = torch.tensor([s.mask_index for s in seqs], dtype=torch.long)
    return emb, attn, mask_index
