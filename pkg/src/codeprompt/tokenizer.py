from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

PAD, UNK, CLS, MASK, SEP = "[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, MASK, SEP)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Whitespace-plus-punctuation split: runs of word characters or single symbols."""
    return _TOKEN_RE.findall(text)


class Tokenizer:
    """Closed-vocabulary word tokenizer with fixed special-token indices.

    ``[PAD]``=0, ``[UNK]``=1, ``[CLS]``=2, ``[MASK]``=3, ``[SEP]``=4.
    """

    def __init__(self, vocabulary: Sequence[str]):
        vocabulary = list(vocabulary)
        if tuple(vocabulary[: len(SPECIALS)]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        if len(set(vocabulary)) != len(vocabulary):
            raise ValueError("vocabulary contains duplicates")
        self.vocabulary = vocabulary
        self._index = {w: i for i, w in enumerate(vocabulary)}

    @classmethod
    def build(cls, texts: Iterable[str], extra_words: Iterable[str] = ("yes", "no"),
              min_count: int = 1, max_size: int | None = None) -> "Tokenizer":
        counts = Counter()
        for text in texts:
            counts.update(split_words(text))
        extra = [w for w in extra_words if w not in SPECIALS]
        words = sorted((w for w, c in counts.items() if c >= min_count and w not in SPECIALS),
                       key=lambda w: (-counts[w], w))
        if max_size is not None:
            words = words[: max(0, max_size - len(SPECIALS) - len(extra))]
        vocab = list(SPECIALS) + [w for w in extra if w not in words] + words
        seen = set()
        vocab = [w for w in vocab if not (w in seen or seen.add(w))]
        return cls(vocab)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    pad_id = property(lambda self: 0)
    unk_id = property(lambda self: 1)
    cls_id = property(lambda self: 2)
    mask_id = property(lambda self: 3)
    sep_id = property(lambda self: 4)

    def token_to_id(self, word: str) -> int:
        return self._index.get(word, self.unk_id)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def encode(self, text: str) -> list[int]:
        return [self._index.get(w, 1) for w in split_words(text)]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocabulary[i] for i in ids)

    def __len__(self):
        return self.vocab_size

    def __eq__(self, other):
        return isinstance(other, Tokenizer) and self.vocabulary == other.vocabulary
