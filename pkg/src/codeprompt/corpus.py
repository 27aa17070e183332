"""Dataset records, loaders and the preprocessing rules for the three pair tasks."""

from __future__ import annotations

import itertools
import json
import logging
import random
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

logger = logging.getLogger(__name__)

TASKS = ("clone_detection", "code_search", "method_name_prediction")
ORIGINS = ("natural", "recombined_negative", "synthetic")
POSITIVE, NEGATIVE = 1, 0

REQUIRED_FIELDS = ("task", "text_a", "text_b", "label", "language")


class SchemaError(ValueError):
    """A dataset record does not match the expected layout."""


class ConfigurationError(ValueError):
    pass


@dataclass
class CodeSnippet:
    id: str
    language: str
    text: str
    token_count: int | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"snippet {self.id!r} has empty text")


@dataclass
class TaskExample:
    task: str
    text_a: str
    text_b: str
    label: int
    language: str
    origin: str = "natural"
    id: str = ""

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.text_a or not self.text_b:
            raise ValueError("text_a and text_b must be non-empty")
        if self.label not in (POSITIVE, NEGATIVE):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")

    @property
    def pair(self) -> tuple[str, str]:
        return (self.text_a, self.text_b)


@dataclass
class DatasetSplit:
    train: list[TaskExample]
    validation: list[TaskExample]
    test: list[TaskExample]
    source_language: str
    target_language: str

    def __post_init__(self):
        seen: dict[str, str] = {}
        for name in ("train", "validation", "test"):
            for ex in getattr(self, name):
                if not ex.id:
                    continue
                if seen.get(ex.id, name) != name:
                    raise ValueError(f"example id {ex.id!r} appears in {seen[ex.id]} and {name}")
                seen[ex.id] = name


def label_counts(examples: Iterable[TaskExample]) -> dict[int, int]:
    counts = {POSITIVE: 0, NEGATIVE: 0}
    for ex in examples:
        counts[ex.label] += 1
    return counts


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def _parse_label(value, lineno):
    if value in (0, 1) and not isinstance(value, float):
        return int(value)
    if value in ("0", "1"):
        return int(value)
    if value in ("positive", "negative"):
        return POSITIVE if value == "positive" else NEGATIVE
    raise SchemaError(f"line {lineno}: label must be 0/1, got {value!r}")


def load_examples(path, format: str = "jsonl") -> list[TaskExample]:
    """Read a line-delimited dataset file.

    Raises ``FileNotFoundError`` for a missing file and :class:`SchemaError`
    (naming the 1-based line number) for any malformed record.
    """
    if format != "jsonl":
        raise ConfigurationError(f"unsupported dataset format {format!r}")
    path = Path(path)
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise SchemaError(f"line {lineno}: record is not an object")
            missing = [k for k in REQUIRED_FIELDS if k not in record]
            if missing:
                raise SchemaError(f"line {lineno}: missing field(s) {', '.join(missing)}")
            try:
                examples.append(TaskExample(
                    task=record["task"],
                    text_a=record["text_a"],
                    text_b=record["text_b"],
                    label=_parse_label(record["label"], lineno),
                    language=record["language"],
                    origin=record.get("origin", "natural"),
                    id=str(record.get("id", "")),
                ))
            except SchemaError:
                raise
            except ValueError as exc:
                raise SchemaError(f"line {lineno}: {exc}") from None
    return examples


def save_examples(examples: Iterable[TaskExample], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for ex in examples:
            record = {
                "id": ex.id,
                "task": ex.task,
                "language": ex.language,
                "text_a": ex.text_a,
                "text_b": ex.text_b,
                "label": int(ex.label),
                "origin": ex.origin,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# preprocessing rules
# ---------------------------------------------------------------------------

_COMMENT_RE = re.compile(
    r"""("(?:\\.|[^"\\\n])*"|'(?:\\.|[^'\\\n])*')"""  # string literals are kept
    r"|(/\*.*?\*/)"
    r"|(//[^\n]*)"
    r"|(\#[^\n]*)",
    re.DOTALL,
)


def strip_comments(text: str) -> str:
    """Remove ``//``, ``/* */`` and ``#`` comments with a single regex pass.

    String literals are left alone. Not a parser: a ``#`` that is part of
    the language syntax (C preprocessor lines, for instance) is removed too.
    """
    def repl(m):
        if m.group(1):
            return m.group(1)
        # keep line structure of block comments
        return "\n" * m.group(0).count("\n")

    stripped = _COMMENT_RE.sub(repl, text)
    lines = [ln.rstrip() for ln in stripped.splitlines()]
    return "\n".join(ln for ln in lines if ln.strip())


def _code_segments(ex: TaskExample) -> tuple[str, ...]:
    if ex.task == "clone_detection":
        return (ex.text_a, ex.text_b)
    return (ex.text_a,)


def filter_by_length(examples: Sequence[TaskExample], tokenizer, min_tokens: int = 125,
                     max_tokens: int = 250) -> list[TaskExample]:
    """Keep examples whose code segments have between ``min_tokens`` and
    ``max_tokens`` tokens (both inclusive).

    Natural-language queries and method names are not length-checked.
    ``tokenizer`` is anything with an ``encode(text) -> list`` method, or a
    plain callable returning a token count.
    """
    if min_tokens > max_tokens:
        raise ConfigurationError(f"min_tokens ({min_tokens}) > max_tokens ({max_tokens})")
    count = _token_counter(tokenizer)
    return [ex for ex in examples
            if all(min_tokens <= count(seg) <= max_tokens for seg in _code_segments(ex))]


def _token_counter(tokenizer) -> Callable[[str], int]:
    if hasattr(tokenizer, "encode"):
        return lambda text: len(tokenizer.encode(text))
    return tokenizer


def balance_binary(examples: Sequence[TaskExample], seed: int, max_attempts: int = 100,
                   exclude: Callable[[str, str], bool] | None = None) -> list[TaskExample]:
    """Return a 1:1 positive/negative dataset.

    Surplus examples of the majority label are dropped by seeded sampling.
    Missing negatives are synthesized by pairing ``text_a`` of one positive with
    ``text_b`` of a different positive. A recombined pair never reproduces a
    positive pair nor repeats an earlier negative; each slot is resampled up to
    ``max_attempts`` times before giving up. ``exclude(text_a, text_b)`` can
    veto further candidates, e.g. pairs known to be related.
    """
    positives = [ex for ex in examples if ex.label == POSITIVE]
    negatives = [ex for ex in examples if ex.label == NEGATIVE]
    if not positives:
        raise ValueError("cannot balance a dataset without positive examples")
    rng = random.Random(seed)

    if len(negatives) >= len(positives):
        negatives = _subsample(negatives, len(positives), rng)
        return _keep_input_order(examples, positives + negatives)
    if len(positives) < 2:
        raise ValueError("need at least two positives to recombine negatives")

    taken = {ex.pair for ex in positives} | {ex.pair for ex in negatives}
    template = positives[0]
    new = []
    for k in range(len(positives) - len(negatives)):
        for _ in range(max_attempts):
            i, j = rng.sample(range(len(positives)), 2)
            pair = (positives[i].text_a, positives[j].text_b)
            if pair not in taken and not (exclude and exclude(*pair)):
                break
        else:
            raise RuntimeError(f"could not draw a fresh negative pair after {max_attempts} attempts")
        taken.add(pair)
        src = positives[i]
        new.append(TaskExample(
            task=src.task, text_a=pair[0], text_b=pair[1], label=NEGATIVE,
            language=src.language or template.language, origin="recombined_negative",
            id=f"neg-{seed}-{k}",
        ))
    return _keep_input_order(examples, positives + negatives) + new


def _subsample(items, n, rng):
    idx = sorted(rng.sample(range(len(items)), n))
    return [items[i] for i in idx]


def _keep_input_order(original, kept):
    keep = {id(ex) for ex in kept}
    return [ex for ex in original if id(ex) in keep]


def build_clone_pairs(submissions: Sequence[tuple[str, CodeSnippet]], max_pairs_per_problem: int,
                      seed: int) -> list[TaskExample]:
    """Positive clone pairs from submissions that solve the same problem."""
    by_problem: dict[str, list[CodeSnippet]] = {}
    for problem_id, snippet in submissions:
        by_problem.setdefault(problem_id, []).append(snippet)
    rng = random.Random(seed)
    out = []
    for problem_id in sorted(by_problem):
        snippets = by_problem[problem_id]
        pairs = list(itertools.combinations(range(len(snippets)), 2))
        if len(pairs) > max_pairs_per_problem:
            pairs = sorted(rng.sample(pairs, max_pairs_per_problem))
        for i, j in pairs:
            a, b = snippets[i], snippets[j]
            out.append(TaskExample(
                task="clone_detection", text_a=a.text, text_b=b.text, label=POSITIVE,
                language=a.language, id=f"{problem_id}:{a.id}:{b.id}",
            ))
    return out


def build_nlpl_pairs(problems: Sequence[tuple[str, str]],
                     submissions: Sequence[tuple[str, CodeSnippet]]) -> list[TaskExample]:
    """Code-search positives: (code, problem description) for every submission."""
    descriptions = {}
    for problem_id, description in problems:
        if not description:
            raise ValueError(f"problem {problem_id!r} has an empty description")
        descriptions[problem_id] = description
    out = []
    for problem_id, snippet in submissions:
        if problem_id not in descriptions:
            continue
        out.append(TaskExample(
            task="code_search", text_a=snippet.text, text_b=descriptions[problem_id],
            label=POSITIVE, language=snippet.language, id=f"{problem_id}:{snippet.id}",
        ))
    return out


_NAME_PATTERNS = (
    # func/function/def/fn NAME(
    re.compile(r"\b(?:func|function|def|fn|fun)\s+([A-Za-z_]\w*)\s*\("),
    # C-like / Java-like: type NAME(
    re.compile(r"\b[A-Za-z_][\w<>\[\]]*\s+([A-Za-z_]\w*)\s*\([^;{}]*\)\s*(?:\w+\s*)*\{"),
)


def extract_method_name(text: str) -> str | None:
    for pattern in _NAME_PATTERNS:
        m = pattern.search(text)
        if m:
            return m.group(1)
    return None


def strip_name(text: str, name: str) -> str:
    return re.sub(rf"\b{re.escape(name)}\b\s*", "", text)


def build_method_name_pairs(functions: Sequence[CodeSnippet], negatives_per_positive: int = 1,
                            seed: int = 0) -> list[TaskExample]:
    """``<snippet, name>`` pairs for method-name prediction.

    The positive pairs the name-stripped body with its own name; negatives pair
    the same body with names drawn from other functions. Functions whose name
    cannot be located are skipped and counted in a logged warning.
    """
    named = []
    skipped = 0
    for fn in functions:
        name = extract_method_name(fn.text)
        if name is None:
            skipped += 1
            continue
        body = strip_name(fn.text, name).strip()
        if not body or re.search(rf"\b{re.escape(name)}\b", body):
            skipped += 1
            continue
        named.append((fn, name, body))
    if skipped:
        logger.warning("build_method_name_pairs: skipped %d function(s) without a removable name", skipped)

    rng = random.Random(seed)
    all_names = sorted({name for _, name, _ in named})
    out = []
    for fn, name, body in named:
        out.append(TaskExample(task="method_name_prediction", text_a=body, text_b=name,
                               label=POSITIVE, language=fn.language, id=f"{fn.id}:pos"))
        others = [n for n in all_names if n != name]
        k = min(negatives_per_positive, len(others))
        for r, other in enumerate(rng.sample(others, k)):
            out.append(TaskExample(task="method_name_prediction", text_a=body, text_b=other,
                                   label=NEGATIVE, language=fn.language, id=f"{fn.id}:neg{r}"))
    return out


def split_examples(examples: Sequence[TaskExample], fractions=(0.8, 0.1, 0.1), seed: int = 0,
                   source_language: str = "", target_language: str = "") -> DatasetSplit:
    """Shuffle and cut into train/validation/test, keeping each part 1:1."""
    rng = random.Random(seed)
    parts = {POSITIVE: [], NEGATIVE: []}
    for ex in examples:
        parts[ex.label].append(ex)
    n = min(len(parts[POSITIVE]), len(parts[NEGATIVE]))
    cuts = [int(round(n * f)) for f in fractions]
    cuts[-1] = n - sum(cuts[:-1])
    out = [[], [], []]
    for label in (POSITIVE, NEGATIVE):
        items = parts[label][:]
        rng.shuffle(items)
        start = 0
        for k, size in enumerate(cuts):
            out[k].extend(items[start:start + size])
            start += size
    for part in out:
        rng.shuffle(part)
    lang = source_language or (examples[0].language if examples else "")
    return DatasetSplit(*out, source_language=lang, target_language=target_language or lang)


def to_dict(ex: TaskExample) -> dict:
    return asdict(ex)
