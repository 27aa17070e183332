import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from codeprompt.corpus import (
    CodeSnippet,
    ConfigurationError,
    DatasetSplit,
    NEGATIVE,
    POSITIVE,
    SchemaError,
    TaskExample,
    balance_binary,
    build_clone_pairs,
    build_method_name_pairs,
    build_nlpl_pairs,
    filter_by_length,
    label_counts,
    load_examples,
    save_examples,
    split_examples,
    strip_comments,
)
from codeprompt.tokenizer import Tokenizer


def _record(**kw):
    rec = {"task": "clone_detection", "text_a": "a b", "text_b": "c d", "label": 1, "language": "java"}
    rec.update(kw)
    return rec


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def _pos(i, task="clone_detection"):
    return TaskExample(task=task, text_a=f"code {i}", text_b=f"other {i}", label=POSITIVE,
                       language="java", id=f"p{i}")


def _neg(i):
    return TaskExample(task="clone_detection", text_a=f"x {i}", text_b=f"y {i}", label=NEGATIVE,
                       language="java", id=f"n{i}")


class TestLoad:
    def test_three_records_in_order(self, tmp_path):
        path = _write(tmp_path / "d.jsonl", [_record(text_a=f"a{i}") for i in range(3)])
        got = load_examples(path)
        assert [ex.text_a for ex in got] == ["a0", "a1", "a2"]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_examples(path) == []

    def test_missing_label_names_line(self, tmp_path):
        bad = _record()
        del bad["label"]
        path = _write(tmp_path / "d.jsonl", [_record(), bad, _record()])
        with pytest.raises(SchemaError, match="line 2"):
            load_examples(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_examples(tmp_path / "nope.jsonl")

    def test_bad_label_value(self, tmp_path):
        path = _write(tmp_path / "d.jsonl", [_record(label=3)])
        with pytest.raises(SchemaError, match="line 1"):
            load_examples(path)

    def test_roundtrip(self, tmp_path):
        examples = [_pos(i) for i in range(3)] + [_neg(0)]
        save_examples(examples, tmp_path / "out.jsonl")
        line = json.loads((tmp_path / "out.jsonl").read_text().splitlines()[0])
        assert set(line) == {"id", "task", "language", "text_a", "text_b", "label", "origin"}
        assert line["label"] == 1
        assert load_examples(tmp_path / "out.jsonl") == examples


class TestFilterByLength:
    @staticmethod
    def _ex(n_a, n_b=10, task="clone_detection"):
        return TaskExample(task=task, text_a=" ".join(["t"] * n_a), text_b=" ".join(["u"] * n_b),
                           label=POSITIVE, language="java")

    @pytest.mark.parametrize("n, kept", [(124, False), (125, True), (200, True), (250, True),
                                         (251, False), (300, False)])
    def test_boundaries(self, n, kept):
        tok = Tokenizer.build(["t u"])
        ex = self._ex(n, 150)
        assert (filter_by_length([ex], tok) == [ex]) is kept

    def test_query_side_exempt_for_code_search(self):
        tok = Tokenizer.build(["t u"])
        ex = self._ex(150, 3, task="code_search")
        assert filter_by_length([ex], tok) == [ex]

    def test_clone_checks_both_sides(self):
        tok = Tokenizer.build(["t u"])
        assert filter_by_length([self._ex(150, 3)], tok) == []

    def test_bad_bounds(self):
        with pytest.raises(ConfigurationError):
            filter_by_length([], len, min_tokens=10, max_tokens=5)

    def test_idempotent(self):
        tok = Tokenizer.build(["t u"])
        exs = [self._ex(n, 130) for n in (100, 125, 180, 250, 260)]
        once = filter_by_length(exs, tok)
        assert filter_by_length(once, tok) == once
        assert [len(e.text_a.split()) for e in once] == [125, 180, 250]


class TestBalance:
    def test_recombines_when_no_negatives(self):
        out = balance_binary([_pos(i) for i in range(10)], seed=7)
        counts = label_counts(out)
        assert counts == {POSITIVE: 10, NEGATIVE: 10}
        assert all(ex.origin == "recombined_negative" for ex in out if ex.label == NEGATIVE)

    def test_already_balanced_unchanged(self):
        exs = [_pos(i) for i in range(5)] + [_neg(i) for i in range(5)]
        assert sorted(balance_binary(exs, seed=1), key=lambda e: e.id) == sorted(exs, key=lambda e: e.id)

    def test_deterministic(self):
        exs = [_pos(i) for i in range(10)]
        assert balance_binary(exs, seed=3) == balance_binary(exs, seed=3)

    def test_surplus_negatives_dropped(self):
        exs = [_pos(i) for i in range(3)] + [_neg(i) for i in range(8)]
        assert label_counts(balance_binary(exs, seed=0)) == {POSITIVE: 3, NEGATIVE: 3}

    def test_needs_positives(self):
        with pytest.raises(ValueError):
            balance_binary([_neg(0)], seed=0)

    def test_negatives_built_from_distinct_positives(self):
        pos = [_pos(i) for i in range(6)]
        for ex in balance_binary(pos, seed=11):
            if ex.label == NEGATIVE:
                assert ex.text_a.split()[1] != ex.text_b.split()[1]

    def test_collision_exhaustion_raises(self):
        # with two positives sharing text_b there is only one distinct recombination
        a = TaskExample("clone_detection", "a", "same", POSITIVE, "java")
        b = TaskExample("clone_detection", "b", "same", POSITIVE, "java")
        with pytest.raises(RuntimeError):
            balance_binary([a, b], seed=0)

    @settings(max_examples=50, deadline=None)
    @given(n_pos=st.integers(2, 40), n_neg=st.integers(0, 40), seed=st.integers(0, 10_000))
    def test_exact_one_to_one(self, n_pos, n_neg, seed):
        exs = [_pos(i) for i in range(n_pos)] + [_neg(i) for i in range(n_neg)]
        out = balance_binary(exs, seed=seed)
        counts = label_counts(out)
        assert counts[POSITIVE] == counts[NEGATIVE] == n_pos
        positives = {ex.pair for ex in out if ex.label == POSITIVE}
        assert not positives & {ex.pair for ex in out if ex.label == NEGATIVE}


class TestPairBuilders:
    @staticmethod
    def _subs(spec):
        return [(p, CodeSnippet(id=s, language="java", text=f"code of {s}")) for p, names in spec for s in names]

    def test_clone_pairs_enumerate_same_problem(self):
        subs = self._subs([("p1", "abc")])
        got = {(ex.id.split(":")[1], ex.id.split(":")[2]) for ex in build_clone_pairs(subs, 10, seed=0)}
        oracle = set(itertools.combinations("abc", 2))
        assert got == oracle

    def test_singleton_problem(self):
        assert build_clone_pairs(self._subs([("p1", "a")]), 10, seed=0) == []

    def test_cap_per_problem(self):
        out = build_clone_pairs(self._subs([("p1", "ab"), ("p2", "cd")]), 1, seed=0)
        assert len(out) == 2

    def test_cap_sampling_deterministic(self):
        subs = self._subs([("p1", "abcdef")])
        first = build_clone_pairs(subs, 4, seed=5)
        assert len(first) == 4
        assert first == build_clone_pairs(subs, 4, seed=5)

    def test_empty(self):
        assert build_clone_pairs([], 3, seed=0) == []

    def test_nlpl_pairs(self):
        subs = self._subs([("p1", "ab")])
        out = build_nlpl_pairs([("p1", "sum two numbers"), ("p2", "unused")], subs)
        assert len(out) == 2
        assert all(ex.text_b == "sum two numbers" and ex.task == "code_search" for ex in out)
        assert all(ex.text_a.startswith("code of") for ex in out)

    def test_nlpl_negatives_come_from_balance(self):
        subs = self._subs([("p1", "a"), ("p2", "b"), ("p3", "c")])
        pos = build_nlpl_pairs([("p1", "one"), ("p2", "two"), ("p3", "three")], subs)
        negs = [ex for ex in balance_binary(pos, seed=0) if ex.label == NEGATIVE]
        assert len(negs) == 3 and all(ex.origin == "recombined_negative" for ex in negs)

    def test_method_name_positive(self):
        fn = CodeSnippet("s1", "solidity", "function transfer(address to) { balance[to] += 1; }")
        out = build_method_name_pairs([fn], negatives_per_positive=1, seed=0)
        pos = [ex for ex in out if ex.label == POSITIVE]
        assert pos[0].text_b == "transfer"
        assert "transfer" not in pos[0].text_a

    def test_method_name_two_functions(self):
        fns = [CodeSnippet("s1", "go", "func alpha(x int) int { return x }"),
               CodeSnippet("s2", "go", "func beta(y int) int { return y * 2 }")]
        out = build_method_name_pairs(fns, negatives_per_positive=1, seed=0)
        negs = {(ex.id.split(":")[0], ex.text_b) for ex in out if ex.label == NEGATIVE}
        assert negs == {("s1", "beta"), ("s2", "alpha")}

    def test_method_name_skips_unnamed(self, caplog):
        fns = [CodeSnippet("s1", "go", "x = 1"), CodeSnippet("s2", "go", "func f(a) { return a }")]
        with caplog.at_level("WARNING"):
            out = build_method_name_pairs(fns, seed=0)
        assert "skipped 1" in caplog.text
        assert all(ex.id.startswith("s2") for ex in out)

    def test_recursive_name_removed_everywhere(self):
        fn = CodeSnippet("s1", "go", "func fact(n int) int { if n < 2 { return 1 }; return n * fact(n-1) }")
        (pos,) = [ex for ex in build_method_name_pairs([fn], seed=0) if ex.label == POSITIVE]
        assert "fact" not in pos.text_a


def test_strip_comments():
    src = 'int a = 1; // note\n/* block\n comment */ int b = 2; # hash\nstr s = "// not a comment";'
    out = strip_comments(src)
    assert "note" not in out and "block" not in out and "hash" not in out
    assert '"// not a comment"' in out and "int b = 2;" in out


def test_split_is_balanced_and_disjoint():
    exs = balance_binary([_pos(i) for i in range(50)], seed=0)
    split = split_examples(exs, seed=1)
    for part in (split.train, split.validation, split.test):
        c = label_counts(part)
        assert c[POSITIVE] == c[NEGATIVE]
    ids = [ex.id for part in (split.train, split.validation, split.test) for ex in part]
    assert len(ids) == len(set(ids))


def test_split_rejects_shared_ids():
    with pytest.raises(ValueError):
        DatasetSplit([_pos(1)], [_pos(1)], [], "java", "java")


def test_constant_classifier_scores_half_on_balanced():
    exs = balance_binary([_pos(i) for i in range(20)], seed=random.Random(0).randint(0, 99))
    assert sum(ex.label == NEGATIVE for ex in exs) / len(exs) == 0.5
