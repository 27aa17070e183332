import random
import time

import pytest
import torch

from codeprompt.prompting import (
    PromptTable,
    PromptTemplate,
    allocate_positions,
    assemble_batch,
    assemble_embeddings,
    render,
    render_ids,
    truncation_cuts,
)
from codeprompt.tokenizer import Tokenizer

TOK = Tokenizer.build(["a b c d e f g h i j k"])
CLS, MASK = TOK.cls_id, TOK.mask_id


def _ids(n, start=10):
    return [start + (i % 5) for i in range(n)]


def test_m0_layout_is_cls_x1_x2_mask():
    a, b = _ids(3), _ids(2, 20)
    seq = render_ids(PromptTemplate(prompt_count=0), a, b, TOK, 64)
    assert seq.items == (CLS, *a, *b, MASK)
    assert seq.mask_index == len(seq) - 1
    assert seq.prompt_slots == []


def test_m6_uniform_layout_has_gaps_two_two_two():
    a, b = _ids(3), _ids(2, 20)
    seq = render_ids(PromptTemplate(prompt_count=6), a, b, TOK, 64)
    assert seq.items == (CLS, -1, -2, *a, -3, -4, *b, -5, -6, MASK)


def test_uniform_remainder_goes_front():
    assert allocate_positions("uniform", 10) == (4, 3, 3)
    assert allocate_positions("uniform", 11) == (4, 4, 3)
    assert allocate_positions("uniform", 6) == (2, 2, 2)


@pytest.mark.parametrize("placement,expected", [("head", (10, 0, 0)), ("middle", (0, 10, 0)), ("tail", (0, 0, 10))])
def test_concentrated_placements(placement, expected):
    assert allocate_positions(placement, 10) == expected


def test_tail_placement_puts_prompts_after_mask():
    seq = render_ids(PromptTemplate(prompt_count=3, placement="tail"), [10], [11], TOK, 32)
    assert seq.items == (CLS, 10, 11, MASK, -1, -2, -3)
    assert seq.mask_index == 3


def test_head_mask_position_and_separator():
    t = PromptTemplate(prompt_count=0, mask_position="head", separator="[SEP]")
    seq = render_ids(t, [10], [11], TOK, 32)
    assert seq.items == (CLS, MASK, 10, TOK.sep_id, 11)
    assert seq.mask_index == 1


def test_truncation_is_proportional():
    assert truncation_cuts(200, 100, 270) == (20, 10)
    assert truncation_cuts(5, 5, 20) == (0, 0)


def test_truncation_keeps_prompts_and_mask():
    t = PromptTemplate(prompt_count=10)
    seq = render_ids(t, _ids(200), _ids(100), TOK, 256)
    assert len(seq) == 256
    assert seq.prompt_slots == list(range(1, 11))
    (a0, a1), (b0, b1) = seq.segment_spans
    # 12 fixed positions leave 244; excess 56 splits round(56 * 2/3) = 37 and 19
    assert (a1 - a0, b1 - b0) == (200 - 37, 100 - 19)


def test_budget_too_small_raises():
    with pytest.raises(ValueError):
        render_ids(PromptTemplate(prompt_count=10), [10], [11], TOK, 12)


def test_template_validation_and_dict_roundtrip():
    t = PromptTemplate(prompt_count=4, placement="middle")
    assert PromptTemplate.from_dict(t.to_dict()) == t
    with pytest.raises(ValueError):
        PromptTemplate(placement="sideways")
    with pytest.raises(ValueError):
        PromptTemplate(prompt_count=-1)


def test_render_accepts_pairs_and_examples():
    seq = render(PromptTemplate(prompt_count=0), ("a b", "c"), TOK, 16)
    assert TOK.decode(seq.items) == "[CLS] a b c [MASK]"


def test_property_suite_over_1000_cases():
    rng = random.Random(0)
    started = time.perf_counter()
    for _ in range(1000):
        m = rng.randint(0, 20)
        placement = rng.choice(["head", "middle", "uniform", "tail"])
        la, lb = rng.randint(1, 300), rng.randint(1, 300)
        budget = rng.randint(m + 4, 256)
        seq = render_ids(PromptTemplate(prompt_count=m, placement=placement), _ids(la), _ids(lb), TOK, budget)
        assert seq.items.count(MASK) == 1
        assert seq.items[seq.mask_index] == MASK
        assert len(seq) == 1 + m + 1 + min(la + lb, budget - m - 2)
        assert len(seq) <= budget
        assert sorted(seq.prompt_slots) == list(range(1, m + 1))
        (a0, a1), (b0, b1) = seq.segment_spans
        assert a1 > a0 and b1 > b0
        gaps = allocate_positions(placement, m, la, lb)
        if placement == "uniform":
            assert max(gaps) - min(gaps) <= 1
        assert sum(gaps) == m
    assert time.perf_counter() - started < 10


def test_assemble_splices_prompt_vectors(tiny_backbone):
    tok = tiny_backbone.tokenizer
    prompts = PromptTable(2, 16, seed=1)
    seq = render_ids(PromptTemplate(prompt_count=2, placement="head"), [10, 11], [12], tok, 32)
    emb = assemble_embeddings(seq, tiny_backbone, prompts)
    assert torch.equal(emb[1], prompts.vectors[0]) and torch.equal(emb[2], prompts.vectors[1])
    assert torch.equal(emb[0], tiny_backbone.embed_ids([tok.cls_id])[0])
    short = render_ids(PromptTemplate(prompt_count=2, placement="head"), [10], [12], tok, 32)
    batch, attn, mask_index = assemble_batch([seq, short], tiny_backbone, prompts)
    assert batch.shape == (2, 7, 16)
    assert attn.sum(dim=1).tolist() == [7, 6]
    assert mask_index.tolist() == [6, 5]
    with pytest.raises(IndexError):
        assemble_batch([seq], tiny_backbone, PromptTable(1, 16))


def test_prompt_table_init(tiny_backbone):
    assert torch.equal(PromptTable(3, 16, seed=4).vectors, PromptTable(3, 16, seed=4).vectors)
    table = PromptTable.from_words(["yes", "no"], tiny_backbone)
    assert torch.equal(table.vectors, tiny_backbone.embed_ids(
        [tiny_backbone.tokenizer.token_to_id(w) for w in ("yes", "no")]))
    with pytest.raises(ValueError):
        PromptTable(3, 16, init_embeddings=torch.zeros(2, 16))
