import pytest
import torch

from codeprompt.backbone import EncoderConfig, MiniBackbone
from codeprompt.corpus import NEGATIVE, POSITIVE, TaskExample
from codeprompt.dialects import DialectSpec, clone_examples, generate_dialect_corpus
from codeprompt.tokenizer import Tokenizer

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_dialect_corpus(DialectSpec(program_count=80, grammar_seed=3, family_count=8))


@pytest.fixture(scope="session")
def tiny_tokenizer(tiny_corpus):
    return Tokenizer.build([s.text for s in tiny_corpus.corpus_a + tiny_corpus.corpus_b])


@pytest.fixture
def tiny_backbone(tiny_tokenizer):
    cfg = EncoderConfig(vocab_size=tiny_tokenizer.vocab_size, hidden_dim=16, num_heads=2, num_layers=1,
                        max_sequence_length=128, seed=0)
    return MiniBackbone(tiny_tokenizer, cfg)


@pytest.fixture(scope="session")
def tiny_examples(tiny_corpus):
    train = clone_examples(tiny_corpus.corpus_a, tiny_corpus.clone_pairs_a[:12], seed=1)
    val = clone_examples(tiny_corpus.corpus_a, tiny_corpus.clone_pairs_a[12:16], seed=2)
    test = clone_examples(tiny_corpus.corpus_b, tiny_corpus.clone_pairs_b[30:40], seed=3)
    return train, val, test


def pair_example(a, b, label, language="dialectA"):
    return TaskExample(task="clone_detection", text_a=a, text_b=b, label=label, language=language)


__all__ = ["pair_example", "POSITIVE", "NEGATIVE"]


def pytest_terminal_summary(terminalreporter):
    import sys
    results = [line for name, mod in list(sys.modules.items()) if name.endswith("test_acceptance")
               for line in getattr(mod, "RESULTS", [])]
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
