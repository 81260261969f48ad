import pytest

from supportgen.cognition import TemplateStateProvider

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collector for one status line per acceptance criterion."""
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
from supportgen.corpus import build_retrieval_base
from supportgen.model import ModelConfig, SupportModel
from supportgen.retrieval import HashedBowEmbedder, RetrievalIndex
from supportgen.synth import make_synthetic_corpus
from supportgen.text import build_vocab
from supportgen.training import build_examples


@pytest.fixture(scope="session")
def fixture_corpus():
    """20 dialogues, 3 supporter turns each."""
    return make_synthetic_corpus(20, 3, seed=0)


@pytest.fixture(scope="session")
def small_corpus():
    return make_synthetic_corpus(8, 3, seed=1)


@pytest.fixture(scope="session")
def small_setup(small_corpus):
    """Vocabulary, retrieval index, provider, and precomputed examples for a tiny model."""
    vocab = build_vocab(small_corpus)
    base = build_retrieval_base(small_corpus)
    index = RetrievalIndex.build(base, HashedBowEmbedder(64))
    provider = TemplateStateProvider()
    config = ModelConfig(
        vocab_size=len(vocab), d=8, heads=2, enc_layers=1, dec_layers=1,
        ffn_mult=1, cog_state_cap=4,
    )
    examples = build_examples(small_corpus, index, provider, vocab, config, exclude_self=True)
    return {
        "corpus": small_corpus,
        "vocab": vocab,
        "base": base,
        "index": index,
        "provider": provider,
        "config": config,
        "examples": examples,
    }


@pytest.fixture()
def tiny_model(small_setup):
    import torch

    torch.manual_seed(7)
    return SupportModel(small_setup["config"], small_setup["vocab"])
