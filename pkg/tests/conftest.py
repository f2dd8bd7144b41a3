from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from bugtriage.preprocess import TokenizerConfig, Vocabulary, build_vocabulary, vectorize

FIXTURES = Path(__file__).parent / "fixtures"
BUNDLED_CORPUS = Path(__file__).parents[1] / "src" / "bugtriage" / "data" / "fixture_corpus.jsonl"

_acceptance_results = []


def record_acceptance(criterion: str, passed: bool, detail: str = "") -> None:
    _acceptance_results.append((criterion, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in _acceptance_results:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  {criterion}  {detail}".rstrip())


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def bundled_corpus():
    return BUNDLED_CORPUS


def words_dataset(docs, labels, vocab=None, developers=None):
    """Dataset from whitespace-separated docs, no stoplist, min length 1."""
    tok = TokenizerConfig(frozenset(), 1)
    bags = [tok(d) for d in docs]
    vocab = vocab or build_vocabulary(bags, 1)
    return vectorize(list(zip(bags, labels)), vocab, developers=developers, tokenizer=tok)


@pytest.fixture
def five_word():
    """dev A: "crash ui", "crash editor"; dev B: "network timeout"."""
    return words_dataset(["crash ui", "crash editor", "network timeout"], ["A", "A", "B"])


def random_dataset(rng, n_devs, n_reports, n_words, max_count=3, every_dev=True):
    labels = np.arange(n_reports) % n_devs if every_dev else rng.integers(n_devs, size=n_reports)
    labels = labels[rng.permutation(n_reports)]
    words = [f"w{chr(97 + k)}" for k in range(n_words)]
    bags = []
    for _ in range(n_reports):
        counts = rng.integers(0, max_count + 1, size=n_words)
        if counts.sum() == 0:
            counts[rng.integers(n_words)] = 1
        bags.append(Counter({w: int(c) for w, c in zip(words, counts) if c}))
    tok = TokenizerConfig(frozenset(), 1)
    return vectorize(
        [(b, f"d{j}") for b, j in zip(bags, labels)],
        Vocabulary(tuple(words)),
        developers=[f"d{j}" for j in range(n_devs)],
        tokenizer=tok,
    )


def mixture_problem(seed, n_labeled=50, n_unlabeled=1000, n_test=500, **kwargs):
    """(labeled, unlabeled, test, unlabeled_truth) datasets drawn from a random 5-class mixture."""
    from bugtriage.semisupervised import _matrix_dataset
    from bugtriage.synthetic import make_semisupervised_problem

    _, (Xl, yl), (Xu, yu), (Xt, yt) = make_semisupervised_problem(
        seed, n_labeled=n_labeled, n_unlabeled=n_unlabeled, n_test=n_test, **kwargs)
    k = 5 if "n_classes" not in kwargs else kwargs["n_classes"]
    labeled = _matrix_dataset(Xl, yl, k, np.arange(n_labeled))
    unlabeled = _matrix_dataset(Xu, np.full(n_unlabeled, -1), k, n_labeled + np.arange(n_unlabeled))
    test = _matrix_dataset(Xt, yt, k, n_labeled + n_unlabeled + np.arange(n_test))
    return labeled, unlabeled, test, yu
