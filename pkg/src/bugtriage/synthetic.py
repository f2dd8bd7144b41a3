"""Synthetic multinomial-mixture corpora with known generating parameters."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import BugReport, RawCorpus
from .preprocess import DEFAULT_STOPLIST

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def pseudo_words(n: int) -> list[str]:
    """``n`` distinct pronounceable alphabetic words, none of them stopwords."""
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    words = []
    for a, b in itertools.product(syllables, repeat=2):
        w = a + b
        if w not in DEFAULT_STOPLIST:
            words.append(w)
        if len(words) == n:
            return words
    raise ValueError(f"cannot make {n} distinct words")


@dataclass(frozen=True)
class MixtureModel:
    """Class priors and per-class word distributions, shape (n_classes, vocab_size)."""

    class_prior: np.ndarray
    word_dist: np.ndarray
    mean_length: float

    @classmethod
    def random(cls, n_classes=5, vocab_size=200, mean_length=30.0, specificity=0.3,
               concentration=0.1, seed=0) -> "MixtureModel":
        """Each class mixes a shared background distribution (weight
        ``1 - specificity``) with a sparse class-specific one drawn from a
        symmetric Dirichlet(``concentration``)."""
        rng = np.random.default_rng(seed)
        background = rng.dirichlet(np.ones(vocab_size))
        specific = rng.dirichlet(np.full(vocab_size, concentration), size=n_classes)
        word_dist = (1 - specificity) * background + specificity * specific
        word_dist /= word_dist.sum(axis=1, keepdims=True)
        return cls(np.full(n_classes, 1.0 / n_classes), word_dist, float(mean_length))

    @property
    def n_classes(self) -> int:
        return self.word_dist.shape[0]

    def sample(self, n_docs: int, rng, labels=None):
        """Draw ``(X, y)``; ``X`` is a CSR count matrix."""
        if labels is None:
            labels = rng.choice(self.n_classes, size=n_docs, p=self.class_prior)
        labels = np.asarray(labels)
        lengths = np.maximum(1, rng.poisson(self.mean_length, size=labels.size))
        rows = [rng.multinomial(lengths[i], self.word_dist[labels[i]]) for i in range(labels.size)]
        X = sp.csr_matrix(np.vstack(rows) if rows else np.zeros((0, self.word_dist.shape[1])),
                          dtype=np.int64)
        return X, labels


def balanced_labels(n_classes: int, n: int, rng) -> np.ndarray:
    labels = np.arange(n) % n_classes
    return labels[rng.permutation(n)]


def make_semisupervised_problem(seed=0, n_classes=5, vocab_size=200, mean_length=30.0,
                                n_labeled=50, n_unlabeled=1000, n_test=500, **mixture_kw):
    """Labeled (class-balanced), unlabeled and test draws from one random mixture.

    Returns ``(mixture, (X_l, y_l), (X_u, y_u), (X_t, y_t))``.
    """
    rng = np.random.default_rng(seed)
    mixture = MixtureModel.random(n_classes, vocab_size, mean_length,
                                  seed=int(rng.integers(2**31)), **mixture_kw)
    lab = mixture.sample(n_labeled, rng, balanced_labels(n_classes, n_labeled, rng))
    unl = mixture.sample(n_unlabeled, rng)
    test = mixture.sample(n_test, rng)
    return mixture, lab, unl, test


def make_bug_corpus(n_developers=5, reports_per_developer=40, vocab_size=200, mean_length=30.0,
                    n_unresolved=10, n_unlabeled=0, seed=0, **mixture_kw) -> RawCorpus:
    """A bug-report corpus whose text is drawn from a known mixture.

    Reports are interleaved in random submission order. ``n_unresolved``
    extra reports have a lifecycle state the default filter removes and
    ``n_unlabeled`` extra resolved reports carry no developer.
    """
    rng = np.random.default_rng(seed)
    mixture = MixtureModel.random(n_developers, vocab_size, mean_length,
                                  seed=int(rng.integers(2**31)), **mixture_kw)
    words = np.array(pseudo_words(vocab_size), dtype=object)
    labels = np.repeat(np.arange(n_developers), reports_per_developer)
    labels = np.concatenate([labels, rng.choice(n_developers, size=n_unresolved + n_unlabeled)])
    n_labeled = labels.size - n_unlabeled
    order = rng.permutation(labels.size)
    labels = labels[order]
    hidden = order >= n_labeled
    X, _ = mixture.sample(labels.size, rng, labels)
    candidates = np.flatnonzero(~hidden)
    unresolved = set(rng.choice(candidates, size=n_unresolved, replace=False).tolist())
    reports = []
    for i in range(labels.size):
        row = X.getrow(i)
        tokens = np.repeat(words[row.indices], row.data)
        tokens = tokens[rng.permutation(tokens.size)]
        cut = min(len(tokens), max(1, len(tokens) // 5))
        status, resolution = ("NEW", "") if i in unresolved else ("RESOLVED", "FIXED")
        reports.append(BugReport(
            id=1000 + i,
            summary=" ".join(tokens[:cut]),
            description=" ".join(tokens[cut:]),
            developer=None if hidden[i] else f"dev{labels[i] + 1:02d}@example.org",
            status=status,
            resolution=resolution,
            submit_order=i,
        ))
    return RawCorpus(tuple(reports), source_note=f"synthetic:seed={seed}")
