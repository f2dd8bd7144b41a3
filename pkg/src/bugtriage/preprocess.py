"""Tokenization, vocabulary pruning and sparse count vectors for bug reports."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyDatasetError, EmptyVocabularyError

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1
DEFAULT_MIN_TOKEN_LEN = 2
DEFAULT_MIN_REPORT_FREQ = 3
DEFAULT_STOPLIST = frozenset(ENGLISH_STOP_WORDS)

_LETTER_RUN = re.compile(r"[^\W\d_]+")


def load_stoplist(path) -> frozenset[str]:
    """One word per line; blank lines and ``#`` comments are ignored."""
    words = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip().lower()
            if line:
                words.add(line)
    return frozenset(words)


def tokenize(
    text: str,
    stoplist: Iterable[str] = (),
    min_token_len: int = DEFAULT_MIN_TOKEN_LEN,
) -> Counter:
    """Split ``text`` on every non-alphabetic character and count tokens.

    Tokens are lowercased and never stemmed. Stoplist members and tokens
    shorter than ``min_token_len`` are dropped.
    """
    stop = stoplist if isinstance(stoplist, (set, frozenset)) else frozenset(stoplist)
    bag = Counter()
    for match in _LETTER_RUN.finditer(text):
        token = match.group().lower()
        # lower() can introduce combining marks (e.g. "İ")
        if not token.isalpha() or len(token) < min_token_len or token in stop:
            continue
        bag[token] += 1
    return bag


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {w: i for i, w in enumerate(self.words)}
        if len(index) != len(self.words):
            raise ValueError("vocabulary words must be distinct")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index


def build_vocabulary(bags: Iterable[Counter], min_report_freq: int = DEFAULT_MIN_REPORT_FREQ) -> Vocabulary:
    """Words occurring in at least ``min_report_freq`` distinct reports, sorted."""
    if min_report_freq < 1:
        raise ValueError("min_report_freq must be >= 1")
    report_freq = Counter()
    for bag in bags:
        report_freq.update(bag.keys())
    words = sorted(w for w, c in report_freq.items() if c >= min_report_freq)
    if not words:
        raise EmptyVocabularyError(
            f"no word occurs in {min_report_freq} or more reports; lower min_report_freq"
        )
    return Vocabulary(tuple(words))


@dataclass(frozen=True)
class TokenizedReport:
    report_id: int
    counts: dict[int, int]
    label: Optional[int] = None

    @property
    def length(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class TokenizerConfig:
    stoplist: frozenset[str] = DEFAULT_STOPLIST
    min_token_len: int = DEFAULT_MIN_TOKEN_LEN

    def __call__(self, text: str) -> Counter:
        return tokenize(text, self.stoplist, self.min_token_len)

    def to_dict(self) -> dict:
        return {"stoplist": sorted(self.stoplist), "min_token_len": self.min_token_len}

    @classmethod
    def from_dict(cls, d) -> "TokenizerConfig":
        return cls(frozenset(d["stoplist"]), int(d["min_token_len"]))


@dataclass(frozen=True)
class ProcessedDataset:
    """Row-aligned report data over a fixed vocabulary and developer index.

    ``counts`` is a CSR matrix of shape (n_reports, |W|); ``labels`` holds
    developer indices with -1 for unlabeled reports.
    """

    vocabulary: Vocabulary
    developers: tuple[str, ...]
    report_ids: np.ndarray
    submit_order: np.ndarray
    counts: sp.csr_matrix
    labels: np.ndarray
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    excluded_ids: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.counts.shape[0]
        if self.counts.shape[1] != len(self.vocabulary):
            raise ValueError("count matrix width does not match vocabulary size")
        if not (len(self.report_ids) == len(self.submit_order) == len(self.labels) == n):
            raise ValueError("report arrays are not row-aligned")
        if n and (self.labels.max(initial=-1) >= len(self.developers) or self.labels.min() < -1):
            raise ValueError("label index out of range")

    def __len__(self):
        return self.counts.shape[0]

    @property
    def n_words(self) -> int:
        return len(self.vocabulary)

    @property
    def n_developers(self) -> int:
        return len(self.developers)

    @property
    def is_labeled(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def reports(self) -> list[TokenizedReport]:
        out = []
        for row in range(len(self)):
            start, stop = self.counts.indptr[row], self.counts.indptr[row + 1]
            counts = dict(
                zip(self.counts.indices[start:stop].tolist(), self.counts.data[start:stop].tolist())
            )
            label = int(self.labels[row])
            out.append(TokenizedReport(int(self.report_ids[row]), counts, label if label >= 0 else None))
        return out

    def subset(self, rows) -> "ProcessedDataset":
        rows = np.asarray(rows, dtype=np.intp)
        return ProcessedDataset(
            vocabulary=self.vocabulary,
            developers=self.developers,
            report_ids=self.report_ids[rows],
            submit_order=self.submit_order[rows],
            counts=self.counts[rows],
            labels=self.labels[rows],
            tokenizer=self.tokenizer,
        )

    def without_labels(self) -> "ProcessedDataset":
        return ProcessedDataset(
            vocabulary=self.vocabulary,
            developers=self.developers,
            report_ids=self.report_ids,
            submit_order=self.submit_order,
            counts=self.counts,
            labels=np.full(len(self), -1, dtype=np.int64),
            tokenizer=self.tokenizer,
        )

    def restrict_vocabulary(self, min_report_freq: int, rows=None) -> "ProcessedDataset":
        """Prune words seen in fewer than ``min_report_freq`` of ``rows``.

        Reports left empty are dropped and listed in ``excluded_ids``.
        """
        basis = self.counts if rows is None else self.counts[np.asarray(rows, dtype=np.intp)]
        report_freq = np.asarray((basis > 0).sum(axis=0)).ravel()
        keep = np.flatnonzero(report_freq >= min_report_freq)
        if keep.size == 0:
            raise EmptyVocabularyError(
                f"no word occurs in {min_report_freq} or more reports; lower min_report_freq"
            )
        counts = self.counts[:, keep].tocsr()
        nonempty = np.flatnonzero(np.diff(counts.indptr) > 0)
        if nonempty.size == 0:
            raise EmptyDatasetError("every report is empty after vocabulary pruning")
        dropped = np.setdiff1d(np.arange(len(self)), nonempty)
        words = tuple(self.vocabulary.words[i] for i in keep)
        return ProcessedDataset(
            vocabulary=Vocabulary(words),
            developers=self.developers,
            report_ids=self.report_ids[nonempty],
            submit_order=self.submit_order[nonempty],
            counts=counts[nonempty],
            labels=self.labels[nonempty],
            tokenizer=self.tokenizer,
            excluded_ids=self.excluded_ids + tuple(int(i) for i in self.report_ids[dropped]),
        )

    def developer_names(self, labels) -> list[Optional[str]]:
        return [self.developers[i] if i >= 0 else None for i in labels]

    # serialization

    def to_dict(self) -> dict:
        reports = []
        for row, rep in enumerate(self.reports):
            reports.append(
                {
                    "id": rep.report_id,
                    "submit_order": int(self.submit_order[row]),
                    "label": rep.label,
                    "counts": sorted([k, v] for k, v in rep.counts.items()),
                }
            )
        return {
            "format": "bugtriage-dataset",
            "version": DATASET_FORMAT_VERSION,
            "tokenizer": self.tokenizer.to_dict(),
            "vocabulary": list(self.vocabulary.words),
            "developers": list(self.developers),
            "excluded_ids": list(self.excluded_ids),
            "reports": reports,
        }

    @classmethod
    def from_dict(cls, d) -> "ProcessedDataset":
        if d.get("format") != "bugtriage-dataset":
            raise ValueError("not a bugtriage dataset file")
        if d.get("version") != DATASET_FORMAT_VERSION:
            raise ValueError(f"unsupported dataset version {d.get('version')!r}")
        vocab = Vocabulary(tuple(d["vocabulary"]))
        reports = d["reports"]
        rows, cols, vals = [], [], []
        for row, rep in enumerate(reports):
            for k, v in rep["counts"]:
                rows.append(row)
                cols.append(k)
                vals.append(v)
        counts = sp.csr_matrix(
            (np.asarray(vals, dtype=np.int64), (rows, cols)), shape=(len(reports), len(vocab))
        )
        counts.sort_indices()
        return cls(
            vocabulary=vocab,
            developers=tuple(d["developers"]),
            report_ids=np.array([r["id"] for r in reports], dtype=np.int64),
            submit_order=np.array([r["submit_order"] for r in reports], dtype=np.int64),
            counts=counts,
            labels=np.array([-1 if r["label"] is None else r["label"] for r in reports], dtype=np.int64),
            tokenizer=TokenizerConfig.from_dict(d["tokenizer"]),
            excluded_ids=tuple(d.get("excluded_ids", ())),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ProcessedDataset":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def bags_to_matrix(bags: Sequence[Counter], vocab: Vocabulary) -> sp.csr_matrix:
    indptr, indices, data = [0], [], []
    for bag in bags:
        row = sorted((vocab.index[w], c) for w, c in bag.items() if w in vocab.index)
        indices.extend(k for k, _ in row)
        data.extend(c for _, c in row)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.int64), np.asarray(indices, dtype=np.int32), np.asarray(indptr)),
        shape=(len(bags), len(vocab)),
    )


def vectorize(
    items: Sequence[tuple[Counter, Optional[str]]],
    vocab: Vocabulary,
    report_ids: Optional[Sequence[int]] = None,
    submit_order: Optional[Sequence[int]] = None,
    developers: Optional[Sequence[str]] = None,
    tokenizer: Optional[TokenizerConfig] = None,
) -> ProcessedDataset:
    """Turn (token bag, developer) pairs into a :class:`ProcessedDataset`.

    Out-of-vocabulary tokens are dropped and reports left without any token
    are excluded. The developer index is the sorted set of labels present
    unless ``developers`` is given.
    """
    if len(vocab) == 0:
        raise EmptyVocabularyError("vocabulary is empty")
    n = len(items)
    report_ids = np.arange(1, n + 1) if report_ids is None else np.asarray(report_ids, dtype=np.int64)
    submit_order = np.arange(n) if submit_order is None else np.asarray(submit_order, dtype=np.int64)
    counts = bags_to_matrix([bag for bag, _ in items], vocab)
    nonempty = np.flatnonzero(np.diff(counts.indptr) > 0)
    if nonempty.size == 0:
        raise EmptyDatasetError("every report is empty after vectorization")
    excluded = tuple(int(report_ids[i]) for i in np.setdiff1d(np.arange(n), nonempty))
    if excluded:
        logger.info("excluded %d report(s) with no in-vocabulary words", len(excluded))

    kept_labels = [items[i][1] for i in nonempty]
    if developers is None:
        developers = sorted({d for d in kept_labels if d is not None})
    dev_index = {d: j for j, d in enumerate(developers)}
    labels = np.array(
        [-1 if d is None else dev_index.get(d, -1) for d in kept_labels], dtype=np.int64
    )
    return ProcessedDataset(
        vocabulary=vocab,
        developers=tuple(developers),
        report_ids=report_ids[nonempty],
        submit_order=submit_order[nonempty],
        counts=counts[nonempty],
        labels=labels,
        tokenizer=tokenizer or TokenizerConfig(),
        excluded_ids=excluded,
    )


def preprocess_corpus(
    corpus,
    tokenizer: Optional[TokenizerConfig] = None,
    min_report_freq: int = DEFAULT_MIN_REPORT_FREQ,
) -> ProcessedDataset:
    """Tokenize a (filtered) corpus and vectorize it over a pruned vocabulary."""
    tokenizer = tokenizer or TokenizerConfig()
    reports = list(corpus)
    bags = [tokenizer(r.text) for r in reports]
    vocab = build_vocabulary(bags, min_report_freq)
    return vectorize(
        [(bag, r.developer) for bag, r in zip(bags, reports)],
        vocab,
        report_ids=[r.id for r in reports],
        submit_order=[r.submit_order for r in reports],
        tokenizer=tokenizer,
    )


class BugReportVectorizer(TransformerMixin, BaseEstimator):
    """Bag-of-words count vectorizer following the bug-report text rules.

    Parameters
    ----------
    stop_words : "english", None or iterable of str
        "english" uses the bundled stoplist.
    min_token_len : int
    min_report_freq : int
        Minimum number of distinct documents a word must occur in.
    """

    def __init__(self, stop_words="english", min_token_len=DEFAULT_MIN_TOKEN_LEN,
                 min_report_freq=DEFAULT_MIN_REPORT_FREQ):
        self.stop_words = stop_words
        self.min_token_len = min_token_len
        self.min_report_freq = min_report_freq

    def _tokenizer(self) -> TokenizerConfig:
        if self.stop_words == "english":
            stop = DEFAULT_STOPLIST
        elif self.stop_words is None:
            stop = frozenset()
        else:
            stop = frozenset(self.stop_words)
        return TokenizerConfig(stop, self.min_token_len)

    def fit(self, raw_documents, y=None):
        if isinstance(raw_documents, str):
            raise ValueError("expected an iterable of documents, got a single string")
        self.tokenizer_ = self._tokenizer()
        bags = [self.tokenizer_(doc) for doc in raw_documents]
        self.vocabulary_ = build_vocabulary(bags, self.min_report_freq)
        return self

    def transform(self, raw_documents):
        check_is_fitted(self, "vocabulary_")
        if isinstance(raw_documents, str):
            raise ValueError("expected an iterable of documents, got a single string")
        return bags_to_matrix([self.tokenizer_(doc) for doc in raw_documents], self.vocabulary_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.asarray(self.vocabulary_.words, dtype=object)
