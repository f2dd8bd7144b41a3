"""Multinomial naive Bayes developer recommender, computed in log space."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import EmptyDatasetError
from .preprocess import ProcessedDataset, TokenizedReport, TokenizerConfig, Vocabulary

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class NBModel:
    """Trained parameters.

    ``log_word_given_dev[j, k]`` is log P(word k | developer j).
    """

    log_prior: np.ndarray
    log_word_given_dev: np.ndarray
    smoothing_alpha: float
    developers: tuple[str, ...] = ()
    vocabulary: Optional[Vocabulary] = None
    tokenizer: Optional[TokenizerConfig] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.log_prior.setflags(write=False)
        self.log_word_given_dev.setflags(write=False)
        if self.log_word_given_dev.shape[0] != self.log_prior.shape[0]:
            raise ValueError("prior and likelihood disagree on the number of developers")

    @property
    def developer_count(self) -> int:
        return self.log_prior.shape[0]

    @property
    def vocabulary_size(self) -> int:
        return self.log_word_given_dev.shape[1]

    def with_provenance(self, **info) -> "NBModel":
        return NBModel(
            self.log_prior, self.log_word_given_dev, self.smoothing_alpha,
            self.developers, self.vocabulary, self.tokenizer, {**self.provenance, **info},
        )

    def to_dict(self) -> dict:
        return {
            "format": "bugtriage-model",
            "version": MODEL_FORMAT_VERSION,
            "smoothing_alpha": self.smoothing_alpha,
            "developers": list(self.developers),
            "vocabulary": list(self.vocabulary.words) if self.vocabulary else None,
            "tokenizer": self.tokenizer.to_dict() if self.tokenizer else None,
            "provenance": self.provenance,
            "log_prior": self.log_prior.tolist(),
            "log_word_given_dev": self.log_word_given_dev.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "NBModel":
        if d.get("format") != "bugtriage-model":
            raise ValueError("not a bugtriage model file")
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')!r}")
        return cls(
            log_prior=np.asarray(d["log_prior"], dtype=np.float64),
            log_word_given_dev=np.asarray(d["log_word_given_dev"], dtype=np.float64).reshape(
                len(d["log_prior"]), -1
            ),
            smoothing_alpha=float(d["smoothing_alpha"]),
            developers=tuple(d["developers"]),
            vocabulary=Vocabulary(tuple(d["vocabulary"])) if d.get("vocabulary") is not None else None,
            tokenizer=TokenizerConfig.from_dict(d["tokenizer"]) if d.get("tokenizer") else None,
            provenance=d.get("provenance", {}),
        )

    def save(self, path) -> None:
        # json writes floats with repr(), which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NBModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_weighted(X, weights, alpha: float = 1.0):
    """Smoothed class priors and word likelihoods from weighted label mass.

    ``weights[i, j]`` is how much report ``i`` counts toward developer ``j``.
    Returns ``(log_prior, log_word_given_dev)``.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    X = sp.csr_matrix(X)
    weights = sp.csr_matrix(weights, dtype=np.float64)
    n_devs = weights.shape[1]
    n_words = X.shape[1]

    class_mass = np.asarray(weights.sum(axis=0)).ravel()
    word_mass = (weights.T @ X.astype(np.float64)).toarray()
    word_total = word_mass.sum(axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        prior = (alpha + class_mass) / (alpha * n_devs + class_mass.sum())
        likelihood = (alpha + word_mass) / (alpha * n_words + word_total)[:, None]
        # a developer with no mass at alpha=0 gets a flat (never-winning) word model
        likelihood[~np.isfinite(likelihood).all(axis=1)] = 1.0 / n_words
        log_prior = np.log(prior)
        log_word = np.log(likelihood)
    return log_prior, log_word


def one_hot(labels: np.ndarray, n_classes: int) -> sp.csr_matrix:
    labels = np.asarray(labels)
    rows = np.arange(labels.shape[0])
    return sp.csr_matrix(
        (np.ones(labels.shape[0]), (rows, labels)), shape=(labels.shape[0], n_classes)
    )


def train_nb(data: ProcessedDataset, alpha: float = 1.0) -> NBModel:
    """Supervised multinomial NB on the labeled reports of ``data``."""
    labeled = np.flatnonzero(data.is_labeled)
    if labeled.size == 0:
        raise EmptyDatasetError("no labeled reports to train on")
    X = data.counts[labeled]
    log_prior, log_word = fit_weighted(X, one_hot(data.labels[labeled], data.n_developers), alpha)
    return NBModel(
        log_prior, log_word, float(alpha), data.developers, data.vocabulary, data.tokenizer,
        {"method": "nb", "labeled": int(labeled.size)},
    )


def joint_log_scores(model: NBModel, X) -> np.ndarray:
    """Unnormalized log P(d_j) + sum_k N_k log P(w_k | d_j), shape (n, |D|)."""
    X = sp.csr_matrix(X, dtype=np.float64)
    if X.shape[1] != model.vocabulary_size:
        raise ValueError(f"expected {model.vocabulary_size} word columns, got {X.shape[1]}")
    # sparse @ dense only touches stored entries, so 0 * -inf never occurs
    return np.asarray(X @ model.log_word_given_dev.T) + model.log_prior


def normalize_log_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.atleast_2d(scores)
    top = scores.max(axis=1, keepdims=True)
    dead = ~np.isfinite(top[:, 0])
    with np.errstate(invalid="ignore"):
        shifted = np.exp(scores - np.where(np.isfinite(top), top, 0.0))
        probs = shifted / shifted.sum(axis=1, keepdims=True)
    probs[dead] = 1.0 / scores.shape[1]
    return probs


def rank_developers(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; ties go to the lower index."""
    return np.argsort(-np.atleast_2d(scores), axis=1, kind="stable")


def predict_proba_matrix(model: NBModel, X) -> np.ndarray:
    return normalize_log_scores(joint_log_scores(model, X))


@dataclass(frozen=True)
class Posterior:
    probs: np.ndarray
    ranking: np.ndarray


def _as_row(model: NBModel, report) -> sp.csr_matrix:
    if isinstance(report, TokenizedReport):
        report = report.counts
    if isinstance(report, dict):
        cols = np.fromiter(report.keys(), dtype=np.int64, count=len(report))
        vals = np.fromiter(report.values(), dtype=np.float64, count=len(report))
        if cols.size and (cols.max() >= model.vocabulary_size or cols.min() < 0):
            raise ValueError("word index outside the model vocabulary")
        return sp.csr_matrix((vals, (np.zeros_like(cols), cols)), shape=(1, model.vocabulary_size))
    row = sp.csr_matrix(report)
    if row.shape[0] != 1:
        raise ValueError("expected a single report")
    return row


def posterior(model: NBModel, report) -> Posterior:
    """Posterior over developers for one report (TokenizedReport, dict or 1-row matrix)."""
    scores = joint_log_scores(model, _as_row(model, report))
    return Posterior(normalize_log_scores(scores)[0], rank_developers(scores)[0])


def recommend(model: NBModel, report, n: int) -> list[tuple[str, float]]:
    """Top-``n`` developers (name or index) with their posterior probabilities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    post = posterior(model, report)
    names = model.developers or tuple(range(model.developer_count))
    return [(names[j], float(post.probs[j])) for j in post.ranking[:n]]


def top_n_matrix(model: NBModel, X, n: int) -> np.ndarray:
    """Row-wise top-``n`` developer indices, shape (n_reports, min(n, |D|))."""
    return rank_developers(joint_log_scores(model, X))[:, : min(n, model.developer_count)]


class NaiveBayesTriager(ClassifierMixin, BaseEstimator):
    """Multinomial naive Bayes over word-count matrices.

    Parameters
    ----------
    alpha : float, default=1.0
        Additive smoothing applied to both the priors and the word likelihoods.
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def _check_X(self, X):
        X = check_array(X, accept_sparse="csr", dtype=np.float64)
        if sp.issparse(X):
            if X.data.size and X.data.min() < 0:
                raise ValueError("word counts must be non-negative")
        elif (X < 0).any():
            raise ValueError("word counts must be non-negative")
        return X

    def _make_model(self, log_prior, log_word, **provenance):
        return NBModel(log_prior, log_word, float(self.alpha),
                       tuple(str(c) for c in self.classes_), provenance=provenance)

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have inconsistent numbers of samples")
        if X.shape[0] == 0:
            raise EmptyDatasetError("cannot fit on zero reports")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        log_prior, log_word = fit_weighted(X, one_hot(encoded, len(self.classes_)), self.alpha)
        self.model_ = self._make_model(log_prior, log_word, method="nb")
        return self

    def predict_log_proba(self, X):
        check_is_fitted(self, "model_")
        scores = joint_log_scores(self.model_, self._check_X(X))
        with np.errstate(divide="ignore"):
            return np.log(normalize_log_scores(scores))

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba_matrix(self.model_, self._check_X(X))

    def predict(self, X):
        return self.recommend(X, 1)[:, 0]

    def recommend(self, X, n=5):
        """Top-``n`` class labels per row, best first."""
        check_is_fitted(self, "model_")
        return self.classes_[top_n_matrix(self.model_, self._check_X(X), n)]

    def accuracy_at(self, X, y, n=1) -> float:
        top = self.recommend(X, n)
        return float(np.mean((top == np.asarray(y)[:, None]).any(axis=1)))
