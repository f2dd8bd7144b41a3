"""EM training over labeled and unlabeled reports, with rank-weighted pseudo-labels.

Unlabeled reports receive hard top-``n`` pseudo-labels from the current
model. The developer at rank ``q`` gets weight ``2**(n-q) / (2**n - 1)``
and every unlabeled report is further scaled by the weight factor
``lambda_``. With ``n = 1`` this is plain hard-label EM.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .classifier import (
    NaiveBayesTriager,
    NBModel,
    fit_weighted,
    joint_log_scores,
    one_hot,
    rank_developers,
    train_nb,
)
from .exceptions import EmptyDatasetError
from .preprocess import ProcessedDataset

logger = logging.getLogger(__name__)

MONITOR_SLICE_FRAC = 0.2
MONITOR_MIN_PER_DEVELOPER = 5


def gamma(n: int, q: int) -> float:
    """Weight of the developer at rank ``q`` in a list of ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 1 <= q <= n:
        raise ValueError(f"rank q={q} outside [1, {n}]")
    return math.ldexp(1.0, n - q) / (math.ldexp(1.0, n) - 1.0)


def gamma_exact(n: int, q: int) -> Fraction:
    if not 1 <= q <= n:
        raise ValueError(f"rank q={q} outside [1, {n}]")
    return Fraction(2 ** (n - q), 2**n - 1)


def gamma_weights(n: int) -> np.ndarray:
    return np.array([gamma(n, q) for q in range(1, n + 1)])


@dataclass(frozen=True)
class EMConfig:
    lambda_: float = 0.1
    list_size: int = 1
    max_iterations: int = 50
    min_improvement: float = 1e-4
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lambda_}")
        if self.list_size < 1:
            raise ValueError("list_size must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.min_improvement < 0:
            raise ValueError("min_improvement must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def replace(self, **changes) -> "EMConfig":
        return EMConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class SoftLabeling:
    """Ranked developer lists (one row per unlabeled report) and their weights."""

    lists: np.ndarray
    weights: np.ndarray

    @property
    def top1(self) -> np.ndarray:
        return self.lists[:, 0]

    def weight_matrix(self, n_developers: int, scale: float = 1.0) -> sp.csr_matrix:
        n_reports, size = self.lists.shape
        rows = np.repeat(np.arange(n_reports), size)
        data = np.tile(self.weights * scale, n_reports)
        m = sp.csr_matrix((data, (rows, self.lists.ravel())), shape=(n_reports, n_developers))
        m.eliminate_zeros()
        return m


@dataclass
class TraceEntry:
    iteration: int
    score: float
    changed: int
    wall_time: float = 0.0


@dataclass
class TrainingTrace:
    monitor: str
    entries: list[TraceEntry] = field(default_factory=list)
    best_iteration: int = 0

    def __len__(self):
        return len(self.entries)

    @property
    def scores(self) -> list[float]:
        return [e.score for e in self.entries]

    def to_records(self, timing: bool = False, **extra) -> list[dict]:
        records = []
        for e in self.entries:
            rec = {"iteration": e.iteration, "monitor": self.monitor, "score": e.score,
                   "changed_top1": e.changed, "best": e.iteration == self.best_iteration, **extra}
            if timing:
                rec["wall_time"] = e.wall_time
            records.append(rec)
        return records

    def write(self, path, timing: bool = False, **extra) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.to_records(timing, **extra):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _counts(data) -> sp.csr_matrix:
    return data.counts if isinstance(data, ProcessedDataset) else sp.csr_matrix(data)


def e_step(model: NBModel, unlabeled, n: int) -> SoftLabeling:
    """Rank developers for every unlabeled report and attach list weights."""
    if n < 1:
        raise ValueError("n must be >= 1")
    size = min(n, model.developer_count)
    X = _counts(unlabeled)
    if X.shape[0] == 0:
        return SoftLabeling(np.empty((0, size), dtype=np.intp), gamma_weights(size))
    lists = rank_developers(joint_log_scores(model, X))[:, :size]
    return SoftLabeling(lists, gamma_weights(size))


def _stack_weights(labeled: ProcessedDataset, unlabeled, labeling: SoftLabeling, lambda_: float):
    n_devs = labeled.n_developers
    parts_X = [labeled.counts]
    parts_W = [one_hot(labeled.labels, n_devs)]
    if lambda_ > 0 and labeling.lists.shape[0]:
        parts_X.append(_counts(unlabeled))
        parts_W.append(labeling.weight_matrix(n_devs, scale=lambda_))
    return sp.vstack(parts_X, format="csr"), sp.vstack(parts_W, format="csr")


def m_step(labeled: ProcessedDataset, unlabeled, labeling: SoftLabeling, config: EMConfig) -> NBModel:
    """Re-estimate the model from labeled reports plus weighted pseudo-labels."""
    if labeling.lists.shape[0] != _counts(unlabeled).shape[0]:
        raise ValueError("labeling does not cover the unlabeled reports")
    if (labeled.labels < 0).any():
        raise ValueError("labeled subset contains unlabeled reports")
    X, W = _stack_weights(labeled, unlabeled, labeling, config.lambda_)
    log_prior, log_word = fit_weighted(X, W, config.alpha)
    return NBModel(log_prior, log_word, float(config.alpha), labeled.developers,
                   labeled.vocabulary, labeled.tokenizer)


def monitor_slice(labeled: ProcessedDataset) -> Optional[np.ndarray]:
    """Rows of the last 20% of each developer's labeled reports, if every
    developer contributes at least 5; otherwise None."""
    rows = []
    for j in range(labeled.n_developers):
        mine = np.flatnonzero(labeled.labels == j)
        if mine.size == 0:
            continue
        mine = mine[np.argsort(labeled.submit_order[mine], kind="stable")]
        k = int(math.floor(round(MONITOR_SLICE_FRAC * mine.size, 9)))
        if k < MONITOR_MIN_PER_DEVELOPER:
            return None
        rows.append(mine[-k:])
    return np.sort(np.concatenate(rows)) if rows else None


def complete_log_likelihood(model: NBModel, labeled: ProcessedDataset, unlabeled, n: int,
                            lambda_: float) -> float:
    """Penalized complete-data log-likelihood of ``model``.

    Labeled reports count with weight 1 under their labels; unlabeled
    reports count with weight ``lambda_ * gamma`` under the model's own
    top-``n`` ranking. The additive-smoothing pseudo-counts enter as a
    Dirichlet log-prior, which makes the hard ``n = 1`` iteration monotone.
    """
    score = 0.0
    if len(labeled):
        joint = joint_log_scores(model, labeled.counts)
        score += float(joint[np.arange(len(labeled)), labeled.labels].sum())
    X_u = _counts(unlabeled)
    if lambda_ > 0 and X_u.shape[0]:
        joint = joint_log_scores(model, X_u)
        size = min(n, model.developer_count)
        top = rank_developers(joint)[:, :size]
        picked = np.take_along_axis(joint, top, axis=1)
        score += lambda_ * float((picked @ gamma_weights(size)).sum())
    alpha = model.smoothing_alpha
    if alpha > 0:
        score += alpha * float(model.log_prior.sum() + model.log_word_given_dev.sum())
    return score


def _accuracy_at_1(model: NBModel, data: ProcessedDataset) -> float:
    top = rank_developers(joint_log_scores(model, data.counts))[:, 0]
    return float(np.mean(top == data.labels))


def train_semisupervised(labeled: ProcessedDataset, unlabeled, config: EMConfig):
    """Supervised start, then alternate E and M steps.

    Stops when the monitored score improves by no more than
    ``config.min_improvement``, when no unlabeled top-1 label changes, or
    after ``config.max_iterations`` trace entries (the supervised start
    included). Returns ``(best_model, trace)``.
    """
    if len(labeled) == 0:
        raise EmptyDatasetError("labeled subset is empty")
    if isinstance(unlabeled, ProcessedDataset) and (unlabeled.labels >= 0).any():
        raise ValueError("unlabeled subset carries labels; hide them before training")
    X_u = _counts(unlabeled)
    n = config.list_size

    slice_rows = monitor_slice(labeled)
    if slice_rows is not None:
        monitor_name = "accuracy@1"
        monitor_data = labeled.subset(slice_rows)

        def score(m):
            return _accuracy_at_1(m, monitor_data)

        def improved(new, old):
            return 100.0 * (new - old) > config.min_improvement
    else:
        monitor_name = "log_likelihood"

        def score(m):
            return complete_log_likelihood(m, labeled, X_u, n, config.lambda_)

        def improved(new, old):
            return new - old > config.min_improvement * max(abs(old), 1e-300)

    t0 = time.perf_counter()
    model = train_nb(labeled, config.alpha)
    current = score(model)
    trace = TrainingTrace(monitor_name, [TraceEntry(0, current, X_u.shape[0], time.perf_counter() - t0)])
    best_model, best_score = model, current

    previous_top1 = None
    iteration = 0
    while X_u.shape[0] and len(trace) < config.max_iterations:
        t0 = time.perf_counter()
        labeling = e_step(model, X_u, n)
        if previous_top1 is None:
            changed = int(X_u.shape[0])
        else:
            changed = int((labeling.top1 != previous_top1).sum())
            if changed == 0:
                break
        previous_top1 = labeling.top1
        iteration += 1
        model = m_step(labeled, X_u, labeling, config)
        new = score(model)
        trace.entries.append(TraceEntry(iteration, new, changed, time.perf_counter() - t0))
        logger.debug("EM iteration %d: %s=%.10g changed=%d", iteration, monitor_name, new, changed)
        if new > best_score:
            best_model, best_score = model, new
            trace.best_iteration = iteration
        if not improved(new, current):
            break
        current = new

    method = "nbem-wrl" if n > 1 else "nbem"
    best_model = best_model.with_provenance(
        method=method, lambda_=config.lambda_, list_size=n, alpha=config.alpha,
        iterations=iteration, best_iteration=trace.best_iteration, monitor=monitor_name,
        labeled=len(labeled), unlabeled=int(X_u.shape[0]),
    )
    return best_model, trace


def _split_targets(y):
    y = np.asarray(y, dtype=object)
    unlabeled = np.array([v is None or (not isinstance(v, str) and v == -1) for v in y], dtype=bool)
    return y, unlabeled


class EMTriager(NaiveBayesTriager):
    """Naive Bayes trained with EM on labeled and unlabeled rows.

    Unlabeled rows are marked with ``-1`` or ``None`` in ``y``.

    Parameters
    ----------
    lambda_ : float or "auto", default=0.1
        Weight of unlabeled reports in the M-step. "auto" picks it by
        k-fold cross-validation over ``lambda_grid``.
    list_size : int, default=1
        Length of the ranked pseudo-label list per unlabeled report.
    max_iter : int, default=50
    tol : float, default=1e-4
    alpha : float, default=1.0
    lambda_grid : sequence of float, optional
    cv : int, default=5
    random_state : int, default=0
    """

    def __init__(self, lambda_=0.1, list_size=1, max_iter=50, tol=1e-4, alpha=1.0,
                 lambda_grid=None, cv=5, random_state=0):
        self.lambda_ = lambda_
        self.list_size = list_size
        self.max_iter = max_iter
        self.tol = tol
        self.alpha = alpha
        self.lambda_grid = lambda_grid
        self.cv = cv
        self.random_state = random_state

    def fit(self, X, y):
        from .evaluation import DEFAULT_LAMBDA_GRID, select_lambda

        X = sp.csr_matrix(self._check_X(X))
        y, unlabeled = _split_targets(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have inconsistent numbers of samples")
        if unlabeled.all():
            raise EmptyDatasetError("no labeled rows")
        self.classes_, encoded = np.unique(np.asarray(y[~unlabeled].tolist()), return_inverse=True)
        self.n_features_in_ = X.shape[1]

        lab_rows = np.flatnonzero(~unlabeled)
        unl_rows = np.flatnonzero(unlabeled)
        labeled = _matrix_dataset(X[lab_rows], encoded, len(self.classes_), lab_rows)
        unl = _matrix_dataset(X[unl_rows], np.full(unl_rows.size, -1), len(self.classes_), unl_rows)
        config = EMConfig(0.0, self.list_size, self.max_iter, self.tol, self.alpha)
        if isinstance(self.lambda_, str):
            if self.lambda_ != "auto":
                raise ValueError("lambda_ must be a float in [0, 1] or 'auto'")
            grid = DEFAULT_LAMBDA_GRID if self.lambda_grid is None else self.lambda_grid
            self.selected_lambda_ = select_lambda(labeled, unl, grid, self.cv, config,
                                                  seed=self.random_state)
        else:
            self.selected_lambda_ = float(self.lambda_)
        model, self.trace_ = train_semisupervised(labeled, unl, config.replace(lambda_=self.selected_lambda_))
        self.model_ = self._make_model(model.log_prior, model.log_word_given_dev, **model.provenance)
        return self


def _matrix_dataset(X, labels, n_classes, order) -> ProcessedDataset:
    from .preprocess import Vocabulary

    return ProcessedDataset(
        vocabulary=Vocabulary(tuple(f"w{k}" for k in range(X.shape[1]))),
        developers=tuple(f"c{j}" for j in range(n_classes)),
        report_ids=np.asarray(order, dtype=np.int64) + 1,
        submit_order=np.asarray(order, dtype=np.int64),
        counts=sp.csr_matrix(X, dtype=np.int64) if _is_integral(X) else sp.csr_matrix(X),
        labels=np.asarray(labels, dtype=np.int64),
    )


def _is_integral(X) -> bool:
    return bool(np.all(np.mod(X.data, 1) == 0))
