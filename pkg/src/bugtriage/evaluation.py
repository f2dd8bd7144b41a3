"""Per-developer splits, accuracy@n, weight-factor selection and experiment runners."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .classifier import NBModel, joint_log_scores, rank_developers, train_nb
from .exceptions import EmptyDatasetError, SplitError
from .preprocess import ProcessedDataset
from .semisupervised import EMConfig, TrainingTrace, train_semisupervised

logger = logging.getLogger(__name__)

METHODS = ("nb", "nbem", "nbem-wrl")
METHOD_TITLES = {"nb": "NB", "nbem": "NBEM", "nbem-wrl": "NBEM+WRL"}
DEFAULT_LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
DEFAULT_LABELED_FRAC = 0.05
DEFAULT_TEST_FRAC = 0.2
REPORT_FORMAT_VERSION = 1


def _scaled(frac: float, m: int) -> float:
    # 0.05 * 60 == 3.0000000000000004 in binary floating point
    return round(frac * m, 9)


@dataclass(frozen=True)
class Split:
    labeled: np.ndarray
    unlabeled: np.ndarray
    test: np.ndarray
    ratios: tuple[float, float, float]

    def rows(self, data: ProcessedDataset, part: str) -> np.ndarray:
        ids = getattr(self, part)
        pos = {int(r): i for i, r in enumerate(data.report_ids)}
        return np.array(sorted(pos[int(r)] for r in ids if int(r) in pos), dtype=np.intp)

    def apply(self, data: ProcessedDataset):
        """``(labeled, unlabeled, test, unlabeled_truth)``; unlabeled labels are hidden."""
        unl = data.subset(self.rows(data, "unlabeled"))
        return (
            data.subset(self.rows(data, "labeled")),
            unl.without_labels(),
            data.subset(self.rows(data, "test")),
            unl.labels.copy(),
        )


def split_dataset(
    data: ProcessedDataset,
    labeled_frac: float = DEFAULT_LABELED_FRAC,
    test_frac: float = DEFAULT_TEST_FRAC,
    mode: str = "chronological",
    seed: int = 0,
) -> Split:
    """Split every developer's reports into labeled, test and unlabeled parts.

    In chronological mode each developer's reports are ordered by submission:
    the first ``ceil(labeled_frac*m)`` (at least one) are labeled, the next
    ``floor(test_frac*m)`` are test and the rest unlabeled. Random mode
    shuffles each developer's reports with ``seed`` first.
    """
    if not (0 < labeled_frac and 0 < test_frac and labeled_frac + test_frac < 1):
        raise ValueError("need 0 < labeled_frac, 0 < test_frac and labeled_frac + test_frac < 1")
    if mode not in ("chronological", "random"):
        raise ValueError(f"unknown split mode {mode!r}")
    if (data.labels < 0).any():
        raise SplitError("every report must be labeled before splitting")
    rng = np.random.default_rng(seed)
    labeled, test, unlabeled = [], [], []
    for j, dev in enumerate(data.developers):
        mine = np.flatnonzero(data.labels == j)
        if mine.size == 0:
            continue
        if mine.size < 2:
            raise SplitError(f"developer {dev!r} has fewer than 2 reports")
        if mode == "chronological":
            mine = mine[np.argsort(data.submit_order[mine], kind="stable")]
        else:
            mine = mine[rng.permutation(mine.size)]
        m = mine.size
        n_lab = max(1, math.ceil(_scaled(labeled_frac, m)))
        n_test = min(math.floor(_scaled(test_frac, m)), m - n_lab)
        labeled.append(mine[:n_lab])
        test.append(mine[n_lab:n_lab + n_test])
        unlabeled.append(mine[n_lab + n_test:])

    def ids(parts):
        rows = np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.intp)
        return data.report_ids[rows]

    return Split(ids(labeled), ids(unlabeled), ids(test),
                 (labeled_frac, test_frac, 1.0 - labeled_frac - test_frac))


def accuracy_curve(model: NBModel, test: ProcessedDataset, n_max: int) -> list[float]:
    """accuracy@n for n = 1..n_max from a single ranking pass."""
    if len(test) == 0:
        raise EmptyDatasetError("test set is empty")
    if (test.labels < 0).any():
        raise ValueError("test reports must be labeled")
    ranking = rank_developers(joint_log_scores(model, test.counts))
    # position of the true developer in each ranking (0-based)
    position = np.argmax(ranking == test.labels[:, None], axis=1)
    return [float(np.mean(position < n)) for n in range(1, n_max + 1)]


def accuracy_at_n(model: NBModel, test: ProcessedDataset, n: int) -> float:
    """Fraction of test reports whose developer is among the top ``n`` recommended."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return accuracy_curve(model, test, n)[-1]


def assign_folds(labels: np.ndarray, folds: int, seed: int = 0) -> np.ndarray:
    """Stratified fold ids: each class is shuffled and dealt round-robin."""
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.shape[0], dtype=np.intp)
    offset = 0
    for j in np.unique(labels):
        mine = np.flatnonzero(labels == j)
        mine = mine[rng.permutation(mine.size)]
        fold_of[mine] = (offset + np.arange(mine.size)) % folds
        offset = (offset + mine.size) % folds
    return fold_of


def train_method(method: str, labeled: ProcessedDataset, unlabeled: ProcessedDataset,
                 config: EMConfig) -> tuple[NBModel, Optional[TrainingTrace]]:
    if method == "nb":
        return train_nb(labeled, config.alpha), None
    if method == "nbem":
        return train_semisupervised(labeled, unlabeled, config.replace(list_size=1))
    if method == "nbem-wrl":
        return train_semisupervised(labeled, unlabeled, config)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _fold_accuracy(labeled, unlabeled, fold_of, k, config) -> float:
    train_rows = np.flatnonzero(fold_of != k)
    val_rows = np.flatnonzero(fold_of == k)
    train = labeled.subset(train_rows)
    val = labeled.subset(val_rows)
    model, _ = train_semisupervised(train, unlabeled, config)
    present = np.zeros(labeled.n_developers, dtype=bool)
    present[train.labels] = True
    top1 = rank_developers(joint_log_scores(model, val.counts))[:, 0]
    # developers unseen in the training folds count as misses
    return float(np.mean((top1 == val.labels) & present[val.labels]))


def cross_validate_lambda(labeled, unlabeled, grid, folds=5, config: Optional[EMConfig] = None,
                          seed=0, n_jobs=1) -> dict[float, float]:
    """Mean held-out accuracy@1 for every weight factor in ``grid``."""
    if not len(grid):
        raise ValueError("lambda grid is empty")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(labeled) < folds:
        raise ValueError(f"cannot make {folds} folds from {len(labeled)} labeled reports")
    config = config or EMConfig()
    fold_of = assign_folds(labeled.labels, folds, seed)
    tasks = [(lam, k) for lam in grid for k in range(folds)]
    scores = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_fold_accuracy)(labeled, unlabeled, fold_of, k, config.replace(lambda_=float(lam)))
        for lam, k in tasks
    )
    result = {}
    for i, lam in enumerate(grid):
        result[float(lam)] = float(np.mean(scores[i * folds:(i + 1) * folds]))
    return result


def select_lambda(labeled, unlabeled, grid=DEFAULT_LAMBDA_GRID, folds=5,
                  config: Optional[EMConfig] = None, seed=0, n_jobs=1) -> float:
    """Weight factor with the best cross-validated accuracy@1; ties go to the smaller value."""
    means = cross_validate_lambda(labeled, unlabeled, grid, folds, config, seed, n_jobs)
    best = None
    for lam in sorted(means):
        if best is None or means[lam] > means[best]:
            best = lam
    logger.info("selected lambda=%s (cv accuracy@1 %.4f)", best, means[best])
    return best


def _descriptor(data, labeled, unlabeled, test) -> dict:
    return {
        "reports": len(data),
        "developers": int(np.unique(data.labels[data.labels >= 0]).size),
        "words": data.n_words,
        "labeled": len(labeled),
        "unlabeled": len(unlabeled),
        "test": len(test),
        "excluded": len(data.excluded_ids),
    }


def prepare_split(data: ProcessedDataset, labeled_frac=DEFAULT_LABELED_FRAC,
                  test_frac=DEFAULT_TEST_FRAC, split_mode="chronological", seed=0,
                  min_report_freq: Optional[int] = None):
    """Split, optionally prune the vocabulary on training rows only, and apply.

    Returns ``(data, split, (labeled, unlabeled, test, unlabeled_truth))``.
    """
    split = split_dataset(data, labeled_frac, test_frac, split_mode, seed)
    if min_report_freq is not None:
        train_ids = np.concatenate([split.labeled, split.unlabeled])
        rows = np.flatnonzero(np.isin(data.report_ids, train_ids))
        data = data.restrict_vocabulary(min_report_freq, rows=rows)
    return data, split, split.apply(data)


@dataclass
class EvaluationReport:
    dataset: dict
    methods: list[str]
    n_max: int
    accuracy: dict[str, list[float]]
    lambdas: dict[str, Optional[float]]
    iterations: dict[str, int] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    runtime: dict[str, float] = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "format": "bugtriage-evaluation",
            "version": REPORT_FORMAT_VERSION,
            "dataset": self.dataset,
            "methods": self.methods,
            "n_max": self.n_max,
            "accuracy": self.accuracy,
            "lambda": self.lambdas,
            "iterations": self.iterations,
            "settings": self.settings,
        }
        if timing:
            d["runtime"] = self.runtime
        return d

    def to_table(self) -> str:
        ds = self.dataset
        head = ["List size"] + [METHOD_TITLES[m] for m in self.methods]
        rows = [[str(n)] + [f"{100 * self.accuracy[m][n - 1]:.2f}" for m in self.methods]
                for n in range(1, self.n_max + 1)]
        widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]

        def fmt(r):
            return "  ".join(cell.rjust(w) for cell, w in zip(r, widths))

        lines = [
            f"Data set: {ds['reports']} bug reports and {ds['developers']} developers "
            f"({ds['labeled']} labeled / {ds['unlabeled']} unlabeled / {ds['test']} test)",
            "Accuracy (%)",
            fmt(head),
            fmt(["-" * w for w in widths]),
        ]
        lines += [fmt(r) for r in rows]
        lam = ", ".join(f"{METHOD_TITLES[m]}={self.lambdas[m]:g}" for m in self.methods
                        if self.lambdas.get(m) is not None)
        if lam:
            lines.append(f"lambda: {lam}")
        return "\n".join(lines) + "\n"


def run_experiment(
    data: ProcessedDataset,
    methods: Sequence[str] = METHODS,
    n_max: int = 5,
    config: Optional[EMConfig] = None,
    lambda_="auto",
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    folds: int = 5,
    labeled_frac: float = DEFAULT_LABELED_FRAC,
    test_frac: float = DEFAULT_TEST_FRAC,
    split_mode: str = "chronological",
    seed: int = 0,
    n_jobs: int = 1,
    min_report_freq: Optional[int] = None,
) -> EvaluationReport:
    """Split once, train each method and tabulate accuracy@1..n_max."""
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown method(s) {sorted(unknown)}")
    config = config or EMConfig(list_size=n_max)
    data, split, (labeled, unlabeled, test, _) = prepare_split(
        data, labeled_frac, test_frac, split_mode, seed, min_report_freq)

    accuracy, lambdas, iterations, runtime = {}, {}, {}, {}
    for method in methods:
        t0 = time.perf_counter()
        cfg = config if method == "nbem-wrl" else config.replace(list_size=1)
        if method == "nb":
            lam = None
        elif lambda_ == "auto":
            lam = select_lambda(labeled, unlabeled, grid, folds, cfg, seed, n_jobs)
        else:
            lam = float(lambda_)
        if lam is not None:
            cfg = cfg.replace(lambda_=lam)
        model, trace = train_method(method, labeled, unlabeled, cfg)
        accuracy[method] = accuracy_curve(model, test, n_max)
        lambdas[method] = lam
        iterations[method] = 0 if trace is None else len(trace) - 1
        runtime[method] = time.perf_counter() - t0
        logger.info("%s: accuracy@1..%d = %s (%.2fs)", method, n_max,
                    " ".join(f"{a:.4f}" for a in accuracy[method]), runtime[method])

    return EvaluationReport(
        dataset=_descriptor(data, labeled, unlabeled, test),
        methods=list(methods),
        n_max=n_max,
        accuracy=accuracy,
        lambdas=lambdas,
        iterations=iterations,
        settings={
            "alpha": config.alpha, "list_size": config.list_size,
            "max_iterations": config.max_iterations, "min_improvement": config.min_improvement,
            "labeled_frac": labeled_frac, "test_frac": test_frac, "split_mode": split_mode,
            "seed": seed, "folds": folds, "lambda": lambda_ if lambda_ == "auto" else float(lambda_),
        },
        runtime=runtime,
    )


@dataclass
class SweepReport:
    dataset: dict
    grid: list[float]
    list_sizes: list[int]
    series: dict[str, dict[int, list[float]]]
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "bugtriage-sweep",
            "version": REPORT_FORMAT_VERSION,
            "dataset": self.dataset,
            "lambda": self.grid,
            "list_sizes": self.list_sizes,
            "series": {m: {str(n): acc for n, acc in by_n.items()} for m, by_n in self.series.items()},
            "settings": self.settings,
        }

    def to_table(self) -> str:
        lines = []
        for method, by_n in self.series.items():
            lines.append(f"{METHOD_TITLES[method]}: accuracy (%) by lambda")
            head = ["lambda"] + [f"n={n}" for n in self.list_sizes]
            rows = [[f"{lam:g}"] + [f"{100 * by_n[n][i]:.2f}" for n in self.list_sizes]
                    for i, lam in enumerate(self.grid)]
            widths = [max(len(r[c]) for r in [head] + rows) for c in range(len(head))]
            for r in [head] + rows:
                lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
            lines.append("")
        return "\n".join(lines)


def run_sweep(
    data: ProcessedDataset,
    methods: Sequence[str] = ("nbem", "nbem-wrl"),
    grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    list_sizes: Sequence[int] = (1, 3, 5),
    config: Optional[EMConfig] = None,
    labeled_frac: float = DEFAULT_LABELED_FRAC,
    test_frac: float = DEFAULT_TEST_FRAC,
    split_mode: str = "chronological",
    seed: int = 0,
    n_jobs: int = 1,
    min_report_freq: Optional[int] = None,
) -> SweepReport:
    """accuracy@n against a fixed grid of weight factors, per method."""
    if not len(grid):
        raise ValueError("lambda grid is empty")
    list_sizes = sorted(set(int(n) for n in list_sizes))
    n_max = list_sizes[-1]
    config = config or EMConfig(list_size=n_max)
    data, _, (labeled, unlabeled, test, _) = prepare_split(
        data, labeled_frac, test_frac, split_mode, seed, min_report_freq)

    def one(method, lam):
        cfg = (config if method == "nbem-wrl" else config.replace(list_size=1)).replace(lambda_=float(lam))
        model, _ = train_method(method, labeled, unlabeled, cfg)
        return accuracy_curve(model, test, n_max)

    tasks = [(m, lam) for m in methods for lam in grid]
    curves = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(m, lam) for m, lam in tasks)
    series = {m: {n: [] for n in list_sizes} for m in methods}
    for (m, _), curve in zip(tasks, curves):
        for n in list_sizes:
            series[m][n].append(curve[n - 1])
    return SweepReport(
        dataset=_descriptor(data, labeled, unlabeled, test),
        grid=[float(g) for g in grid],
        list_sizes=list_sizes,
        series=series,
        settings={"alpha": config.alpha, "list_size": config.list_size,
                  "max_iterations": config.max_iterations,
                  "min_improvement": config.min_improvement, "labeled_frac": labeled_frac,
                  "test_frac": test_frac, "split_mode": split_mode, "seed": seed},
    )


_ACCURACY_LIST = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}}
_DATASET = {
    "type": "object",
    "required": ["reports", "developers", "labeled", "unlabeled", "test"],
    "properties": {k: {"type": "integer", "minimum": 0}
                   for k in ("reports", "developers", "words", "labeled", "unlabeled", "test", "excluded")},
}

EVALUATION_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "version", "dataset", "methods", "n_max", "accuracy", "lambda"],
    "properties": {
        "format": {"const": "bugtriage-evaluation"},
        "version": {"const": REPORT_FORMAT_VERSION},
        "dataset": _DATASET,
        "methods": {"type": "array", "items": {"enum": list(METHODS)}, "minItems": 1},
        "n_max": {"type": "integer", "minimum": 1},
        "accuracy": {"type": "object", "additionalProperties": _ACCURACY_LIST},
        "lambda": {"type": "object",
                   "additionalProperties": {"type": ["number", "null"], "minimum": 0, "maximum": 1}},
        "iterations": {"type": "object", "additionalProperties": {"type": "integer"}},
        "settings": {"type": "object"},
        "runtime": {"type": "object"},
    },
}

SWEEP_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["format", "version", "dataset", "lambda", "list_sizes", "series"],
    "properties": {
        "format": {"const": "bugtriage-sweep"},
        "version": {"const": REPORT_FORMAT_VERSION},
        "dataset": _DATASET,
        "lambda": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                   "minItems": 1},
        "list_sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "series": {
            "type": "object",
            "additionalProperties": {"type": "object", "additionalProperties": _ACCURACY_LIST},
        },
        "settings": {"type": "object"},
    },
}
