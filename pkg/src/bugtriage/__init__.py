"""Semi-supervised bug triage with naive Bayes, EM and weighted recommendation lists."""

from .classifier import NaiveBayesTriager, NBModel, posterior, recommend, train_nb
from .corpus import BugReport, RawCorpus, filter_developers, filter_lifecycle, parse_corpus
from .evaluation import accuracy_at_n, run_experiment, run_sweep, select_lambda, split_dataset
from .preprocess import (
    BugReportVectorizer,
    ProcessedDataset,
    Vocabulary,
    build_vocabulary,
    tokenize,
    vectorize,
)
from .semisupervised import EMConfig, EMTriager, e_step, gamma, m_step, train_semisupervised

__version__ = "0.1.0"

__all__ = [
    "BugReport", "BugReportVectorizer", "EMConfig", "EMTriager", "NBModel",
    "NaiveBayesTriager", "ProcessedDataset", "RawCorpus", "Vocabulary", "accuracy_at_n",
    "build_vocabulary", "e_step", "filter_developers", "filter_lifecycle", "gamma", "m_step",
    "parse_corpus", "posterior", "recommend", "run_experiment", "run_sweep", "select_lambda",
    "split_dataset", "tokenize", "train_nb", "train_semisupervised", "vectorize",
]
