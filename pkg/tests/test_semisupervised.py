from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bugtriage.classifier import joint_log_scores, predict_proba_matrix, train_nb
from bugtriage.semisupervised import (
    EMConfig,
    EMTriager,
    complete_log_likelihood,
    e_step,
    gamma,
    gamma_exact,
    gamma_weights,
    m_step,
    train_semisupervised,
)

from conftest import mixture_problem, random_dataset, words_dataset


@pytest.mark.parametrize(
    "n, q, expected",
    [(1, 1, Fraction(1)), (3, 1, Fraction(4, 7)), (3, 3, Fraction(1, 7)), (5, 2, Fraction(8, 31))],
)
def test_gamma_examples(n, q, expected):
    assert gamma_exact(n, q) == expected
    assert gamma(n, q) == float(expected)


@pytest.mark.parametrize("n, q", [(3, 0), (3, 4), (0, 1)])
def test_gamma_out_of_range(n, q):
    with pytest.raises(ValueError):
        gamma(n, q)


@given(st.integers(1, 40))
def test_gamma_weights_sum_to_one_and_decrease(n):
    assert sum(gamma_exact(n, q) for q in range(1, n + 1)) == 1
    w = gamma_weights(n)
    assert abs(w.sum() - 1) < 1e-12
    assert (np.diff(w) < 0).all()


def _unlabeled(data, texts):
    rows = [{data.vocabulary.index[w]: t.split().count(w) for w in set(t.split())} for t in texts]
    ds = words_dataset(texts, [None] * len(texts), vocab=data.vocabulary, developers=data.developers)
    assert [r.counts for r in ds.reports] == rows
    return ds


def test_e_step_hard_labels(five_word):
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["crash", "network timeout"])
    labeling = e_step(model, unl, 1)
    assert labeling.lists.tolist() == [[0], [1]]
    assert labeling.weights.tolist() == [1.0]


def test_e_step_list_longer_than_developers(five_word):
    labeling = e_step(train_nb(five_word), _unlabeled(five_word, ["ui"]), 3)
    assert labeling.lists.shape == (1, 2)
    assert labeling.weights == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


def test_e_step_order_matches_posterior(five_word):
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["network", "editor crash"])
    labeling = e_step(model, unl, 2)
    # network: A 1/15 < B 4/35; editor crash: A 3/5*2/9*1/3 > B 2/5*1/7*1/7
    assert labeling.lists.tolist() == [[1, 0], [0, 1]]


def test_m_step_lambda_zero_equals_supervised(five_word):
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["crash", "network ui"])
    rebuilt = m_step(five_word, unl, e_step(model, unl, 2), EMConfig(lambda_=0.0, list_size=2))
    assert (rebuilt.log_prior == model.log_prior).all()
    assert (rebuilt.log_word_given_dev == model.log_word_given_dev).all()


def test_m_step_hand_substitution(five_word):
    # one unlabeled "crash" pseudo-labeled A at weight 0.5:
    # prior A = (1 + 2 + 0.5) / (2 + 3 + 0.5) = 7/11
    # P(crash|A) = (1 + 2 + 0.5) / (5 + 4 + 0.5) = 7/19
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["crash"])
    labeling = e_step(model, unl, 1)
    assert labeling.lists.tolist() == [[0]]
    rebuilt = m_step(five_word, unl, labeling, EMConfig(lambda_=0.5))
    assert np.exp(rebuilt.log_prior) == pytest.approx([7 / 11, 4 / 11], abs=1e-15)
    assert np.exp(rebuilt.log_word_given_dev[0, 0]) == pytest.approx(7 / 19, abs=1e-15)
    # B's word model is untouched
    np.testing.assert_array_equal(rebuilt.log_word_given_dev[1], model.log_word_given_dev[1])


def test_m_step_wrl_weights(five_word):
    # "ui" ranks A then B; n=2 splits the unit weight 2/3, 1/3, then lambda=1
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["ui"])
    rebuilt = m_step(five_word, unl, e_step(model, unl, 2), EMConfig(lambda_=1.0, list_size=2))
    prior = np.exp(rebuilt.log_prior)
    assert prior == pytest.approx([(1 + 2 + 2 / 3) / 6, (1 + 1 + 1 / 3) / 6], abs=1e-15)
    ui = five_word.vocabulary.index["ui"]
    assert np.exp(rebuilt.log_word_given_dev[1, ui]) == pytest.approx((1 + 1 / 3) / (5 + 2 + 1 / 3))


def test_m_step_rejects_mismatched_labeling(five_word):
    model = train_nb(five_word)
    unl = _unlabeled(five_word, ["ui", "crash"])
    with pytest.raises(ValueError):
        m_step(five_word, unl.subset([0]), e_step(model, unl, 1), EMConfig())


def test_em_config_validation():
    for bad in (dict(lambda_=1.5), dict(lambda_=-0.1), dict(list_size=0), dict(max_iterations=0),
                dict(min_improvement=-1), dict(alpha=-1)):
        with pytest.raises(ValueError):
            EMConfig(**bad)


def _problem(seed=0, n_labeled=20, n_unlabeled=200):
    return mixture_problem(seed, n_labeled, n_unlabeled, 100)


def test_empty_unlabeled_returns_supervised(five_word):
    empty = five_word.subset([]).without_labels()
    model, trace = train_semisupervised(five_word, empty, EMConfig(lambda_=0.7))
    base = train_nb(five_word)
    assert (model.log_prior == base.log_prior).all()
    assert (model.log_word_given_dev == base.log_word_given_dev).all()
    assert len(trace) == 1


def test_unlabeled_with_labels_is_refused(five_word):
    with pytest.raises(ValueError, match="hide"):
        train_semisupervised(five_word, five_word, EMConfig())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lambda_zero_degenerates_to_nb(seed):
    labeled, unlabeled, test, _ = _problem(seed)
    for n in (1, 3):
        model, _ = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=0.0, list_size=n))
        base = train_nb(labeled)
        diff = np.abs(predict_proba_matrix(model, test.counts) - predict_proba_matrix(base, test.counts))
        assert diff.max() < 1e-12


def test_list_size_one_is_plain_em():
    labeled, unlabeled, _, _ = _problem(3)
    a, _ = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=0.6, list_size=1))
    b, _ = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=0.6))
    np.testing.assert_array_equal(a.log_word_given_dev, b.log_word_given_dev)


@pytest.mark.parametrize("lam, n", [(0.3, 1), (1.0, 1), (0.5, 3), (1.0, 5)])
def test_best_model_is_returned(lam, n):
    labeled, unlabeled, _, _ = _problem(4)
    model, trace = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=lam, list_size=n))
    assert len(trace) <= 50
    best = trace.entries[trace.best_iteration].score
    assert all(best >= e.score for e in trace.entries)
    assert complete_log_likelihood(model, labeled, unlabeled, n, lam) == pytest.approx(best, rel=1e-12)
    assert np.exp(model.log_prior).sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(np.exp(model.log_word_given_dev).sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_hard_em_objective_never_decreases(seed, lam):
    rng = np.random.default_rng(seed)
    labeled = random_dataset(rng, 3, 9, 6)
    unlabeled = random_dataset(rng, 3, 15, 6).without_labels()
    _, trace = train_semisupervised(labeled, unlabeled,
                                    EMConfig(lambda_=lam, min_improvement=0.0, max_iterations=20))
    scores = trace.scores
    assert all(b >= a - 1e-9 * abs(a) for a, b in zip(scores, scores[1:]))


def test_max_iterations_bounds_trace():
    labeled, unlabeled, _, _ = _problem(5)
    _, trace = train_semisupervised(labeled, unlabeled,
                                    EMConfig(lambda_=1.0, max_iterations=2, min_improvement=0))
    assert len(trace) <= 2


def test_training_is_deterministic():
    labeled, unlabeled, _, _ = _problem(6)
    cfg = EMConfig(lambda_=0.8, list_size=3)
    a, ta = train_semisupervised(labeled, unlabeled, cfg)
    b, tb = train_semisupervised(labeled, unlabeled, cfg)
    assert a.log_word_given_dev.tobytes() == b.log_word_given_dev.tobytes()
    assert ta.to_records() == tb.to_records()


def test_em_helps_on_mixture():
    labeled, unlabeled, test, _ = _problem(7, n_labeled=25, n_unlabeled=600)
    base = train_nb(labeled)
    model, trace = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=1.0))

    def acc(m):
        return np.mean(joint_log_scores(m, test.counts).argmax(axis=1) == test.labels)

    assert len(trace) > 1
    assert acc(model) > acc(base)


def test_monitor_switches_to_accuracy_with_enough_labels():
    rng = np.random.default_rng(0)
    labeled = random_dataset(rng, 2, 60, 5)
    unlabeled = random_dataset(rng, 2, 10, 5).without_labels()
    _, trace = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=0.5))
    assert trace.monitor == "accuracy@1"
    _, trace = train_semisupervised(labeled.subset(np.arange(20)), unlabeled, EMConfig(lambda_=0.5))
    assert trace.monitor == "log_likelihood"


def test_trace_records(tmp_path):
    labeled, unlabeled, _, _ = _problem(8)
    _, trace = train_semisupervised(labeled, unlabeled, EMConfig(lambda_=0.5))
    path = tmp_path / "trace.jsonl"
    trace.write(path, **{"lambda": 0.5})
    lines = path.read_text().splitlines()
    assert len(lines) == len(trace)
    assert '"lambda": 0.5' in lines[0] and "wall_time" not in lines[0]


def test_em_triager_estimator():
    labeled, unlabeled, test, _ = _problem(9, n_labeled=25, n_unlabeled=400)
    import scipy.sparse as sp

    X = sp.vstack([labeled.counts, unlabeled.counts])
    y = np.array([f"dev{j}" for j in labeled.labels] + [None] * len(unlabeled), dtype=object)
    clf = EMTriager(lambda_=1.0).fit(X, y)
    assert list(clf.classes_) == [f"dev{j}" for j in range(5)]
    nb_acc = np.mean(joint_log_scores(train_nb(labeled), test.counts).argmax(1) == test.labels)
    em_acc = clf.score(test.counts, [f"dev{j}" for j in test.labels])
    assert em_acc > nb_acc
    assert clf.recommend(test.counts[:2], 3).shape == (2, 3)

    auto = EMTriager(lambda_="auto", lambda_grid=[0.0, 1.0], cv=3).fit(X, y)
    assert auto.selected_lambda_ in (0.0, 1.0)
    assert auto.get_params()["lambda_"] == "auto"


def test_em_triager_integer_targets_with_minus_one():
    labeled, unlabeled, _, _ = _problem(10)
    import scipy.sparse as sp

    X = sp.vstack([labeled.counts, unlabeled.counts])
    y = np.concatenate([labeled.labels, np.full(len(unlabeled), -1)])
    clf = EMTriager(lambda_=0.0).fit(X, y)
    base = train_nb(labeled)
    np.testing.assert_allclose(clf.predict_proba(X), predict_proba_matrix(base, X), atol=1e-12)
