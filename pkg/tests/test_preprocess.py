from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from bugtriage.corpus import parse_corpus
from bugtriage.exceptions import EmptyDatasetError, EmptyVocabularyError
from bugtriage.preprocess import (
    BugReportVectorizer,
    ProcessedDataset,
    TokenizerConfig,
    Vocabulary,
    build_vocabulary,
    load_stoplist,
    preprocess_corpus,
    tokenize,
    vectorize,
)


def test_tokenize_case_and_punctuation():
    assert tokenize("Crash crash CRASH!", (), 1) == Counter(crash=3)


def test_tokenize_stoplist():
    assert tokenize("the editor crashed", {"the"}, 1) == Counter(editor=1, crashed=1)


def test_tokenize_splits_on_digits_and_underscore():
    assert tokenize("bug#1234 in x86_64", (), 1) == Counter(bug=1, **{"in": 1}, x=1)
    assert tokenize("bug#1234 in x86_64", (), 2) == Counter(bug=1, **{"in": 1})


def test_tokenize_no_stemming():
    assert tokenize("crashes crashed crashing", (), 2) == Counter(crashes=1, crashed=1, crashing=1)


def test_tokenize_empty():
    assert tokenize("", ()) == Counter()


def test_default_stoplist_drops_common_words():
    bag = TokenizerConfig()("The editor is not responding")
    assert set(bag) == {"editor", "responding"}


def test_load_stoplist(tmp_path):
    path = tmp_path / "stop.txt"
    path.write_text("# comment\nThe\n\nand  # trailing\n")
    assert load_stoplist(path) == frozenset({"the", "and"})


@given(st.lists(st.text(alphabet="abcXYZ 0_.!é", max_size=30), max_size=6))
def test_tokenize_is_permutation_invariant(sentences):
    forward = tokenize(" . ".join(sentences), (), 1)
    backward = tokenize(" . ".join(reversed(sentences)), (), 1)
    assert forward == backward
    assert all(t.isalpha() and t == t.lower() for t in forward)


def test_vocabulary_threshold():
    bags = [Counter(a=1), Counter(a=1, b=1), Counter(a=2), Counter(a=1), Counter(a=1)]
    assert build_vocabulary(bags, 3).words == ("a",)


def test_vocabulary_counts_distinct_reports():
    bags = [Counter(a=1, b=1), Counter(a=1), Counter(a=1, c=5)]
    assert build_vocabulary(bags, 2).words == ("a",)


def test_vocabulary_empty_after_pruning():
    with pytest.raises(EmptyVocabularyError, match="lower"):
        build_vocabulary([Counter(a=1)], 3)


@given(st.lists(st.dictionaries(st.sampled_from("abcdefg"), st.integers(1, 4)), min_size=1, max_size=8))
def test_vocabulary_min_freq_one_keeps_everything(dicts):
    bags = [Counter(d) for d in dicts]
    words = set().union(*[set(b) for b in bags])
    if not words:
        return
    assert set(build_vocabulary(bags, 1).words) == words
    assert list(build_vocabulary(bags, 1).words) == sorted(words)


def test_vectorize_drops_oov():
    data = vectorize([(Counter(crash=2, foo=1), "a")], Vocabulary(("crash",)))
    assert data.reports[0].counts == {0: 2}


def test_vectorize_excludes_empty_reports():
    data = vectorize(
        [(Counter(foo=1), "a"), (Counter(crash=1), "b")], Vocabulary(("crash",)), report_ids=[7, 8]
    )
    assert list(data.report_ids) == [8]
    assert data.excluded_ids == (7,)


def test_vectorize_all_empty():
    with pytest.raises(EmptyDatasetError):
        vectorize([(Counter(foo=1), "a")], Vocabulary(("crash",)))


def test_vectorize_developer_index():
    data = vectorize(
        [(Counter(a=1), "zed"), (Counter(b=2), "amy"), (Counter(a=1, b=1), None)],
        Vocabulary(("a", "b")),
    )
    assert data.developers == ("amy", "zed")
    assert list(data.labels) == [1, 0, -1]


@given(st.lists(st.dictionaries(st.sampled_from("abcdef"), st.integers(1, 5), min_size=1), min_size=1, max_size=8))
def test_vectorized_length_equals_in_vocabulary_tokens(dicts):
    vocab = Vocabulary(("a", "c", "e"))
    bags = [Counter(d) for d in dicts]
    if not any(set(b) & set(vocab.words) for b in bags):
        return
    data = vectorize([(b, None) for b in bags], vocab)
    expected = [sum(c for w, c in b.items() if w in vocab) for b in bags]
    assert [r.length for r in data.reports] == [e for e in expected if e > 0]


def test_preprocess_corpus_and_roundtrip(tmp_path, fixtures_dir):
    corpus = parse_corpus(fixtures_dir / "three_reports.jsonl")
    data = preprocess_corpus(corpus, TokenizerConfig(frozenset(), 2), min_report_freq=2)
    assert data.vocabulary.words == ("crash", "editor", "ui")
    assert data.excluded_ids == (12,)
    path = tmp_path / "ds.json"
    data.save(path)
    again = ProcessedDataset.load(path)
    assert again.vocabulary == data.vocabulary
    assert again.developers == data.developers
    assert (again.counts != data.counts).nnz == 0
    assert list(again.labels) == list(data.labels)
    assert again.tokenizer == data.tokenizer


def test_restrict_vocabulary_uses_given_rows():
    bags = [Counter(a=1, b=1), Counter(a=1, b=1), Counter(b=1, c=1), Counter(c=3)]
    data = vectorize([(b, "x") for b in bags], Vocabulary(("a", "b", "c")))
    pruned = data.restrict_vocabulary(2, rows=[0, 1])
    assert pruned.vocabulary.words == ("a", "b")
    assert list(pruned.report_ids) == [1, 2, 3]
    assert pruned.excluded_ids == (4,)


def test_vectorizer_is_sklearn_compatible():
    docs = ["crash in editor", "editor crash again", "network timeout", "network down crash"]
    vec = BugReportVectorizer(stop_words=None, min_report_freq=2)
    X = vec.fit_transform(docs)
    assert list(vec.get_feature_names_out()) == ["crash", "editor", "network"]
    assert X.toarray().tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1]]
    assert clone(vec).get_params() == vec.get_params()
    with pytest.raises(ValueError):
        vec.transform("a single string")
