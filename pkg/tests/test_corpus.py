import json
import warnings

import pytest

from goemo.corpus import (GOEMOTIONS_LABELS, NUM_LABELS, Corpus, Example, LabelVocabulary,
                          compute_stats, label_matrix, load_corpus, top_tokens_per_label,
                          write_corpus)
from goemo.errors import InputError, ParseError, ValidationError
from synthetic import write_tsv


def test_label_vocabulary_default_has_28_unique_names():
    vocab = LabelVocabulary.default()
    assert len(vocab) == NUM_LABELS == 28
    assert vocab.names[27] == "neutral"
    assert vocab.index_of["admiration"] == 0
    assert all(vocab.index_of[n] == i for i, n in enumerate(vocab.names))


def test_label_vocabulary_rejects_wrong_size_and_duplicates(tmp_path):
    with pytest.raises(InputError):
        LabelVocabulary(GOEMOTIONS_LABELS[:27])
    with pytest.raises(InputError):
        LabelVocabulary(GOEMOTIONS_LABELS[:27] + ("admiration",))
    path = tmp_path / "labels.txt"
    LabelVocabulary.default().save(path)
    assert LabelVocabulary.load(path) == LabelVocabulary.default()


def test_single_line_parse(tmp_path):
    path = write_tsv(tmp_path / "a.tsv", [("That game hurt.", [25], "eew5j0j")])
    corpus = load_corpus(path)
    ex = corpus.examples[0]
    assert ex.labels == (25,)
    assert ex.word_count == 3
    assert ex.id == "eew5j0j"
    assert ex.char_length == len("That game hurt.")


def test_multi_label_field(tmp_path):
    path = write_tsv(tmp_path / "a.tsv", [("ok then", [3, 27], "x1")])
    assert load_corpus(path).examples[0].labels == (3, 27)


def test_emoji_counts_as_one_character():
    ex = Example.make("e", "yay 🎉", [17])
    assert ex.char_length == 5
    assert ex.avg_word_length == pytest.approx((3 + 1) / 2)


def test_header_line_is_skipped(tmp_path):
    path = tmp_path / "h.tsv"
    path.write_text("text\tlabels\tid\nhello\t1\ta\n", encoding="utf-8")
    corpus = load_corpus(path)
    assert len(corpus) == 1 and corpus.ids == ["a"]


@pytest.mark.parametrize("line, error, lineno", [
    ("only two\t1\n", ParseError, 2),
    ("bad\t28\tz\n", ValidationError, 2),
    ("bad\t-1\tz\n", ValidationError, 2),
    ("bad\t\tz\n", ValidationError, 2),
    ("bad\tx\tz\n", ValidationError, 2),
])
def test_malformed_lines_report_line_number(tmp_path, line, error, lineno):
    path = tmp_path / "bad.tsv"
    path.write_text("fine\t1\ta\n" + line, encoding="utf-8")
    with pytest.raises(error) as info:
        load_corpus(path)
    assert info.value.line == lineno
    assert f":{lineno}" in str(info.value)


def test_duplicate_ids_rejected_within_split(tmp_path):
    path = write_tsv(tmp_path / "d.tsv", [("a", [1], "x"), ("b", [2], "x")])
    with pytest.raises(ValidationError):
        load_corpus(path)


def test_more_than_five_labels_warns(tmp_path):
    path = write_tsv(tmp_path / "m.tsv", [("many", [0, 1, 2, 3, 4, 5], "x")])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        corpus = load_corpus(path)
    assert len(corpus.examples[0].labels) == 6
    assert any("6 labels" in str(w.message) for w in caught)


def test_missing_file_is_input_error(tmp_path):
    with pytest.raises(InputError):
        load_corpus(tmp_path / "nope.tsv")


def test_round_trip_preserves_text_labels_ids(tmp_path):
    rows = [("Wow, [NAME] 🎉!", [0, 17], "a1"), ("meh", [27], "b2"), ("  spaced  text ", [5], "c3")]
    src = load_corpus(write_tsv(tmp_path / "in.tsv", rows))
    write_corpus(src, tmp_path / "out.tsv")
    back = load_corpus(tmp_path / "out.tsv")
    assert [(e.text, e.labels, e.id) for e in back] == [(e.text, e.labels, e.id) for e in src]


def test_stats_two_single_label_examples():
    vocab = LabelVocabulary.default()
    corpus = Corpus((Example.make("a", "x y", [1]), Example.make("b", "z", [2])), "train", vocab)
    stats = compute_stats(corpus)
    assert stats.total == 2
    assert stats.label_count_histogram == {1: (2, 100.0)}
    assert stats.mean_word_count == 1.5
    assert stats.char_length_range == (1, 3)


def test_stats_invariants(tmp_path):
    rows = [("a b", [1], "1"), ("c", [1, 2], "2"), ("d e f", [3, 4, 27], "3"), ("g", [27], "4")]
    corpus = load_corpus(write_tsv(tmp_path / "s.tsv", rows))
    stats = compute_stats(corpus)
    assert sum(stats.per_label_counts) == sum(len(e.labels) for e in corpus)
    assert sum(c for c, _ in stats.label_count_histogram.values()) == stats.total
    for count, pct in stats.label_count_histogram.values():
        assert abs(pct - 100.0 * count / stats.total) < 1e-9
    assert abs(sum(p for _, p in stats.label_count_histogram.values()) - 100.0) < 0.01
    assert stats.median_word_count == 1.5
    doc = json.loads(stats.to_json())
    assert doc["total"] == 4 and doc["per_label_counts"]["neutral"] == 2
    assert "labels_per_example.1=2 (50.00%)" in stats.to_text()


def test_stats_of_empty_corpus_fails():
    with pytest.raises(InputError):
        compute_stats(Corpus((), "train", LabelVocabulary.default()))


def test_label_matrix():
    vocab = LabelVocabulary.default()
    corpus = Corpus((Example.make("a", "x", [0, 27]),), "test", vocab)
    y = label_matrix(corpus)
    assert y.shape == (1, 28) and y[0, 0] == 1 and y[0, 27] == 1 and y.sum() == 2


def test_top_tokens_single_example():
    vocab = LabelVocabulary.default()
    corpus = Corpus((Example.make("a", "a a b", [16]),), "train", vocab)
    assert top_tokens_per_label(corpus, 16, 5) == [("a", 2), ("b", 1)]


def test_top_tokens_ties_lexicographic_and_labels_independent():
    vocab = LabelVocabulary.default()
    exs = (Example.make("1", "zeta alpha", [3]), Example.make("2", "beta gamma gamma", [4]),
           Example.make("3", "alpha", [3]))
    corpus = Corpus(exs, "train", vocab)
    assert top_tokens_per_label(corpus, 3, 10) == [("alpha", 2), ("zeta", 1)]
    only_d = Corpus(tuple(e for e in exs if 3 not in e.labels), "train", vocab)
    assert top_tokens_per_label(corpus, 4, 10) == top_tokens_per_label(only_d, 4, 10)
    with pytest.raises(InputError):
        top_tokens_per_label(corpus, 28, 3)
