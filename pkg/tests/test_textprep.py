import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goemo.corpus import Corpus, Example, LabelVocabulary
from goemo.errors import InputError, ParseError
from goemo.textprep import (NAME, RELIGION, UNK, TokenVocabulary, build_vocab, normalize, prepare,
                            tokenize)


@pytest.mark.parametrize("text, expected", [
    ("WOW That's GREAT 🎉", "wow that's great 🎉"),
    ("[NAME] helped me", "[NAME] helped me"),
    ("", ""),
    ("Thanks [name] and [Religion]!", "thanks [NAME] and [RELIGION]!"),
    ("[RELEGION] folks", "[RELIGION] folks"),
])
def test_normalize(text, expected):
    assert normalize(text) == expected


@pytest.mark.parametrize("text, tokens", [
    ("help, hope!", ["help", ",", "hope", "!"]),
    ("[RELIGION] is kind", ["[RELIGION]", "is", "kind"]),
    ("so excited 🎉", ["so", "excited", "🎉"]),
    ("", []),
    ("don't stop", ["don't", "stop"]),
    ("(really?!)", ["(", "really", "?", "!", ")"]),
    ("wow🎉🎉", ["wow", "🎉", "🎉"]),
    ("hi [NAME]!", ["hi", "[NAME]", "!"]),
    ("thumbs 👍🏽 up", ["thumbs", "👍🏽", "up"]),
    ("e.g. this", ["e.g", ".", "this"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_zwj_sequence_is_one_token():
    family = "👨‍👩‍👧"
    assert tokenize(f"my {family} rocks") == ["my", family, "rocks"]


def test_prepare_keeps_stop_words_and_placeholders():
    assert prepare("The [NAME] IS the BEST.") == ["the", NAME, "is", "the", "best", "."]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from(list("aB ,.!'?🎉😂\t") + ["[NAME]", "[religion]", "👍🏽"]), max_size=30))
def test_tokenize_is_lossless_and_nonempty(pieces):
    text = "".join(pieces)
    norm = normalize(text)
    tokens = tokenize(norm)
    assert all(tokens) and all(not any(c.isspace() for c in t) for t in tokens)
    assert "".join(tokens) == "".join(norm.split())


def _corpus(texts):
    vocab = LabelVocabulary.default()
    return Corpus(tuple(Example.make(str(i), t, [0]) for i, t in enumerate(texts)), "train", vocab)


def test_build_vocab_min_df():
    vocab = build_vocab([_corpus(["a b", "a c"])], min_df=2)
    assert "a" in vocab and "b" not in vocab and "c" not in vocab
    assert vocab.itos[0] == UNK and NAME in vocab and RELIGION in vocab


def test_build_vocab_all_tokens_and_frequency_order():
    vocab = build_vocab([_corpus(["b a", "a c", "a b d"])], min_df=1, max_size=None)
    assert vocab.itos[3:] == ("a", "b", "c", "d")


def test_build_vocab_max_size_counts_regular_tokens():
    vocab = build_vocab([_corpus(["b a", "a c", "a b d"])], min_df=1, max_size=2)
    assert vocab.itos == (UNK, NAME, RELIGION, "a", "b")


def test_build_vocab_errors():
    with pytest.raises(InputError):
        build_vocab([_corpus([])])
    with pytest.raises(InputError):
        build_vocab([_corpus(["a"])], min_df=0)


def test_vocabulary_encode_and_round_trip(tmp_path):
    vocab = build_vocab([_corpus(["hello [NAME]", "hello there"])], min_df=1)
    assert vocab.encode(["hello", "unseen"]) == [vocab.index("hello"), vocab.unk_index]
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    assert TokenVocabulary.load(path).itos == vocab.itos


def test_vocabulary_load_rejects_blank_token(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text(f"{UNK}\n{NAME}\n{RELIGION}\n\n", encoding="utf-8")
    with pytest.raises(ParseError):
        TokenVocabulary.load(path)
