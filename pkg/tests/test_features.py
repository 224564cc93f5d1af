import math

import numpy as np
import pytest

from goemo.corpus import Corpus, Example, LabelVocabulary
from goemo.errors import InputError, ParseError, ShapeError
from goemo.features import (EmbeddingTable, SparseVector, TfidfModel, embed_sequence, fit_tfidf,
                            load_embeddings, load_summary_vectors, mean_pool, ngrams, tfidf_matrix,
                            to_csr, transform_tfidf)
from goemo.textprep import document_frequencies


def test_idf_values():
    model = fit_tfidf([["a", "b"], ["a", "c"]], max_n=1)
    idf = dict(zip(model.columns, model.idf))
    assert idf["a"] == pytest.approx(0.405465, abs=1e-6)
    assert idf["b"] == pytest.approx(1.098612, abs=1e-6)
    assert idf["a"] == math.log(3 / 2)
    assert idf["a"] > 0


def test_bigram_is_one_column():
    model = fit_tfidf([["a", "b"]])
    assert "a b" in model.column_of
    assert ngrams(["x", "y", "z"]) == ["x", "y", "z", "x y", "y z"]
    assert ngrams(["x", "y"], max_n=1) == ["x", "y"]


def test_tf_weighting_by_hand():
    model = TfidfModel(("a", "b"), np.array([1.0986, 0.5]), 2, max_n=1)
    vec = transform_tfidf(model, ["a", "b", "b", "b"])
    assert vec.to_dense()[0] == pytest.approx(0.25 * 1.0986)
    assert vec.to_dense()[0] == pytest.approx(0.27465, abs=1e-5)
    assert vec.to_dense()[1] == pytest.approx(0.75 * 0.5)


def test_tf_sums_to_one_over_in_model_ngrams():
    docs = [["a", "b", "c"], ["b", "c", "d", "b"], ["e"]]
    model = fit_tfidf(docs)
    for doc in docs + [["a", "zzz", "b"]]:
        vec = transform_tfidf(model, doc)
        tf = vec.values / model.idf[vec.indices]
        assert abs(tf.sum() - 1.0) < 1e-12
        assert np.all(vec.indices < model.dimension)


def test_unknown_doc_gives_empty_vector_and_is_deterministic():
    model = fit_tfidf([["a"]])
    assert len(transform_tfidf(model, ["zzz"])) == 0
    v1, v2 = transform_tfidf(model, ["a", "a"]), transform_tfidf(model, ["a", "a"])
    assert np.array_equal(v1.indices, v2.indices) and np.array_equal(v1.values, v2.values)


def test_idf_non_increasing_in_document_frequency():
    docs = [["a", "b", "c"], ["a", "b"], ["a"], ["d"]]
    model = fit_tfidf(docs, max_n=1)
    df = document_frequencies(docs)
    pairs = sorted((df[g], idf) for g, idf in zip(model.columns, model.idf))
    assert all(b[1] <= a[1] for a, b in zip(pairs, pairs[1:]))


def test_min_df_and_max_features():
    docs = [["a", "b"], ["a", "c"], ["a", "b"]]
    model = fit_tfidf(docs, min_df=2, max_n=1)
    assert set(model.columns) == {"a", "b"}
    assert fit_tfidf(docs, max_features=1, max_n=1).columns == ("a",)
    with pytest.raises(InputError):
        fit_tfidf([[], []])


def test_tfidf_save_load(tmp_path):
    model = fit_tfidf([["a", "b"], ["b", "c"]])
    model.save(tmp_path / "m.tsv")
    back = TfidfModel.load(tmp_path / "m.tsv")
    assert back.columns == model.columns and np.array_equal(back.idf, model.idf)


def test_sparse_vector_invariants_and_serialization():
    v = SparseVector([1, 4], [0.5, -2.0], 6)
    assert SparseVector.parse(v.serialize(), 6) == v
    assert v.serialize() == "1:0.5 4:-2.0"
    with pytest.raises(InputError):
        SparseVector([3, 1], [1.0, 1.0], 6)
    with pytest.raises(InputError):
        SparseVector([6], [1.0], 6)
    with pytest.raises(InputError):
        SparseVector([1], [0.0], 6)


def test_csr_and_normalization():
    vecs = [SparseVector([0, 2], [3.0, 4.0], 3), SparseVector([], [], 3)]
    m = to_csr(vecs, normalize=True).toarray()
    assert np.allclose(m[0], [0.6, 0.0, 0.8]) and np.all(m[1] == 0)
    model = fit_tfidf([["a"], ["b"]])
    assert tfidf_matrix(model, [["a"], ["b"], ["c"]]).shape == (3, model.dimension)


def _write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_load_embeddings(tmp_path):
    path = _write(tmp_path / "e.txt", ["hope 0.1 0.2 0.3", "joy 1 2 3"])
    table = load_embeddings(path, expected_dim=3)
    assert len(table) == 2 and table.dimension == 3
    assert np.allclose(table.vector("hope"), [0.1, 0.2, 0.3])
    restricted = load_embeddings(path, expected_dim=3, restrict_to={"joy"})
    assert restricted.tokens == ["joy"]


def test_load_embeddings_300_dims(tmp_path):
    path = _write(tmp_path / "e.txt", ["hope " + " ".join(["0.1"] * 300)])
    assert load_embeddings(path).vector("hope").shape == (300,)


def test_embedding_arity_error_names_line(tmp_path):
    path = _write(tmp_path / "e.txt", ["a " + " ".join(["1"] * 300), "b " + " ".join(["1"] * 299)])
    with pytest.raises(ParseError) as info:
        load_embeddings(path)
    assert info.value.line == 2


def test_embedding_non_numeric_error(tmp_path):
    path = _write(tmp_path / "e.txt", ["a 1 x"])
    with pytest.raises(ParseError):
        load_embeddings(path, expected_dim=2)


def test_mean_pool():
    table = EmbeddingTable(["x", "y", "z"], np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(mean_pool(table, ["x", "y"]).vector, [0.5, 0.5])
    assert np.allclose(mean_pool(table, ["x", "z", "x"]).vector, [1.0, 0.0])
    assert np.allclose(mean_pool(table, ["y", "x", "oov"]).vector, mean_pool(table, ["x", "y"]).vector)
    assert mean_pool(table, ["x", "oov"]).n_tokens == 1
    empty = mean_pool(table, ["oov"])
    assert empty.degenerate and np.all(empty.vector == 0)


def test_embed_sequence():
    table = EmbeddingTable(["a"], np.array([[2.0, 3.0]]))
    seq = embed_sequence(table, ["a", "oov", "a"])
    assert seq.length == 3 and np.all(seq.matrix[1] == 0) and np.allclose(seq.matrix[0], [2, 3])
    long = embed_sequence(table, ["a"] * 200, max_len=128)
    assert long.matrix.shape == (128, 2) and long.length == 128
    with pytest.raises(InputError):
        embed_sequence(table, ["a"], max_len=0)


def _corpus(ids):
    vocab = LabelVocabulary.default()
    return Corpus(tuple(Example.make(i, "x", [0]) for i in ids), "test", vocab)


def test_summary_vectors_join_by_id(tmp_path):
    path = _write(tmp_path / "s.txt", ["b 3 4", "a 1 2", "c 5 6"])
    m = load_summary_vectors(path, _corpus(["a", "b", "c"]))
    assert np.array_equal(m, [[1, 2], [3, 4], [5, 6]])


def test_summary_vector_errors(tmp_path):
    with pytest.raises(InputError, match=r"1 ids: b$"):
        load_summary_vectors(_write(tmp_path / "m.txt", ["a 1 2"]), _corpus(["a", "b"]))
    with pytest.raises(ParseError):
        load_summary_vectors(_write(tmp_path / "d.txt", ["a 1 2", "a 1 2"]), _corpus(["a"]))
    with pytest.raises(ParseError):
        load_summary_vectors(_write(tmp_path / "w.txt", ["a 1 2", "b 1"]), _corpus(["a", "b"]))


def test_embedding_table_shape_checks():
    with pytest.raises(ShapeError):
        EmbeddingTable(["a", "b"], np.zeros((1, 3)))
    table = EmbeddingTable(["a"], np.ones((1, 2)))
    assert np.array_equal(table.subset(["<unk>", "a"]), [[0, 0], [1, 1]])
