"""Feature extraction: TF-IDF n-grams, mean-pooled word vectors, and
precomputed per-example summary vectors."""

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import InputError, ParseError, ShapeError
from .textprep import document_frequencies, rank_by_frequency


@dataclass(frozen=True, eq=False)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dimension: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ShapeError("indices and values must be equal-length 1-D arrays")
        if idx.size:
            if np.any(np.diff(idx) <= 0):
                raise InputError("sparse indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= self.dimension:
                raise InputError(f"sparse index out of range for dimension {self.dimension}")
        if not np.all(np.isfinite(val)) or np.any(val == 0):
            raise InputError("sparse values must be finite and non-zero")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dimension == other.dimension and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def to_dense(self):
        out = np.zeros(self.dimension)
        out[self.indices] = self.values
        return out

    def serialize(self):
        return " ".join(f"{i}:{v!r}" for i, v in zip(self.indices.tolist(), self.values.tolist()))

    @classmethod
    def parse(cls, text, dimension):
        pairs = [p.split(":") for p in text.split()]
        return cls([int(i) for i, _ in pairs], [float(v) for _, v in pairs], dimension)


def ngrams(tokens, max_n=2):
    """Unigrams and adjacent bigrams; bigram parts joined by one space."""
    grams = list(tokens)
    if max_n >= 2:
        grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return grams


@dataclass(frozen=True)
class TfidfModel:
    columns: tuple
    idf: np.ndarray
    num_docs: int
    max_n: int = 2
    column_of: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "idf", np.asarray(self.idf, dtype=np.float64))
        if len(self.columns) != len(self.idf):
            raise ShapeError("one idf value per column required")
        if not np.all(np.isfinite(self.idf)):
            raise InputError("idf values must be finite")
        column_of = {g: i for i, g in enumerate(self.columns)}
        if len(column_of) != len(self.columns):
            raise InputError("duplicate n-gram columns")
        object.__setattr__(self, "column_of", column_of)

    @property
    def dimension(self):
        return len(self.columns)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#num_docs={self.num_docs}\tmax_n={self.max_n}\n")
            for gram, idf in zip(self.columns, self.idf.tolist()):
                fh.write(f"{gram}\t{idf!r}\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            try:
                meta = dict(kv.split("=") for kv in header.lstrip("#").split("\t"))
                num_docs, max_n = int(meta["num_docs"]), int(meta["max_n"])
            except (KeyError, ValueError):
                raise ParseError("bad TF-IDF header", line=1, path=path) from None
            columns, idf = [], []
            for lineno, line in enumerate(fh, 2):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ParseError("expected ngram<TAB>idf", line=lineno, path=path)
                columns.append(parts[0])
                idf.append(float(parts[1]))
        return cls(tuple(columns), np.array(idf), num_docs, max_n)


def fit_tfidf(train_docs, min_df=1, max_features=None, max_n=2):
    """Fit columns and idf = log((1 + |D|) / df) on tokenized training docs.

    Columns are the unigrams and bigrams with document frequency
    >= ``min_df``, most frequent first, capped at ``max_features``.
    """
    docs = [ngrams(d, max_n) for d in train_docs]
    if not any(docs):
        raise InputError("cannot fit TF-IDF on an empty corpus")
    df = document_frequencies(docs)
    columns = rank_by_frequency(df, min_df, max_features)
    n = len(docs)
    idf = np.array([math.log((1.0 + n) / df[g]) for g in columns])
    return TfidfModel(tuple(columns), idf, n, max_n)


def transform_tfidf(model, doc):
    """TF-IDF vector of one tokenized document.

    The term frequency is normalised by the number of in-model n-gram
    occurrences in the document; unknown n-grams are skipped.
    """
    counts = Counter(model.column_of[g] for g in ngrams(doc, model.max_n) if g in model.column_of)
    total = sum(counts.values())
    if not total:
        return SparseVector(np.empty(0, np.int64), np.empty(0), model.dimension)
    idx = np.array(sorted(counts), dtype=np.int64)
    tf = np.array([counts[i] for i in idx], dtype=np.float64) / total
    return SparseVector(idx, tf * model.idf[idx], model.dimension)


def to_csr(vectors, dimension=None, normalize=False):
    """Stack sparse vectors into a CSR matrix, optionally L2-normalising rows."""
    if dimension is None:
        if not vectors:
            raise InputError("need a dimension for an empty vector list")
        dimension = vectors[0].dimension
    indptr = [0]
    for v in vectors:
        if v.dimension != dimension:
            raise ShapeError(f"vector dimension {v.dimension} != {dimension}")
        indptr.append(indptr[-1] + len(v))
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.empty(0, np.int64)
    data = np.concatenate([v.values for v in vectors]) if vectors else np.empty(0)
    x = sparse.csr_matrix((data, indices, np.array(indptr)), shape=(len(vectors), dimension))
    if normalize:
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        x = sparse.diags(1.0 / norms) @ x
        x = x.tocsr()
    return x


def tfidf_matrix(model, docs, normalize=False):
    return to_csr([transform_tfidf(model, d) for d in docs], model.dimension, normalize)


class EmbeddingTable:
    """Frozen word vectors: a token index plus an (n, d) matrix."""

    def __init__(self, tokens, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(tokens):
            raise ShapeError(f"{len(tokens)} tokens but matrix of shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise InputError("embedding entries must be finite")
        self.tokens = list(tokens)
        self.matrix = matrix
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dimension(self):
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def vector(self, token):
        return self.matrix[self.index[token]]

    def subset(self, vocab_tokens):
        """Rows for ``vocab_tokens`` in order; tokens without a vector get zeros."""
        out = np.zeros((len(vocab_tokens), self.dimension))
        for i, tok in enumerate(vocab_tokens):
            j = self.index.get(tok)
            if j is not None:
                out[i] = self.matrix[j]
        return out


def load_embeddings(path, expected_dim=300, restrict_to=None):
    """Read a GloVe-style text file (``token v1 ... vd`` per line).

    ``restrict_to`` (a set of tokens) keeps memory bounded by skipping
    rows for tokens that will never be looked up. A duplicated token keeps
    its first vector.
    """
    path = Path(path)
    tokens, rows = [], []
    seen = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open embeddings {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip(" ").split(" ")
            if len(parts) == 1 and not parts[0]:
                continue
            if len(parts) != expected_dim + 1:
                raise ParseError(
                    f"expected {expected_dim} values, got {len(parts) - 1}", line=lineno, path=path)
            tok = parts[0]
            if tok in seen or (restrict_to is not None and tok not in restrict_to):
                continue
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise ParseError("non-numeric vector component", line=lineno, path=path) from None
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite vector component", line=lineno, path=path)
            seen.add(tok)
            tokens.append(tok)
            rows.append(vec)
    matrix = np.array(rows) if rows else np.zeros((0, expected_dim))
    return EmbeddingTable(tokens, matrix)


@dataclass(frozen=True)
class PooledVector:
    vector: np.ndarray
    n_tokens: int

    @property
    def degenerate(self):
        """True when no token had a vector and the result is the zero vector."""
        return self.n_tokens == 0


def mean_pool(table, doc):
    """Average of the vectors of in-table tokens (zero vector if there are none)."""
    rows = [table.index[t] for t in doc if t in table.index]
    if not rows:
        return PooledVector(np.zeros(table.dimension), 0)
    return PooledVector(table.matrix[rows].mean(axis=0), len(rows))


@dataclass(frozen=True)
class EmbeddedSequence:
    matrix: np.ndarray
    length: int


def embed_sequence(table, doc, max_len=128):
    """Stack token vectors row by row, truncated to ``max_len``; OOV rows are zero."""
    if max_len < 1:
        raise InputError("max_len must be >= 1")
    doc = list(doc)[:max_len]
    out = np.zeros((len(doc), table.dimension))
    for i, tok in enumerate(doc):
        j = table.index.get(tok)
        if j is not None:
            out[i] = table.matrix[j]
    return EmbeddedSequence(out, len(doc))


def load_summary_vectors(path, corpus, dim=None):
    """Read ``id v1 ... vd`` rows and return them in corpus order."""
    path = Path(path)
    rows = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open summary vectors {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            ex_id, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise ParseError(f"expected {dim} values, got {len(values)}", line=lineno, path=path)
            if ex_id in rows:
                raise ParseError(f"duplicate id {ex_id!r}", line=lineno, path=path)
            try:
                rows[ex_id] = np.array([float(v) for v in values])
            except ValueError:
                raise ParseError("non-numeric vector component", line=lineno, path=path) from None
    missing = [i for i in corpus.ids if i not in rows]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise InputError(f"{path}: no summary vector for {len(missing)} ids: {shown}")
    return np.stack([rows[i] for i in corpus.ids]) if corpus.ids else np.zeros((0, dim or 0))
