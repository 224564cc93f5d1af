"""BiLSTM-with-attention classifier and a dense multi-label head.

Shapes follow a row-vector convention: a gate pre-activation is
``[h_prev; x_t] @ W + b`` with ``W`` of shape (hidden + input, hidden).
Batches are (B, T, d) arrays plus a vector of true lengths; positions at
or beyond an example's length never influence its output.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import autodiff as ad
from .corpus import NUM_LABELS, label_matrix
from .errors import DivergenceError, InputError, ShapeError
from .evaluation import binarize, micro_macro
from .imbalance import LossConfig
from .textprep import TokenVocabulary, build_vocab, prepare

log = logging.getLogger(__name__)

GATES = ("f", "i", "C", "o")
DIRECTIONS = ("fw", "bw")


@dataclass
class BiLstmHyper:
    embed_dim: int = 300
    hidden: int = 256
    layers: int = 2
    dropout: float = 0.3
    max_len: int = 128
    batch_size: int = 64
    lr: float = 1e-3
    epochs: int = 9
    clip_norm: float = 5.0
    seed: int = 0
    min_df: int = 2
    max_vocab: int = 50_000
    keep_best: bool = True

    def __post_init__(self):
        for name in ("embed_dim", "hidden", "layers", "max_len", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InputError("dropout must be in [0, 1)")


@dataclass
class HeadHyper:
    lr: float = 1e-3
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    clip_norm: float = None


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_micro_f1: float
    val_macro_f1: float

    HEADER = "epoch\ttrain_loss\tval_micro_f1\tval_macro_f1"

    def row(self):
        return "\t".join([str(self.epoch)] + [repr(float(v)) for v in (self.train_loss, self.val_micro_f1, self.val_macro_f1)])


@dataclass
class TrainResult:
    model: object
    log: list
    best_model: object = None
    best_epoch: int = None


# ---------------------------------------------------------------------------
# building blocks


def lstm_cell(x_t, h_prev, C_prev, params):
    """One LSTM step. ``params`` maps ``W_f, b_f, W_i, ..., b_o`` to tensors."""
    hx = ad.concat([h_prev, x_t], axis=-1)
    expected = params["W_f"].shape[0]
    if hx.shape[-1] != expected:
        raise ShapeError(f"[h; x] has width {hx.shape[-1]}, gate weights expect {expected}")
    f = ad.sigmoid(hx @ params["W_f"] + params["b_f"])
    i = ad.sigmoid(hx @ params["W_i"] + params["b_i"])
    c_tilde = ad.tanh(hx @ params["W_C"] + params["b_C"])
    C = f * C_prev + i * c_tilde
    o = ad.sigmoid(hx @ params["W_o"] + params["b_o"])
    h = o * ad.tanh(C)
    return h, C


def _run_direction(xs, mask, cell_params, hidden, reverse):
    batch = mask.shape[0]
    h = ad.Tensor(np.zeros((batch, hidden)))
    C = ad.Tensor(np.zeros((batch, hidden)))
    steps = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    outs = [None] * len(xs)
    for t in steps:
        h_new, C_new = lstm_cell(xs[t], h, C, cell_params)
        m = mask[:, t:t + 1]
        if m.all():
            h, C = h_new, C_new
        else:
            # padded rows keep their previous state; in reverse they stay at zero
            keep = m.astype(np.float64)
            h = keep * h_new + (1.0 - keep) * h
            C = keep * C_new + (1.0 - keep) * C
        outs[t] = h
    return outs


def attention_pool(H, W_a, mask=None):
    """Score each position by h^T W_a h, softmax over valid positions, pool.

    ``H`` is (T, D) or (B, T, D). Returns (context, alphas).
    """
    H = ad.as_tensor(H)
    W_a = ad.as_tensor(W_a)
    if H.ndim < 2 or H.shape[-1] != W_a.shape[0] or W_a.shape[0] != W_a.shape[1]:
        raise ShapeError(f"attention: states {H.shape} vs matrix {W_a.shape}")
    if mask is None:
        mask = np.ones(H.shape[:-1], dtype=bool)
    scores = ad.sum(ad.mul(H @ W_a, H), axis=-1)
    alphas = ad.softmax(scores, axis=-1, mask=mask)
    weights = ad.reshape(alphas, alphas.shape + (1,))
    context = ad.sum(ad.mul(H, weights), axis=H.ndim - 2)
    return context, alphas


def _uniform(rng, bound, shape):
    return rng.uniform(-bound, bound, size=shape)


class BiLstmModel:
    """Stacked BiLSTM encoder, attention pooling and a sigmoid output layer.

    The frozen embedding matrix is stored alongside the trainable
    parameters; row ``i`` holds the vector of ``vocab.itos[i]``.
    """

    def __init__(self, hyper, num_labels, vocab=None, embedding=None, params=None, seed=None):
        self.hyper = hyper
        self.num_labels = num_labels
        self.vocab = vocab
        self.embedding = None if embedding is None else np.asarray(embedding, dtype=np.float64)
        if self.embedding is not None and self.embedding.shape[1] != hyper.embed_dim:
            raise ShapeError(f"embedding width {self.embedding.shape[1]} != embed_dim {hyper.embed_dim}")
        if params is None:
            params = self._init_params(np.random.default_rng(hyper.seed if seed is None else seed))
        self.params = params

    def _init_params(self, rng):
        hp = self.hyper
        params = ad.ParameterSet()
        for layer in range(hp.layers):
            in_dim = hp.embed_dim if layer == 0 else 2 * hp.hidden
            bound = 1.0 / math.sqrt(in_dim + hp.hidden)
            for d in DIRECTIONS:
                for g in GATES:
                    params.add(f"l{layer}.{d}.W_{g}", _uniform(rng, bound, (hp.hidden + in_dim, hp.hidden)))
                    params.add(f"l{layer}.{d}.b_{g}", np.zeros(hp.hidden))
        params.add("attn.W_a", 0.01 * np.eye(2 * hp.hidden))
        params.add("out.W", _uniform(rng, 1.0 / math.sqrt(2 * hp.hidden), (2 * hp.hidden, self.num_labels)))
        params.add("out.b", np.zeros(self.num_labels))
        return params

    def cell_params(self, layer, direction):
        prefix = f"l{layer}.{direction}."
        return {name[len(prefix):]: t for name, t in self.params.items() if name.startswith(prefix)}

    # -- forward ------------------------------------------------------------

    def encode(self, X, lengths, training=False, rng=None):
        """(B, T, d) inputs -> ((B, T', 2*hidden) states, (B, T') mask), T' = max length."""
        X = np.asarray(X, dtype=np.float64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if X.ndim != 3 or X.shape[0] != len(lengths):
            raise ShapeError(f"expected (B, T, d) inputs with B lengths, got {X.shape} and {lengths.shape}")
        if X.shape[2] != self.hyper.embed_dim:
            raise ShapeError(f"input width {X.shape[2]} != embed_dim {self.hyper.embed_dim}")
        if np.any(lengths < 1):
            raise InputError("every sequence needs at least one position")
        if np.any(lengths > X.shape[1]):
            raise ShapeError("a length exceeds the number of input rows")
        T = int(lengths.max())
        mask = np.arange(T)[None, :] < lengths[:, None]
        inp = ad.Tensor(X[:, :T])
        for layer in range(self.hyper.layers):
            inp = ad.dropout(inp, self.hyper.dropout, rng, training)
            xs = [ad.select(inp, t, axis=1) for t in range(T)]
            halves = []
            for d in DIRECTIONS:
                outs = _run_direction(xs, mask, self.cell_params(layer, d), self.hyper.hidden, d == "bw")
                halves.append(ad.stack(outs, axis=1))
            inp = ad.concat(halves, axis=-1)
        return inp, mask

    def forward(self, X, lengths, training=False, rng=None):
        """Probabilities (B, K) and attention weights (B, T')."""
        H, mask = self.encode(X, lengths, training, rng)
        c, alphas = attention_pool(H, self.params["attn.W_a"], mask)
        c = ad.dropout(c, self.hyper.dropout, rng, training)
        return self.classify(c), alphas

    def classify(self, c):
        c = ad.as_tensor(c)
        if c.shape[-1] != self.params["out.W"].shape[0]:
            raise ShapeError(f"context width {c.shape[-1]} != {self.params['out.W'].shape[0]}")
        return ad.sigmoid(c @ self.params["out.W"] + self.params["out.b"])

    # -- text handling --------------------------------------------------------

    def token_ids(self, tokens):
        ids = self.vocab.encode(tokens)[: self.hyper.max_len]
        return ids or [self.vocab.unk_index]

    def batch_arrays(self, id_lists):
        lengths = np.array([len(ids) for ids in id_lists])
        padded = np.full((len(id_lists), lengths.max()), self.vocab.unk_index)
        for r, ids in enumerate(id_lists):
            padded[r, : len(ids)] = ids
        return self.embedding[padded], lengths

    def predict_proba(self, docs, batch_size=256):
        """Probabilities for tokenized documents (dropout off)."""
        ids = [self.token_ids(d) for d in docs]
        out = np.zeros((len(ids), self.num_labels))
        for start in range(0, len(ids), batch_size):
            X, lengths = self.batch_arrays(ids[start:start + batch_size])
            probs, _ = self.forward(X, lengths)
            out[start:start + len(lengths)] = probs.value
        return out

    # -- persistence ----------------------------------------------------------

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.params.save(d / "params.bin")
        ad.save_tensors(d / "embedding.bin", {"embedding": self.embedding})
        self.vocab.save(d / "vocab.txt")
        write_manifest(d / "manifest.txt", {"model_type": "bilstm", "num_labels": self.num_labels,
                                            **asdict(self.hyper)})

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = read_manifest(d / "manifest.txt")
        hyper = _dataclass_from_strings(BiLstmHyper, meta)
        vocab = TokenVocabulary.load(d / "vocab.txt")
        embedding = ad.load_tensors(d / "embedding.bin")["embedding"]
        model = cls(hyper, int(meta["num_labels"]), vocab, embedding, seed=0)
        model.params.load_state_dict(ad.load_tensors(d / "params.bin"))
        return model


def bilstm_encode(seq, length, model):
    """Encode one (rows, d) sequence; returns a (length, 2*hidden) tensor."""
    if length < 1:
        raise InputError("cannot encode an empty sequence")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.shape[0] > model.hyper.max_len:
        raise ShapeError(f"{seq.shape[0]} rows exceed max_len {model.hyper.max_len}")
    H, _ = model.encode(seq[None], [length])
    return ad.select(H, 0, axis=0)


def classify(c, model):
    return model.classify(c)


# ---------------------------------------------------------------------------
# dense head over precomputed summary vectors


class DenseHead:
    """Affine layer + sigmoid: probs = sigmoid(x @ W + b), zero-initialised."""

    def __init__(self, dim, num_labels, params=None):
        if params is None:
            params = ad.ParameterSet({"W": np.zeros((dim, num_labels)), "b": np.zeros(num_labels)})
        self.params = params

    @property
    def dim(self):
        return self.params["W"].shape[0]

    @property
    def num_labels(self):
        return self.params["W"].shape[1]

    def forward(self, X):
        X = ad.as_tensor(X)
        if X.shape[-1] != self.dim:
            raise ShapeError(f"input width {X.shape[-1]} != head input dimension {self.dim}")
        return ad.sigmoid(X @ self.params["W"] + self.params["b"])

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ShapeError(f"input width {X.shape[-1]} != head input dimension {self.dim}")
        return expit(X @ self.params["W"].value + self.params["b"].value)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.params.save(d / "params.bin")
        write_manifest(d / "manifest.txt", {"model_type": "head", "dim": self.dim,
                                            "num_labels": self.num_labels})

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = read_manifest(d / "manifest.txt")
        head = cls(int(meta["dim"]), int(meta["num_labels"]))
        head.params.load_state_dict(ad.load_tensors(d / "params.bin"))
        return head


# ---------------------------------------------------------------------------
# training


def _targets(Y, k):
    if isinstance(Y, np.ndarray) and Y.ndim == 2:
        return Y.astype(np.float64)
    out = np.zeros((len(Y), k))
    for i, labels in enumerate(Y):
        out[i, list(labels)] = 1.0
    return out


def _val_scores(probs, gold):
    if probs is None:
        return float("nan"), float("nan")
    return micro_macro(binarize(probs, 0.5), gold)


def _fit(params, n, batch_size, epochs, lr, clip_norm, seed, loss_on_batch, predict_val, gold_val,
         snapshot, on_epoch):
    """Shared mini-batch Adam loop. Returns (log, best_snapshot, best_epoch)."""
    shuffle_rng = np.random.default_rng([seed, 1])
    history = []
    best, best_epoch, best_macro = None, None, -1.0
    for epoch in range(1, epochs + 1):
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch_size), 1):
            idx = perm[start:start + batch_size]
            loss = loss_on_batch(idx)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(epoch, b, value)
            params.zero_grad()
            ad.backward(loss)
            if clip_norm:
                ad.clip_grad_norm(params, clip_norm)
            ad.adam_step(params, lr=lr)
            total += value * len(idx)
        val_probs = predict_val() if predict_val is not None else None
        micro, macro = _val_scores(val_probs, gold_val)
        row = EpochLog(epoch, total / n, micro, macro)
        history.append(row)
        log.info("epoch %d: loss=%.5f val_micro_f1=%.4f val_macro_f1=%.4f", epoch, row.train_loss, micro, macro)
        if on_epoch is not None:
            on_epoch(row)
        if val_probs is not None and macro > best_macro:
            best_macro, best_epoch, best = macro, epoch, snapshot()
    return history, best, best_epoch


def train_bilstm(train, val, embeddings, hyper, loss_choice, on_epoch=None):
    """Mini-batch Adam training with frozen embeddings.

    ``loss_choice`` is an :class:`~goemo.imbalance.LossConfig`. Returns a
    :class:`TrainResult` holding the final model and, when ``val`` is given
    and ``hyper.keep_best`` is set, the best-validation-macro-F1 checkpoint.
    """
    if len(train) == 0:
        raise InputError("empty training corpus")
    if embeddings.dimension != hyper.embed_dim:
        raise ShapeError(f"embedding dimension {embeddings.dimension} != embed_dim {hyper.embed_dim}")
    k = len(train.vocab)
    vocab = build_vocab([train], min_df=hyper.min_df, max_size=hyper.max_vocab)
    emb = embeddings.subset(vocab.itos)
    emb[vocab.unk_index] = 0.0
    log.info("vocabulary %d tokens, %d with vectors", len(vocab),
             sum(t in embeddings for t in vocab.itos))
    model = BiLstmModel(hyper, k, vocab, emb, seed=hyper.seed)
    dropout_rng = np.random.default_rng([hyper.seed, 2])

    train_ids = [model.token_ids(prepare(t)) for t in train.texts]
    Y = label_matrix(train, np.float64)
    val_docs = [prepare(t) for t in val.texts] if val is not None and len(val) else None
    gold_val = label_matrix(val) if val_docs is not None else None

    def loss_on_batch(idx):
        X, lengths = model.batch_arrays([train_ids[i] for i in idx])
        probs, _ = model.forward(X, lengths, training=True, rng=dropout_rng)
        return loss_choice(probs, Y[idx])

    def snapshot():
        return BiLstmModel(hyper, k, vocab, emb, params=model.params.copy())

    history, best, best_epoch = _fit(
        model.params, len(train_ids), hyper.batch_size, hyper.epochs, hyper.lr, hyper.clip_norm,
        hyper.seed, loss_on_batch,
        (lambda: model.predict_proba(val_docs)) if val_docs is not None else None,
        gold_val, snapshot if hyper.keep_best else (lambda: None), on_epoch)
    return TrainResult(model, history, best, best_epoch)


def train_head(Xsum, Y, hyper=None, loss_choice=None, X_val=None, Y_val=None, on_epoch=None):
    """Train a :class:`DenseHead` on summary vectors with Adam."""
    hyper = hyper or HeadHyper()
    loss_choice = loss_choice or LossConfig()
    X = np.asarray(Xsum, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"summary vectors must be a matrix, got shape {X.shape}")
    k = Y.shape[1] if isinstance(Y, np.ndarray) and Y.ndim == 2 else None
    if k is None:
        k = len(loss_choice.weights) if loss_choice.weights is not None else NUM_LABELS
    T = _targets(Y, k)
    if T.shape[0] != X.shape[0]:
        raise ShapeError(f"{X.shape[0]} vectors but {T.shape[0]} label rows")
    head = DenseHead(X.shape[1], k)
    gold_val = None if Y_val is None else _targets(Y_val, k).astype(np.int8)

    def loss_on_batch(idx):
        return loss_choice(head.forward(X[idx]), T[idx])

    predict_val = None if X_val is None else (lambda: head.predict_proba(X_val))
    history, best, best_epoch = _fit(
        head.params, X.shape[0], hyper.batch_size, hyper.epochs, hyper.lr, hyper.clip_norm,
        hyper.seed, loss_on_batch, predict_val, gold_val,
        lambda: DenseHead(head.dim, k, head.params.copy()), on_epoch)
    return TrainResult(head, history, best, best_epoch)


# ---------------------------------------------------------------------------
# manifests


def write_manifest(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def read_manifest(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    out = {}
    for line in lines:
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _parse_scalar(text, kind):
    if kind is bool or kind == "bool":
        return text.lower() in ("1", "true", "yes", "on")
    if text == "None":
        return None
    if kind is int or kind == "int":
        return int(text)
    if kind is float or kind == "float":
        return float(text)
    return text


def _dataclass_from_strings(cls, values):
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            kwargs[f.name] = _parse_scalar(values[f.name], f.type)
    return cls(**kwargs)
