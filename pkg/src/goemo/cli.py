"""Command-line driver.

Every command reads an optional ``key=value`` config file (``--config``)
and per-key flag overrides; flags win. Unknown keys and missing input
paths are rejected before any work starts. Output directories receive a
``config.txt`` holding the fully resolved configuration, seed included.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 shape or
contract mismatch.
"""

import argparse
import logging
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bilstm import (BiLstmHyper, BiLstmModel, DenseHead, EpochLog, HeadHyper, read_manifest,
                     train_bilstm, train_head, write_manifest)
from .corpus import LabelVocabulary, compute_stats, label_matrix, load_corpus, top_tokens_per_label
from .errors import GoEmoError, InputError, ShapeError
from .evaluation import (DEFAULT_GRID, aggregates_line, binarize, build_report, load_predictions,
                         align_predictions, load_thresholds, micro_macro, render_report,
                         save_predictions, save_thresholds, tune_thresholds)
from .features import (TfidfModel, fit_tfidf, load_embeddings, load_summary_vectors, tfidf_matrix)
from .imbalance import LossConfig, inverse_frequency_weights
from .linear import LinearConfig, LinearModel, predict_proba, train_binary_relevance
from .selfcheck import TOLERANCE, run_suite
from .textprep import SPECIAL_TOKENS, prepare

log = logging.getLogger("goemo")


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int, float, optfloat, bool, str, path, optpath, paths, outdir, optoutdir, floats
    default: object = None
    choices: tuple = ()
    help: str = ""

    @property
    def required(self):
        return self.default is None and self.kind in ("path", "paths", "outdir")


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"expected a boolean, got {text!r}")


def _convert(key, text):
    text = text.strip()
    try:
        if key.kind == "int":
            return int(text)
        if key.kind == "float":
            return float(text)
        if key.kind == "optfloat":
            return None if text.lower() in ("", "none") else float(text)
        if key.kind == "floats":
            return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise InputError(f"{key.name}: cannot parse {text!r} as {key.kind}") from None
    if key.kind == "bool":
        return _bool(text)
    if key.kind == "paths":
        return tuple(Path(t.strip()) for t in text.split(",") if t.strip())
    if key.kind in ("path", "optpath", "outdir", "optoutdir"):
        return Path(text) if text else None
    if key.choices and text not in key.choices:
        raise InputError(f"{key.name}: {text!r} is not one of {', '.join(key.choices)}")
    return text


def _render(value):
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class RunConfig:
    """Resolved key/value settings for one command."""

    def __init__(self, command, keys, values):
        self.command = command
        self.keys = {k.name: k for k in keys}
        self.values = values

    def __getitem__(self, name):
        return self.values[name]

    def get(self, name, default=None):
        return self.values.get(name, default)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"command={self.command}\n")
            for name in sorted(self.values):
                value = self.values[name]
                fh.write(f"{name}={'None' if value is None else _render(value)}\n")


def read_config_file(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_config(command, keys, file_values, flag_values):
    known = {k.name: k for k in keys}
    unknown = sorted(set(file_values) - set(known))
    if unknown:
        raise InputError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    values = {}
    for key in keys:
        if flag_values.get(key.name) is not None:
            values[key.name] = _convert(key, flag_values[key.name])
        elif key.name in file_values:
            values[key.name] = _convert(key, file_values[key.name])
        else:
            if key.required:
                raise InputError(f"{command}: missing required key {key.name!r}")
            values[key.name] = key.default
        if key.choices and values[key.name] not in key.choices:
            raise InputError(f"{key.name}: {values[key.name]!r} is not one of {', '.join(key.choices)}")
    return RunConfig(command, keys, values)


def validate_paths(cfg):
    """Check inputs exist and output directories are creatable, before any work."""
    for name, key in cfg.keys.items():
        value = cfg[name]
        if value is None:
            continue
        if key.kind in ("path", "optpath"):
            if not value.exists():
                raise InputError(f"{name}: no such file or directory: {value}")
        elif key.kind == "paths":
            if not value:
                raise InputError(f"{name}: at least one path required")
            for p in value:
                if not p.exists():
                    raise InputError(f"{name}: no such file or directory: {p}")
    for name, key in cfg.keys.items():
        value = cfg[name]
        if key.kind in ("outdir", "optoutdir") and value is not None:
            if value.exists() and not value.is_dir():
                raise InputError(f"{name}: {value} exists and is not a directory")
            try:
                value.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise InputError(f"{name}: cannot create {value}: {exc}") from exc


COMMON = (
    Key("seed", "int", 0, help="single source of randomness"),
    Key("labels", "optpath", help="label vocabulary file (one name per line)"),
    Key("workers", "int", 1, help="threads for per-label work"),
)

LOSS_KEYS = (
    Key("loss", "str", "bce", ("bce", "focal")),
    Key("gamma", "float", 2.0, help="focal focusing parameter"),
    Key("class_weights", "str", "inverse_frequency", ("none", "inverse_frequency")),
)

COMMANDS = {
    "stats": (
        Key("data", "paths", help="comma-separated corpus files, pooled"),
        Key("out", "optoutdir"),
        Key("format", "str", "text", ("text", "json")),
        Key("top_k", "int", 10, help="top tokens per label (0 disables)"),
    ),
    "train-lr": (
        Key("train", "path"), Key("val", "path"), Key("out", "outdir"),
        Key("min_df", "int", 2), Key("max_features", "int", 50_000), Key("max_n", "int", 2),
        Key("normalize", "bool", False, help="L2-normalise TF-IDF rows"),
        Key("balanced", "bool", True), Key("l2", "optfloat", None),
        Key("max_iter", "int", 1000), Key("tolerance", "float", 1e-6),
        Key("solver", "str", "lbfgs", ("lbfgs", "gd")),
    ),
    "train-bilstm": (
        Key("train", "path"), Key("val", "path"), Key("embeddings", "path"), Key("out", "outdir"),
        Key("embed_dim", "int", 300), Key("hidden", "int", 256), Key("layers", "int", 2),
        Key("dropout", "float", 0.3), Key("max_len", "int", 128), Key("batch_size", "int", 64),
        Key("lr", "float", 1e-3), Key("epochs", "int", 9), Key("clip_norm", "optfloat", 5.0),
        Key("min_df", "int", 2), Key("max_vocab", "int", 50_000), Key("keep_best", "bool", True),
    ) + LOSS_KEYS,
    "train-head": (
        Key("train", "path"), Key("train_vectors", "path"),
        Key("val", "optpath"), Key("val_vectors", "optpath"), Key("out", "outdir"),
        Key("lr", "float", 1e-3), Key("epochs", "int", 5), Key("batch_size", "int", 64),
        Key("clip_norm", "optfloat", None),
    ) + LOSS_KEYS,
    "evaluate": (
        Key("data", "path"),
        Key("model", "optpath", help="model directory (lr, bilstm or head)"),
        Key("predictions", "optpath", help="prediction file instead of a model"),
        Key("vectors", "optpath", help="summary vectors, for head models"),
        Key("thresholds", "optpath"),
        Key("exclude", "str", "", help="comma-separated labels left out of macro-F1"),
        Key("format", "str", "text", ("text", "tsv", "json")),
        Key("out", "optoutdir"),
    ),
    "tune-thresholds": (
        Key("data", "path"), Key("predictions", "path"), Key("out", "outdir"),
        Key("grid", "floats", DEFAULT_GRID),
        Key("exclude", "str", ""),
    ),
    "gradcheck": (
        Key("out", "optoutdir"),
    ),
}


# ---------------------------------------------------------------------------
# helpers


def _vocab(cfg):
    return LabelVocabulary.load(cfg["labels"]) if cfg["labels"] else LabelVocabulary.default()


def _exclude_indices(cfg, vocab):
    names = [n.strip() for n in cfg["exclude"].split(",") if n.strip()]
    try:
        return tuple(vocab.index_of[n] for n in names)
    except KeyError as exc:
        raise InputError(f"exclude: unknown label {exc.args[0]!r}") from None


def _loss(cfg, train):
    weights = None
    if cfg["class_weights"] == "inverse_frequency":
        weights = inverse_frequency_weights(compute_stats(train))
    return LossConfig(cfg["loss"], cfg["gamma"], weights)


def _write_log(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(EpochLog.HEADER + "\n")
        for row in rows:
            fh.write(row.row() + "\n")


def _model_dir(path):
    for cand in (path, path / "model"):
        if (cand / "manifest.txt").is_file():
            return cand
    raise InputError(f"{path}: no model manifest found")


def _model_predictions(cfg, corpus):
    d = _model_dir(cfg["model"])
    kind = read_manifest(d / "manifest.txt").get("model_type")
    if kind == "lr":
        meta = read_manifest(d / "manifest.txt")
        tfidf = TfidfModel.load(d / "tfidf.tsv")
        model = LinearModel.load(d / "lr_model.txt")
        X = tfidf_matrix(tfidf, [prepare(t) for t in corpus.texts], _bool(meta.get("normalize", "false")))
        return predict_proba(model, X)
    if kind == "bilstm":
        return BiLstmModel.load(d).predict_proba([prepare(t) for t in corpus.texts])
    if kind == "head":
        if cfg["vectors"] is None:
            raise InputError("evaluating a head model needs the 'vectors' key")
        head = DenseHead.load(d)
        return head.predict_proba(load_summary_vectors(cfg["vectors"], corpus))
    raise InputError(f"{d}: unknown model type {kind!r}")


def _check_width(probs, vocab):
    if probs.shape[1] != len(vocab):
        raise ShapeError(f"model predicts {probs.shape[1]} labels, vocabulary has {len(vocab)}")


# ---------------------------------------------------------------------------
# commands


def cmd_stats(cfg):
    vocab = _vocab(cfg)
    corpora = [load_corpus(p, vocab, "train") for p in cfg["data"]]
    stats = compute_stats(corpora)
    text = stats.to_json() + "\n" if cfg["format"] == "json" else stats.to_text()
    sys.stdout.write(text)
    out = cfg["out"]
    if out is not None:
        (out / "stats.txt").write_text(stats.to_text(), encoding="utf-8")
        (out / "stats.json").write_text(stats.to_json() + "\n", encoding="utf-8")
        if cfg["top_k"] > 0:
            with open(out / "top_tokens.tsv", "w", encoding="utf-8") as fh:
                fh.write("label\trank\ttoken\tfrequency\n")
                for k, name in enumerate(vocab.names):
                    for rank, (tok, freq) in enumerate(_pooled_top(corpora, k, cfg["top_k"]), 1):
                        fh.write(f"{name}\t{rank}\t{tok}\t{freq}\n")
        cfg.write(out / "config.txt")
    return 0


def _pooled_top(corpora, label, k):
    if len(corpora) == 1:
        return top_tokens_per_label(corpora[0], label, k)
    freq = Counter()
    for c in corpora:
        freq.update(dict(top_tokens_per_label(c, label, k=None)))
    return sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


def cmd_train_lr(cfg):
    vocab = _vocab(cfg)
    train = load_corpus(cfg["train"], vocab, "train")
    val = load_corpus(cfg["val"], vocab, "validation")
    out = cfg["out"]
    cfg.write(out / "config.txt")
    log.info("fitting TF-IDF on %d training comments", len(train))
    train_docs = [prepare(t) for t in train.texts]
    tfidf = fit_tfidf(train_docs, cfg["min_df"], cfg["max_features"], cfg["max_n"])
    X = tfidf_matrix(tfidf, train_docs, cfg["normalize"])
    lcfg = LinearConfig(cfg["max_iter"], cfg["tolerance"], cfg["l2"], cfg["balanced"], cfg["solver"],
                        cfg["workers"])
    log.info("training %d binary classifiers over %d features", len(vocab), tfidf.dimension)
    model = train_binary_relevance(X, label_matrix(train, np.float64), lcfg)

    model_dir = out / "model"
    model_dir.mkdir(exist_ok=True)
    tfidf.save(model_dir / "tfidf.tsv")
    model.save(model_dir / "lr_model.txt")
    write_manifest(model_dir / "manifest.txt", {"model_type": "lr", "normalize": cfg["normalize"]})
    with open(out / "train_log.tsv", "w", encoding="utf-8") as fh:
        fh.write("label\titerations\tconverged\tdegenerate\tfinal_loss\n")
        for name, fit in zip(vocab.names, model.fits):
            final = fit.loss_history[-1] if fit.loss_history else float("nan")
            fh.write(f"{name}\t{fit.iterations}\t{fit.converged}\t{fit.degenerate}\t{float(final)!r}\n")

    Xv = tfidf_matrix(tfidf, [prepare(t) for t in val.texts], cfg["normalize"])
    probs = predict_proba(model, Xv)
    save_predictions(out / "val_predictions.tsv", val.ids, probs)
    micro, macro = micro_macro(binarize(probs), label_matrix(val))
    print(f"val_micro_f1\t{micro:.4f}\nval_macro_f1\t{macro:.4f}")
    return 0


def cmd_train_bilstm(cfg):
    vocab = _vocab(cfg)
    train = load_corpus(cfg["train"], vocab, "train")
    val = load_corpus(cfg["val"], vocab, "validation")
    hyper = BiLstmHyper(
        embed_dim=cfg["embed_dim"], hidden=cfg["hidden"], layers=cfg["layers"], dropout=cfg["dropout"],
        max_len=cfg["max_len"], batch_size=cfg["batch_size"], lr=cfg["lr"], epochs=cfg["epochs"],
        clip_norm=cfg["clip_norm"], seed=cfg["seed"], min_df=cfg["min_df"], max_vocab=cfg["max_vocab"],
        keep_best=cfg["keep_best"])
    loss = _loss(cfg, train)
    out = cfg["out"]
    cfg.write(out / "config.txt")
    wanted = {tok for t in train.texts for tok in prepare(t)} | set(SPECIAL_TOKENS)
    log.info("loading embeddings from %s", cfg["embeddings"])
    table = load_embeddings(cfg["embeddings"], expected_dim=hyper.embed_dim, restrict_to=wanted)

    log_path = out / "epoch_log.tsv"
    rows = []

    def on_epoch(row):
        rows.append(row)
        _write_log(log_path, rows)

    result = train_bilstm(train, val, table, hyper, loss, on_epoch=on_epoch)
    result.model.save(out / "model")
    chosen = result.model
    if result.best_model is not None:
        result.best_model.save(out / "best_model")
        chosen = result.best_model
        log.info("best validation macro-F1 at epoch %d", result.best_epoch)
    probs = chosen.predict_proba([prepare(t) for t in val.texts])
    save_predictions(out / "val_predictions.tsv", val.ids, probs)
    return 0


def cmd_train_head(cfg):
    vocab = _vocab(cfg)
    train = load_corpus(cfg["train"], vocab, "train")
    if (cfg["val"] is None) != (cfg["val_vectors"] is None):
        raise InputError("val and val_vectors must be given together")
    Xtr = load_summary_vectors(cfg["train_vectors"], train)
    val = Xv = Yv = None
    if cfg["val"] is not None:
        val = load_corpus(cfg["val"], vocab, "validation")
        Xv = load_summary_vectors(cfg["val_vectors"], val)
        if Xv.shape[1] != Xtr.shape[1]:
            raise ShapeError(f"validation vectors have width {Xv.shape[1]}, training {Xtr.shape[1]}")
        Yv = label_matrix(val)
    hyper = HeadHyper(cfg["lr"], cfg["epochs"], cfg["batch_size"], cfg["seed"], cfg["clip_norm"])
    out = cfg["out"]
    cfg.write(out / "config.txt")
    rows = []

    def on_epoch(row):
        rows.append(row)
        _write_log(out / "epoch_log.tsv", rows)

    result = train_head(Xtr, label_matrix(train, np.float64), hyper, _loss(cfg, train), Xv, Yv, on_epoch)
    result.model.save(out / "model")
    if result.best_model is not None:
        result.best_model.save(out / "best_model")
    if val is not None:
        chosen = result.best_model or result.model
        save_predictions(out / "val_predictions.tsv", val.ids, chosen.predict_proba(Xv))
    return 0


def cmd_evaluate(cfg):
    if (cfg["model"] is None) == (cfg["predictions"] is None):
        raise InputError("give exactly one of 'model' or 'predictions'")
    vocab = _vocab(cfg)
    corpus = load_corpus(cfg["data"], vocab, "test")
    if cfg["predictions"] is not None:
        ids, probs = load_predictions(cfg["predictions"], len(vocab))
        probs = align_predictions(ids, probs, corpus.ids)
    else:
        probs = _model_predictions(cfg, corpus)
    _check_width(probs, vocab)
    thresholds = load_thresholds(cfg["thresholds"], vocab.names) if cfg["thresholds"] else 0.5
    pred = binarize(probs, thresholds)
    report = build_report(pred, label_matrix(corpus), vocab.names, _exclude_indices(cfg, vocab))
    sys.stdout.write(aggregates_line(report))
    rendered = render_report(report, cfg["format"])
    out = cfg["out"]
    if out is not None:
        save_predictions(out / "predictions.tsv", corpus.ids, probs)
        ext = {"text": "txt", "tsv": "tsv", "json": "json"}[cfg["format"]]
        (out / f"report.{ext}").write_text(rendered, encoding="utf-8")
        cfg.write(out / "config.txt")
    else:
        sys.stderr.write(rendered)
    return 0


def cmd_tune_thresholds(cfg):
    vocab = _vocab(cfg)
    corpus = load_corpus(cfg["data"], vocab, "validation")
    ids, probs = load_predictions(cfg["predictions"], len(vocab))
    probs = align_predictions(ids, probs, corpus.ids)
    gold = label_matrix(corpus)
    exclude = _exclude_indices(cfg, vocab)
    tau = tune_thresholds(probs, gold, cfg["grid"], workers=cfg["workers"])
    out = cfg["out"]
    save_thresholds(out / "thresholds.tsv", tau, vocab.names)
    cfg.write(out / "config.txt")
    _, default_macro = micro_macro(binarize(probs, 0.5), gold, exclude)
    _, tuned_macro = micro_macro(binarize(probs, tau), gold, exclude)
    print(f"default_macro_f1\t{default_macro:.4f}\ntuned_macro_f1\t{tuned_macro:.4f}")
    return 0


def cmd_gradcheck(cfg):
    results = run_suite(cfg["seed"])
    lines = [f"{r.name}\t{r.max_rel_error:.3e}\t{'ok' if r.passed else 'FAIL'}" for r in results]
    text = "check\tmax_rel_error\tstatus\n" + "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg["out"] is not None:
        (cfg["out"] / "gradcheck.tsv").write_text(text, encoding="utf-8")
        cfg.write(cfg["out"] / "config.txt")
    failed = [r.name for r in results if not r.passed]
    if failed:
        sys.stderr.write(f"gradient check above {TOLERANCE:g}: {', '.join(failed)}\n")
        return 1
    return 0


HANDLERS = {
    "stats": cmd_stats,
    "train-lr": cmd_train_lr,
    "train-bilstm": cmd_train_bilstm,
    "train-head": cmd_train_head,
    "evaluate": cmd_evaluate,
    "tune-thresholds": cmd_tune_thresholds,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="goemo", description="Multi-label emotion classification toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value settings file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        for key in COMMON + keys:
            extra = f" (choices: {', '.join(key.choices)})" if key.choices else ""
            default = "" if key.default is None else f" [default: {_render(key.default)}]"
            p.add_argument("--" + key.name.replace("_", "-"), dest=key.name, default=None,
                           metavar=key.kind.upper(), help=key.help + extra + default)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    keys = COMMON + COMMANDS[args.command]
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, keys, file_values, vars(args))
        validate_paths(cfg)
        return HANDLERS[args.command](cfg)
    except GoEmoError as exc:
        sys.stderr.write(f"goemo {args.command}: error: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"goemo {args.command}: error: {exc}\n")
        return InputError.exit_code
