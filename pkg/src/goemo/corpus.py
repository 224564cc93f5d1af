"""GoEmotions-format ingestion and dataset statistics."""

import json
import logging
import statistics
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError, ValidationError
from .textprep import prepare

log = logging.getLogger(__name__)

NUM_LABELS = 28

GOEMOTIONS_LABELS = (
    "admiration", "amusement", "anger", "annoyance", "approval", "caring",
    "confusion", "curiosity", "desire", "disappointment", "disapproval",
    "disgust", "embarrassment", "excitement", "fear", "gratitude", "grief",
    "joy", "love", "nervousness", "optimism", "pride", "realization",
    "relief", "remorse", "sadness", "surprise", "neutral",
)

SPLITS = ("train", "validation", "test")
# more labels than this on one comment is unusual enough to warn about
_MAX_EXPECTED_LABELS = 5


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple
    index_of: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) != NUM_LABELS:
            raise InputError(f"label vocabulary must have {NUM_LABELS} entries, got {len(names)}")
        index_of = {name: i for i, name in enumerate(names)}
        if len(index_of) != len(names):
            raise InputError("duplicate label names")
        object.__setattr__(self, "index_of", index_of)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, i):
        return self.names[i]

    @classmethod
    def default(cls):
        return cls(GOEMOTIONS_LABELS)

    @classmethod
    def load(cls, path):
        """One label name per line; line order defines the index."""
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise InputError(f"cannot read label file {path}: {exc}") from exc
        names = [ln.strip() for ln in lines if ln.strip()]
        return cls(names)

    def save(self, path):
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")


@dataclass(frozen=True)
class Example:
    id: str
    text: str
    labels: tuple
    char_length: int
    word_count: int
    avg_word_length: float

    @classmethod
    def make(cls, id, text, labels):
        words = text.split()
        word_count = len(words)
        avg = sum(len(w) for w in words) / word_count if word_count else 0.0
        return cls(id, text, tuple(sorted(set(labels))), len(text), word_count, avg)


@dataclass(frozen=True)
class Corpus:
    examples: tuple
    split_name: str
    vocab: LabelVocabulary

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise ValidationError(f"duplicate id {ex.id!r} in split {self.split_name}")
            seen.add(ex.id)
            if not ex.labels:
                raise ValidationError(f"example {ex.id!r} has no labels")
            for k in ex.labels:
                if not 0 <= k < len(self.vocab):
                    raise ValidationError(f"example {ex.id!r}: label {k} out of range")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self):
        return [ex.id for ex in self.examples]

    @property
    def texts(self):
        return [ex.text for ex in self.examples]

    @property
    def label_sets(self):
        return [ex.labels for ex in self.examples]


def _parse_labels(field_, lineno, path, k):
    field_ = field_.strip()
    if not field_:
        raise ValidationError("empty label field", line=lineno, path=path)
    labels = []
    for part in field_.split(","):
        try:
            idx = int(part)
        except ValueError:
            raise ValidationError(f"non-integer label {part!r}", line=lineno, path=path) from None
        if not 0 <= idx < k:
            raise ValidationError(f"label index {idx} outside [0, {k})", line=lineno, path=path)
        labels.append(idx)
    return labels


def _looks_like_header(fields):
    try:
        [int(p) for p in fields[1].split(",")]
    except ValueError:
        return True
    return False


def load_corpus(path, vocab=None, split_name="train"):
    """Read a 3-column TSV (``text<TAB>labels<TAB>id``) into a Corpus.

    A header line, if present, is recognised by its non-numeric label column
    and skipped.
    """
    vocab = vocab or LabelVocabulary.default()
    path = Path(path)
    if split_name not in SPLITS:
        raise InputError(f"split_name must be one of {SPLITS}, got {split_name!r}")
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    examples = []
    seen = {}
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", line=lineno, path=path)
            if lineno == 1 and _looks_like_header(fields):
                continue
            text, label_field, ex_id = fields
            labels = _parse_labels(label_field, lineno, path, len(vocab))
            if ex_id in seen:
                raise ValidationError(f"duplicate id {ex_id!r} (first seen on line {seen[ex_id]})", line=lineno, path=path)
            seen[ex_id] = lineno
            if len(set(labels)) > _MAX_EXPECTED_LABELS:
                warnings.warn(f"{path}:{lineno}: example {ex_id!r} has {len(set(labels))} labels", stacklevel=2)
            examples.append(Example.make(ex_id, text, labels))
    log.info("loaded %d examples from %s", len(examples), path)
    return Corpus(tuple(examples), split_name, vocab)


def write_corpus(corpus, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for ex in corpus.examples:
            fh.write(f"{ex.text}\t{','.join(map(str, ex.labels))}\t{ex.id}\n")


def label_matrix(corpus, dtype=None):
    """N x K binary indicator matrix of the gold labels."""
    y = np.zeros((len(corpus), len(corpus.vocab)), dtype=dtype or np.int8)
    for i, ex in enumerate(corpus.examples):
        y[i, list(ex.labels)] = 1
    return y


@dataclass(frozen=True)
class CorpusStats:
    total: int
    per_label_counts: tuple
    label_count_histogram: dict
    mean_char_length: float
    mean_word_count: float
    median_word_count: float
    char_length_range: tuple
    label_names: tuple = ()

    def to_dict(self):
        return {
            "total": self.total,
            "per_label_counts": dict(zip(self.label_names, self.per_label_counts)),
            "label_count_histogram": {
                str(n): {"count": c, "percentage": p}
                for n, (c, p) in sorted(self.label_count_histogram.items())
            },
            "mean_char_length": self.mean_char_length,
            "mean_word_count": self.mean_word_count,
            "median_word_count": self.median_word_count,
            "char_length_range": list(self.char_length_range),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    def to_text(self):
        lines = [
            f"total={self.total}",
            f"mean_char_length={self.mean_char_length:.2f}",
            f"mean_word_count={self.mean_word_count:.2f}",
            f"median_word_count={self.median_word_count:g}",
            f"char_length_min={self.char_length_range[0]}",
            f"char_length_max={self.char_length_range[1]}",
        ]
        for n, (count, pct) in sorted(self.label_count_histogram.items()):
            lines.append(f"labels_per_example.{n}={count} ({pct:.2f}%)")
        for name, count in zip(self.label_names, self.per_label_counts):
            lines.append(f"label.{name}={count}")
        return "\n".join(lines) + "\n"


def compute_stats(corpora):
    """Statistics over one corpus or several corpora pooled together."""
    if isinstance(corpora, Corpus):
        corpora = [corpora]
    examples = [ex for c in corpora for ex in c.examples]
    if not examples:
        raise InputError("cannot compute statistics of an empty corpus")
    vocab = corpora[0].vocab
    counts = [0] * len(vocab)
    hist = Counter()
    for ex in examples:
        for k in ex.labels:
            counts[k] += 1
        hist[len(ex.labels)] += 1
    total = len(examples)
    char_lengths = [ex.char_length for ex in examples]
    word_counts = [ex.word_count for ex in examples]
    return CorpusStats(
        total=total,
        per_label_counts=tuple(counts),
        label_count_histogram={n: (c, 100.0 * c / total) for n, c in sorted(hist.items())},
        mean_char_length=sum(char_lengths) / total,
        mean_word_count=sum(word_counts) / total,
        median_word_count=statistics.median(word_counts),
        char_length_range=(min(char_lengths), max(char_lengths)),
        label_names=vocab.names,
    )


def top_tokens_per_label(corpus, label, k=20):
    """Most frequent tokens in the comments carrying ``label``.

    Ties are broken lexicographically so the output is deterministic.
    """
    if not 0 <= label < len(corpus.vocab):
        raise InputError(f"label {label} out of range")
    freq = Counter()
    for ex in corpus.examples:
        if label in ex.labels:
            freq.update(prepare(ex.text))
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]
