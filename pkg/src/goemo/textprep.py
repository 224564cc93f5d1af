"""Lower-casing and word-level tokenization for Reddit comments.

Emoji, punctuation and stop words are all kept. The anonymization
placeholders ``[NAME]`` and ``[RELIGION]`` survive both steps as single
tokens; the misspelt ``[RELEGION]`` is folded into ``[RELIGION]``.
"""

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, ParseError

NAME = "[NAME]"
RELIGION = "[RELIGION]"
SPECIAL_TOKENS = (NAME, RELIGION)
UNK = "<unk>"

_PLACEHOLDER_RE = re.compile(r"\[(name|religion|relegion)\]", re.IGNORECASE)
_CANONICAL = {"name": NAME, "religion": RELIGION, "relegion": RELIGION}

_ZWJ = "‍"
_VARIATION_SELECTORS = {"︎", "️"}


def _placeholder(match):
    return _CANONICAL[match.group(1).lower()]


def normalize(text):
    """Lower-case ``text`` while keeping placeholders upper-case."""
    if not text:
        return ""
    pieces = []
    pos = 0
    for m in _PLACEHOLDER_RE.finditer(text):
        pieces.append(text[pos:m.start()].lower())
        pieces.append(_placeholder(m))
        pos = m.end()
    pieces.append(text[pos:].lower())
    return "".join(pieces)


def _is_emoji(ch):
    if ch in _VARIATION_SELECTORS or ch == _ZWJ:
        return False
    cp = ord(ch)
    if 0x1F3FB <= cp <= 0x1F3FF:  # skin-tone modifiers attach to the previous emoji
        return False
    return unicodedata.category(ch) == "So"


def _is_emoji_modifier(ch):
    cp = ord(ch)
    return ch in _VARIATION_SELECTORS or 0x1F3FB <= cp <= 0x1F3FF


def _is_punct(ch):
    return unicodedata.category(ch).startswith("P")


def _split_emoji(chunk):
    """Split a whitespace-free chunk into emoji clusters and the text between them."""
    out = []
    buf = []
    i = 0
    n = len(chunk)
    while i < n:
        ch = chunk[i]
        if _is_emoji(ch):
            if buf:
                out.append(("text", "".join(buf)))
                buf = []
            j = i + 1
            while j < n:
                if _is_emoji_modifier(chunk[j]):
                    j += 1
                elif chunk[j] == _ZWJ and j + 1 < n and _is_emoji(chunk[j + 1]):
                    j += 2
                else:
                    break
            out.append(("emoji", chunk[i:j]))
            i = j
        else:
            buf.append(ch)
            i += 1
    if buf:
        out.append(("text", "".join(buf)))
    return out


def _split_punct(piece):
    start = 0
    end = len(piece)
    while start < end and _is_punct(piece[start]):
        start += 1
    while end > start and _is_punct(piece[end - 1]):
        end -= 1
    tokens = list(piece[:start])
    if start < end:
        tokens.append(piece[start:end])
    tokens.extend(piece[end:])
    return tokens


def tokenize(text):
    """Split normalized text into word, punctuation, emoji and placeholder tokens.

    Whitespace separates chunks; punctuation at either edge of a word is
    peeled off one character at a time, while internal punctuation
    (apostrophes in contractions, dots in "e.g") stays in the word.

    >>> tokenize("help, hope!")
    ['help', ',', 'hope', '!']
    """
    tokens = []
    for chunk in text.split():
        pos = 0
        parts = []
        for m in _PLACEHOLDER_RE.finditer(chunk):
            if m.start() > pos:
                parts.append(("raw", chunk[pos:m.start()]))
            parts.append(("special", m.group(0)))
            pos = m.end()
        if pos < len(chunk):
            parts.append(("raw", chunk[pos:]))
        for kind, piece in parts:
            if kind == "special":
                tokens.append(piece)
                continue
            for sub_kind, sub in _split_emoji(piece):
                if sub_kind == "emoji":
                    tokens.append(sub)
                else:
                    tokens.extend(_split_punct(sub))
    return tokens


def prepare(text):
    """normalize + tokenize."""
    return tokenize(normalize(text))


@dataclass(frozen=True)
class TokenVocabulary:
    """Dense token index. Index 0 is always the unknown token."""

    itos: tuple
    stoi: dict = field(default=None, compare=False, repr=False)
    special: tuple = SPECIAL_TOKENS

    def __post_init__(self):
        stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(stoi) != len(self.itos):
            raise InputError("duplicate tokens in vocabulary")
        if self.itos[0] != UNK:
            raise InputError(f"vocabulary must start with {UNK}")
        for tok in self.special:
            if tok not in stoi:
                raise InputError(f"special token {tok} missing from vocabulary")
        object.__setattr__(self, "stoi", stoi)

    unk_index = 0

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token):
        return self.stoi.get(token, self.unk_index)

    def encode(self, tokens):
        return [self.stoi.get(t, self.unk_index) for t in tokens]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.itos:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            itos = [line.rstrip("\n") for line in fh]
        for i, tok in enumerate(itos, 1):
            if not tok or any(c.isspace() for c in tok):
                raise ParseError(f"invalid token {tok!r}", line=i, path=Path(path))
        return cls(tuple(itos))


def document_frequencies(docs):
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    return df


def rank_by_frequency(df, min_df=1, max_size=None):
    """Terms with df >= min_df, most frequent first, ties lexicographic."""
    kept = [t for t, c in df.items() if c >= min_df]
    kept.sort(key=lambda t: (-df[t], t))
    if max_size is not None:
        kept = kept[:max_size]
    return kept


def build_vocab(corpora, min_df=2, max_size=50_000):
    """Build a token vocabulary from training corpora.

    ``max_size`` caps the number of regular tokens; ``<unk>`` and the
    placeholder tokens are added on top regardless of frequency.
    """
    if min_df < 1:
        raise InputError("min_df must be >= 1")
    docs = [prepare(ex.text) for corpus in corpora for ex in corpus.examples]
    if not docs:
        raise InputError("cannot build a vocabulary from an empty corpus")
    df = document_frequencies(docs)
    for tok in SPECIAL_TOKENS:
        df.pop(tok, None)
    df.pop(UNK, None)
    ranked = rank_by_frequency(df, min_df, max_size)
    return TokenVocabulary((UNK,) + SPECIAL_TOKENS + tuple(ranked))
