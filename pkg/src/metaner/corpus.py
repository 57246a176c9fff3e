"""CoNLL column I/O, a greedy pair-merge subword vocabulary, tokenization
with first-piece tracking, and sliding windows over long inputs."""
from __future__ import annotations

import io
import re
from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, ParseError

TAG_RE = re.compile(r"^(O|[BI]-\S+)$")
SPECIALS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")
NO_WORD = -1


@dataclass(frozen=True)
class Sentence:
    tokens: tuple
    labels: tuple
    id: int = 0

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ParseError(f"sentence {self.id}: {len(self.tokens)} tokens "
                             f"but {len(self.labels)} labels")

    def __len__(self):
        return len(self.tokens)


def _lines(stream):
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def parse_conll(stream, token_column=0, label_column=-1):
    """Read blank-line separated sentences; ``-DOCSTART-`` lines are dropped.

    ``stream`` is an open text file, any iterable of lines, or a string.
    """
    sentences = []
    tokens, labels = [], []

    def flush():
        if tokens:
            sentences.append(Sentence(tuple(tokens), tuple(labels), len(sentences)))
            tokens.clear()
            labels.clear()

    need = max(token_column, label_column) + 1 if label_column >= 0 else None
    for lineno, raw in enumerate(_lines(stream), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if line.startswith("-DOCSTART-"):
            flush()
            continue
        cols = line.split()
        if need is not None and len(cols) < need or need is None and len(cols) < 2:
            raise ParseError(f"expected at least {need or 2} columns, got {len(cols)}",
                             lineno)
        tag = cols[label_column]
        if not TAG_RE.match(tag):
            raise ParseError(f"invalid BIO tag {tag!r}", lineno)
        tokens.append(cols[token_column])
        labels.append(tag)
    flush()
    return sentences


def read_conll(path, token_column=0, label_column=-1):
    with open(path, encoding="utf-8") as f:
        return parse_conll(f, token_column, label_column)


def format_conll(sentences, *extra_columns):
    """Emit ``token gold [extra...]`` lines; each extra is a list of label lists."""
    out = []
    for i, s in enumerate(sentences):
        for j, (tok, lab) in enumerate(zip(s.tokens, s.labels)):
            cols = [tok, lab] + [col[i][j] for col in extra_columns]
            out.append(" ".join(cols))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


def write_conll(path, sentences, *extra_columns):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_conll(sentences, *extra_columns))


def relabel_misc(sentences):
    """Turn every MISC tag into ``O``."""
    out = []
    for s in sentences:
        labels = tuple("O" if lab in ("B-MISC", "I-MISC") else lab for lab in s.labels)
        out.append(Sentence(s.tokens, labels, s.id))
    return out


def label_inventory(sentences):
    """``("O", "B-T1", "I-T1", ...)`` with types sorted by name."""
    types = sorted({lab[2:] for s in sentences for lab in s.labels if lab != "O"})
    return ("O",) + tuple(f"{p}-{t}" for t in types for p in "BI")


# ---------------------------------------------------------------- vocabulary

@dataclass
class Vocabulary:
    pieces: dict

    @property
    def size(self):
        return len(self.pieces)

    def __len__(self):
        return len(self.pieces)

    def __getitem__(self, piece):
        return self.pieces[piece]

    @cached_property
    def longest(self):
        return max(len(p) for p in self.pieces if p not in SPECIALS)

    @property
    def pad(self):
        return self.pieces["[PAD]"]

    @property
    def cls(self):
        return self.pieces["[CLS]"]

    @property
    def sep(self):
        return self.pieces["[SEP]"]

    @property
    def mask(self):
        return self.pieces["[MASK]"]

    @property
    def unk(self):
        return self.pieces["[UNK]"]

    def id_to_piece(self):
        inv = [None] * len(self.pieces)
        for p, i in self.pieces.items():
            inv[i] = p
        return inv

    def dumps(self):
        return "".join(p + "\n" for p in self.id_to_piece())

    @classmethod
    def loads(cls, text):
        items = text.split("\n")
        if items and items[-1] == "":
            items.pop()
        pieces = {p: i for i, p in enumerate(items)}
        if len(pieces) != len(items) or any(s not in pieces for s in SPECIALS):
            raise ParseError("vocabulary file is missing specials or has duplicates")
        return cls(pieces)


def learn_vocab(sentences, target_size):
    """Greedy pair-merge vocabulary over the corpus words.

    Starts from the specials and every character, then repeatedly adds the
    most frequent adjacent symbol pair (ties broken lexicographically) until
    ``target_size`` pieces exist or nothing is left to merge.
    """
    if not sentences:
        raise ConfigError("cannot learn a vocabulary from an empty corpus")
    freq = Counter(tok for s in sentences for tok in s.tokens)
    chars = sorted({c for w in freq for c in w})
    base = len(SPECIALS) + len(chars)
    if target_size < base:
        raise ConfigError(f"target_size {target_size} is below the {base} specials "
                          "and characters")
    pieces = {p: i for i, p in enumerate(SPECIALS)}
    for c in chars:
        pieces[c] = len(pieces)
    words = {w: list(w) for w in freq}
    while len(pieces) < target_size:
        pairs = Counter()
        for w, symbols in words.items():
            n = freq[w]
            for a, b in zip(symbols, symbols[1:]):
                pairs[a, b] += n
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merged = best[0] + best[1]
        for w, symbols in words.items():
            if len(symbols) < 2:
                continue
            i, out = 0, []
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == best[0] and symbols[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            words[w] = out
        if merged not in pieces:
            pieces[merged] = len(pieces)
    return Vocabulary(pieces)


# ---------------------------------------------------------------- tokenization

@dataclass(frozen=True)
class SubwordSequence:
    piece_ids: np.ndarray
    first_piece: np.ndarray
    word_index: np.ndarray

    def __len__(self):
        return len(self.piece_ids)

    @property
    def word_count(self):
        return int(self.first_piece.sum())


def split_word(word, vocab):
    """Greedy longest-match pieces of one word; unknown characters become [UNK]."""
    longest = vocab.longest
    ids, i = [], 0
    while i < len(word):
        for j in range(min(len(word), i + longest), i, -1):
            pid = vocab.pieces.get(word[i:j])
            if pid is not None and word[i:j] not in SPECIALS:
                ids.append(pid)
                i = j
                break
        else:
            ids.append(vocab.unk)
            i += 1
    return ids


def tokenize(sentence, vocab):
    ids = [vocab.cls]
    first = [False]
    widx = [NO_WORD]
    for w, tok in enumerate(sentence.tokens):
        pieces = split_word(tok, vocab)
        ids.extend(pieces)
        first.extend([True] + [False] * (len(pieces) - 1))
        widx.extend([w] * len(pieces))
    ids.append(vocab.sep)
    first.append(False)
    widx.append(NO_WORD)
    return SubwordSequence(np.array(ids, dtype=np.int64), np.array(first, dtype=bool),
                           np.array(widx, dtype=np.int64))


# ---------------------------------------------------------------- windows

@dataclass(frozen=True)
class Window:
    start: int
    end: int
    context_prefix_len: int

    def __len__(self):
        return self.end - self.start


def make_windows(length, max_len=128, context_len=64):
    """Windows over ``length`` positions (or a sequence's length).

    Each window after the first starts ``context_len`` positions before the
    previous one ends, and those leading positions are context only.
    """
    if not isinstance(length, int):
        length = len(length)
    if not 0 <= context_len < max_len:
        raise ConfigError("need 0 <= context_len < max_len")
    windows = [Window(0, min(length, max_len), 0)]
    while windows[-1].end < length:
        start = windows[-1].end - context_len
        windows.append(Window(start, min(length, start + max_len), context_len))
    return windows
