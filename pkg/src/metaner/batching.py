"""Turn tokenized sentences into padded, windowed (and optionally task-stacked)
arrays for the encoder and the losses."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .corpus import make_windows, tokenize
from .encoder import padded_length
from .errors import ConfigError, ContractViolation


@dataclass(frozen=True)
class Example:
    sentence: object
    seq: object
    gold: np.ndarray     # label id per piece, 0 where no label is read
    entity: np.ndarray   # piece belongs to a word tagged B-*/I-*

    @property
    def id(self):
        return self.sentence.id


def prepare(sentences, vocab, labels):
    index = {lab: i for i, lab in enumerate(labels)}
    out = []
    for s in sentences:
        seq = tokenize(s, vocab)
        gold = np.zeros(len(seq), dtype=np.int64)
        entity = np.zeros(len(seq), dtype=bool)
        for pos in range(len(seq)):
            w = seq.word_index[pos]
            if w < 0:
                continue
            lab = s.labels[w]
            if lab not in index:
                raise ConfigError(f"sentence {s.id}: label {lab!r} not in the label set")
            if seq.first_piece[pos]:
                gold[pos] = index[lab]
            entity[pos] = lab != "O"
        out.append(Example(s, seq, gold, entity))
    return out


@dataclass
class Batch:
    ids: np.ndarray       # [..., R, L]
    keys: np.ndarray      # real positions
    active: np.ndarray    # positions whose label is read (first piece, not context)
    gold: np.ndarray
    members: np.ndarray   # [..., E, R*L]
    rows: list            # per task: list of (example position, Window)
    examples: list        # per task: list of Example


def layout_key(examples, max_len, context_len):
    """(examples, rows, padded length); tasks sharing it can be stacked."""
    rows, longest = 0, 0
    for ex in examples:
        for w in make_windows(len(ex.seq), max_len, context_len):
            rows += 1
            longest = max(longest, len(w))
    return len(examples), rows, padded_length(longest, max_len)


def group_by_layout(tasks, max_len, context_len):
    """Task indices grouped by ``layout_key``, groups in sorted key order."""
    groups = defaultdict(list)
    for i, exs in enumerate(tasks):
        groups[layout_key(exs, max_len, context_len)].append(i)
    return [groups[k] for k in sorted(groups)]


def collate(tasks, max_len=128, context_len=64, stacked=True, piece_ids=None):
    """Pad a list of tasks (each a list of Examples) into one Batch.

    ``piece_ids`` optionally overrides each example's ids (same nesting as
    ``tasks``), e.g. with an entity-masked copy. With ``stacked=False`` there
    must be exactly one task and the task axis is dropped.
    """
    if not stacked and len(tasks) != 1:
        raise ContractViolation("an unstacked batch holds exactly one task")
    E = {len(t) for t in tasks}
    if len(E) != 1 or 0 in E:
        raise ContractViolation("all tasks in a stack need the same, nonzero example count")
    E = E.pop()
    task_rows = []
    longest = 0
    for exs in tasks:
        rows = []
        for e, ex in enumerate(exs):
            for w in make_windows(len(ex.seq), max_len, context_len):
                rows.append((e, w))
                longest = max(longest, len(w))
        task_rows.append(rows)
    R = max(len(r) for r in task_rows)
    L = padded_length(longest, max_len)
    T = len(tasks)
    ids = np.zeros((T, R, L), dtype=np.int64)
    keys = np.zeros((T, R, L), dtype=bool)
    active = np.zeros((T, R, L), dtype=bool)
    gold = np.zeros((T, R, L), dtype=np.int64)
    members = np.zeros((T, E, R * L), dtype=bool)
    for t, (exs, rows) in enumerate(zip(tasks, task_rows)):
        for r, (e, w) in enumerate(rows):
            ex = exs[e]
            src = ex.seq.piece_ids if piece_ids is None else piece_ids[t][e]
            n = len(w)
            ids[t, r, :n] = src[w.start:w.end]
            keys[t, r, :n] = True
            act = ex.seq.first_piece[w.start:w.end].copy()
            act[: w.context_prefix_len] = False
            active[t, r, :n] = act
            gold[t, r, :n] = ex.gold[w.start:w.end]
            members[t, e, r * L: r * L + n] = act
    if not stacked:
        ids, keys, active, gold, members = ids[0], keys[0], active[0], gold[0], members[0]
    return Batch(ids, keys, active, gold, members, task_rows, list(tasks))


def decode(batch, probs, labels):
    """Argmax word labels: per task, per example, one label per word."""
    pred = np.asarray(probs).argmax(axis=-1)
    if pred.ndim == 2:
        pred = pred[None]
    out = []
    for t, (exs, rows) in enumerate(zip(batch.examples, batch.rows)):
        words = [[None] * len(ex.sentence) for ex in exs]
        for r, (e, w) in enumerate(rows):
            seq = exs[e].seq
            for j in range(w.context_prefix_len, len(w)):
                pos = w.start + j
                if seq.first_piece[pos]:
                    words[e][seq.word_index[pos]] = labels[pred[t, r, j]]
        out.append(words)
    return out
