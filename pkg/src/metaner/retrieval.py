"""Sentence representations, cosine top-K retrieval, and pseudo task building."""
from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .encoder import bind, forward_hidden, padded_length
from .errors import ConfigError, ContractViolation
from .metatrain import PseudoTask

# cosines equal to this many decimals count as tied (then the smaller id wins)
TIE_DECIMALS = 12


def cosine(a, b):
    """Cosine similarity; 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"dimension mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def params_digest(params):
    h = hashlib.sha1()
    for name in sorted(params.arrays):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params.arrays[name]).tobytes())
    return h.hexdigest()[:16]


def first_window_reps(params, examples, chunk=256):
    """[CLS] hidden vectors of each example's first window, in input order.

    Examples are grouped by padded length so each vector only depends on its
    own sentence.
    """
    max_len = params.config.max_positions
    bound = bind(params)
    groups = defaultdict(list)
    for i, ex in enumerate(examples):
        n = min(len(ex.seq), max_len)
        groups[padded_length(n, max_len)].append(i)
    out = np.zeros((len(examples), params.config.hidden_size))
    for L in sorted(groups):
        idx = groups[L]
        for s in range(0, len(idx), chunk):
            part = idx[s: s + chunk]
            ids = np.zeros((len(part), L), dtype=np.int64)
            keys = np.zeros((len(part), L), dtype=bool)
            for r, i in enumerate(part):
                seq = examples[i].seq.piece_ids[:max_len]
                ids[r, :len(seq)] = seq
                keys[r, :len(seq)] = True
            h = forward_hidden(params.config, bound, ids, keys).data
            out[part] = h[:, 0, :]
    return out


@dataclass(frozen=True)
class RetrievalIndex:
    reps: np.ndarray
    ids: np.ndarray
    rep_source: str = ""

    def __post_init__(self):
        if len(self.reps) != len(self.ids):
            raise ContractViolation("one representation per sentence id is required")
        self.reps.setflags(write=False)

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.reps.shape[1]


def build_index(examples, params):
    if not examples:
        raise ConfigError("cannot index an empty corpus")
    reps = first_window_reps(params, examples)
    ids = np.array([ex.id for ex in examples], dtype=np.int64)
    return RetrievalIndex(reps, ids, params_digest(params))


def similarities(index, query):
    query = np.asarray(query, dtype=np.float64)
    norms = np.linalg.norm(index.reps, axis=1)
    qn = np.linalg.norm(query)
    denom = norms * qn
    dots = index.reps @ query
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


def topk(index, query, k, exclude=None):
    """Ids of the ``k`` most similar sentences, most similar first.

    Ties go to the smaller sentence id; ``exclude`` is never returned.
    """
    pool = len(index) - (1 if exclude is not None and np.any(index.ids == exclude) else 0)
    if k < 0 or k > pool:
        raise ContractViolation(f"k={k} but only {pool} candidates are available")
    sims = np.round(similarities(index, query), TIE_DECIMALS)
    order = np.lexsort((index.ids, -sims))
    ranked = index.ids[order]
    if exclude is not None:
        ranked = ranked[ranked != exclude]
    return ranked[:k].tolist()


def build_tasks(examples, index, k=2):
    """One pseudo task per example: itself as test set, its top-k neighbours
    (excluding itself) as train set."""
    if len(examples) < k + 1:
        raise ConfigError(f"need at least {k + 1} sentences to build tasks with K={k}")
    by_id = {ex.id: ex for ex in examples}
    row = {int(i): r for r, i in enumerate(index.ids)}
    tasks = []
    for pos, ex in enumerate(examples):
        near = topk(index, index.reps[row[ex.id]], k, exclude=ex.id)
        tasks.append(PseudoTask(tuple(by_id[i] for i in near), ex, pos))
    return tasks
