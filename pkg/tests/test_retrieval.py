import numpy as np
import pytest

from metaner.batching import prepare
from metaner.corpus import Sentence, learn_vocab
from metaner.encoder import EncoderConfig, init_parameters, sentence_rep
from metaner.errors import ConfigError, ContractViolation
from metaner.metatrain import PseudoTask
from metaner.retrieval import (RetrievalIndex, build_index, build_tasks, cosine, params_digest,
                               topk)
from oracles import brute_force_topk


def _index(reps, ids=None):
    reps = np.asarray(reps, dtype=float)
    ids = np.arange(1, len(reps) + 1) if ids is None else np.asarray(ids)
    return RetrievalIndex(reps, ids)


def test_cosine_examples():
    assert cosine([1, 0], [0, 1]) == 0
    assert abs(cosine([1, 2], [2, 4]) - 1) < 1e-12
    assert abs(cosine([1, 1], [1, 0]) - 1 / np.sqrt(2)) < 1e-12
    assert cosine([0, 0], [1, 0]) == 0


def test_cosine_dimension_mismatch():
    with pytest.raises(ContractViolation):
        cosine([1, 0], [1, 0, 0])


def test_topk_worked_example():
    idx = _index([(1, 0), (0.9, 0.1), (0, 1)])
    assert topk(idx, np.array([1, 0]), 2, exclude=1) == [2, 3]


def test_topk_full_size_sorted():
    idx = _index([(0, 1), (1, 0), (1, 1)])
    assert topk(idx, np.array([1, 0]), 3) == [2, 3, 1]


def test_duplicate_reps_tie_to_smaller_id():
    idx = _index([(1, 1), (1, 1), (1, 1)], ids=[7, 3, 5])
    assert topk(idx, np.array([1, 1]), 3) == [3, 5, 7]


def test_k_too_large():
    idx = _index([(1, 0), (0, 1)])
    with pytest.raises(ContractViolation):
        topk(idx, np.array([1, 0]), 2, exclude=1)
    with pytest.raises(ContractViolation):
        topk(idx, np.array([1, 0]), 3)


def test_scale_invariance():
    rng = np.random.default_rng(3)
    reps = rng.normal(size=(20, 4))
    q = rng.normal(size=4)
    scaled = reps * rng.uniform(0.1, 10, size=(20, 1))
    assert topk(_index(reps), q, 20) == topk(_index(scaled), q, 20)


def test_self_similarity():
    r = np.random.default_rng(0).normal(size=6)
    assert abs(cosine(r, r) - 1) < 1e-12


def test_index_is_immutable():
    idx = _index([(1, 0), (0, 1)])
    with pytest.raises(ValueError):
        idx.reps[0, 0] = 5


def _random_corpus(rng):
    n = int(rng.integers(1, 51))
    dim = int(rng.integers(1, 5))
    if rng.random() < 0.5:
        # small integers: many exact ties, scaled copies, zero vectors
        reps = rng.integers(-2, 3, size=(n, dim)).astype(float)
        if n > 1:
            dup = rng.integers(0, n, size=n // 3)
            reps[dup] = reps[rng.integers(0, n, size=len(dup))] * rng.choice([1, 2, 4], size=(len(dup), 1))
        query = rng.integers(-2, 3, size=dim).astype(float)
    else:
        reps = rng.normal(size=(n, dim))
        query = rng.normal(size=dim)
    ids = rng.permutation(1000)[:n]
    return reps, ids, query


def test_topk_matches_brute_force_on_1000_corpora():
    rng = np.random.default_rng(12345)
    ties = 0
    for _ in range(1000):
        reps, ids, query = _random_corpus(rng)
        exclude = int(ids[rng.integers(len(ids))]) if rng.random() < 0.5 else None
        pool = len(ids) - (exclude is not None)
        k = int(rng.integers(0, pool + 1))
        got = topk(_index(reps, ids), query, k, exclude)
        want = brute_force_topk(reps, ids.tolist(), query, k, exclude)
        assert got == want
        sims = [round(cosine(r, query), 9) for r in reps]
        ties += len(sims) != len(set(sims))
    assert ties > 100   # the sample really exercises tie-breaking


def _corpus():
    texts = ["alpha beta gamma", "beta gamma delta", "gamma delta eps", "zeta eta"]
    sents = [Sentence(tuple(t.split()), ("O",) * len(t.split()), i) for i, t in enumerate(texts)]
    vocab = learn_vocab(sents, 40)
    labels = ("O",)
    cfg = EncoderConfig(vocab_size=len(vocab), label_count=1, hidden_size=8, feedforward_size=8)
    return prepare(sents, vocab, labels), init_parameters(cfg, 0, gain=0.5)


def test_build_index_matches_sentence_rep():
    examples, params = _corpus()
    idx = build_index(examples, params)
    assert len(idx) == 4 and idx.dim == 8
    for ex, r in zip(examples, idx.reps):
        assert np.allclose(r, sentence_rep(params, ex.seq.piece_ids), atol=1e-12)
    again = build_index(examples, params)
    assert np.array_equal(idx.reps, again.reps)


def test_rep_source_tracks_parameters():
    examples, params = _corpus()
    a = build_index(examples, params)
    changed = params.with_arrays({"classifier.bias": params.arrays["classifier.bias"] + 1})
    assert build_index(examples, changed).rep_source != a.rep_source
    assert a.rep_source == params_digest(params)


def test_empty_index_rejected():
    _, params = _corpus()
    with pytest.raises(ConfigError):
        build_index([], params)


def test_build_tasks_excludes_self():
    examples, params = _corpus()
    tasks = build_tasks(examples, build_index(examples, params), k=2)
    assert len(tasks) == 4
    for t in tasks:
        assert isinstance(t, PseudoTask)
        assert len(t.train) == 2
        assert t.test.id not in [e.id for e in t.train]


def test_build_tasks_worked_example():
    examples, params = _corpus()
    idx = RetrievalIndex(np.array([(1, 0), (0.9, 0.1), (0, 1.0)]), np.array([1, 2, 3]))
    from dataclasses import replace
    exs = [replace(e, sentence=Sentence(e.sentence.tokens, e.sentence.labels, i + 1))
           for i, e in enumerate(examples[:3])]
    tasks = build_tasks(exs, idx, k=2)
    assert {e.id for e in tasks[0].train} == {2, 3}


def test_build_tasks_needs_k_plus_one():
    examples, params = _corpus()
    idx = build_index(examples[:2], params)
    with pytest.raises(ConfigError):
        build_tasks(examples[:2], idx, k=2)
