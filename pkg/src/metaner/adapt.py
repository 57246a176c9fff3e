"""Test-time adaptation: retrieve similar source sentences for each test
sentence, take one gradient step from the meta-trained parameters, predict,
and throw the adapted copy away."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import groupby

import numpy as np

from . import autodiff as ad
from .batching import collate, decode, layout_key
from .encoder import bind, forward_hidden, forward_probs
from .errors import ConfigError, ContractViolation
from .metatrain import NerLearner, supervised_train
from .retrieval import first_window_reps, topk

log = logging.getLogger(__name__)

CHUNK = 32


@dataclass(frozen=True)
class AdaptConfig:
    k: int = 2
    lr: float = 3e-4
    optimizer: str = "sgd"
    max_loss: bool = False
    lam: float = 2.0
    dropout: bool = True
    seed: int = 0
    max_len: int = 128
    context_len: int = 64

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError("K must be >= 0")
        if self.lr < 0:
            raise ConfigError("the adaptation learning rate must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


def _layout_groups(keys, chunk):
    order = sorted(range(len(keys)), key=lambda i: (keys[i], i))
    for _, members in groupby(order, key=lambda i: keys[i]):
        members = list(members)
        for s in range(0, len(members), chunk):
            yield members[s: s + chunk]


def direct_predict(params, examples, labels, max_len=128, context_len=64, chunk=64):
    """Argmax labels per word with no target-side update."""
    bound = bind(params)
    keys = [layout_key([ex], max_len, context_len) for ex in examples]
    out = [None] * len(examples)
    for part in _layout_groups(keys, chunk):
        batch = collate([[examples[i]] for i in part], max_len, context_len)
        h = forward_hidden(params.config, bound, batch.ids, batch.keys)
        words = decode(batch, forward_probs(bound, h).data, labels)
        for i, w in zip(part, words):
            out[i] = w[0]
    return out


def retrieve(params, examples, index, source_by_id, k):
    """Top-k source examples for each query example, using reps from ``params``."""
    reps = first_window_reps(params, examples)
    return [[source_by_id[i] for i in topk(index, r, k)] for r in reps]


def adapt_and_predict(params, examples, source, index, labels, cfg):
    """Per-example adaptation; ``params`` itself is never modified.

    ``source`` are the prepared source examples ``index`` was built over.
    """
    if cfg.k == 0:
        return direct_predict(params, examples, labels, cfg.max_len, cfg.context_len)
    by_id = {ex.id: ex for ex in source}
    try:
        support = retrieve(params, examples, index, by_id, cfg.k)
    except (ContractViolation, KeyError) as err:
        log.warning("retrieval failed (%s); falling back to direct prediction", err)
        return direct_predict(params, examples, labels, cfg.max_len, cfg.context_len)

    learner = NerLearner(params, labels, mask_id=None, max_len=cfg.max_len,
                         context_len=cfg.context_len)
    lam = cfg.lam if cfg.max_loss else 0.0
    keys = [(layout_key(sup, cfg.max_len, cfg.context_len),
             layout_key([ex], cfg.max_len, cfg.context_len))
            for sup, ex in zip(support, examples)]
    out = [None] * len(examples)
    for part in _layout_groups(keys, CHUNK):
        stack = params.stacked(len(part))
        rngs = None
        if cfg.dropout:
            rngs = [np.random.default_rng((cfg.seed, examples[i].id, 0x61646170))
                    for i in part]
        loss, _ = learner.task_loss(stack, [support[i] for i in part], lam=lam, rngs=rngs)
        grads = ad.backward(loss)
        if cfg.optimizer == "sgd":
            stack = ad.sgd_step(stack, grads, cfg.lr)
        else:
            stack = ad.adam_step(stack, grads, ad.AdamState(), cfg.lr)
        batch = collate([[examples[i]] for i in part], cfg.max_len, cfg.context_len)
        bound = bind(params, stack)
        h = forward_hidden(params.config, bound, batch.ids, batch.keys)
        words = decode(batch, forward_probs(bound, h).data, labels)
        for i, w in zip(part, words):
            out[i] = w[0]
    return out


def adapt_parallel(params, examples, source, index, labels, cfg, workers=1):
    """``adapt_and_predict`` split over worker processes.

    Each prediction depends only on its own sentence, so the merged output
    equals the single-process one.
    """
    if workers <= 1 or len(examples) < 2:
        return adapt_and_predict(params, examples, source, index, labels, cfg)
    bounds = np.linspace(0, len(examples), min(workers, len(examples)) + 1).astype(int)
    parts = [examples[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(len(parts)) as pool:
        futures = [pool.submit(adapt_and_predict, params, part, source, index, labels, cfg)
                   for part in parts]
        return [labels_ for f in futures for labels_ in f.result()]


def low_resource_finetune(params, examples, labels, *, epochs, lr, batch_size=32, seed=0,
                          max_len=128, context_len=64):
    """Ordinary fine-tuning on a labeled target subset (mean loss, no masking)."""
    if epochs == 0:
        return params
    if not examples:
        raise ConfigError("the fine-tuning subset is empty")
    learner = NerLearner(params, labels, mask_id=None, max_len=max_len,
                         context_len=context_len)
    steps = epochs * math.ceil(len(examples) / batch_size)
    supervised_train(learner, examples, steps=steps, batch_size=batch_size, lr=lr, seed=seed)
    return learner.params
