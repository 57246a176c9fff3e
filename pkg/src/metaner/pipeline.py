"""End-to-end runs on a source/target corpus pair: base model, meta-trained
variants, adaptation, low-resource fine-tuning and their scores."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .adapt import AdaptConfig, adapt_and_predict, direct_predict, low_resource_finetune
from .batching import prepare
from .corpus import label_inventory, learn_vocab
from .encoder import EncoderConfig, freeze, init_parameters
from .errors import ConfigError
from .evaluation import phrase_f1
from .metatrain import MetaConfig, NerLearner, meta_train, supervised_train
from .retrieval import build_index, build_tasks

log = logging.getLogger(__name__)

# variant -> (max loss, masking); None means no meta-training at all
VARIANTS = {
    "full": (True, True),
    "no_max": (False, True),
    "no_mask": (True, False),
    "no_max_no_mask": (False, False),
    "base": None,
}


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 32
    layers: int = 2
    attention_heads: int = 2
    feedforward_size: int = 64
    max_positions: int = 128
    dropout_rate: float = 0.1
    vocab_size: int = 1000
    frozen: tuple = ("embeddings",)


@dataclass(frozen=True)
class BenchConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    base_lr: float = 1e-3
    base_steps: int = -1          # -1: as many steps as meta-updates
    finetune_epochs: int = 3
    finetune_lr: float = 1e-3

    def steps_for_base(self):
        return self.meta.max_meta_updates if self.base_steps < 0 else self.base_steps


# Settings for the synthetic benchmark, as "section.field" values. The
# library defaults suit real corpora; this preset trains every weight (the
# embeddings included) within a desk-top time budget.
BENCHMARK = {
    "model.frozen": (),
    "meta.max_meta_updates": 300,
    "meta.tasks_per_meta_update": 32,
    "meta.meta_lr": 5e-3,
    "meta.inner_lr": 1e-3,
    "adapt.lr": 3e-2,
    "bench.base_lr": 5e-3,
    "bench.finetune_epochs": 10,
    "bench.finetune_lr": 3e-3,
}


def benchmark_config(**overrides):
    """BenchConfig with the benchmark preset applied; ``overrides`` use the
    same "section.field" keys."""
    values = {**BENCHMARK, **overrides}
    parts = {"model": {}, "meta": {}, "adapt": {}, "bench": {}}
    for key, value in values.items():
        section, _, name = key.partition(".")
        parts[section][name] = value
    return BenchConfig(model=ModelConfig(**parts["model"]), meta=MetaConfig(**parts["meta"]),
                       adapt=AdaptConfig(**parts["adapt"]), **parts["bench"])


@dataclass
class Corpora:
    vocab: object
    labels: list
    source: list          # prepared Examples
    target: list
    target_train: list = field(default_factory=list)


def load_corpora(source, target, target_train=(), vocab=None, vocab_size=1000):
    """Prepare sentences for training; the vocabulary is learned on ``source``."""
    if not source:
        raise ConfigError("the source corpus is empty")
    if vocab is None:
        vocab = learn_vocab(source, vocab_size)
    labels = label_inventory(list(source) + list(target) + list(target_train))
    return Corpora(vocab, labels, prepare(source, vocab, labels),
                   prepare(target, vocab, labels), prepare(target_train, vocab, labels))


def initial_model(corpora, model, seed):
    cfg = EncoderConfig(vocab_size=len(corpora.vocab), label_count=len(corpora.labels),
                        hidden_size=model.hidden_size, layers=model.layers,
                        attention_heads=model.attention_heads,
                        feedforward_size=model.feedforward_size,
                        max_positions=model.max_positions, dropout_rate=model.dropout_rate)
    return freeze(init_parameters(cfg, seed), list(model.frozen))


def variant_meta_config(meta, variant, seed):
    use_max, use_mask = VARIANTS[variant]
    return replace(meta, lam=meta.lam if use_max else 0.0,
                   mask_probability=meta.mask_probability if use_mask else 0.0, seed=seed)


def train_base(corpora, bench, seed, on_step=None):
    """Ordinary supervised training on the source corpus."""
    params = initial_model(corpora, bench.model, seed)
    learner = NerLearner(params, corpora.labels, corpora.vocab.mask,
                         bench.model.max_positions, bench.adapt.context_len)
    supervised_train(learner, corpora.source, steps=bench.steps_for_base(),
                     batch_size=bench.meta.tasks_per_meta_update, lr=bench.base_lr,
                     seed=seed, on_step=on_step)
    return learner.params


def train_meta(corpora, bench, variant, seed, on_step=None, state=None):
    """Meta-train from initialization; returns (params, TrainLog)."""
    params = initial_model(corpora, bench.model, seed)
    index = build_index(corpora.source, params)
    tasks = build_tasks(corpora.source, index, bench.adapt.k)
    learner = NerLearner(params, corpora.labels, corpora.vocab.mask,
                         bench.model.max_positions, bench.adapt.context_len)
    _, trail = meta_train(learner, tasks, variant_meta_config(bench.meta, variant, seed),
                          on_step, state)
    return learner.params, trail


def predict(params, corpora, bench, mode, seed=0):
    """Labels for the target corpus by direct transfer or per-sentence adaptation."""
    acfg = replace(bench.adapt, seed=seed, max_len=bench.model.max_positions)
    if mode == "direct":
        return direct_predict(params, corpora.target, corpora.labels, acfg.max_len,
                              acfg.context_len)
    if mode != "adapt":
        raise ConfigError(f"unknown mode {mode!r}")
    index = build_index(corpora.source, params)
    return adapt_and_predict(params, corpora.target, corpora.source, index,
                             corpora.labels, acfg)


def score(corpora, predicted):
    return phrase_f1([ex.sentence.labels for ex in corpora.target], predicted)


@dataclass
class AblationResult:
    seeds: list
    variants: list
    f1: dict = field(default_factory=dict)       # (variant, seed) -> f1
    seconds: dict = field(default_factory=dict)  # (variant, seed) -> wall time

    def mean(self, variant):
        return float(np.mean([self.f1[variant, s] for s in self.seeds]))

    def lines(self):
        out = [f"seeds={','.join(map(str, self.seeds))} variants={','.join(self.variants)}"]
        for v in self.variants:
            for s in self.seeds:
                out.append(f"variant={v} seed={s} f1={self.f1[v, s]:.6f} "
                           f"seconds={self.seconds[v, s]:.1f}")
        for v in self.variants:
            out.append(f"variant={v} mean_f1={self.mean(v):.6f}")
        return out

    def table(self):
        head = f"{'variant':<16}" + "".join(f"{'seed ' + str(s):>10}" for s in self.seeds)
        rows = [f"# seeds: {', '.join(map(str, self.seeds))}", head + f"{'mean':>10}"]
        for v in self.variants:
            cells = "".join(f"{100 * self.f1[v, s]:>10.2f}" for s in self.seeds)
            rows.append(f"{v:<16}{cells}{100 * self.mean(v):>10.2f}")
        return "\n".join(rows)


def run_variant(corpora, bench, variant, seed):
    """F1 of one variant: meta-trained ones are adapted, the base is used directly."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    if VARIANTS[variant] is None:
        params = train_base(corpora, bench, seed)
        labels = predict(params, corpora, bench, "direct", seed)
    else:
        params, _ = train_meta(corpora, bench, variant, seed)
        labels = predict(params, corpora, bench, "adapt", seed)
    return score(corpora, labels).f1


def run_ablation(corpora, bench, seeds, variants=tuple(VARIANTS), on_result=None):
    result = AblationResult(list(seeds), list(variants))
    for seed in seeds:
        for v in variants:
            start = time.perf_counter()
            result.f1[v, seed] = run_variant(corpora, bench, v, seed)
            result.seconds[v, seed] = time.perf_counter() - start
            log.info("variant=%s seed=%d f1=%.4f", v, seed, result.f1[v, seed])
            if on_result is not None:
                on_result(v, seed, result.f1[v, seed])
    return result


def run_low_resource(corpora, bench, seeds, on_result=None):
    """Per seed: direct-transfer F1 of the base model and after fine-tuning it
    on the labeled target subset. Returns {seed: (direct, finetuned)}."""
    if not corpora.target_train:
        raise ConfigError("low-resource mode needs a labeled target subset")
    out = {}
    for seed in seeds:
        base = train_base(corpora, bench, seed)
        direct = score(corpora, predict(base, corpora, bench, "direct", seed)).f1
        tuned = low_resource_finetune(base, corpora.target_train, corpora.labels,
                                      epochs=bench.finetune_epochs, lr=bench.finetune_lr,
                                      seed=seed, max_len=bench.model.max_positions,
                                      context_len=bench.adapt.context_len)
        after = score(corpora, predict(tuned, corpora, bench, "direct", seed)).f1
        out[seed] = (direct, after)
        if on_result is not None:
            on_result(seed, direct, after)
    return out
