from dataclasses import replace

import numpy as np
import pytest

from metaner.adapt import (AdaptConfig, adapt_and_predict, adapt_parallel, direct_predict,
                           low_resource_finetune)
from metaner.errors import ConfigError
from metaner.retrieval import build_index
import toy

CFG = AdaptConfig(lr=0.5, max_len=64, context_len=32)


def _setup(frozen=()):
    _, labels, source, target = toy.world()
    params = toy.model(frozen)
    return params, labels, source, target, build_index(source, params)


def _direct(params, labels, target):
    return direct_predict(params, target, labels, 64, 32)


def test_direct_prediction_shape_and_determinism():
    params, labels, _, target, _ = _setup()
    out = _direct(params, labels, target)
    assert [len(p) for p in out] == [len(ex.sentence) for ex in target]
    assert out == _direct(params, labels, target)
    assert all(tag in labels for p in out for tag in p)


def test_all_o_bias_predicts_all_o():
    params, labels, _, target, _ = _setup()
    bias = np.full(len(labels), -1e3)
    bias[labels.index("O")] = 1e3
    biased = params.with_arrays({"classifier.bias": bias})
    assert all(set(p) == {"O"} for p in _direct(biased, labels, target))


def test_zero_gamma_is_direct_transfer():
    params, labels, source, target, index = _setup()
    adapted = adapt_and_predict(params, target, source, index, labels, replace(CFG, lr=0.0))
    assert adapted == _direct(params, labels, target)


def test_zero_k_is_direct_transfer():
    params, labels, source, target, index = _setup()
    adapted = adapt_and_predict(params, target, source, index, labels, replace(CFG, k=0))
    assert adapted == _direct(params, labels, target)


def test_adaptation_changes_something():
    params, labels, source, target, index = _setup()
    params = params.with_arrays({n: v * 20 for n, v in params.trainable().items()
                                 if n.startswith("classifier")})
    adapted = adapt_and_predict(params, target, source, index, labels, replace(CFG, lr=50.0))
    assert adapted != _direct(params, labels, target)


def test_theta_is_restored():
    params, labels, source, target, index = _setup()
    before = {n: v.tobytes() for n, v in params.arrays.items()}
    adapt_and_predict(params, target, source, index, labels, CFG)
    assert {n: v.tobytes() for n, v in params.arrays.items()} == before


def test_isolation_from_other_sentences():
    params, labels, source, target, index = _setup()
    cfg = replace(CFG, lr=5.0)
    full = adapt_and_predict(params, target, source, index, labels, cfg)
    order = list(reversed(range(len(target))))
    shuffled = adapt_and_predict(params, [target[i] for i in order], source, index, labels, cfg)
    assert [shuffled[order.index(i)] for i in range(len(target))] == full
    for i in (0, 3):
        alone = adapt_and_predict(params, [target[i]], source, index, labels, cfg)
        assert alone[0] == full[i]


def test_parallel_matches_serial():
    params, labels, source, target, index = _setup()
    serial = adapt_and_predict(params, target, source, index, labels, CFG)
    assert adapt_parallel(params, target, source, index, labels, CFG, workers=2) == serial


def test_retrieval_failure_falls_back(caplog):
    params, labels, source, target, index = _setup()
    out = adapt_and_predict(params, target, source[:1], index, labels, CFG)
    assert out == _direct(params, labels, target)
    assert "falling back" in caplog.text


def test_config_validation():
    for bad in (dict(k=-1), dict(lr=-1e-3), dict(optimizer="lbfgs")):
        with pytest.raises(ConfigError):
            AdaptConfig(**bad)


def test_finetune_zero_epochs_is_identity():
    params, labels, _, target, _ = _setup()
    assert low_resource_finetune(params, target, labels, epochs=0, lr=1e-2) is params


def test_finetune_keeps_frozen_and_learns():
    params, labels, _, target, _ = _setup(("embeddings",))
    tuned = low_resource_finetune(params, target, labels, epochs=3, lr=1e-2,
                                  max_len=64, context_len=32)
    for n in params.frozen:
        assert tuned.arrays[n].tobytes() == params.arrays[n].tobytes()
    assert not np.array_equal(tuned.arrays["classifier.weight"], params.arrays["classifier.weight"])
    with pytest.raises(ConfigError):
        low_resource_finetune(params, [], labels, epochs=1, lr=1e-2)
