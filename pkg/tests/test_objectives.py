import numpy as np
import pytest

from metaner import autodiff as ad
from metaner.errors import ConfigError, ContractViolation
from metaner.objectives import (MaskingConfig, example_losses, mask_entities, masking_rng,
                                max_augmented_loss, mean_loss, token_losses)


def _tlv(losses, active=None):
    losses = np.asarray(losses, float)
    active = np.ones(len(losses), bool) if active is None else np.asarray(active, bool)
    probs = np.stack([np.exp(-losses), 1 - np.exp(-losses)], axis=-1)
    return token_losses(probs, np.zeros(len(losses), int), active)


def test_uniform_over_nine_labels():
    probs = np.full((3, 9), 1 / 9)
    t = token_losses(probs, np.array([0, 4, 8]), np.ones(3, bool))
    assert np.allclose(t.values, np.log(9))
    assert abs(np.log(9) - 2.19722) < 1e-5


def test_certain_and_half():
    probs = np.array([[1.0, 0.0], [0.5, 0.5]])
    t = token_losses(probs, np.array([0, 1]), np.ones(2, bool))
    assert t.values[0] == 0
    assert abs(t.values[1] - np.log(2)) < 1e-15


def test_inactive_positions_carry_no_loss():
    probs = np.array([[0.1, 0.9], [0.3, 0.7]])
    t = token_losses(probs, np.array([0, 0]), np.array([True, False]))
    assert t.values[1] == 0


def test_zero_probability_is_floored_and_counted():
    probs = np.array([[0.0, 1.0], [0.5, 0.5]])
    t = token_losses(probs, np.array([0, 0]), np.ones(2, bool))
    assert t.floored == 1
    assert np.isclose(t.values[0], -np.log(1e-12))


def test_mean_loss_examples():
    assert np.isclose(float(mean_loss(_tlv([1, 3])).data), 2)
    assert np.isclose(float(mean_loss(_tlv([5])).data), 5)
    assert np.isclose(float(mean_loss(_tlv([1, 3], [True, False])).data), 1)


def test_mean_loss_needs_active_position():
    with pytest.raises(ContractViolation):
        mean_loss(_tlv([1, 2], [False, False]))


def test_max_augmented_examples():
    assert np.isclose(float(max_augmented_loss(_tlv([1, 3]), 2.0).data), 8)
    assert np.isclose(float(max_augmented_loss(_tlv([2.5]), 2.0).data), 3 * 2.5)


def test_lambda_zero_equals_mean_exactly():
    t = _tlv([0.3, 1.7, 0.2])
    assert float(max_augmented_loss(t, 0.0).data) == float(mean_loss(t).data)


def test_negative_lambda():
    with pytest.raises(ConfigError):
        max_augmented_loss(_tlv([1.0]), -1.0)


def test_max_term_difference():
    rng = np.random.default_rng(1)
    for _ in range(20):
        losses = rng.uniform(0, 3, size=6)
        active = rng.random(6) < 0.7
        active[0] = True
        t = _tlv(losses, active)
        diff = float(max_augmented_loss(t, 1.5).data) - float(mean_loss(t).data)
        assert np.isclose(diff, 1.5 * losses[active].max())


def test_max_ignores_inactive_positions():
    t = _tlv([1, 9, 2], [True, False, True])
    assert np.isclose(float(max_augmented_loss(t, 1.0).data), 1.5 + 2)


def test_example_losses_span_windows():
    # one example over two rows: mean and max over both rows together
    losses = np.array([[1.0, 2.0], [3.0, 0.5]])
    probs = np.stack([np.exp(-losses), 1 - np.exp(-losses)], -1)
    t = token_losses(probs, np.zeros((2, 2), int), np.ones((2, 2), bool))
    members = np.ones((1, 4), bool)
    out = example_losses(t, members, 2.0)
    assert np.isclose(float(out.data[0]), losses.mean() + 2 * 3.0)


# ---------------------------------------------------------------- masking

def test_p_zero_is_identity():
    ids = np.array([1, 7, 8, 9, 2])
    out = mask_entities(ids, np.array([0, 1, 1, 0, 0], bool), 3, 0.0, np.random.default_rng(0))
    assert out.tobytes() == ids.tobytes()


def test_p_one_masks_every_entity_piece():
    ids = np.array([1, 7, 8, 9, 2])
    ent = np.array([0, 1, 1, 0, 0], bool)
    out = mask_entities(ids, ent, 3, 1.0, np.random.default_rng(0))
    assert out.tolist() == [1, 3, 3, 9, 2]


def test_masked_fraction_near_p():
    ids = np.arange(10_000) + 10
    out = mask_entities(ids, np.ones(10_000, bool), 3, 0.2, np.random.default_rng(7))
    frac = np.mean(out == 3)
    assert 0.18 <= frac <= 0.22


def test_masking_only_touches_entities():
    rng = np.random.default_rng(2)
    for _ in range(50):
        ids = rng.integers(5, 50, size=20)
        ent = rng.random(20) < 0.4
        out = mask_entities(ids, ent, 3, 0.5, rng)
        assert len(out) == len(ids)
        assert np.array_equal(out[~ent], ids[~ent])
        assert set(out[ent][out[ent] != ids[ent]]) <= {3}


def test_masking_rng_is_keyed():
    ids = np.arange(200) + 10
    ent = np.ones(200, bool)
    a = mask_entities(ids, ent, 3, 0.5, masking_rng(0, 1, 5))
    b = mask_entities(ids, ent, 3, 0.5, masking_rng(0, 1, 5))
    c = mask_entities(ids, ent, 3, 0.5, masking_rng(0, 2, 5))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_masking_config_validation():
    with pytest.raises(ConfigError):
        MaskingConfig(probability=1.5)
