import numpy as np
import pytest

from metaner import autodiff as ad
from metaner.checkpoint import (coerce, format_config, load_checkpoint, load_index,
                                parse_config, save_checkpoint, save_index)
from metaner.errors import ConfigError, ParseError
from metaner.metatrain import MetaConfig
from metaner.retrieval import build_index
import toy


def test_round_trip_is_float32_exact(tmp_path):
    params = toy.model(("embeddings",))
    save_checkpoint(tmp_path, params)
    back = load_checkpoint(tmp_path)
    assert back.config == params.config
    assert back.frozen == params.frozen
    for n, v in params.arrays.items():
        assert np.array_equal(back.arrays[n], v.astype("<f4").astype(float))


def test_same_params_same_bytes(tmp_path):
    params = toy.model()
    save_checkpoint(tmp_path / "a", params)
    save_checkpoint(tmp_path / "b", params.copy())
    for name in ("manifest.txt", "params.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_adam_state_round_trip(tmp_path):
    params = toy.model()
    state = ad.AdamState()
    grads = {n: np.ones_like(v) for n, v in params.trainable().items()}
    ad.adam_step(params.trainable(), grads, state, 1e-3)
    save_checkpoint(tmp_path, params, state)
    _, back = load_checkpoint(tmp_path, with_adam=True)
    assert back.step_count == 1
    for n in state.first_moment:
        assert np.allclose(back.first_moment[n], state.first_moment[n], rtol=1e-6)
        assert np.allclose(back.second_moment[n], state.second_moment[n], rtol=1e-6)


def test_missing_and_corrupt_checkpoints(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)
    save_checkpoint(tmp_path, toy.model())
    manifest = tmp_path / "manifest.txt"
    lines = manifest.read_text().splitlines()
    manifest.write_text("\n".join(lines[:1] + ["bad line"] + lines[2:]) + "\n")
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path)
    name, shape, offset, flag = lines[1].split()
    manifest.write_text("\n".join(lines[:1] + [f"{name} 3x3 {offset} {flag}"] + lines[2:]) + "\n")
    with pytest.raises(ConfigError, match=name):
        load_checkpoint(tmp_path)


def test_truncated_blob(tmp_path):
    save_checkpoint(tmp_path, toy.model())
    blob = tmp_path / "params.bin"
    blob.write_bytes(blob.read_bytes()[:100])
    with pytest.raises(ParseError):
        load_checkpoint(tmp_path)


def test_index_round_trip(tmp_path):
    params = toy.model()
    _, _, source, _ = toy.world()
    index = build_index(source, params)
    save_index(tmp_path, index)
    back = load_index(tmp_path)
    assert np.array_equal(back.ids, index.ids)
    assert back.rep_source == index.rep_source
    assert np.allclose(back.reps, index.reps, rtol=1e-6)


def test_config_text_round_trip():
    cfg = MetaConfig(inner_lr=3e-5, lam=0.5, inner_optimizer="sgd")
    values = {f"meta.{k}": v for k, v in vars(cfg).items()}
    assert coerce(MetaConfig, parse_config(format_config(values)), "meta.") == cfg


def test_config_parse_errors():
    with pytest.raises(ParseError) as err:
        parse_config("# comment\na=1\nnot a pair\n")
    assert err.value.line == 3
    with pytest.raises(ConfigError, match="meta.lam"):
        coerce(MetaConfig, {"meta.lam": "lots"}, "meta.")
