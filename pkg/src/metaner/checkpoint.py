"""On-disk formats: parameter checkpoints, retrieval indexes and key=value configs.

A checkpoint is a directory with a text manifest (one line per tensor:
name, shape, byte offset, frozen flag) and a little-endian float32 blob.
Adam moments, when present, go to a second blob in the same layout.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .autodiff import AdamState
from .encoder import EncoderConfig, ModelParameters
from .errors import ConfigError, ParseError
from .retrieval import RetrievalIndex

DTYPE = np.dtype("<f4")
MANIFEST = "manifest.txt"
BLOB = "params.bin"
ADAM_BLOB = "adam.bin"


def format_config(values):
    """``key=value`` lines in sorted key order; tuples become comma lists."""
    lines = []
    for key in sorted(values):
        v = values[key]
        if isinstance(v, (tuple, list)):
            v = ",".join(map(str, v))
        lines.append(f"{key}={v}")
    return "\n".join(lines) + "\n"


def parse_config(text):
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"expected key=value, got {raw!r}", n)
        out[key.strip()] = value.strip()
    return out


def coerce(cls, values, prefix=""):
    """Build dataclass ``cls`` from string values under ``prefix``."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        if key not in values:
            continue
        raw, default = values[key], f.default
        try:
            if isinstance(default, bool):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                kwargs[f.name] = raw.lower() in ("true", "1")
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            elif isinstance(default, tuple):
                kwargs[f.name] = tuple(x for x in raw.split(",") if x)
            else:
                kwargs[f.name] = raw if f.type in ("str", str) else _number(raw)
        except ValueError as err:
            raise ConfigError(f"{key}: cannot read {raw!r}") from err
    return cls(**kwargs)


def _number(raw):
    try:
        return int(raw)
    except ValueError:
        return float(raw)


def _write_blob(path, arrays, names):
    offsets, offset = {}, 0
    with open(path, "wb") as fh:
        for name in names:
            data = np.ascontiguousarray(arrays[name], dtype=DTYPE)
            offsets[name] = offset
            fh.write(data.tobytes())
            offset += data.nbytes
    return offsets


def _read_blob(path, entries):
    raw = Path(path).read_bytes()
    out = {}
    for name, shape, offset in entries:
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * DTYPE.itemsize
        if end > len(raw):
            raise ParseError(f"{path}: tensor {name} runs past the end of the blob")
        out[name] = np.frombuffer(raw[offset:end], dtype=DTYPE).reshape(shape).astype(np.float64)
    return out


def save_checkpoint(directory, params, adam=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = list(params.config.shapes())
    offsets = _write_blob(directory / BLOB, params.arrays, names)
    lines = ["# " + format_config(dataclasses.asdict(params.config)).strip().replace("\n", " ")]
    for name in names:
        shape = "x".join(map(str, params.arrays[name].shape)) or "scalar"
        lines.append(f"{name} {shape} {offsets[name]} {int(name in params.frozen)}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    if adam is not None and adam.first_moment:
        moments = {}
        for name in sorted(adam.first_moment):
            moments["m." + name] = adam.first_moment[name]
            moments["v." + name] = adam.second_moment[name]
        _write_blob(directory / ADAM_BLOB, moments, list(moments))
        (directory / "adam.txt").write_text(
            format_config({"step_count": adam.step_count, "beta1": adam.beta1,
                           "beta2": adam.beta2, "epsilon": adam.epsilon,
                           "names": sorted(adam.first_moment)}))


def _shape(text):
    return () if text == "scalar" else tuple(int(x) for x in text.split("x"))


def load_checkpoint(directory, with_adam=False):
    directory = Path(directory)
    try:
        lines = (directory / MANIFEST).read_text().splitlines()
    except FileNotFoundError as err:
        raise ConfigError(f"no checkpoint manifest in {directory}") from err
    if not lines or not lines[0].startswith("# "):
        raise ParseError(f"{directory / MANIFEST}: missing config header", 1)
    config = coerce(EncoderConfig, parse_config(lines[0][2:].replace(" ", "\n")))
    entries, frozen = [], set()
    for n, line in enumerate(lines[1:], 2):
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(f"expected 'name shape offset frozen', got {line!r}", n)
        name, shape, offset, flag = parts
        entries.append((name, _shape(shape), int(offset)))
        if flag == "1":
            frozen.add(name)
    expected = config.shapes()
    for name, shape, _ in entries:
        if expected.get(name) != shape:
            raise ConfigError(f"tensor {name} has shape {shape}, config expects "
                              f"{expected.get(name)}")
    arrays = _read_blob(directory / BLOB, entries)
    params = ModelParameters(config, arrays, frozenset(frozen))
    if not with_adam:
        return params
    adam = AdamState()
    meta_path = directory / "adam.txt"
    if meta_path.exists():
        meta = parse_config(meta_path.read_text())
        names = [x for x in meta["names"].split(",") if x]
        layout = []
        offset = 0
        for name in names:
            shape = arrays[name].shape
            for kind in "mv":
                layout.append((f"{kind}.{name}", shape, offset))
                offset += int(np.prod(shape, dtype=np.int64)) * DTYPE.itemsize
        moments = _read_blob(directory / ADAM_BLOB, layout)
        adam = AdamState(beta1=float(meta["beta1"]), beta2=float(meta["beta2"]),
                         epsilon=float(meta["epsilon"]), step_count=int(meta["step_count"]),
                         first_moment={n: moments["m." + n] for n in names},
                         second_moment={n: moments["v." + n] for n in names})
    return params, adam


def save_index(directory, index):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_blob(directory / "reps.bin", {"reps": index.reps}, ["reps"])
    (directory / "index.txt").write_text(format_config({
        "rows": len(index), "dim": index.dim, "rep_source": index.rep_source,
        "ids": [int(i) for i in index.ids]}))


def load_index(directory):
    directory = Path(directory)
    meta = parse_config((directory / "index.txt").read_text())
    rows, dim = int(meta["rows"]), int(meta["dim"])
    ids = np.array([int(x) for x in meta["ids"].split(",") if x], dtype=np.int64)
    reps = _read_blob(directory / "reps.bin", [("reps", (rows, dim), 0)])["reps"]
    return RetrievalIndex(reps, ids, meta.get("rep_source", ""))
