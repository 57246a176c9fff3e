"""Command-line entry point: ``metaner <subcommand> [--flags]``.

Every run directory gets a ``config.txt`` with the fully resolved settings
as ``section.field=value`` lines; ``--config`` reads such a file back, and
flags given on the command line override it.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .adapt import AdaptConfig, adapt_parallel, direct_predict
from .autodiff import AdamState
from .corpus import Vocabulary, read_conll, write_conll
from .errors import ConfigError, ContractViolation, NumericalError, ParseError
from .evaluation import phrase_f1
from .metatrain import MetaConfig
from .pipeline import (BENCHMARK, VARIANTS, BenchConfig, ModelConfig, initial_model,
                       load_corpora, run_ablation, run_low_resource, train_meta)
from .retrieval import build_index, params_digest
from .synthbench import SynthConfig, generate

log = logging.getLogger("metaner")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SECTIONS = {"model": ModelConfig, "meta": MetaConfig, "adapt": AdaptConfig,
            "synth": SynthConfig}
BENCH_FIELDS = ("base_lr", "base_steps", "finetune_epochs", "finetune_lr")
# flags whose name differs from the config field they set
ALIASES = {("adapt", "lr"): "gamma", ("adapt", "optimizer"): "adapt-optimizer",
           ("adapt", "max_loss"): "adapt-max-loss", ("adapt", "dropout"): "adapt-dropout",
           ("adapt", "seed"): None, ("meta", "seed"): None, ("synth", "seed"): "synth-seed",
           ("synth", "templates"): None, ("adapt", "max_len"): None,
           ("adapt", "context_len"): "context-len", ("adapt", "lam"): None}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flag(section, name):
    alias = ALIASES.get((section, name), name.replace("_", "-"))
    return None if alias is None else "--" + alias


def _add_section(parser, section, seen):
    for f in dataclasses.fields(SECTIONS[section]):
        flag = _flag(section, f.name)
        if flag is None or flag in seen:
            continue
        seen.add(flag)
        kind = type(f.default) if f.default is not dataclasses.MISSING else str
        help_ = f"{section}.{f.name}"
        if kind is bool:
            parser.add_argument(flag, dest=f"{section}.{f.name}", default=None,
                                choices=("true", "false"), help=help_, metavar=f.name.upper())
        elif kind is tuple:
            parser.add_argument(flag, dest=f"{section}.{f.name}", default=None,
                                help=help_ + " (comma list)", metavar="A,B")
        else:
            parser.add_argument(flag, dest=f"{section}.{f.name}", default=None,
                                type=kind if kind in (int, float) else str, help=help_, metavar=f.name.upper())


def _add_bench(parser):
    for name in BENCH_FIELDS:
        parser.add_argument("--" + name.replace("_", "-"), dest=f"bench.{name}",
                            default=None, type=type(getattr(BenchConfig, name)))


def _common(parser, sections):
    parser.add_argument("--config", help="key=value file; flags override it")
    parser.add_argument("--preset", choices=("benchmark",), default=None,
                        help="start from the synthetic-benchmark settings")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    seen = set()
    for s in sections:
        _add_section(parser, s, seen)


def build_parser():
    p = Parser(prog="metaner", description="Meta-learned cross-lingual NER at desk scale.")
    sub = p.add_subparsers(dest="command", parser_class=Parser)

    g = sub.add_parser("gen-synth", help="write a synthetic source/target corpus pair")
    _common(g, ["synth"])
    g.add_argument("--out-dir", required=True)

    m = sub.add_parser("meta-train", help="meta-train on a source corpus")
    _common(m, ["model", "meta", "adapt"])
    m.add_argument("--source", required=True)
    m.add_argument("--run-dir", required=True)
    m.add_argument("--checkpoint-every", type=int, default=0)

    a = sub.add_parser("adapt-eval", help="adapt per test sentence and score")
    _common(a, ["adapt"])
    a.add_argument("--run-dir", required=True, help="directory written by meta-train")
    a.add_argument("--source", required=True)
    a.add_argument("--target", required=True)
    a.add_argument("--mode", choices=("direct", "adapt"), default="adapt")
    a.add_argument("--seeds", default=None, help="comma list; one run per seed")
    a.add_argument("--out", default=None, help="prediction file (default: in run dir)")
    a.add_argument("--workers", type=int, default=1)

    b = sub.add_parser("ablate", help="compare variants under shared seeds")
    _common(b, ["model", "meta", "adapt", "synth"])
    _add_bench(b)
    b.add_argument("--source")
    b.add_argument("--target")
    b.add_argument("--seeds", default="0,1,2,3,4")
    b.add_argument("--variants", default=",".join(VARIANTS))
    b.add_argument("--out-dir", required=True)

    s = sub.add_parser("score", help="phrase-level F1 of a prediction file")
    s.add_argument("--gold", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--verbose", action="store_true")

    lr = sub.add_parser("low-resource", help="fine-tune on a labeled target subset")
    _common(lr, ["model", "meta", "adapt", "synth"])
    _add_bench(lr)
    lr.add_argument("--source")
    lr.add_argument("--target")
    lr.add_argument("--target-train")
    lr.add_argument("--seeds", default="0,1,2,3,4")
    lr.add_argument("--out-dir", required=True)
    return p


# ---------------------------------------------------------------- config

def resolve(args, sections, inherited=None):
    """Dataclass instances per section: defaults < --preset < ``inherited``
    config file (e.g. the run being evaluated) < --config file < flags."""
    values = {}
    if getattr(args, "preset", None) == "benchmark":
        values.update({k: ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
                       for k, v in BENCHMARK.items()})
    if inherited is not None and Path(inherited).is_file():
        values.update(ckpt.parse_config(Path(inherited).read_text()))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} does not exist")
        values.update(ckpt.parse_config(path.read_text()))
    for key, value in vars(args).items():
        if "." in key and value is not None:
            values[key] = str(value)
    if getattr(args, "seed", None) is not None:
        values["meta.seed"] = values["adapt.seed"] = str(args.seed)
        values.setdefault("synth.seed", str(args.seed))
    out = {}
    for s in sections:
        try:
            out[s] = ckpt.coerce(SECTIONS[s], values, s + ".")
        except TypeError as err:
            raise ConfigError(str(err)) from err
    bench = {}
    for name in BENCH_FIELDS:
        if f"bench.{name}" in values:
            bench[name] = type(getattr(BenchConfig, name))(values[f"bench.{name}"])
    out["bench"] = bench
    return out


def flatten(resolved, extra=None):
    flat = {}
    for section, obj in resolved.items():
        if dataclasses.is_dataclass(obj):
            for k, v in dataclasses.asdict(obj).items():
                if (section, k) != ("synth", "templates"):   # not settable, holds commas
                    flat[f"{section}.{k}"] = v
        else:
            for k, v in obj.items():
                flat[f"{section}.{k}"] = v
    flat.update(extra or {})
    return flat


def _write_config(directory, resolved, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(ckpt.format_config(flatten(resolved, extra)))


def _bench(resolved):
    return BenchConfig(model=resolved["model"], meta=resolved["meta"],
                       adapt=resolved["adapt"], **resolved["bench"])


def _seeds(text):
    try:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise UsageError(f"--seeds expects a comma list of integers, got {text!r}") from err
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _existing(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).is_file():
        raise UsageError(f"{flag}: {path} does not exist")
    return path


def _emit(lines):
    for line in lines:
        print(line)


def _corpora_from(args, resolved, need_train=False):
    """Corpora from files when given, otherwise from the synthetic generator."""
    model = resolved["model"]
    if args.source or args.target:
        source = read_conll(_existing(args.source, "--source"))
        target = read_conll(_existing(args.target, "--target"))
        train = []
        if need_train:
            train = read_conll(_existing(args.target_train, "--target-train"))
        return load_corpora(source, target, train, vocab_size=model.vocab_size)
    synth = resolved["synth"]
    if need_train and synth.target_train_size == 0:
        synth = dataclasses.replace(synth, target_train_size=max(1, synth.train_size // 20))
        resolved["synth"] = synth
    data = generate(synth)
    return load_corpora(data.source, data.target_test, data.target_train,
                        vocab_size=model.vocab_size)


# ---------------------------------------------------------------- commands

def cmd_gen_synth(args):
    resolved = resolve(args, ["synth"])
    data = generate(resolved["synth"])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_conll(out / "source.conll", data.source)
    write_conll(out / "target_test.conll", data.target_test)
    if data.target_train:
        write_conll(out / "target_train.conll", data.target_train)
    _write_config(out, {"synth": resolved["synth"]})
    _emit([f"split=source sentences={len(data.source)}",
           f"split=target_test sentences={len(data.target_test)}",
           f"split=target_train sentences={len(data.target_train)}"])
    return EXIT_OK


def cmd_meta_train(args):
    source = read_conll(_existing(args.source, "--source"))
    resolved = resolve(args, ["model", "meta", "adapt"])
    bench = _bench(resolved)
    corpora = load_corpora(source, [], vocab_size=bench.model.vocab_size)
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    (run / "vocab.txt").write_text(corpora.vocab.dumps())
    (run / "labels.txt").write_text("\n".join(corpora.labels) + "\n")
    init = initial_model(corpora, bench.model, bench.meta.seed)
    state = AdamState()

    def on_step(step, theta, loss):
        log.info("step=%d loss=%.6f", step, loss)
        if args.checkpoint_every and step % args.checkpoint_every == 0:
            ckpt.save_checkpoint(run / f"step{step}", init.with_arrays(theta), state)

    # "full" keeps lam and mask_probability exactly as configured
    params, trail = train_meta(corpora, bench, "full", bench.meta.seed, on_step, state)
    ckpt.save_checkpoint(run / "checkpoint", params, state)
    ckpt.save_index(run / "index", build_index(corpora.source, params))
    (run / "train_log.txt").write_text("".join(line + "\n" for line in trail.lines()))
    _write_config(run, resolved, {"run.source": args.source})
    _emit(trail.lines()[-1:] + [f"checkpoint={run / 'checkpoint'} steps={len(trail.records)}"])
    return EXIT_OK


def _load_run(run):
    run = Path(run)
    if not (run / "checkpoint" / ckpt.MANIFEST).is_file():
        raise UsageError(f"{run} holds no checkpoint (run meta-train first)")
    params = ckpt.load_checkpoint(run / "checkpoint")
    vocab = Vocabulary.loads((run / "vocab.txt").read_text())
    labels = (run / "labels.txt").read_text().split()
    return params, vocab, labels


def cmd_adapt_eval(args):
    run = Path(args.run_dir)
    params, vocab, labels = _load_run(run)
    source = read_conll(_existing(args.source, "--source"))
    target = read_conll(_existing(args.target, "--target"))
    resolved = resolve(args, ["adapt"], inherited=run / "config.txt")
    acfg = dataclasses.replace(resolved["adapt"], max_len=params.config.max_positions)
    corpora = load_corpora(source, target, vocab=vocab)
    if corpora.labels != labels:
        unknown = sorted(set(corpora.labels) - set(labels))
        if unknown:
            raise ParseError(f"labels {unknown} were not seen in training")
        corpora.labels = labels
        corpora = load_corpora(source, target, vocab=vocab)
        corpora.labels = labels
    seeds = _seeds(args.seeds) if args.seeds else [acfg.seed]
    index = None
    if args.mode == "adapt" and acfg.k > 0:
        saved = run / "index"
        if (saved / "index.txt").is_file():
            index = ckpt.load_index(saved)
            if index.rep_source != params_digest(params) or \
                    len(index) != len(corpora.source):
                index = None
        if index is None:
            index = build_index(corpora.source, params)
    out = Path(args.out) if args.out else run / "predictions.conll"
    out.parent.mkdir(parents=True, exist_ok=True)
    gold = [ex.sentence.labels for ex in corpora.target]
    scores = []
    for seed in seeds:
        cfg = dataclasses.replace(acfg, seed=seed)
        if args.mode == "direct":
            pred = direct_predict(params, corpora.target, corpora.labels, cfg.max_len,
                                  cfg.context_len)
        else:
            pred = adapt_parallel(params, corpora.target, corpora.source, index,
                                  corpora.labels, cfg, args.workers)
        path = out if len(seeds) == 1 else out.with_name(f"{out.stem}.seed{seed}{out.suffix}")
        write_conll(path, [ex.sentence for ex in corpora.target], pred)
        report = phrase_f1(gold, pred)
        scores.append(report.f1)
        _emit([f"seed={seed} predictions={path}"] +
              [f"seed={seed} {line}" for line in report.lines()])
    _emit([f"mean_f1={np.mean(scores):.6f} runs={len(scores)}"])
    _write_config(run / "adapt_eval", resolved,
                  {"run.mode": args.mode, "run.seeds": seeds, "run.source": args.source,
                   "run.target": args.target})
    return EXIT_OK


def cmd_ablate(args):
    resolved = resolve(args, ["model", "meta", "adapt", "synth"])
    seeds = _seeds(args.seeds)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown or not variants:
        raise UsageError(f"unknown variants {unknown}; choose from {', '.join(VARIANTS)}")
    corpora = _corpora_from(args, resolved)
    bench = _bench(resolved)
    out = Path(args.out_dir)
    _write_config(out, resolved, {"run.seeds": seeds, "run.variants": variants})
    result = run_ablation(corpora, bench, seeds, variants)
    (out / "ablation.txt").write_text("\n".join(result.lines()) + "\n")
    (out / "table.txt").write_text(result.table() + "\n")
    from .plots import ablation_figure  # noqa: PLC0415
    fig = ablation_figure(result, out / "ablation.png")
    _emit(result.lines())
    print("---")
    print(result.table())
    _emit([f"figure={fig}"])
    return EXIT_OK


def cmd_score(args):
    gold_sents = read_conll(_existing(args.gold, "--gold"))
    pred_sents = read_conll(_existing(args.pred, "--pred"))
    if len(gold_sents) != len(pred_sents):
        raise ContractViolation(f"{len(gold_sents)} gold sentences but "
                                f"{len(pred_sents)} predicted")
    for i, (g, p) in enumerate(zip(gold_sents, pred_sents)):
        if g.tokens != p.tokens:
            raise ContractViolation(f"sentence {i}: tokens differ between the two files")
    report = phrase_f1([s.labels for s in gold_sents], [s.labels for s in pred_sents])
    _emit(report.lines())
    print("---")
    print(report.table())
    return EXIT_OK


def cmd_low_resource(args):
    resolved = resolve(args, ["model", "meta", "adapt", "synth"])
    seeds = _seeds(args.seeds)
    corpora = _corpora_from(args, resolved, need_train=True)
    bench = _bench(resolved)
    out = Path(args.out_dir)
    _write_config(out, resolved, {"run.seeds": seeds})
    scores = run_low_resource(corpora, bench, seeds)
    lines = [f"seed={s} direct_f1={d:.6f} finetuned_f1={f:.6f}" for s, (d, f) in scores.items()]
    lines.append(f"mean_direct_f1={np.mean([d for d, _ in scores.values()]):.6f} "
                 f"mean_finetuned_f1={np.mean([f for _, f in scores.values()]):.6f}")
    (out / "low_resource.txt").write_text("\n".join(lines) + "\n")
    from .plots import low_resource_figure  # noqa: PLC0415
    fig = low_resource_figure(scores, out / "low_resource.png")
    _emit(lines + [f"figure={fig}"])
    return EXIT_OK


COMMANDS = {"gen-synth": cmd_gen_synth, "meta-train": cmd_meta_train,
            "adapt-eval": cmd_adapt_eval, "ablate": cmd_ablate, "score": cmd_score,
            "low-resource": cmd_low_resource}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ContractViolation, UnicodeDecodeError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
