"""First-order MAML over pseudo tasks.

All tasks of a meta-batch run together: the trainable parameters are copied
once per task along a leading axis, the inner updates act on that stack, and
the test-set gradients come back per task. Tasks never interact; a task's
dropout masks are drawn over the padded batch shape, so stacking matches
looping exactly for tasks that share a padded layout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .batching import collate
from .encoder import Dropout, bind, forward_hidden, forward_probs
from .errors import ConfigError, NumericalError
from .objectives import example_losses, mask_entities, masking_rng, token_losses

log = logging.getLogger(__name__)

TOKEN_TABLE = "embeddings.token"


@dataclass(frozen=True)
class MetaConfig:
    inner_lr: float = 1e-3
    meta_lr: float = 1e-3
    inner_steps: int = 2
    tasks_per_meta_update: int = 32
    max_meta_updates: int = 3000
    lam: float = 2.0
    mask_probability: float = 0.2
    seed: int = 0
    inner_optimizer: str = "adam"
    meta_optimizer: str = "adam"

    def __post_init__(self):
        if self.inner_steps < 1 or self.tasks_per_meta_update < 1:
            raise ConfigError("inner_steps and tasks_per_meta_update must be >= 1")
        if self.inner_lr < 0 or self.meta_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if not 0 <= self.mask_probability <= 1:
            raise ConfigError("mask_probability must lie in [0, 1]")
        for opt in (self.inner_optimizer, self.meta_optimizer):
            if opt not in ("adam", "sgd"):
                raise ConfigError(f"unknown optimizer {opt!r}")


@dataclass(frozen=True)
class PseudoTask:
    """K retrieved training examples and one test example."""
    train: tuple
    test: object
    id: int = 0


# ---------------------------------------------------------------- learners

class NerLearner:
    """Binds the encoder to the meta-learning loop.

    ``task_loss`` sums per-example losses over every example of every task,
    so the gradient w.r.t. a stacked parameter holds each task's own gradient.
    """

    def __init__(self, params, labels, mask_id, max_len=128, context_len=64):
        self.params = params
        self.labels = labels
        self.mask_id = mask_id
        self.max_len = max_len
        self.context_len = context_len

    @property
    def config(self):
        return self.params.config

    def trainable(self):
        return self.params.trainable()

    def with_trainable(self, arrays):
        self.params = self.params.with_arrays(arrays)
        return self

    def restrict(self, theta, tasks):
        """Give every task its own slice of the token table.

        A task only reaches the rows of its own sentences (plus padding and
        [MASK]); other rows get no gradient in the inner loop or the test
        pass, and fresh optimizer state leaves them in place, so working on
        the slices is exact. Returns ``(stacked theta, rows)`` where ``rows``
        is ``[T, R]`` (short lists padded with their last id), or
        ``(theta, None)`` when there is nothing to slice.
        """
        if TOKEN_TABLE not in theta:
            return theta, None
        extra = [0] if self.mask_id is None else [0, self.mask_id]
        per_task = [np.unique(np.concatenate([ex.seq.piece_ids for ex in (*t.train, t.test)]
                                             + [np.array(extra)])) for t in tasks]
        width = max(len(r) for r in per_task)
        rows = np.stack([np.pad(r, (0, width - len(r)), mode="edge") for r in per_task])
        stack = {n: np.repeat(np.asarray(v)[None], len(tasks), axis=0)
                 for n, v in theta.items() if n != TOKEN_TABLE}
        stack[TOKEN_TABLE] = theta[TOKEN_TABLE][rows]
        return stack, rows

    def masked_ids(self, tasks, probability, seed, epoch):
        if probability == 0.0:
            return None
        return [[mask_entities(ex.seq.piece_ids, ex.entity, self.mask_id, probability,
                               masking_rng(seed, epoch, ex.id)) for ex in exs]
                for exs in tasks]

    def task_loss(self, theta, tasks, *, lam=0.0, mask_probability=0.0, mask_seed=0,
                  epoch=0, rngs=None, stacked=True, rows=None):
        """Summed loss over ``tasks`` (lists of Examples) and per-task values.

        ``theta`` holds the trainable arrays, with a task axis when stacked.
        ``rngs`` enables dropout (one generator per task when stacked).
        ``rows`` maps piece ids into a sliced token table (see ``restrict``).
        """
        batch = collate(tasks, self.max_len, self.context_len, stacked,
                        self.masked_ids(tasks, mask_probability, mask_seed, epoch))
        if rows is not None:
            batch.ids = np.stack([np.searchsorted(r, i) for r, i in zip(rows, batch.ids)])
        bound = bind(self.params, theta)
        drop = None
        if rngs is not None:
            drop = Dropout(self.config.dropout_rate, rngs)
        h = forward_hidden(self.config, bound, batch.ids, batch.keys, drop)
        tlv = token_losses(forward_probs(bound, h), batch.gold, batch.active)
        per_example = example_losses(tlv, batch.members, lam)
        per_task = per_example.sum(axis=-1)
        total = per_task.sum() if stacked else per_task
        return total, np.atleast_1d(per_task.data)


class QuadraticProbe:
    """One scalar parameter; each example ``c`` contributes ``(theta - c)^2 / 2``.

    Used to check the meta-learning arithmetic against closed forms.
    """

    def __init__(self, theta=1.0):
        self.theta = {"theta": np.array(float(theta))}

    def trainable(self):
        return dict(self.theta)

    def with_trainable(self, arrays):
        self.theta = dict(arrays)
        return self

    def task_loss(self, theta, tasks, *, stacked=True, **_):
        t = ad.param(theta["theta"], "theta")
        targets = np.array([[float(c) for c in exs] for exs in tasks])
        if not stacked:
            targets = targets[0]
            diff = t - targets
        else:
            diff = t.reshape((-1, 1)) - targets
        sq = diff * diff * 0.5
        per_task = sq.sum(axis=-1)
        total = per_task.sum() if stacked else per_task
        return total, np.atleast_1d(per_task.data)


# ---------------------------------------------------------------- steps

def _rngs(seed, step, tasks):
    return [np.random.default_rng((seed, step, t.id, 0x64726F70)) for t in tasks]


def _rows(rows):
    return {} if rows is None else {"rows": rows}


def _opt_step(kind, theta, grads, lr, state):
    if kind == "sgd":
        return ad.sgd_step(theta, grads, lr)
    return ad.adam_step(theta, grads, state, lr)


def inner_update(learner, theta, tasks, cfg, *, epoch=0, step=0, rngs=None, rows=None):
    """Task-specific parameters after ``cfg.inner_steps`` updates on each train set.

    ``theta`` is left untouched; the result has a leading task axis. Each task
    starts from fresh optimizer state. With ``rows`` (from ``restrict``),
    ``theta`` already carries the task axis.
    """
    if rows is None:
        stack = {n: np.repeat(np.asarray(v)[None], len(tasks), axis=0) for n, v in theta.items()}
    else:
        stack = dict(theta)
    if rngs is None:
        rngs = _rngs(cfg.seed, step, tasks)
    state = ad.AdamState()
    train_sets = [list(t.train) for t in tasks]
    for _ in range(cfg.inner_steps):
        loss, _per = learner.task_loss(stack, train_sets, lam=cfg.lam,
                                       mask_probability=cfg.mask_probability,
                                       mask_seed=cfg.seed, epoch=epoch, rngs=rngs,
                                       **_rows(rows))
        grads = ad.backward(loss)
        stack = _opt_step(cfg.inner_optimizer, stack, grads, cfg.inner_lr, state)
    return stack


def meta_gradient(learner, theta_prime, tasks, cfg, *, epoch=0, rngs=None, step=0,
                  rows=None):
    """Per-task test-set gradients at the adapted parameters (first order).

    Returns ``(grads with task axis, per-task test losses)``.
    """
    if rngs is None:
        rngs = _rngs(cfg.seed, step, tasks)
    loss, per_task = learner.task_loss(theta_prime, [[t.test] for t in tasks],
                                       lam=cfg.lam, mask_probability=cfg.mask_probability,
                                       mask_seed=cfg.seed, epoch=epoch, rngs=rngs,
                                       **_rows(rows))
    return ad.backward(loss), per_task


def _finite_tasks(stack, count):
    ok = np.ones(count, dtype=bool)
    for arr in stack.values():
        ok &= np.isfinite(arr.reshape(count, -1)).all(axis=1)
    return ok


def meta_step(learner, theta, tasks, cfg, state=None, *, epoch=0, step=0):
    """One meta-update from a batch of tasks.

    Returns ``(new theta, summed test loss, skipped task count)``. The
    per-task gradients are summed in batch order before a single optimizer
    step (Adam with the persistent ``state``, or plain descent).
    """
    tasks = list(tasks)
    skipped = 0
    while tasks:
        rngs = _rngs(cfg.seed, step, tasks)
        small, rows = theta, None
        if hasattr(learner, "restrict"):
            small, rows = learner.restrict(theta, tasks)
        try:
            prime = inner_update(learner, small, tasks, cfg, epoch=epoch, rngs=rngs, rows=rows)
            ok = _finite_tasks(prime, len(tasks))
            if ok.all():
                grads, per_task = meta_gradient(learner, prime, tasks, cfg,
                                                epoch=epoch, rngs=rngs, rows=rows)
                ok = np.isfinite(per_task) & _finite_tasks(grads, len(tasks))
        except NumericalError:
            ok = None
        if ok is not None and ok.all():
            break
        if ok is None:
            # locate the offending tasks one by one
            ok = np.array([_task_is_finite(learner, theta, t, cfg, epoch, step)
                           for t in tasks])
        for t, good in zip(tasks, ok):
            if not good:
                log.warning("step %d: task %d produced a non-finite loss; skipped",
                            step, t.id)
        skipped += int((~ok).sum())
        tasks = [t for t, good in zip(tasks, ok) if good]
    if not tasks:
        log.warning("step %d: every task was skipped; no meta-update", step)
        return dict(theta), float("nan"), skipped
    total = {n: g.sum(axis=0) for n, g in grads.items()}
    if rows is not None:
        # scatter each task's slice back, in task order; padded duplicates
        # carry zero gradient
        full = np.zeros_like(theta[TOKEN_TABLE])
        for r, g in zip(rows, grads[TOKEN_TABLE]):
            width = len(np.unique(r))
            full[r[:width]] += g[:width]
        total[TOKEN_TABLE] = full
    if state is None:
        state = ad.AdamState()
    new = _opt_step(cfg.meta_optimizer, theta, total, cfg.meta_lr, state)
    return new, float(per_task.sum()), skipped


def _task_is_finite(learner, theta, task, cfg, epoch, step):
    try:
        prime = inner_update(learner, theta, [task], cfg, epoch=epoch, step=step)
        grads, per = meta_gradient(learner, prime, [task], cfg, epoch=epoch, step=step)
    except NumericalError:
        return False
    return bool(np.isfinite(per).all() and _finite_tasks(grads, 1).all())


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def add(self, step, loss, skipped):
        self.records.append((step, loss, skipped))

    def lines(self):
        return [f"step={s} loss={loss:.6f} skipped={k}" for s, loss, k in self.records]


def meta_train(learner, tasks, cfg, on_step=None, state=None):
    """Run up to ``cfg.max_meta_updates`` meta-steps; returns (theta*, TrainLog).

    Tasks are visited in a fresh random order every epoch and masking is
    redrawn per epoch. ``learner`` is updated in place with theta*. Pass
    ``state`` to keep hold of the meta-optimizer's Adam moments.
    """
    theta = learner.trainable()
    trail = TrainLog()
    if cfg.max_meta_updates == 0 or not tasks:
        return theta, trail
    if state is None:
        state = ad.AdamState()
    rng = np.random.default_rng((cfg.seed, 0x6F72646572))
    epoch, order, cursor = 0, rng.permutation(len(tasks)), 0
    for step in range(1, cfg.max_meta_updates + 1):
        if cursor >= len(order):
            epoch += 1
            order, cursor = rng.permutation(len(tasks)), 0
        picked = order[cursor: cursor + cfg.tasks_per_meta_update]
        cursor += len(picked)
        batch = [tasks[i] for i in sorted(picked)]
        theta, loss, skipped = meta_step(learner, theta, batch, cfg, state,
                                         epoch=epoch, step=step)
        trail.add(step, loss, skipped)
        if on_step is not None:
            on_step(step, theta, loss)
    learner.with_trainable(theta)
    return theta, trail


def supervised_train(learner, examples, *, steps, batch_size, lr, seed=0, lam=0.0,
                     mask_probability=0.0, dropout=True, on_step=None):
    """Plain mini-batch Adam on summed per-example losses (no meta-learning).

    Batches are drawn without replacement within an epoch. Returns theta.
    """
    theta = learner.trainable()
    if steps == 0 or not examples:
        return theta
    state = ad.AdamState()
    rng = np.random.default_rng((seed, 0x73757076))
    epoch, order, cursor = 0, rng.permutation(len(examples)), 0
    for step in range(1, steps + 1):
        if cursor >= len(order):
            epoch += 1
            order, cursor = rng.permutation(len(examples)), 0
        picked = sorted(order[cursor: cursor + batch_size])
        cursor += len(picked)
        drop = np.random.default_rng((seed, step, 0x64726F70)) if dropout else None
        loss, _ = learner.task_loss(theta, [[examples[i] for i in picked]], lam=lam,
                                    mask_probability=mask_probability, mask_seed=seed,
                                    epoch=epoch, rngs=drop, stacked=False)
        grads = ad.backward(loss)
        theta = ad.adam_step(theta, grads, state, lr)
        if on_step is not None:
            on_step(step, theta, float(loss.data))
    learner.with_trainable(theta)
    return theta
