"""Shared learner plumbing: the pull-toward regularizer, batch splits, budgets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import models


@dataclass
class StepInfo:
    """Per-step metric payload: losses around one observe/update cycle.

    `online_loss` and `predictions` are measured with the pre-update
    parameters on the incoming train split; `val_loss` with the post-update
    parameters on the incoming validation split.
    """

    online_loss: float
    val_loss: float
    predictions: np.ndarray


def regularizer_tensor(phi_tensors, theta_tensors):
    """Sum of squared coordinate differences between two parameter sets."""
    if list(phi_tensors) != list(theta_tensors):
        raise ad.ContractError("parameter layouts differ")
    total = None
    for name in phi_tensors:
        term = ad.reduce_sum(ad.square(ad.sub(phi_tensors[name], theta_tensors[name])))
        total = term if total is None else ad.add(total, term)
    return total


def regularizer(phi, theta):
    """Eager value of the squared-difference regularizer (coordinate sum)."""
    if not phi.same_layout(theta):
        raise ad.ContractError("parameter layouts differ")
    return float(sum(np.sum((a - theta.segments[n]) ** 2) for n, a in phi))


def split_batch(batch, train_fraction):
    """Leading train_fraction of the batch trains, the rest validates."""
    n_train = int(round(batch.size * train_fraction))
    n_train = min(max(n_train, 1), batch.size)
    train = batch.take(np.arange(n_train))
    val = batch.take(np.arange(n_train, batch.size)) if n_train < batch.size else train
    return train, val


def derive_seed(base_seed, counter):
    """Deterministic fresh seed for in-run re-initializations."""
    return int(np.random.SeedSequence([int(base_seed), int(counter)]).generate_state(1)[0])


class UpdateScheduler:
    """Spreads a per-task update budget evenly over that task's stream steps.

    The schedule input is step counting plus a configured steps-per-task hint;
    it carries no information about actual task boundaries.
    """

    def __init__(self, budget_fn, steps_per_task):
        self.budget_fn = budget_fn  # task ordinal -> update budget for that task
        self.steps_per_task = max(int(steps_per_task), 1)
        self._acc = 0.0
        self._steps_seen = 0

    def next(self):
        t = self._steps_seen // self.steps_per_task
        self._acc += self.budget_fn(t) / self.steps_per_task
        self._steps_seen += 1
        whole = int(self._acc)
        self._acc -= whole
        return whole

    def reset_accumulator(self):
        self._acc = 0.0

    def state(self):
        return {"acc": self._acc, "steps_seen": self._steps_seen}

    def restore(self, state):
        self._acc = state["acc"]
        self._steps_seen = state["steps_seen"]


def sample_minibatch(batches, size, rng):
    """Uniform-with-replacement minibatch over a list of stored batches."""
    pool = models.concat_batches(batches) if len(batches) > 1 else batches[0]
    idx = rng.integers(0, pool.size, size=size)
    return pool.take(idx)


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def batch_state(batch):
    if isinstance(batch.inputs, tuple):
        return {"pair": True, "a": batch.inputs[0], "b": batch.inputs[1], "labels": batch.labels}
    return {"pair": False, "inputs": batch.inputs, "labels": batch.labels}


def batch_from_state(state):
    if state["pair"]:
        return models.LabeledBatch((state["a"], state["b"]), state["labels"])
    return models.LabeledBatch(state["inputs"], state["labels"])
