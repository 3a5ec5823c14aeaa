"""Follow the meta-leader: MAML over completed tasks, adapt per task.

This learner is granted the boundary privilege: it keeps a per-task store,
meta-trains a leader vector with exact second-order gradients through a
5-step inner loop on sampled past tasks, and fine-tunes a copy of the leader
on the current task. Adapted weights are discarded at every boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import models, optim
from .common import (
    StepInfo,
    UpdateScheduler,
    batch_from_state,
    batch_state,
    restore_rng,
    rng_state,
    sample_minibatch,
    split_batch,
)


@dataclass
class FtmlHyper:
    inner_lr: float = 0.001  # SGD inside the adaptation unroll
    outer_lr: float = 0.0005
    inner_steps: int = 5
    ft_lr: float = 0.001  # current-task fine-tuning of the adapted copy
    optimizer: str = "adam"  # outer loop
    updates_per_task: int = 50  # fine-tune budget on the current task
    steps_per_task: int = 20
    support_fraction: float = 0.8
    train_fraction: float = 0.8  # metric split


class FtmlLearner:
    needs_boundaries = True
    uses_buffer = False

    def __init__(self, arch, hyper, seed, dtype=np.float64):
        self.arch = arch
        self.hyper = hyper
        self.meta = models.init_params(arch, seed, dtype)
        self.outer_opt = optim.make_optimizer(hyper.optimizer, hyper.outer_lr)
        self.outer_state = self.outer_opt.init_state(self.meta.segments)
        self.adapted = self.meta.copy()
        self.ft_opt = optim.make_optimizer("adam", 0.001)
        self.ft_state = self.ft_opt.init_state(self.adapted.segments)
        self.task_store = []  # one concatenated LabeledBatch per completed task
        self.task_data = []
        self.ft_scheduler = UpdateScheduler(lambda t: hyper.updates_per_task, hyper.steps_per_task)
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF73]))

    def eval_params(self):
        return self.adapted

    # -- meta-leader update ---------------------------------------------------

    def outer_gradient(self, support, query):
        """d(query loss after inner_steps SGD steps on support)/d(meta).

        The inner unroll is recorded with create_graph, so this is the exact
        MAML gradient, second-order terms included.
        """
        tape = ad.Tape()
        with ad.recording(tape):
            leaves = {n: tape.leaf(n, a) for n, a in self.meta}
            phi = dict(leaves)
            names = list(phi)
            for _ in range(self.hyper.inner_steps):
                inner = models.loss_tensor(self.arch, phi, support)
                gs = ad.backward(tape, inner, [phi[n] for n in names], create_graph=True)
                phi = {n: ad.sub(phi[n], ad.scale(g, self.hyper.inner_lr)) for n, g in zip(names, gs)}
            outer = models.loss_tensor(self.arch, phi, query)
        return ad.grad_through_update(tape, outer, self.meta), outer.item()

    def meta_update(self):
        if not self.task_store:
            return None
        task = self.task_store[self.rng.integers(0, len(self.task_store))]
        support, query = split_batch(task, self.hyper.support_fraction)
        grad, outer_loss = self.outer_gradient(support, query)
        segs, self.outer_state = self.outer_opt.step_arrays(
            self.meta.segments, grad.segments, self.outer_state
        )
        self.meta = ad.ParameterVector(segs)
        return outer_loss

    # -- stream step ---------------------------------------------------------------

    def step(self, batch, boundary):
        if boundary:
            if self.task_data:
                self.task_store.append(models.concat_batches(self.task_data))
            self.task_data = []
            self.adapted = self.meta.copy()
            self.ft_state = self.ft_opt.init_state(self.adapted.segments)
            self.ft_scheduler.reset_accumulator()
        self.task_data.append(batch)

        train, val = split_batch(batch, self.hyper.train_fraction)
        predictions = models.predict(self.arch, self.adapted, train)
        online_loss = models.loss_value(self.arch, self.adapted, train)

        self.meta_update()
        for _ in range(self.ft_scheduler.next()):
            mini = sample_minibatch(self.task_data, batch.size, self.rng)
            _, g = models.loss_and_grad(self.arch, self.adapted, mini)
            segs, self.ft_state = self.ft_opt.step_arrays(
                self.adapted.segments, g.segments, self.ft_state
            )
            self.adapted = ad.ParameterVector(segs)

        val_loss = models.loss_value(self.arch, self.adapted, val)
        return StepInfo(online_loss=online_loss, val_loss=val_loss, predictions=predictions)

    # -- checkpointing -----------------------------------------------------------------

    def state_dict(self):
        return {
            "meta": dict(self.meta.segments),
            "outer_state": optim.copy_state(self.outer_state),
            "adapted": dict(self.adapted.segments),
            "ft_state": optim.copy_state(self.ft_state),
            "task_store": [batch_state(b) for b in self.task_store],
            "task_data": [batch_state(b) for b in self.task_data],
            "ft_scheduler": self.ft_scheduler.state(),
            "rng": rng_state(self.rng),
        }

    def load_state_dict(self, state):
        self.meta = ad.ParameterVector(state["meta"])
        self.outer_state = optim.copy_state(state["outer_state"])
        self.adapted = ad.ParameterVector(state["adapted"])
        self.ft_state = optim.copy_state(state["ft_state"])
        self.task_store = [batch_from_state(b) for b in state["task_store"]]
        self.task_data = [batch_from_state(b) for b in state["task_data"]]
        self.ft_scheduler.restore(state["ft_scheduler"])
        self.rng = restore_rng(state["rng"])
