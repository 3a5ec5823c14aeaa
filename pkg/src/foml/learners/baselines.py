"""Boundary-aware and buffer-driven reference learners: TFS, TOE, FTL.

TFS re-initializes at every task boundary and trains only on the current
task. TOE ignores boundaries and keeps training on uniform replay-buffer
samples, with an update budget that grows along the stream. FTL maintains a
TOE-style pretrained vector and fine-tunes a discardable copy on the current
task; evaluation always uses the fine-tuned copy.
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
    derive_seed,
    restore_rng,
    rng_state,
    sample_minibatch,
    split_batch,
)


@dataclass
class BaselineHyper:
    lr: float = 0.001
    optimizer: str = "adam"
    updates_per_task: int = 50  # TFS / fine-tune budget
    toe_base_updates: int = 50  # TOE pretrain budget at stream start
    toe_growth_every: int = 100  # tasks between budget increases
    toe_growth_amount: int = 10  # extra updates per increase
    steps_per_task: int = 20  # schedule hint: stream steps per task
    train_fraction: float = 0.8  # metric split, mirrors the online learner


def _measured_step(arch, params_before, params_after_fn, batch, train_fraction):
    """Run a learner body with the shared metric convention around it."""
    train, val = split_batch(batch, train_fraction)
    predictions = models.predict(arch, params_before, train)
    online_loss = models.loss_value(arch, params_before, train)
    params_after = params_after_fn(train)
    val_loss = models.loss_value(arch, params_after, val)
    return StepInfo(online_loss=online_loss, val_loss=val_loss, predictions=predictions)


class TfsLearner:
    """Train from scratch on every task (requires boundary signals)."""

    needs_boundaries = True
    uses_buffer = False

    def __init__(self, arch, hyper, seed, dtype=np.float64):
        self.arch = arch
        self.hyper = hyper
        self.seed = int(seed)
        self.dtype = dtype
        self.resets = 0
        self.last_reset_seed = seed
        self.params = models.init_params(arch, seed, dtype)
        self.opt = optim.make_optimizer(hyper.optimizer, hyper.lr)
        self.opt_state = self.opt.init_state(self.params.segments)
        self.task_data = []
        self.scheduler = UpdateScheduler(lambda t: hyper.updates_per_task, hyper.steps_per_task)
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7F5]))

    def eval_params(self):
        return self.params

    def reset(self):
        self.resets += 1
        self.last_reset_seed = derive_seed(self.seed, self.resets)
        self.params = models.init_params(self.arch, self.last_reset_seed, self.dtype)
        self.opt_state = self.opt.init_state(self.params.segments)
        self.task_data = []
        self.scheduler.reset_accumulator()

    def step(self, batch, boundary):
        if boundary:
            self.reset()
        self.task_data.append(batch)

        def body(_train):
            for _ in range(self.scheduler.next()):
                mini = sample_minibatch(self.task_data, batch.size, self.rng)
                _, g = models.loss_and_grad(self.arch, self.params, mini)
                segs, self.opt_state = self.opt.step_arrays(
                    self.params.segments, g.segments, self.opt_state
                )
                self.params = ad.ParameterVector(segs)
            return self.params

        return _measured_step(self.arch, self.params, body, batch, self.hyper.train_fraction)

    def state_dict(self):
        return {
            "params": dict(self.params.segments),
            "opt_state": optim.copy_state(self.opt_state),
            "task_data": [batch_state(b) for b in self.task_data],
            "resets": self.resets,
            "last_reset_seed": self.last_reset_seed,
            "scheduler": self.scheduler.state(),
            "rng": rng_state(self.rng),
        }

    def load_state_dict(self, state):
        self.params = ad.ParameterVector(state["params"])
        self.opt_state = optim.copy_state(state["opt_state"])
        self.task_data = [batch_from_state(b) for b in state["task_data"]]
        self.resets = state["resets"]
        self.last_reset_seed = state["last_reset_seed"]
        self.scheduler.restore(state["scheduler"])
        self.rng = restore_rng(state["rng"])


class ToeLearner:
    """Train on everything: uniform buffer samples, growing update budget."""

    needs_boundaries = False
    uses_buffer = True

    def __init__(self, arch, hyper, seed, dtype=np.float64):
        self.arch = arch
        self.hyper = hyper
        self.params = models.init_params(arch, seed, dtype)
        self.opt = optim.make_optimizer(hyper.optimizer, hyper.lr)
        self.opt_state = self.opt.init_state(self.params.segments)
        self.scheduler = UpdateScheduler(self._budget, hyper.steps_per_task)
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x70E]))

    def _budget(self, task_ordinal):
        return self.budget_per_task(
            task_ordinal,
            self.hyper.toe_base_updates,
            self.hyper.toe_growth_every,
            self.hyper.toe_growth_amount,
        )

    @staticmethod
    def budget_per_task(task_ordinal, base, growth_every, growth_amount):
        return base + growth_amount * (task_ordinal // growth_every)

    def eval_params(self):
        return self.params

    def step(self, batch, buffer):
        buffer.append(batch)

        def body(_train):
            for _ in range(self.scheduler.next()):
                mini = buffer.sample_random(batch.size, rng=self.rng)
                _, g = models.loss_and_grad(self.arch, self.params, mini)
                segs, self.opt_state = self.opt.step_arrays(
                    self.params.segments, g.segments, self.opt_state
                )
                self.params = ad.ParameterVector(segs)
            return self.params

        return _measured_step(self.arch, self.params, body, batch, self.hyper.train_fraction)

    def state_dict(self):
        return {
            "params": dict(self.params.segments),
            "opt_state": optim.copy_state(self.opt_state),
            "scheduler": self.scheduler.state(),
            "rng": rng_state(self.rng),
        }

    def load_state_dict(self, state):
        self.params = ad.ParameterVector(state["params"])
        self.opt_state = optim.copy_state(state["opt_state"])
        self.scheduler.restore(state["scheduler"])
        self.rng = restore_rng(state["rng"])


class FtlLearner:
    """Follow the leader: pretrain on all history, fine-tune per task."""

    needs_boundaries = True
    uses_buffer = False

    def __init__(self, arch, hyper, seed, dtype=np.float64):
        self.arch = arch
        self.hyper = hyper
        self.pretrain = models.init_params(arch, seed, dtype)
        self.opt = optim.make_optimizer(hyper.optimizer, hyper.lr)
        self.pre_state = self.opt.init_state(self.pretrain.segments)
        self.finetune = self.pretrain.copy()
        self.ft_state = self.opt.init_state(self.finetune.segments)
        self.history = []
        self.task_data = []
        self.pre_scheduler = UpdateScheduler(self._pre_budget, hyper.steps_per_task)
        self.ft_scheduler = UpdateScheduler(lambda t: hyper.updates_per_task, hyper.steps_per_task)
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF71]))

    def _pre_budget(self, task_ordinal):
        return ToeLearner.budget_per_task(
            task_ordinal,
            self.hyper.toe_base_updates,
            self.hyper.toe_growth_every,
            self.hyper.toe_growth_amount,
        )

    def eval_params(self):
        return self.finetune

    def step(self, batch, boundary):
        if boundary:
            # adapted weights are discarded: restart from the pretrained
            # vector; the finished task's data joins the pretraining history
            self.history.extend(self.task_data)
            self.finetune = self.pretrain.copy()
            self.ft_state = self.opt.init_state(self.finetune.segments)
            self.task_data = []
            self.ft_scheduler.reset_accumulator()
        self.task_data.append(batch)

        def body(_train):
            pre_updates = self.pre_scheduler.next() if self.history else 0
            for _ in range(pre_updates):
                mini = sample_minibatch(self.history, batch.size, self.rng)
                _, g = models.loss_and_grad(self.arch, self.pretrain, mini)
                segs, self.pre_state = self.opt.step_arrays(
                    self.pretrain.segments, g.segments, self.pre_state
                )
                self.pretrain = ad.ParameterVector(segs)
            for _ in range(self.ft_scheduler.next()):
                mini = sample_minibatch(self.task_data, batch.size, self.rng)
                _, g = models.loss_and_grad(self.arch, self.finetune, mini)
                segs, self.ft_state = self.opt.step_arrays(
                    self.finetune.segments, g.segments, self.ft_state
                )
                self.finetune = ad.ParameterVector(segs)
            return self.finetune

        return _measured_step(self.arch, self.finetune, body, batch, self.hyper.train_fraction)

    def state_dict(self):
        return {
            "pretrain": dict(self.pretrain.segments),
            "pre_state": optim.copy_state(self.pre_state),
            "finetune": dict(self.finetune.segments),
            "ft_state": optim.copy_state(self.ft_state),
            "history": [batch_state(b) for b in self.history],
            "task_data": [batch_state(b) for b in self.task_data],
            "pre_scheduler": self.pre_scheduler.state(),
            "ft_scheduler": self.ft_scheduler.state(),
            "rng": rng_state(self.rng),
        }

    def load_state_dict(self, state):
        self.pretrain = ad.ParameterVector(state["pretrain"])
        self.pre_state = optim.copy_state(state["pre_state"])
        self.finetune = ad.ParameterVector(state["finetune"])
        self.ft_state = optim.copy_state(state["ft_state"])
        self.history = [batch_from_state(b) for b in state["history"]]
        self.task_data = [batch_from_state(b) for b in state["task_data"]]
        self.pre_scheduler.restore(state["pre_scheduler"])
        self.ft_scheduler.restore(state["ft_scheduler"])
        self.rng = restore_rng(state["rng"])
