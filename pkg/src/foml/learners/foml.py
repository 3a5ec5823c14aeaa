"""The fully online meta-learner.

Two parameter vectors over one architecture: online weights `phi`, updated on
every incoming batch with a pull-toward-`theta` squared regularizer, and
meta-weights `theta`, updated by differentiating a buffer-sampled validation
loss through the last K online updates (exact second order, no first-order
shortcut). `phi` is never reset and the observe/update interface carries no
task or boundary information whatsoever.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import models, optim
from .common import (
    StepInfo,
    batch_from_state,
    batch_state,
    regularizer_tensor,
    restore_rng,
    rng_state,
    split_batch,
)


@dataclass
class FomlHyper:
    alpha1: float = 0.001  # online learning rate
    alpha2: float = 0.001  # meta learning rate
    beta1: float = 0.01  # pull of theta on the online update
    beta2: float = 0.001  # extra pull of the online trajectory on theta
    k: int = 10  # online updates retained for the meta-gradient
    optimizer: str = "adam"
    train_fraction: float = 0.8
    meta_updates: bool = True
    exclude_current_batch: bool = False


class _TrajectoryEntry:
    """State entering one online update, enough to rebuild it on a tape."""

    __slots__ = ("phi_before", "opt_before", "batch")

    def __init__(self, phi_before, opt_before, batch):
        self.phi_before = phi_before
        self.opt_before = opt_before
        self.batch = batch


class FomlLearner:
    needs_boundaries = False
    uses_buffer = True

    def __init__(self, arch, hyper, seed, dtype=np.float64):
        self.arch = arch
        self.hyper = hyper
        self.phi = models.init_params(arch, seed, dtype)
        self.theta = self.phi.copy()  # theta starts at phi so the pull starts at zero
        self.online_opt = optim.make_optimizer(hyper.optimizer, hyper.alpha1)
        self.meta_opt = optim.make_optimizer(hyper.optimizer, hyper.alpha2)
        self.online_state = self.online_opt.init_state(self.phi.segments)
        self.meta_state = self.meta_opt.init_state(self.theta.segments)
        self.trajectory = []
        self.j = 0
        self.rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF011]))

    def eval_params(self):
        return self.phi

    # -- online update ------------------------------------------------------

    def online_update(self, train_batch):
        """One regularized step on `phi`; retains what the meta-update needs.

        Returns the pre-update data loss on `train_batch`.
        """
        entry = _TrajectoryEntry(
            phi_before={k: v.copy() for k, v in self.phi.segments.items()},
            opt_before=optim.copy_state(self.online_state),
            batch=train_batch,
        )
        beta1 = self.hyper.beta1
        theta = self.theta

        extra = None
        if beta1 != 0.0:
            theta_consts = {n: ad.constant(a) for n, a in theta}

            def extra(leaves):
                return ad.scale(regularizer_tensor(leaves, theta_consts), beta1)

        loss, g = models.loss_and_grad(self.arch, self.phi, train_batch, extra=extra)
        new_segments, self.online_state = self.online_opt.step_arrays(
            self.phi.segments, g.segments, self.online_state
        )
        self.phi = ad.ParameterVector(new_segments)
        self.trajectory.append(entry)
        if len(self.trajectory) > self.hyper.k:
            self.trajectory = self.trajectory[-self.hyper.k :]
        self.j += 1
        return loss

    # -- meta update ----------------------------------------------------------

    def meta_gradient(self, val_batch):
        """Exact d(meta objective)/d(theta) through the retained online window.

        Rebuilds the last <=K online updates on one tape with `theta` as the
        leaf: starting from the stored pre-window snapshot, each update's
        gradient is recorded with create_graph so the optimizer step stays
        differentiable. The objective is the validation loss at the final
        online weights plus beta2 times the pull of every retained snapshot.
        """
        if not self.trajectory:
            raise ad.ContractError("meta update requires a non-empty trajectory")
        beta1, beta2 = self.hyper.beta1, self.hyper.beta2
        tape = ad.Tape()
        with ad.recording(tape):
            theta_t = {n: tape.leaf(n, a) for n, a in self.theta}
            start = self.trajectory[0]
            phi_t = {n: ad.constant(a) for n, a in start.phi_before.items()}
            opt_state = optim.state_tensors(self.online_opt, start.opt_before)
            snapshots = [phi_t]
            names = list(phi_t)
            for entry in self.trajectory:
                inner = models.loss_tensor(self.arch, phi_t, entry.batch)
                if beta1 != 0.0:
                    inner = ad.add(inner, ad.scale(regularizer_tensor(phi_t, theta_t), beta1))
                gs = ad.backward(tape, inner, [phi_t[n] for n in names], create_graph=True)
                grads = dict(zip(names, gs))
                phi_t, opt_state = self.online_opt.step_tensors(phi_t, grads, opt_state)
                snapshots.append(phi_t)
            meta_obj = models.loss_tensor(self.arch, phi_t, val_batch)
            if beta2 != 0.0:
                for snap in snapshots:
                    meta_obj = ad.add(meta_obj, ad.scale(regularizer_tensor(theta_t, snap), beta2))
        grad = ad.grad_through_update(tape, meta_obj, self.theta)
        return grad, meta_obj.item()

    def meta_update(self, val_batch):
        grad, meta_loss = self.meta_gradient(val_batch)
        new_segments, self.meta_state = self.meta_opt.step_arrays(
            self.theta.segments, grad.segments, self.meta_state
        )
        self.theta = ad.ParameterVector(new_segments)
        return meta_loss

    # -- full step (one loop body of the online meta-training procedure) -------

    def step(self, batch, buffer):
        predictions = None
        train, val = split_batch(batch, self.hyper.train_fraction)
        predictions = models.predict(self.arch, self.phi, train)
        buffer.append(batch, self.j)
        online_loss = self.online_update(train)
        val_loss = models.loss_value(self.arch, self.phi, val)
        if self.hyper.meta_updates and len(buffer) > 0:
            exclude = batch.size if self.hyper.exclude_current_batch else 0
            dmval = buffer.sample_random(batch.size, rng=self.rng, exclude_last=exclude)
            self.meta_update(dmval)
        return StepInfo(online_loss=online_loss, val_loss=val_loss, predictions=predictions)

    # -- checkpointing -----------------------------------------------------------

    def state_dict(self):
        return {
            "phi": dict(self.phi.segments),
            "theta": dict(self.theta.segments),
            "online_state": optim.copy_state(self.online_state),
            "meta_state": optim.copy_state(self.meta_state),
            "trajectory": [
                {
                    "phi_before": dict(e.phi_before),
                    "opt_before": optim.copy_state(e.opt_before),
                    "batch": batch_state(e.batch),
                }
                for e in self.trajectory
            ],
            "j": self.j,
            "rng": rng_state(self.rng),
        }

    def load_state_dict(self, state):
        self.phi = ad.ParameterVector(state["phi"])
        self.theta = ad.ParameterVector(state["theta"])
        self.online_state = optim.copy_state(state["online_state"])
        self.meta_state = optim.copy_state(state["meta_state"])
        self.trajectory = [
            _TrajectoryEntry(
                phi_before=dict(e["phi_before"]),
                opt_before=optim.copy_state(e["opt_before"]),
                batch=batch_from_state(e["batch"]),
            )
            for e in state["trajectory"]
        ]
        self.j = state["j"]
        self.rng = restore_rng(state["rng"])
