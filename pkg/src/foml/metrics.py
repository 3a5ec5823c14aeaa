"""Run metrics: per-task heldout error curves, per-step losses, regret.

The headline learning-curve quantity is the per-task heldout error rate
measured after adaptation on that task, emitted as CSV together with its
running mean. Regret compares cumulative online loss against per-task
best-in-hindsight parameters approximated by a fixed offline training budget.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models, optim


@dataclass
class MetricsRecord:
    per_step: list = field(default_factory=list)  # (j, online loss, val loss)
    per_task: list = field(default_factory=list)  # (task_index, heldout error rate)
    regret_series: list = field(default_factory=list)  # running regret values

    def add_step(self, j, online_loss, val_loss):
        self.per_step.append((int(j), float(online_loss), float(val_loss)))

    def add_task(self, task_index, error_rate):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError(f"error rate {error_rate} outside [0,1]")
        if self.per_task and task_index <= self.per_task[-1][0]:
            raise ValueError("per-task indices must be strictly increasing")
        self.per_task.append((int(task_index), float(error_rate)))

    def task_errors(self):
        return np.asarray([e for _, e in self.per_task])

    def cumulative_mean_errors(self):
        errors = self.task_errors()
        if errors.size == 0:
            return errors
        return np.cumsum(errors) / np.arange(1, errors.size + 1)

    def state(self):
        return {
            "per_step": list(self.per_step),
            "per_task": list(self.per_task),
            "regret_series": list(self.regret_series),
        }

    @classmethod
    def from_state(cls, state):
        rec = cls()
        rec.per_step = [tuple(x) for x in state["per_step"]]
        rec.per_task = [tuple(x) for x in state["per_task"]]
        rec.regret_series = list(state["regret_series"])
        return rec


def task_error_rate(params, arch, heldout):
    """Fraction misclassified on the heldout batch (argmax, ties to lower index;
    score > 0 decides 'same' for pair models)."""
    if heldout.size == 0:
        raise ValueError("heldout batch must be non-empty")
    predicted = models.predict_classes(arch, params, heldout)
    return float(np.mean(predicted != np.asarray(heldout.labels)))


def regret(online_losses, hindsight_losses):
    """Sum of online losses minus sum of best-in-hindsight losses."""
    if len(online_losses) != len(hindsight_losses):
        raise ValueError("loss series must have equal length")
    return float(np.sum(online_losses) - np.sum(hindsight_losses))


def hindsight_loss(arch, task_batch, seed, steps=200, lr=0.001):
    """Best-in-hindsight approximation: fixed-budget full-batch training.

    Returns the trained parameters' loss on the task data (the argmin stand-in
    for the regret's second term).
    """
    params = models.init_params(arch, seed)
    opt = optim.make_optimizer("adam", lr)
    state = opt.init_state(params.segments)
    for _ in range(steps):
        _, g = models.loss_and_grad(arch, params, task_batch)
        segs, state = opt.step_arrays(params.segments, g.segments, state)
        params = ad.ParameterVector(segs)
    return models.loss_value(arch, params, task_batch)


def emit_curve(record, path):
    """Write the per-task error curve CSV (bit-stable for identical records)."""
    if not record.per_task:
        raise ValueError("record has no per-task entries")
    cums = record.cumulative_mean_errors()
    lines = ["task_index,error_rate,cum_mean_error"]
    for (task_index, err), cum in zip(record.per_task, cums):
        lines.append(f"{task_index},{err:.10f},{cum:.10f}")
    payload = "\n".join(lines) + "\n"
    with open(path, "w", newline="") as fh:
        fh.write(payload)
    return payload


def emit_step_log(record, path):
    """JSON-lines per-step log for debugging."""
    with open(path, "w", newline="") as fh:
        for j, online_loss, val_loss in record.per_step:
            fh.write(
                json.dumps({"j": j, "loss": round(online_loss, 10), "val_loss": round(val_loss, 10)})
                + "\n"
            )
