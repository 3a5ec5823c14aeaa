"""End-to-end experiment driver: streams in, learner steps, artifacts out.

A run is a pure function of (config, seed): the resolved config copy, the
per-task error curve CSV, the per-step JSON-lines log and the checkpoints are
byte-deterministic; wall-clock timestamps live only in ``meta.json``.

Mid-run NaN/Inf fails fast: a checkpoint-at-failure is written and
`NumericFailure` raised for the caller to map to a nonzero exit.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import datasets, metrics, models, streams
from .config import ConfigError, build_config, config_hash, serialize_config
from .learners import LEARNER_KINDS
from .learners.baselines import BaselineHyper
from .learners.common import derive_seed
from .learners.foml import FomlHyper
from .learners.ftml import FtmlHyper

CURVE_FILE = "curve.csv"
STEPS_FILE = "steps.jsonl"
CONFIG_FILE = "config.foml"
FINAL_CKPT = "checkpoint.ckpt"
META_FILE = "meta.json"


class NumericFailure(Exception):
    """A run aborted on non-finite numbers; carries the failure checkpoint path."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class RunResult:
    record: metrics.MetricsRecord
    summary: dict
    outdir: str
    checkpoint_path: str


def resolve_base_dataset(cfg):
    """Base (images, labels) for stream construction."""
    if cfg.dataset == "synthetic":
        images, labels = datasets.make_glyph_dataset(
            cfg.base_items_per_class,
            seed=derive_seed(cfg.seed, 0xDA7A),
            noise=cfg.glyph_noise,
        )
        return images, labels
    images, labels = datasets.load_dataset(cfg.dataset)
    if cfg.stream == "rainbow":
        if images.shape[1] != 1:
            raise ConfigError("rainbow streams need a single-channel base dataset")
        images = images[:, 0]
    return images, labels


def build_stream(cfg, base):
    images, labels = base
    seed = derive_seed(cfg.seed, 1)
    if cfg.stream == "rainbow":
        return streams.RainbowStream(
            images,
            labels,
            cfg.samples_per_task,
            seed,
            batch_size=cfg.N,
            heldout_fraction=cfg.heldout_fraction,
            fixed_order=cfg.fixed_task_order,
            num_tasks=cfg.num_tasks,
        )
    return streams.PairStream(
        images,
        labels,
        cfg.num_tasks,
        cfg.samples_per_task,
        seed,
        classes_per_task=cfg.classes_per_task,
        carry_over=cfg.carry_over,
        batch_size=cfg.N,
        heldout_fraction=cfg.heldout_fraction,
    )


def build_arch(cfg, base):
    images, labels = base
    num_classes = int(np.max(labels)) + 1
    if cfg.stream == "rainbow":
        input_shape = (3, images.shape[1], images.shape[2])
    else:
        shaped = images if images.ndim == 4 else images[:, None]
        input_shape = tuple(shaped.shape[1:])
        num_classes = 2
    return models.Architecture(
        cfg.arch,
        input_shape=input_shape,
        num_classes=num_classes,
        hidden=tuple(cfg.hidden),
        filters=tuple(cfg.filters),
        embedding_dim=cfg.embedding_dim,
    )


def build_learner(cfg, arch, steps_per_task):
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    seed = derive_seed(cfg.seed, 2)
    if cfg.learner == "foml":
        hyper = FomlHyper(
            alpha1=cfg.alpha1,
            alpha2=cfg.alpha2,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            k=cfg.K,
            optimizer=cfg.optimizer,
            train_fraction=cfg.train_fraction,
            meta_updates=cfg.meta_updates,
            exclude_current_batch=cfg.exclude_current_batch,
        )
    elif cfg.learner == "ftml":
        hyper = FtmlHyper(
            inner_lr=cfg.ftml_inner_lr,
            outer_lr=cfg.ftml_outer_lr,
            inner_steps=cfg.ftml_inner_steps,
            updates_per_task=cfg.updates_per_task,
            steps_per_task=steps_per_task,
            support_fraction=cfg.train_fraction,
            train_fraction=cfg.train_fraction,
        )
    else:
        hyper = BaselineHyper(
            lr=cfg.lr,
            optimizer=cfg.optimizer,
            updates_per_task=cfg.updates_per_task,
            toe_base_updates=cfg.toe_base_updates,
            toe_growth_every=cfg.toe_growth_every,
            toe_growth_amount=cfg.toe_growth_amount,
            steps_per_task=steps_per_task,
            train_fraction=cfg.train_fraction,
        )
    return LEARNER_KINDS[cfg.learner](arch, hyper, seed, dtype=dtype)


class _RunState:
    def __init__(self, cfg):
        self.cfg = cfg
        self.base = resolve_base_dataset(cfg)
        self.stream = build_stream(cfg, self.base)
        self.arch = build_arch(cfg, self.base)
        self.learner = build_learner(cfg, self.arch, self.stream.steps_per_task)
        self.buffer = streams.ReplayBuffer(seed=derive_seed(cfg.seed, 3), max_size=cfg.buffer_max)
        self.record = metrics.MetricsRecord()
        self.steps_done = 0
        self.prev_task = None
        self.task_losses = {}
        self.regret_running = 0.0

    def checkpoint_payload(self):
        return {
            "config_text": serialize_config(self.cfg),
            "config_hash": config_hash(self.cfg),
            "steps_done": self.steps_done,
            "prev_task": self.prev_task,
            "task_losses": {k: list(v) for k, v in self.task_losses.items()},
            "record": self.record.state(),
            "learner": self.learner.state_dict(),
            "buffer": self.buffer.state(),
            "regret_running": self.regret_running,
        }

    def restore(self, payload):
        self.steps_done = payload["steps_done"]
        self.prev_task = payload["prev_task"]
        self.task_losses = {int(k): list(v) for k, v in payload["task_losses"].items()}
        self.record = metrics.MetricsRecord.from_state(payload["record"])
        self.learner.load_state_dict(payload["learner"])
        self.buffer = streams.ReplayBuffer.from_state(payload["buffer"])
        self.regret_running = payload["regret_running"]
        self.stream.seek(self.steps_done)


def _step_learner(state, batch, boundary):
    learner = state.learner
    if learner.needs_boundaries:
        return learner.step(batch, boundary=boundary)
    return learner.step(batch, state.buffer)


def _finish_task(state, task_index):
    cfg = state.cfg
    err = metrics.task_error_rate(
        state.learner.eval_params(), state.arch, state.stream.heldout_for(task_index)
    )
    state.record.add_task(task_index, err)
    if cfg.compute_regret:
        online = float(np.mean(state.task_losses.get(task_index, [0.0])))
        hindsight = metrics.hindsight_loss(
            state.arch,
            state.stream.streamed_data(task_index),
            seed=derive_seed(cfg.seed, 1000 + task_index),
        )
        state.regret_running += online - hindsight
        state.record.regret_series.append(state.regret_running)


def _write_artifacts(state, outdir):
    if state.record.per_task:
        metrics.emit_curve(state.record, outdir / CURVE_FILE)
    metrics.emit_step_log(state.record, outdir / STEPS_FILE)
    ckpt.save_checkpoint(outdir / FINAL_CKPT, state.checkpoint_payload())


def _summary(state):
    errors = state.record.task_errors()
    out = {
        "steps": state.steps_done,
        "tasks": int(errors.size),
        "final_error": float(errors[-1]) if errors.size else None,
        "last10_mean_error": float(np.mean(errors[-10:])) if errors.size else None,
        "first10_mean_error": float(np.mean(errors[:10])) if errors.size else None,
        "regret": state.regret_running if state.cfg.compute_regret else None,
    }
    return out


def _run_loop(state, outdir):
    cfg = state.cfg
    while True:
        if cfg.max_steps and state.steps_done >= cfg.max_steps:
            break
        sb = state.stream.next_batch()
        if sb is None:
            break
        task_index = sb.true_task.task_index
        boundary = state.prev_task is None or task_index != state.prev_task
        if boundary and state.prev_task is not None:
            _finish_task(state, state.prev_task)
        try:
            info = _step_learner(state, sb.batch, boundary)
        except ad.NumericError as exc:
            failure_path = outdir / f"checkpoint-failure-step{state.steps_done}.ckpt"
            ckpt.save_checkpoint(failure_path, state.checkpoint_payload())
            raise NumericFailure(str(exc), str(failure_path)) from exc
        state.record.add_step(sb.step_index, info.online_loss, info.val_loss)
        state.task_losses.setdefault(task_index, []).append(info.online_loss)
        state.prev_task = task_index
        state.steps_done += 1
        if cfg.checkpoint_every and state.steps_done % cfg.checkpoint_every == 0:
            ckpt.save_checkpoint(
                outdir / f"checkpoint-step{state.steps_done}.ckpt", state.checkpoint_payload()
            )
    if state.prev_task is not None and state.steps_done == state.stream.total_steps:
        _finish_task(state, state.prev_task)
        state.prev_task = None  # fully accounted


def _execute(state, outdir_override=None):
    cfg = state.cfg
    outdir = Path(outdir_override or cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / CONFIG_FILE).write_text(serialize_config(cfg))
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    status = "succeeded"
    try:
        _run_loop(state, outdir)
        _write_artifacts(state, outdir)
    except NumericFailure:
        status = "failed_numeric"
        raise
    finally:
        finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
        (outdir / META_FILE).write_text(
            json.dumps(
                {"started_at": started, "finished_at": finished, "status": status}, indent=2
            )
            + "\n"
        )
    return RunResult(
        record=state.record,
        summary=_summary(state),
        outdir=str(outdir),
        checkpoint_path=str(outdir / FINAL_CKPT),
    )


def run_experiment(cfg):
    """Run a full experiment per config; artifacts land in cfg.outdir."""
    return _execute(_RunState(cfg))


def resume_experiment(checkpoint_path, config_text=None, outdir=None):
    """Continue a checkpointed run; refuses version or config-hash mismatches.

    The continued run's outputs (metrics series, curve) equal an
    uninterrupted run's from the resume point onward; `outdir` redirects the
    artifacts so the original run is not overwritten.
    """
    payload = ckpt.load_checkpoint(checkpoint_path)
    stored_text = payload["config_text"]
    cfg = build_config(stored_text)
    if config_text is not None:
        provided = build_config(config_text)
        if config_hash(provided) != payload["config_hash"]:
            raise ConfigError("config hash mismatch: checkpoint was written by a different config")
    state = _RunState(cfg)
    state.restore(payload)
    return _execute(state, outdir_override=outdir)


def run_sweep(file_text, overrides, param, values, outdir):
    """Fan out sequential runs over one config key; returns per-value summaries."""
    from .config import FIELD_BY_NAME

    if param not in FIELD_BY_NAME:
        raise ConfigError(f"unknown sweep parameter '{param}'")
    if not values:
        raise ConfigError("sweep needs at least one value")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        sub = dict(overrides or {})
        sub[param] = value
        sub["outdir"] = str(outdir / f"{param}={value}")
        cfg = build_config(file_text, sub)
        result = run_experiment(cfg)
        rows.append(
            {
                "value": value,
                "last10_mean_error": result.summary["last10_mean_error"],
                "final_error": result.summary["final_error"],
                "outdir": result.outdir,
            }
        )
    lines = [f"{param},last10_mean_error,final_error"]
    for row in rows:
        lines.append(
            f"{row['value']},{row['last10_mean_error']:.10f},{row['final_error']:.10f}"
        )
    (outdir / "sweep_summary.csv").write_text("\n".join(lines) + "\n")
    return rows
