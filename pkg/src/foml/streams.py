"""Boundary-free online data streams and the replay buffer.

Two stream families:

* rainbow stream: composes 7 background colors x 2 scales x 4 rotations of a
  grayscale base dataset into 56 classification tasks in seeded random order;
* pair stream: 5-class tasks over a labeled base dataset, each datapoint a
  same-class / different-class image pair, with 2 classes carried over
  between consecutive tasks.

Task identity travels only on an evaluation-only side channel
(`StreamBatch.true_task`); the learner-facing record is a plain
`LabeledBatch` with no task or boundary field at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LabeledBatch

NUM_COLORS = 7
NUM_SCALES = 2
NUM_ROTATIONS = 4

# rainbow background palette (RGB in [0,1])
COLORS = np.array(
    [
        [0.9, 0.1, 0.1],  # red
        [0.9, 0.5, 0.1],  # orange
        [0.9, 0.9, 0.1],  # yellow
        [0.1, 0.8, 0.2],  # green
        [0.1, 0.3, 0.9],  # blue
        [0.3, 0.1, 0.7],  # indigo
        [0.7, 0.2, 0.9],  # violet
    ]
)


class StreamConfigError(Exception):
    """Invalid stream construction parameters."""


@dataclass(frozen=True)
class TaskDescriptor:
    task_index: int
    transform: tuple = None  # (color_id, scale_id, rotation_id) for rainbow
    class_set: tuple = None  # 5 class ids for pair tasks


@dataclass(frozen=True)
class StreamBatch:
    batch: LabeledBatch
    step_index: int
    true_task: TaskDescriptor  # evaluation-only side channel


def rainbow_transform(image, color_id, scale_id, rotation_id):
    """Rotate / rescale a grayscale glyph and paint the background.

    `image` is (H,W) in [0,1]; output is (3,H,W). Foreground stays white, the
    background takes the palette color, so the class structure is preserved
    under every transform.
    """
    img = np.rot90(image, k=rotation_id)
    if scale_id == 1:  # half scale: 2x2 average, centered on empty background
        h, w = img.shape
        small = img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
        canvas = np.zeros_like(img)
        oh, ow = (h - h // 2) // 2, (w - w // 2) // 2
        canvas[oh : oh + h // 2, ow : ow + w // 2] = small
        img = canvas
    bg = COLORS[color_id]
    out = img[None, :, :] + (1.0 - img[None, :, :]) * bg[:, None, None]
    return out


def all_rainbow_transforms():
    return [
        (c, s, r)
        for c in range(NUM_COLORS)
        for s in range(NUM_SCALES)
        for r in range(NUM_ROTATIONS)
    ]


def _pool_sizes(samples_per_task, heldout_fraction):
    if not 0.0 <= heldout_fraction < 1.0:
        raise StreamConfigError("heldout_fraction must be in [0, 1)")
    pool = int(round(samples_per_task / (1.0 - heldout_fraction)))
    return pool, pool - samples_per_task


class RainbowStream:
    """56-task transform stream over a grayscale base dataset."""

    def __init__(
        self,
        base_images,
        base_labels,
        samples_per_task,
        seed,
        batch_size=10,
        heldout_fraction=0.2,
        fixed_order=False,
        num_tasks=0,
    ):
        base_images = np.asarray(base_images)
        base_labels = np.asarray(base_labels)
        if base_images.ndim != 3:
            raise StreamConfigError("rainbow base images must be single-channel (N,H,W)")
        if base_images.shape[1] % 2 or base_images.shape[2] % 2:
            raise StreamConfigError("base image sides must be even (half-scale transform)")
        if samples_per_task < 1 or samples_per_task % batch_size:
            raise StreamConfigError("samples_per_task must be a positive multiple of batch_size")
        pool, heldout = _pool_sizes(samples_per_task, heldout_fraction)
        if pool > base_images.shape[0]:
            raise StreamConfigError(
                f"task pool of {pool} samples exceeds base dataset size {base_images.shape[0]}"
            )
        self.base_images = base_images
        self.base_labels = base_labels
        self.samples_per_task = samples_per_task
        self.batch_size = batch_size
        self.heldout_count = heldout
        self.num_classes = int(base_labels.max()) + 1

        transforms = all_rainbow_transforms()
        root = np.random.SeedSequence(seed)
        order_rng = np.random.default_rng(root.spawn(1)[0])
        if not fixed_order:
            transforms = [transforms[i] for i in order_rng.permutation(len(transforms))]
        if num_tasks:
            transforms = transforms[:num_tasks]
        self.tasks = [
            TaskDescriptor(task_index=i, transform=t) for i, t in enumerate(transforms)
        ]
        self._task_seeds = root.spawn(len(self.tasks))
        self.steps_per_task = samples_per_task // batch_size
        self._j = 0
        self._cache = {}

    @property
    def num_tasks(self):
        return len(self.tasks)

    @property
    def total_steps(self):
        return self.num_tasks * self.steps_per_task

    def task_descriptor(self, task_index):
        return self.tasks[task_index]

    def _task_data(self, task_index):
        if task_index not in self._cache:
            rng = np.random.default_rng(self._task_seeds[task_index])
            pool = self.samples_per_task + self.heldout_count
            idx = rng.choice(self.base_images.shape[0], size=pool, replace=False)
            color, scale, rot = self.tasks[task_index].transform
            images = np.stack(
                [rainbow_transform(self.base_images[i], color, scale, rot) for i in idx]
            )
            labels = self.base_labels[idx]
            self._cache = {task_index: (images, labels)}  # keep only the current task
        return self._cache[task_index]

    def heldout_for(self, task_index):
        images, labels = self._task_data(task_index)
        s = self.samples_per_task
        return LabeledBatch(images[s:].copy(), labels[s:].copy())

    def streamed_data(self, task_index):
        images, labels = self._task_data(task_index)
        s = self.samples_per_task
        return LabeledBatch(images[:s].copy(), labels[:s].copy())

    def seek(self, step_index):
        if not 0 <= step_index <= self.total_steps:
            raise StreamConfigError(f"cannot seek to step {step_index}")
        self._j = step_index

    def next_batch(self):
        """Next StreamBatch, or None when the stream is exhausted."""
        if self._j >= self.total_steps:
            return None
        task_index = self._j // self.steps_per_task
        offset = (self._j % self.steps_per_task) * self.batch_size
        images, labels = self._task_data(task_index)
        batch = LabeledBatch(
            images[offset : offset + self.batch_size].copy(),
            labels[offset : offset + self.batch_size].copy(),
        )
        out = StreamBatch(batch=batch, step_index=self._j, true_task=self.tasks[task_index])
        self._j += 1
        return out


class PairStream:
    """Pair-matching stream: 5-class tasks, 3 classes new per transition."""

    def __init__(
        self,
        base_images,
        base_labels,
        num_tasks,
        samples_per_task,
        seed,
        classes_per_task=5,
        carry_over=2,
        batch_size=10,
        heldout_fraction=0.2,
    ):
        base_images = np.asarray(base_images)
        base_labels = np.asarray(base_labels)
        if num_tasks < 1:
            raise StreamConfigError("num_tasks must be >= 1")
        if samples_per_task < 1 or samples_per_task % batch_size:
            raise StreamConfigError("samples_per_task must be a positive multiple of batch_size")
        if carry_over >= classes_per_task:
            raise StreamConfigError("carry_over must be smaller than classes_per_task")
        num_classes = int(base_labels.max()) + 1
        new_per_task = classes_per_task - carry_over
        if num_classes < classes_per_task:
            raise StreamConfigError(f"need >= {classes_per_task} classes, have {num_classes}")
        if num_classes - classes_per_task < new_per_task:
            raise StreamConfigError(
                "not enough classes outside the previous task to draw the new ones from"
            )
        if base_images.ndim == 3:
            base_images = base_images[:, None, :, :]
        self.base_images = base_images
        self.base_labels = base_labels
        self.samples_per_task = samples_per_task
        self.batch_size = batch_size
        self.classes_per_task = classes_per_task
        self.carry_over = carry_over
        _, self.heldout_count = _pool_sizes(samples_per_task, heldout_fraction)
        self.by_class = [np.flatnonzero(base_labels == c) for c in range(num_classes)]

        root = np.random.SeedSequence(seed)
        order_rng = np.random.default_rng(root.spawn(1)[0])
        sets = []
        prev = None
        for _ in range(num_tasks):
            if prev is None:
                chosen = order_rng.choice(num_classes, size=classes_per_task, replace=False)
            else:
                carried = order_rng.choice(prev, size=carry_over, replace=False)
                outside = np.setdiff1d(np.arange(num_classes), prev)
                fresh = order_rng.choice(outside, size=new_per_task, replace=False)
                chosen = np.concatenate([carried, fresh])
            prev = chosen
            sets.append(tuple(sorted(int(c) for c in chosen)))
        self.tasks = [
            TaskDescriptor(task_index=i, class_set=s) for i, s in enumerate(sets)
        ]
        self._task_seeds = root.spawn(num_tasks)
        self.steps_per_task = samples_per_task // batch_size
        self._j = 0
        self._cache = {}

    @property
    def num_tasks(self):
        return len(self.tasks)

    @property
    def total_steps(self):
        return self.num_tasks * self.steps_per_task

    def task_descriptor(self, task_index):
        return self.tasks[task_index]

    def _make_pairs(self, rng, class_set, count):
        a_idx = np.empty(count, dtype=np.int64)
        b_idx = np.empty(count, dtype=np.int64)
        labels = np.empty(count, dtype=np.int64)
        classes = np.asarray(class_set)
        for i in range(count):
            same = rng.random() < 0.5
            if same:
                c = rng.choice(classes)
                a_idx[i] = rng.choice(self.by_class[c])
                b_idx[i] = rng.choice(self.by_class[c])
                labels[i] = 1
            else:
                ca, cb = rng.choice(classes, size=2, replace=False)
                a_idx[i] = rng.choice(self.by_class[ca])
                b_idx[i] = rng.choice(self.by_class[cb])
                labels[i] = 0
        pair = (self.base_images[a_idx].copy(), self.base_images[b_idx].copy())
        return LabeledBatch(pair, labels)

    def _task_data(self, task_index):
        if task_index not in self._cache:
            rng = np.random.default_rng(self._task_seeds[task_index])
            total = self.samples_per_task + self.heldout_count
            batch = self._make_pairs(rng, self.tasks[task_index].class_set, total)
            self._cache = {task_index: batch}
        return self._cache[task_index]

    def heldout_for(self, task_index):
        data = self._task_data(task_index)
        return data.take(np.arange(self.samples_per_task, data.size))

    def streamed_data(self, task_index):
        data = self._task_data(task_index)
        return data.take(np.arange(self.samples_per_task))

    def seek(self, step_index):
        if not 0 <= step_index <= self.total_steps:
            raise StreamConfigError(f"cannot seek to step {step_index}")
        self._j = step_index

    def next_batch(self):
        if self._j >= self.total_steps:
            return None
        task_index = self._j // self.steps_per_task
        offset = (self._j % self.steps_per_task) * self.batch_size
        data = self._task_data(task_index)
        batch = data.take(np.arange(offset, offset + self.batch_size))
        out = StreamBatch(batch=batch, step_index=self._j, true_task=self.tasks[task_index])
        self._j += 1
        return out


def make_rainbow_stream(base_dataset, samples_per_task, seed, **kwargs):
    images, labels = base_dataset
    return RainbowStream(images, labels, samples_per_task, seed, **kwargs)


def make_pair_stream(base_dataset, num_tasks, samples_per_task, seed, classes_per_task=5, carry_over=2, **kwargs):
    images, labels = base_dataset
    return PairStream(
        images,
        labels,
        num_tasks,
        samples_per_task,
        seed,
        classes_per_task=classes_per_task,
        carry_over=carry_over,
        **kwargs,
    )


class ReplayBuffer:
    """Append-only store of every observed labeled example.

    Sampling is uniform with replacement over all stored entries. An optional
    max_size turns on oldest-first eviction; it defaults to off (unbounded),
    matching the store-everything contract.
    """

    def __init__(self, seed, max_size=0):
        self._inputs = []
        self._labels = []
        self._steps = []
        self.max_size = int(max_size)
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._labels)

    @property
    def pairwise(self):
        return bool(self._inputs) and isinstance(self._inputs[0], tuple)

    def append(self, batch, step_index=0):
        """Store every example of `batch`; existing entries are never touched."""
        for i in range(batch.size):
            if isinstance(batch.inputs, tuple):
                self._inputs.append((batch.inputs[0][i].copy(), batch.inputs[1][i].copy()))
            else:
                self._inputs.append(batch.inputs[i].copy())
            self._labels.append(int(batch.labels[i]))
            self._steps.append(int(step_index))
        if self.max_size and len(self._labels) > self.max_size:
            drop = len(self._labels) - self.max_size
            del self._inputs[:drop], self._labels[:drop], self._steps[:drop]

    def entry(self, i):
        return self._inputs[i], self._labels[i], self._steps[i]

    def sample_random(self, n, rng=None, exclude_last=0):
        """Uniform sample of n entries, with replacement, as a LabeledBatch."""
        if not self._labels:
            raise ValueError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        top = len(self._labels) - exclude_last
        if top <= 0:
            top = len(self._labels)
        idx = rng.integers(0, top, size=n)
        labels = np.asarray([self._labels[i] for i in idx])
        if self.pairwise:
            a = np.stack([self._inputs[i][0] for i in idx])
            b = np.stack([self._inputs[i][1] for i in idx])
            return LabeledBatch((a, b), labels)
        return LabeledBatch(np.stack([self._inputs[i] for i in idx]), labels)

    def state(self):
        """Snapshot for checkpointing."""
        return {
            "inputs": list(self._inputs),
            "labels": list(self._labels),
            "steps": list(self._steps),
            "max_size": self.max_size,
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state):
        buf = cls(seed=0, max_size=state["max_size"])
        buf._inputs = list(state["inputs"])
        buf._labels = list(state["labels"])
        buf._steps = list(state["steps"])
        buf.rng.bit_generator.state = state["rng_state"]
        return buf
