"""Network architectures shared by every learner.

Three families: a small MLP, a 4-layer convnet (conv-relu-maxpool blocks,
global average pooling, dense head) and a 7-layer siamese pair classifier
whose branches share weights and whose pair feature is the elementwise
absolute difference of the two embeddings (symmetric in the pair order).

All forwards are pure functions of (params, batch) built on autodiff
primitives, so they work eagerly and under a recording tape alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

KINDS = ("mlp", "convnet4", "siamese7")


@dataclass(frozen=True)
class Architecture:
    kind: str
    input_shape: tuple  # (C, H, W)
    num_classes: int = 10
    hidden: tuple = (64,)  # mlp layer widths
    filters: tuple = (32, 32, 64, 64)  # conv channel counts per layer
    embedding_dim: int = 128  # siamese branch output
    kernel_size: int = 3

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (C,H,W), got {self.input_shape}")
        if self.kind == "convnet4" and len(self.filters) != 4:
            raise ValueError("convnet4 takes exactly 4 filter counts")
        if self.kind == "siamese7" and len(self.filters) != 7:
            raise ValueError("siamese7 takes exactly 7 filter counts")

    @property
    def input_dim(self):
        return int(np.prod(self.input_shape))

    @property
    def is_pairwise(self):
        return self.kind == "siamese7"


@dataclass
class LabeledBatch:
    """N labeled examples. Inputs are (B,C,H,W), or a pair of such for siamese.

    Deliberately carries no task or boundary information: this is the whole
    learner-facing view of the stream.
    """

    inputs: object  # np.ndarray | tuple[np.ndarray, np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if isinstance(self.inputs, tuple):
            a, b = self.inputs
            if a.shape != b.shape or a.shape[0] != self.labels.shape[0]:
                raise ValueError("pair inputs and labels must agree in batch size")
        elif np.asarray(self.inputs).shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels must agree in batch size")

    @property
    def size(self):
        return int(self.labels.shape[0])

    def take(self, idx):
        idx = np.asarray(idx)
        if isinstance(self.inputs, tuple):
            return LabeledBatch((self.inputs[0][idx], self.inputs[1][idx]), self.labels[idx])
        return LabeledBatch(self.inputs[idx], self.labels[idx])


def concat_batches(batches):
    first = batches[0]
    labels = np.concatenate([b.labels for b in batches])
    if isinstance(first.inputs, tuple):
        a = np.concatenate([b.inputs[0] for b in batches])
        bb = np.concatenate([b.inputs[1] for b in batches])
        return LabeledBatch((a, bb), labels)
    return LabeledBatch(np.concatenate([b.inputs for b in batches]), labels)


# --- parameter layout and initialization ---------------------------------------


def _segment_shapes(arch):
    k = arch.kernel_size
    shapes = []
    if arch.kind == "mlp":
        dims = [arch.input_dim, *arch.hidden, arch.num_classes]
        for i in range(len(dims) - 1):
            shapes.append((f"w{i + 1}", (dims[i], dims[i + 1]), dims[i]))
            shapes.append((f"b{i + 1}", (dims[i + 1],), None))
    elif arch.kind == "convnet4":
        c = arch.input_shape[0]
        for i, f in enumerate(arch.filters):
            shapes.append((f"conv{i + 1}_w", (f, c, k, k), c * k * k))
            shapes.append((f"conv{i + 1}_b", (f,), None))
            c = f
        shapes.append(("fc_w", (c, arch.num_classes), c))
        shapes.append(("fc_b", (arch.num_classes,), None))
    else:  # siamese7
        c = arch.input_shape[0]
        for i, f in enumerate(arch.filters):
            shapes.append((f"conv{i + 1}_w", (f, c, k, k), c * k * k))
            shapes.append((f"conv{i + 1}_b", (f,), None))
            c = f
        shapes.append(("embed_w", (c, arch.embedding_dim), c))
        shapes.append(("embed_b", (arch.embedding_dim,), None))
        shapes.append(("head_w", (arch.embedding_dim, 1), arch.embedding_dim))
        shapes.append(("head_b", (1,), None))
    return shapes


def init_params(arch, seed, dtype=np.float64):
    """Deterministic fan-in-scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    segments = {}
    for name, shape, fan_in in _segment_shapes(arch):
        if fan_in is None:
            segments[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            segments[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ad.ParameterVector(segments)


# --- forward passes --------------------------------------------------------------


def _mlp_logits(p, x, arch):
    b = x.data.shape[0]
    h = ad.reshape(x, (b, arch.input_dim))
    for i in range(len(arch.hidden)):
        h = ad.relu(ad.add(ad.matmul(h, p[f"w{i + 1}"]), p[f"b{i + 1}"]))
    last = len(arch.hidden) + 1
    return ad.add(ad.matmul(h, p[f"w{last}"]), p[f"b{last}"])


def _conv_trunk(p, x, arch, pool_every):
    h = x
    for i in range(len(arch.filters)):
        h = ad.relu(ad.conv2d(h, p[f"conv{i + 1}_w"], p[f"conv{i + 1}_b"]))
        side = h.data.shape[2]
        if (i + 1) % pool_every == 0 and side >= 2 and side % 2 == 0:
            h = ad.pool_max2(h)
    _, _, hh, ww = h.data.shape
    pooled = ad.reduce_sum(h, (2, 3), keepdims=False)  # global average pool -> (B, C)
    return ad.scale(pooled, 1.0 / (hh * ww))


def _convnet4_logits(p, x, arch):
    feat = _conv_trunk(p, x, arch, pool_every=1)
    return ad.add(ad.matmul(feat, p["fc_w"]), p["fc_b"])


def _siamese_embed(p, x, arch):
    # fixed input normalization in place of batch statistics
    xn = ad.scale(ad.sub(x, ad._const_like(0.5, x)), 2.0)
    feat = _conv_trunk(p, xn, arch, pool_every=2)
    return ad.add(ad.matmul(feat, p["embed_w"]), p["embed_b"])


def _siamese_score(p, pair, arch):
    e1 = _siamese_embed(p, pair[0], arch)
    e2 = _siamese_embed(p, pair[1], arch)
    feat = ad.absolute(ad.sub(e1, e2))
    return ad.add(ad.matmul(feat, p["head_w"]), p["head_b"])  # (B, 1) pre-sigmoid


def logits_tensor(arch, param_tensors, batch):
    """Forward pass to logits (or pair scores) as a graph tensor."""
    dtype = next(iter(param_tensors.values())).data.dtype
    if arch.is_pairwise:
        if not isinstance(batch.inputs, tuple):
            raise ad.ShapeError("siamese architectures take paired inputs")
        pair = tuple(ad.constant(np.asarray(x, dtype=dtype)) for x in batch.inputs)
        _check_image_shape(arch, pair[0].data.shape)
        return _siamese_score(param_tensors, pair, arch)
    x = ad.constant(np.asarray(batch.inputs, dtype=dtype))
    _check_image_shape(arch, x.data.shape)
    if arch.kind == "mlp":
        return _mlp_logits(param_tensors, x, arch)
    return _convnet4_logits(param_tensors, x, arch)


def _check_image_shape(arch, shape):
    if tuple(shape[1:]) != tuple(arch.input_shape):
        raise ad.ShapeError(
            f"batch inputs {tuple(shape[1:])} do not match architecture input {arch.input_shape}"
        )


def loss_tensor(arch, param_tensors, batch):
    """Mean cross-entropy (binary for pairs) as a graph tensor."""
    logits = logits_tensor(arch, param_tensors, batch)
    if arch.is_pairwise:
        return ad.binary_cross_entropy_logits(logits, batch.labels.astype(logits.data.dtype))
    return ad.softmax_cross_entropy(logits, batch.labels)


def _as_tensors(params):
    return {name: ad.Tensor(arr) for name, arr in params}


def predict(arch, params, batch):
    """Eager logits (B x num_classes; B x 1 pre-sigmoid score for pairs)."""
    return logits_tensor(arch, _as_tensors(params), batch).data


def predict_classes(arch, params, batch):
    """Hard predictions: argmax rows (ties -> lower index); score > 0 for pairs."""
    out = predict(arch, params, batch)
    if arch.is_pairwise:
        return (out.reshape(-1) > 0).astype(int)
    return np.argmax(out, axis=1)


def loss_value(arch, params, batch):
    return loss_tensor(arch, _as_tensors(params), batch).item()


def loss_and_grad(arch, params, batch, extra=None):
    """Record loss (plus optional extra term on the leaves) and differentiate.

    `extra` is a callable (leaves dict) -> Tensor added to the data loss.
    Returns (loss value without extra term, total-gradient ParameterVector).
    """
    tape = ad.Tape()
    with ad.recording(tape):
        leaves = {name: tape.leaf(name, arr) for name, arr in params}
        data_loss = loss_tensor(arch, leaves, batch)
        total = data_loss if extra is None else ad.add(data_loss, extra(leaves))
    return data_loss.item(), ad.grad(tape, total)
