"""Experiment configuration: flat key=value text with sections, flag overrides.

Every field has a documented default; unknown keys are rejected with a named
diagnostic. Flags mirror keys one-to-one (the CLI turns ``--K 5`` into an
override for key ``K``). The resolved config serializes canonically, and that
text is both the provenance copy written into the run directory and the basis
of the hash that resume uses to refuse mismatched continuations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields as dc_fields


class ConfigError(Exception):
    """Named diagnostic for unknown keys, type mismatches, range violations."""


def _positive(x):
    return x > 0


def _nonnegative(x):
    return x >= 0


def _fraction(x):
    return 0.0 < x < 1.0


def _fraction_or_zero(x):
    return 0.0 <= x < 1.0


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str  # int | float | bool | str | intlist
    default: object
    section: str
    help: str
    check: object = None  # predicate on the parsed value
    choices: tuple = None


FIELDS = [
    FieldSpec("learner", "str", "foml", "run", "learner kind", choices=("foml", "tfs", "toe", "ftl", "ftml")),
    FieldSpec("stream", "str", "rainbow", "run", "stream kind", choices=("rainbow", "pair")),
    FieldSpec("arch", "str", "mlp", "run", "architecture", choices=("mlp", "convnet4", "siamese7")),
    FieldSpec("seed", "int", 0, "run", "root seed for the whole run", _nonnegative),
    FieldSpec("outdir", "str", "runs/run", "run", "output directory"),
    FieldSpec("checkpoint_every", "int", 0, "run", "checkpoint cadence in steps (0: final only)", _nonnegative),
    FieldSpec("max_steps", "int", 0, "run", "stop after this many steps (0: full stream)", _nonnegative),
    FieldSpec("precision", "str", "float64", "run", "array precision", choices=("float64", "float32")),
    FieldSpec("boundary_signals", "bool", True, "run", "whether the harness may hand out task boundaries"),
    FieldSpec("compute_regret", "bool", False, "run", "also compute the per-task regret series"),
    FieldSpec("alpha1", "float", 0.001, "hyper", "online learning rate", _positive),
    FieldSpec("alpha2", "float", 0.001, "hyper", "meta learning rate", _positive),
    FieldSpec("beta1", "float", 0.01, "hyper", "pull of meta weights on the online update", _nonnegative),
    FieldSpec("beta2", "float", 0.001, "hyper", "extra trajectory pull in the meta objective", _nonnegative),
    FieldSpec("K", "int", 10, "hyper", "online updates retained for the meta-gradient", _positive),
    FieldSpec("N", "int", 10, "hyper", "datapoints per stream step", _positive),
    FieldSpec("train_fraction", "float", 0.8, "hyper", "train share of each incoming batch", _fraction),
    FieldSpec("optimizer", "str", "adam", "hyper", "optimizer for online and meta updates", choices=("adam", "sgd")),
    FieldSpec("meta_updates", "bool", True, "hyper", "ablation switch: perform meta updates"),
    FieldSpec("exclude_current_batch", "bool", False, "hyper", "exclude the newest batch from meta-validation sampling"),
    FieldSpec("lr", "float", 0.001, "baselines", "baseline learning rate", _positive),
    FieldSpec("updates_per_task", "int", 50, "baselines", "per-task update budget (TFS / fine-tuning)", _nonnegative),
    FieldSpec("toe_base_updates", "int", 50, "baselines", "TOE per-task budget at stream start", _nonnegative),
    FieldSpec("toe_growth_every", "int", 100, "baselines", "tasks between TOE budget increases", _positive),
    FieldSpec("toe_growth_amount", "int", 10, "baselines", "extra TOE updates per increase", _nonnegative),
    FieldSpec("ftml_inner_lr", "float", 0.001, "baselines", "FTML inner-loop SGD rate", _nonnegative),
    FieldSpec("ftml_outer_lr", "float", 0.0005, "baselines", "FTML outer-loop rate", _positive),
    FieldSpec("ftml_inner_steps", "int", 5, "baselines", "FTML inner-loop updates", _nonnegative),
    FieldSpec("num_tasks", "int", 56, "stream", "tasks in the stream", _positive),
    FieldSpec("samples_per_task", "int", 200, "stream", "datapoints streamed per task", _positive),
    FieldSpec("heldout_fraction", "float", 0.2, "stream", "extra per-task heldout share", _fraction_or_zero),
    FieldSpec("fixed_task_order", "bool", False, "stream", "disable the seeded task-order permutation"),
    FieldSpec("classes_per_task", "int", 5, "stream", "classes per pair-stream task", _positive),
    FieldSpec("carry_over", "int", 2, "stream", "classes shared between consecutive pair tasks", _nonnegative),
    FieldSpec("dataset", "str", "synthetic", "stream", "base dataset: 'synthetic' or a FOMLDS v1 path"),
    FieldSpec("base_items_per_class", "int", 150, "stream", "synthetic glyphs generated per class", _positive),
    FieldSpec("glyph_noise", "float", 0.08, "stream", "synthetic glyph pixel noise", _nonnegative),
    FieldSpec("buffer_max", "int", 0, "stream", "replay buffer size cap (0: unbounded)", _nonnegative),
    FieldSpec("hidden", "intlist", (64,), "model", "MLP hidden widths"),
    FieldSpec("filters", "intlist", (32, 32, 64, 64), "model", "conv filter counts"),
    FieldSpec("embedding_dim", "int", 128, "model", "siamese embedding width", _positive),
]

FIELD_BY_NAME = {f.name: f for f in FIELDS}
SECTIONS = ("run", "hyper", "baselines", "stream", "model")

# outdir is where results land, not what they are; it stays out of the hash so
# a resumed run may write next to, not over, the original artifacts
NON_SEMANTIC_FIELDS = ("outdir",)


@dataclass
class ExperimentConfig:
    learner: str
    stream: str
    arch: str
    seed: int
    outdir: str
    checkpoint_every: int
    max_steps: int
    precision: str
    boundary_signals: bool
    compute_regret: bool
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    K: int
    N: int
    train_fraction: float
    optimizer: str
    meta_updates: bool
    exclude_current_batch: bool
    lr: float
    updates_per_task: int
    toe_base_updates: int
    toe_growth_every: int
    toe_growth_amount: int
    ftml_inner_lr: float
    ftml_outer_lr: float
    ftml_inner_steps: int
    num_tasks: int
    samples_per_task: int
    heldout_fraction: float
    fixed_task_order: bool
    classes_per_task: int
    carry_over: int
    dataset: str
    base_items_per_class: int
    glyph_noise: float
    buffer_max: int
    hidden: tuple
    filters: tuple
    embedding_dim: int


assert {f.name for f in dc_fields(ExperimentConfig)} == set(FIELD_BY_NAME)


def parse_value(spec, raw):
    raw = str(raw).strip()
    try:
        if spec.kind == "int":
            value = int(raw)
        elif spec.kind == "float":
            value = float(raw)
        elif spec.kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                value = True
            elif low in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        elif spec.kind == "intlist":
            value = tuple(int(p) for p in raw.split(",") if p.strip() != "")
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"config key '{spec.name}': cannot parse {raw!r} as {spec.kind}") from None
    if spec.choices is not None and value not in spec.choices:
        raise ConfigError(
            f"config key '{spec.name}': {value!r} not one of {list(spec.choices)}"
        )
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"config key '{spec.name}': value {value!r} out of range")
    return value


def parse_config_text(text):
    """Parse key=value lines (comments and [section] headers allowed)."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in FIELD_BY_NAME:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate config key '{key}'")
        raw[key] = value.strip()
    return raw


def build_config(file_text="", overrides=None):
    """Resolve defaults <- file <- overrides, validate, cross-check."""
    resolved = {f.name: f.default for f in FIELDS}
    for key, raw in parse_config_text(file_text).items():
        resolved[key] = parse_value(FIELD_BY_NAME[key], raw)
    for key, raw in (overrides or {}).items():
        if key not in FIELD_BY_NAME:
            raise ConfigError(f"unknown config key '{key}'")
        resolved[key] = parse_value(FIELD_BY_NAME[key], raw)
    cfg = ExperimentConfig(**resolved)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    from .learners import needs_boundaries

    if needs_boundaries(cfg.learner) and not cfg.boundary_signals:
        raise ConfigError(
            f"learner '{cfg.learner}' requires boundary signals, but the stream is boundary-free"
        )
    if cfg.samples_per_task % cfg.N:
        raise ConfigError("samples_per_task must be a multiple of N")
    if (cfg.stream == "pair") != (cfg.arch == "siamese7"):
        raise ConfigError("pair streams require (and rainbow streams forbid) the siamese7 architecture")
    if cfg.stream == "rainbow" and cfg.num_tasks > 56:
        raise ConfigError("a rainbow pass has at most 56 tasks")
    if cfg.carry_over >= cfg.classes_per_task:
        raise ConfigError("carry_over must be smaller than classes_per_task")
    if cfg.arch == "convnet4" and len(cfg.filters) != 4:
        raise ConfigError("convnet4 takes exactly 4 filter counts")
    if cfg.arch == "siamese7" and len(cfg.filters) != 7:
        raise ConfigError("siamese7 takes exactly 7 filter counts")


def format_value(spec, value):
    if spec.kind == "bool":
        return "true" if value else "false"
    if spec.kind == "intlist":
        return ",".join(str(v) for v in value)
    return str(value)


def serialize_config(cfg):
    """Canonical text form: sections in fixed order, one key per line."""
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        for spec in FIELDS:
            if spec.section == section:
                lines.append(f"{spec.name} = {format_value(spec, getattr(cfg, spec.name))}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg):
    """Hash of the semantic fields (output location excluded)."""
    parts = []
    for spec in FIELDS:
        if spec.name in NON_SEMANTIC_FIELDS:
            continue
        parts.append(f"{spec.name}={format_value(spec, getattr(cfg, spec.name))}")
    return hashlib.sha256("\n".join(parts).encode()).hexdigest()
