"""Task and dataset model: raw-data examples, latent spaces, manifests.

A task bundles background knowledge, a mode bias, raw-data examples and the
latent value space; the dataset maps raw-input references to feature
vectors.  Gold latent labels, when present, live in the dataset and are
consulted only by `collapse` and by evaluation metrics, never by the
learning pipeline.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .asp import NN, Atom, Program, parse_atom, parse_atoms, parse_program
from .bias import ModeBias, make_bias
from .errors import TaskValidationError

SCHEMA_VERSION = 1

_MANIFEST_KEYS = {"schema_version", "background", "modeh", "modeb", "types",
                  "latent", "label_space", "examples", "data", "gold_latents",
                  "model_config", "max_body", "gold_hypothesis", "name"}


@dataclass(frozen=True)
class RawExample:
    id: str
    inclusions: frozenset   # ground Atom
    exclusions: frozenset   # ground Atom
    raw: tuple              # ordered raw-input references
    ctx: Program = Program()

    def __post_init__(self):
        if self.inclusions & self.exclusions:
            raise TaskValidationError(
                f"example {self.id}: inclusions and exclusions overlap")


@dataclass(frozen=True)
class WCDPI:
    """Weighted context-dependent partial interpretation; penalty None means
    infinite weight, i.e. coverage is mandatory."""

    id: str
    penalty: Optional[int]  # None encodes infinity
    inclusions: frozenset
    exclusions: frozenset
    ctx: Program = Program()

    @property
    def mandatory(self) -> bool:
        return self.penalty is None


@dataclass(frozen=True)
class LatentSpace:
    arities: tuple  # entry i is the ordered value tuple Z_i

    def __post_init__(self):
        if any(len(vs) == 0 for vs in self.arities):
            raise TaskValidationError("every latent value set must be nonempty")

    @property
    def n(self) -> int:
        return len(self.arities)

    def size(self) -> int:
        out = 1
        for vs in self.arities:
            out *= len(vs)
        return out

    def contains(self, z: tuple) -> bool:
        return len(z) == self.n and all(v in vs for v, vs in zip(z, self.arities))

    def value_index(self, i: int, value) -> int:
        return self.arities[i].index(value)


@dataclass(frozen=True)
class NeuralTask:
    background: Program
    mode_bias: ModeBias
    examples: tuple        # of RawExample
    latent: LatentSpace
    label_space: frozenset  # ground Atom
    model_config: dict = field(default_factory=dict, compare=False)
    max_body: int = 4
    name: str = "task"

    @property
    def n_inputs(self) -> int:
        return self.latent.n


@dataclass(frozen=True)
class SymbolicTask:
    """A fully symbolic learning task: the collapse target."""

    background: Program
    mode_bias: ModeBias
    examples: tuple  # of WCDPI
    label_space: frozenset = frozenset()
    max_body: int = 4


@dataclass
class Dataset:
    inputs: dict                      # ref -> np.ndarray (1-D float)
    gold_latents: dict = field(default_factory=dict)  # example id -> tuple

    @property
    def dim(self) -> int:
        for v in self.inputs.values():
            return len(v)
        return 0


# ---------------------------------------------------------------------------
# Example construction
# ---------------------------------------------------------------------------

def datapoint_to_example(ex_id: str, raw, y: Atom, label_space) -> RawExample:
    """Turn a labelled data point into a raw-data example: the label is the
    single inclusion, every other label-space atom is excluded."""
    space = frozenset(label_space)
    if y not in space:
        raise TaskValidationError(f"label {y!r} of {ex_id} not in the label space")
    return RawExample(ex_id, frozenset({y}), space - {y}, tuple(raw))


def latent_facts(z: tuple) -> Program:
    """Ground nn(i, v) facts encoding a latent tuple, input indices 1-based."""
    from .asp import Rule
    return Program(tuple(Rule(Atom(NN, (i + 1, v))) for i, v in enumerate(z)))


def collapse(task: NeuralTask, gold_latents: dict) -> SymbolicTask:
    """Collapse into a symbolic task: every raw example becomes a mandatory
    WCDPI whose context carries the gold latent values as nn facts."""
    wcdpis = []
    for e in task.examples:
        if e.id not in gold_latents:
            raise TaskValidationError(f"missing gold latents for example {e.id}")
        z = tuple(gold_latents[e.id])
        if not task.latent.contains(z):
            raise TaskValidationError(f"gold latents {z!r} of {e.id} outside the latent space")
        wcdpis.append(WCDPI(e.id, None, e.inclusions, e.exclusions,
                            e.ctx + latent_facts(z)))
    return SymbolicTask(task.background, task.mode_bias, tuple(wcdpis),
                        task.label_space, task.max_body)


def pinned_task(task: NeuralTask, gold_latents: dict) -> NeuralTask:
    """The collapsed task re-expressed as a neural task whose contexts pin
    every latent choice; abduction then yields exactly one possibility per
    example, which lets the whole pipeline run on the collapse."""
    pinned = []
    for e in task.examples:
        if e.id not in gold_latents:
            raise TaskValidationError(f"missing gold latents for example {e.id}")
        z = tuple(gold_latents[e.id])
        pinned.append(replace(e, ctx=e.ctx + latent_facts(z)))
    return replace(task, examples=tuple(pinned))


# ---------------------------------------------------------------------------
# Manifest loading
# ---------------------------------------------------------------------------

def _require(cond, msg):
    if not cond:
        raise TaskValidationError(msg)


def _load_vector(spec, base: Path) -> np.ndarray:
    if isinstance(spec, list):
        return np.asarray(spec, dtype=np.float64)
    if isinstance(spec, dict) and "csv" in spec:
        path = base / spec["csv"]
        row = spec.get("row", 0)
        with open(path, newline="") as fh:
            for i, line in enumerate(csv.reader(fh)):
                if i == row:
                    return np.asarray([float(x) for x in line], dtype=np.float64)
        raise TaskValidationError(f"row {row} not found in {path}")
    if isinstance(spec, dict) and "idx" in spec:
        return read_idx_vector(base / spec["idx"], spec.get("index", 0))
    raise TaskValidationError(f"unsupported data reference {spec!r}")


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def read_idx_vector(path, index: int) -> np.ndarray:
    """One flattened image from a big-endian IDX ubyte file, scaled to [0,1]."""
    with open(path, "rb") as fh:
        magic, = struct.unpack(">i", fh.read(4))
        if magic != IDX_IMAGES_MAGIC:
            raise TaskValidationError(
                f"{path}: bad IDX image magic {magic:#010x}")
        count, rows, cols = struct.unpack(">iii", fh.read(12))
        if not 0 <= index < count:
            raise TaskValidationError(f"{path}: image index {index} out of range")
        size = rows * cols
        fh.seek(16 + index * size)
        buf = fh.read(size)
    return np.frombuffer(buf, dtype=np.uint8).astype(np.float64) / 255.0


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, = struct.unpack(">i", fh.read(4))
        if magic != IDX_LABELS_MAGIC:
            raise TaskValidationError(f"{path}: bad IDX label magic {magic:#010x}")
        count, = struct.unpack(">i", fh.read(4))
        return np.frombuffer(fh.read(count), dtype=np.uint8).copy()


def _validate_opl(background: Program, bias: ModeBias, examples) -> None:
    head_preds = {d.predicate for d in bias.heads}
    for d in bias.bodies:
        if d.predicate in head_preds:
            raise TaskValidationError(
                f"OPL violation: mode head predicate {d.predicate!r} occurs in the body bias")
    progs = [background] + [e.ctx for e in examples]
    for prog in progs:
        for r in prog.rules + prog.choices:
            for a in list(r.body_pos) + list(r.body_neg):
                if a.predicate in head_preds:
                    raise TaskValidationError(
                        f"OPL violation: mode head predicate {a.predicate!r} "
                        f"occurs in a rule body")


def load_manifest(manifest: dict, base: Path):
    unknown = set(manifest) - _MANIFEST_KEYS
    _require(not unknown, f"unknown manifest keys: {sorted(unknown)}")
    for key in ("background", "modeh", "modeb", "types", "latent",
                "label_space", "examples"):
        _require(key in manifest, f"manifest missing key {key!r}")

    background = parse_program(manifest["background"])
    bias = make_bias(manifest["modeh"], manifest["modeb"], manifest["types"])
    latent = LatentSpace(tuple(tuple(vs) for vs in manifest["latent"]))
    label_space = frozenset(
        a for s in manifest["label_space"] for a in parse_atoms(s))
    _require(len(label_space) > 0, "empty label space")

    examples = []
    seen_ids = set()
    for ex in manifest["examples"]:
        _require(set(ex) <= {"id", "label", "raw", "ctx", "inclusions", "exclusions"},
                 f"unknown example keys in {ex.get('id')!r}")
        ex_id = ex["id"]
        _require(ex_id not in seen_ids, f"duplicate example id {ex_id!r}")
        seen_ids.add(ex_id)
        ctx = parse_program(ex.get("ctx", ""))
        raw = tuple(ex["raw"])
        _require(len(raw) == latent.n,
                 f"example {ex_id}: {len(raw)} raw inputs, latent space has {latent.n}")
        if "label" in ex:
            e = datapoint_to_example(ex_id, raw, parse_atom(ex["label"]), label_space)
            e = replace(e, ctx=ctx)
        else:
            inc = frozenset(a for s in ex.get("inclusions", []) for a in parse_atoms(s))
            exc = frozenset(a for s in ex.get("exclusions", []) for a in parse_atoms(s))
            e = RawExample(ex_id, inc, exc, raw, ctx)
        examples.append(e)

    _validate_opl(background, bias, examples)

    data = manifest.get("data", {})
    inputs = {}
    for e in examples:
        for ref in e.raw:
            if ref in inputs:
                continue
            _require(ref in data, f"dangling raw reference {ref!r} in example {e.id}")
            inputs[ref] = _load_vector(data[ref], base)
    dims = {len(v) for v in inputs.values()}
    _require(len(dims) <= 1, f"inconsistent feature dimensions: {sorted(dims)}")

    gold = {}
    for ex_id, z in manifest.get("gold_latents", {}).items():
        zt = tuple(z)
        _require(latent.contains(zt),
                 f"gold latents {zt!r} for {ex_id} outside the latent space")
        gold[ex_id] = zt

    task = NeuralTask(
        background=background,
        mode_bias=bias,
        examples=tuple(examples),
        latent=latent,
        label_space=label_space,
        model_config=dict(manifest.get("model_config", {})),
        max_body=int(manifest.get("max_body", 4)),
        name=manifest.get("name", "task"),
    )
    return task, Dataset(inputs, gold)


def load_task(manifest_path):
    """Load and fully validate a task manifest (JSON)."""
    path = Path(manifest_path)
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise TaskValidationError(f"manifest {path} not found")
    except json.JSONDecodeError as e:
        raise TaskValidationError(f"manifest {path} is not valid JSON: {e}")
    return load_manifest(manifest, path.parent)


def serialize_task(task: NeuralTask, dataset: Dataset) -> dict:
    """Manifest dict for a task; load_manifest(serialize_task(...)) is the
    identity up to float formatting."""
    bias = task.mode_bias
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": task.name,
        "background": task.background.to_text(),
        "modeh": [repr(d) for d in bias.heads],
        "modeb": [repr(d) for d in bias.bodies],
        "types": {t: list(vs) for t, vs in sorted(bias.type_domains.items())},
        "latent": [list(vs) for vs in task.latent.arities],
        "label_space": [repr(a) for a in sorted(task.label_space, key=lambda a: a.key())],
        "max_body": task.max_body,
        "examples": [],
        "data": {},
    }
    if task.model_config:
        manifest["model_config"] = dict(task.model_config)
    for e in task.examples:
        entry = {"id": e.id, "raw": list(e.raw)}
        if len(e.inclusions) == 1:
            (y,) = e.inclusions
            if e.exclusions == task.label_space - {y}:
                entry["label"] = repr(y)
        if "label" not in entry:
            entry["inclusions"] = [repr(a) for a in sorted(e.inclusions, key=lambda a: a.key())]
            entry["exclusions"] = [repr(a) for a in sorted(e.exclusions, key=lambda a: a.key())]
        if len(e.ctx):
            entry["ctx"] = e.ctx.to_text()
        manifest["examples"].append(entry)
    for ref, vec in dataset.inputs.items():
        manifest["data"][ref] = [float(x) for x in vec]
    if dataset.gold_latents:
        manifest["gold_latents"] = {k: list(v) for k, v in sorted(dataset.gold_latents.items())}
    return manifest


def save_task(task: NeuralTask, dataset: Dataset, path) -> None:
    Path(path).write_text(json.dumps(serialize_task(task, dataset), indent=1))
