"""Six-stage pipeline orchestration with persisted intermediates.

Stages: abduction, rule synthesis (maximal rules + generalisation +
optimisation, persisted together as the rule space), training, solving,
evaluation.  Every intermediate is structured JSON with a schema version;
a stage can resume from the artifact of the previous one, and resuming
equals running from scratch.  The deterministic report excludes wall-clock
timings, which go to a sidecar file.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .abduction import AbductionCache, abduce_all
from .asp import NN, Atom, atom_sort_key, parse_atom
from .bias import parse_hyp, rule_consequences
from .errors import ConfigError, TaskValidationError
from .solver import (
    SolveInstance,
    Solution,
    build_instance,
    emit_psolve,
    solve_native,
)
from .synthesis import OptSufficientSpace, SpaceBuilder, build_opt_space
from .task import Dataset, NeuralTask, latent_facts, load_task
from .trainer import (
    MLPConfig,
    PerceptionModel,
    TrainConfig,
    TrainResult,
    RulePosterior,
    softmax,
    train,
)
from .util import dump_json, read_json

STAGES = ("abduce", "space", "train", "solve", "eval")


@dataclass
class RunConfig:
    task_path: str
    out_dir: str = "out"
    seed: int = 0
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 32
    stages: tuple = STAGES
    test_path: Optional[str] = None
    emit_psolve_path: Optional[str] = None
    max_body: Optional[int] = None
    complement_mode: str = "full"

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.lr, self.batch, self.seed,
                           self.complement_mode)


@dataclass
class RunReport:
    config: dict
    stages_run: list
    possibility_stats: dict
    g_size: int
    space_size: int
    space_rules: list
    trajectory: list
    hypothesis: list
    objective: Optional[float]
    metrics: dict
    timings: dict = field(default_factory=dict)

    def deterministic_dict(self) -> dict:
        return {
            "schema_version": 1,
            "version": __version__,
            "config": self.config,
            "stages_run": self.stages_run,
            "possibility_stats": self.possibility_stats,
            "g_size": self.g_size,
            "space_size": self.space_size,
            "space_rules": self.space_rules,
            "trajectory": self.trajectory,
            "hypothesis": self.hypothesis,
            "objective": self.objective,
            "metrics": self.metrics,
        }


# ---------------------------------------------------------------------------
# Artifact io
# ---------------------------------------------------------------------------

def dump_possibilities(groups, cache: AbductionCache, path) -> None:
    answer_sets = {}
    examples = []
    for ex_id in sorted(groups):
        pg = groups[ex_id]
        rows = []
        for z_id, (z, ps) in enumerate(pg.groups):
            for p in ps:
                as_id = cache.interned[p.answer_set]
                answer_sets[str(as_id)] = sorted(
                    repr(a) for a in p.answer_set)
                rows.append({"z": list(z), "z_id": z_id, "p_id": p.id,
                             "as_id": as_id})
        examples.append({"id": ex_id, "groups": rows})
    dump_json({"schema_version": 1, "examples": examples,
               "answer_sets": answer_sets}, path)


def dump_space(space: OptSufficientSpace, path) -> None:
    rules = []
    for i, r in enumerate(space.rules):
        rules.append({"id": i, "text": r.text(), "length": r.length,
                      "origin": list(space.origins[i])})
    dump_json({"schema_version": 1, "g_size": space.g_size,
               "max_body": space.max_body, "rules": rules}, path)


def load_space(task: NeuralTask, groups, cache: AbductionCache,
               path) -> OptSufficientSpace:
    """Rebuild a space from its dumped rule texts: signatures and rule
    consequences are recomputed, the subrule search is skipped."""
    doc = read_json(path)
    builder = SpaceBuilder(task, groups, cache,
                           max_body=doc.get("max_body"))
    rules = tuple(parse_hyp(r["text"], task.mode_bias) for r in doc["rules"])
    signatures, derived, origins = {}, {}, {}
    for i, r in enumerate(rules):
        signatures[i] = builder.signature(r)
        origins[i] = tuple(doc["rules"][i]["origin"])
        for as_id in builder.used_as_ids:
            derived[(i, as_id)] = builder.derived(r, as_id)
    example_possibilities = {}
    for e in task.examples:
        pg = groups[e.id]
        rows = []
        for z_id, (z, ps) in enumerate(pg.groups):
            for p in ps:
                rows.append((z, z_id, p.id, cache.interned[p.answer_set]))
        example_possibilities[e.id] = tuple(rows)
    return OptSufficientSpace(
        rules=rules, signatures=signatures, origins=origins,
        universe=builder.universe, derived=derived,
        base_true=builder.base_true,
        example_possibilities=example_possibilities,
        max_body=builder.max_body, g_size=doc["g_size"])


def dump_model(result: TrainResult, config: TrainConfig, path) -> None:
    cfg = result.model.config
    dump_json({
        "schema_version": 1,
        "arch": {"input_dim": cfg.input_dim, "hidden": list(cfg.hidden),
                 "head_widths": list(cfg.head_widths)},
        "theta": [float(x) for x in result.theta],
        "theta_r": [float(x) for x in result.theta_r],
        "trajectory": result.trajectory,
        "optimizer": {"kind": "adam", "lr": config.lr, "beta1": 0.9,
                      "beta2": 0.999, "batch": config.batch,
                      "seed": config.seed, "epochs": config.epochs},
    }, path)


def load_model(path):
    doc = read_json(path)
    arch = doc["arch"]
    cfg = MLPConfig(arch["input_dim"], tuple(arch["head_widths"]),
                    tuple(arch["hidden"]))
    model = PerceptionModel(cfg, np.random.default_rng(0))
    model.set_theta(np.asarray(doc["theta"], dtype=np.float64))
    theta_r = np.asarray(doc["theta_r"], dtype=np.float64)
    return model, theta_r, doc


def dump_solution(sol: Solution, space: OptSufficientSpace, theta_r, path) -> None:
    per_example = {
        ex_id: {"z": list(z), "z_id": z_id, "penalty": penalty}
        for ex_id, (z, z_id, penalty) in sorted(sol.per_example.items())}
    dump_json({
        "schema_version": 1,
        "hypothesis_ids": list(sol.hypothesis),
        "hypothesis": list(sol.rule_texts),
        "objective": sol.objective,
        "length_term": sol.length_term,
        "penalty_term": sol.penalty_term,
        "n_optimal": sol.n_optimal,
        "per_example": per_example,
        "posterior": [float(x) for x in softmax(theta_r)] if theta_r is not None else None,
    }, path)


# ---------------------------------------------------------------------------
# Stage drivers
# ---------------------------------------------------------------------------

def model_probabilities(model: PerceptionModel, task: NeuralTask,
                        dataset: Dataset):
    """Per-example joint latent probability function from the head outputs."""
    head_probs = {}
    for e in task.examples:
        xs = np.stack([dataset.inputs[r] for r in e.raw])
        head_probs[e.id] = model.probs_for(xs)

    def prob_of_z(ex_id: str, z: tuple) -> float:
        probs = head_probs[ex_id]
        task_ex = next(e for e in task.examples if e.id == ex_id)
        del task_ex
        p = 1.0
        for j, v in enumerate(z):
            k = task.latent.value_index(j, v)
            p *= float(probs[j][k])
        return p

    return prob_of_z


def solve_with_model(task, space, model, dataset) -> SolveInstance:
    return build_instance(task, space, model_probabilities(model, task, dataset))


class _ClosureCache:
    """Base closures B + ctx + latent facts, memoized by (ctx text, z)."""

    def __init__(self, task: NeuralTask):
        self.task = task
        self._memo: dict = {}

    def closure(self, ctx, z: tuple) -> frozenset:
        from .asp import answer_sets, ground
        key = (ctx.to_text(), z)
        hit = self._memo.get(key)
        if hit is None:
            prog = self.task.background + ctx + latent_facts(z)
            sets = answer_sets(ground(prog))
            hit = sets[0] if sets else frozenset()
            self._memo[key] = hit
        return hit


def evaluate(model: PerceptionModel, hypothesis_rules, task: NeuralTask,
             dataset: Dataset) -> dict:
    """Latent accuracy (argmax head vs gold) and end-to-end accuracy (label
    entailed by background + hypothesis + argmax latents)."""
    if not dataset.gold_latents:
        raise TaskValidationError("evaluation requires gold latents in the dataset")
    closure = _ClosureCache(task)
    hyp = [parse_hyp(t, task.mode_bias) if isinstance(t, str) else t
           for t in hypothesis_rules]
    latent_hits = latent_total = 0
    e2e_hits = 0
    for e in task.examples:
        xs = np.stack([dataset.inputs[r] for r in e.raw])
        probs = model.probs_for(xs)
        zhat = tuple(task.latent.arities[j][int(np.argmax(probs[j]))]
                     for j in range(task.latent.n))
        gold = dataset.gold_latents.get(e.id)
        if gold is not None:
            for a, b in zip(zhat, gold):
                latent_hits += int(a == b)
                latent_total += 1
        atoms = set(closure.closure(e.ctx, zhat))
        for h in hyp:
            atoms |= rule_consequences(h, frozenset(atoms), task.mode_bias)
        if e.inclusions <= atoms:
            e2e_hits += 1
    n = len(task.examples)
    return {
        "examples": n,
        "latent_accuracy": latent_hits / latent_total if latent_total else None,
        "end_to_end_accuracy": e2e_hits / n if n else None,
    }


def run_pipeline(cfg: RunConfig) -> RunReport:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    stages_run: list = []

    task, dataset = load_task(cfg.task_path)
    if cfg.max_body is not None:
        from dataclasses import replace
        task = replace(task, max_body=cfg.max_body)

    cache = AbductionCache()
    groups = space = result = solution = None
    trajectory: list = []
    metrics: dict = {}
    poss_stats: dict = {}
    hypothesis: list = []
    objective = None

    def timed(name, fn):
        t0 = time.perf_counter()
        value = fn()
        timings[name] = round(time.perf_counter() - t0, 6)
        stages_run.append(name)
        return value

    want = [s for s in STAGES if s in cfg.stages]
    if not want:
        raise ConfigError(f"no known stages in {cfg.stages!r}")

    # abduction feeds everything downstream, so it always runs (cheap and
    # cached); it only counts as a stage when requested
    groups = abduce_all(task, cache)
    if "abduce" in want:
        timed("abduce", lambda: dump_possibilities(
            groups, cache, out / "possibilities.json"))
    sizes = [pg.total() for pg in groups.values()]
    poss_stats = {
        "examples": len(sizes),
        "total": sum(sizes),
        "min": min(sizes) if sizes else 0,
        "max": max(sizes) if sizes else 0,
    }

    space_path = out / "space.json"
    if any(s in want for s in ("space", "train", "solve", "eval")):
        if "space" in want or not space_path.exists():
            space = timed("space", lambda: build_opt_space(task, groups, cache))
            dump_space(space, space_path)
        else:
            space = load_space(task, groups, cache, space_path)

    model_path = out / "model.json"
    theta_r = None
    model = None
    if any(s in want for s in ("train", "solve", "eval")):
        if "train" in want or not model_path.exists():
            result = timed("train", lambda: train(task, space, dataset,
                                                  cfg.train_config()))
            dump_model(result, cfg.train_config(), model_path)
            model, theta_r = result.model, result.theta_r
            trajectory = result.trajectory
        else:
            model, theta_r, doc = load_model(model_path)
            trajectory = doc.get("trajectory", [])

    solution_path = out / "solution.json"
    if any(s in want for s in ("solve", "eval")):
        if "solve" in want or not solution_path.exists():
            inst = solve_with_model(task, space, model, dataset)
            solution = timed("solve", lambda: solve_native(inst))
            dump_solution(solution, space, theta_r, solution_path)
            psolve_path = cfg.emit_psolve_path or (out / "psolve.lp")
            Path(psolve_path).write_text(emit_psolve(inst))
            hypothesis = list(solution.rule_texts)
            objective = solution.objective
        else:
            doc = read_json(solution_path)
            hypothesis = doc["hypothesis"]
            objective = doc["objective"]

    if "eval" in want:
        def _eval():
            if cfg.test_path:
                test_task, test_data = load_task(cfg.test_path)
            else:
                test_task, test_data = task, dataset
            return evaluate(model, hypothesis, test_task, test_data)
        metrics = timed("eval", _eval)

    report = RunReport(
        config={
            "task": str(cfg.task_path), "seed": cfg.seed,
            "epochs": cfg.epochs, "lr": cfg.lr, "batch": cfg.batch,
            "stages": list(want), "max_body": task.max_body,
            "complement_mode": cfg.complement_mode,
            "test": str(cfg.test_path) if cfg.test_path else None,
        },
        stages_run=stages_run,
        possibility_stats=poss_stats,
        g_size=space.g_size if space else 0,
        space_size=len(space) if space else 0,
        space_rules=space.texts() if space else [],
        trajectory=trajectory,
        hypothesis=hypothesis,
        objective=objective,
        metrics=metrics,
        timings=timings,
    )
    dump_json(report.deterministic_dict(), out / "report.json")
    dump_json({"schema_version": 1, "timings": timings}, out / "run_meta.json")
    return report
