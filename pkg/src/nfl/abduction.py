"""Abduction: enumerate the latent labellings consistent with the
background knowledge, per example, grouped by latent choice.

The latent program adds one exclusive choice rule per raw input; every
answer set of background + context + latent program is a possibility, and
possibilities are grouped by the nn atoms they contain.  For observational
tasks each group is a singleton.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .asp import NN, Aggregate, Atom, Program, Rule, answer_sets, ground
from .errors import TaskValidationError, UncoverableExampleError
from .task import LatentSpace, NeuralTask, RawExample

MAX_POSSIBILITIES = 10**6


def build_pz(latent: LatentSpace) -> Program:
    """One choice rule per input index (1-based): exactly one latent value
    is selected for each raw input."""
    choices = []
    for i, values in enumerate(latent.arities):
        elems = tuple(Atom(NN, (i + 1, v)) for v in values)
        choices.append(Rule(Aggregate(1, 1, elems)))
    return Program(choices=tuple(choices))


@dataclass(frozen=True)
class Possibility:
    answer_set: frozenset
    latent: frozenset   # the nn atoms inside the answer set
    z: tuple            # latent values ordered by input index
    id: int             # dense per-example possibility id

    def __post_init__(self):
        assert self.latent <= self.answer_set


@dataclass(frozen=True)
class PossibilityGroup:
    """Per-example map from latent tuple to its possibilities, with dense
    z ids assigned in lexicographic value order."""

    example_id: str
    groups: tuple       # of (z, tuple of Possibility), lexicographic in z
    n_inputs: int

    def z_tuples(self):
        return [z for z, _ps in self.groups]

    def z_id(self, z: tuple) -> int:
        for i, (zt, _ps) in enumerate(self.groups):
            if zt == z:
                return i
        raise KeyError(z)

    def possibilities(self):
        for _z, ps in self.groups:
            yield from ps

    def total(self) -> int:
        return sum(len(ps) for _z, ps in self.groups)

    def as_dict(self) -> dict:
        return {z: ps for z, ps in self.groups}


def _z_sort_key(latent: LatentSpace, z: tuple):
    return tuple(latent.value_index(i, v) for i, v in enumerate(z))


def _extract_z(latent: LatentSpace, nn_atoms) -> tuple:
    by_index = {}
    for a in nn_atoms:
        idx, value = a.args
        if idx in by_index:
            raise TaskValidationError(
                f"possibility assigns two latent values to input {idx}")
        by_index[idx] = value
    if sorted(by_index) != list(range(1, latent.n + 1)):
        raise TaskValidationError(
            f"possibility covers inputs {sorted(by_index)}, expected 1..{latent.n}")
    return tuple(by_index[i + 1] for i in range(latent.n))


class AbductionCache:
    """Abduction depends only on background + context; examples sharing a
    context (most of them: the empty one) share both the solve and the
    grouped possibility structure."""

    def __init__(self):
        self._by_ctx: dict = {}
        self._groups_by_ctx: dict = {}
        self.interned: dict = {}   # answer_set -> as_id
        self.answer_sets: list = []

    def intern(self, interp: frozenset) -> int:
        as_id = self.interned.get(interp)
        if as_id is None:
            as_id = len(self.answer_sets)
            self.interned[interp] = as_id
            self.answer_sets.append(interp)
        return as_id

    def solve(self, task: NeuralTask, ctx: Program):
        key = ctx.to_text()
        hit = self._by_ctx.get(key)
        if hit is not None:
            return hit
        base = task.background + ctx
        if base.choices:
            raise TaskValidationError(
                "background and contexts must not contain choice rules")
        prog = base + build_pz(task.latent)
        sets = answer_sets(ground(prog), max_models=MAX_POSSIBILITIES)
        self._by_ctx[key] = sets
        return sets

    def grouped(self, task: NeuralTask, ctx: Program):
        key = ctx.to_text()
        hit = self._groups_by_ctx.get(key)
        if hit is not None:
            return hit
        sets = self.solve(task, ctx)
        grouped: dict = {}
        for interp in sets:
            nn_atoms = frozenset(a for a in interp if a.predicate == NN)
            z = _extract_z(task.latent, nn_atoms)
            grouped.setdefault(z, []).append((interp, nn_atoms))
        ordered = sorted(grouped, key=lambda z: _z_sort_key(task.latent, z))
        groups = []
        p_id = 0
        for z in ordered:
            ps = []
            for interp, nn_atoms in grouped[z]:
                self.intern(interp)
                ps.append(Possibility(interp, nn_atoms, z, p_id))
                p_id += 1
            groups.append((z, tuple(ps)))
        result = tuple(groups)
        # observational tasks: one possibility per latent choice
        for z, ps in result:
            assert len(ps) == 1, f"non-singleton group {z} in an observational task"
        self._groups_by_ctx[key] = result
        return result


def abduce_neural_possibilities(task: NeuralTask, example: RawExample,
                                cache: Optional[AbductionCache] = None
                                ) -> PossibilityGroup:
    """All answer sets of background + context + latent program, grouped by
    their latent choice.  Groups that the background's constraints eliminate
    are dropped; an example with no possibility at all is uncoverable."""
    cache = cache or AbductionCache()
    groups = cache.grouped(task, example.ctx)
    if not groups:
        raise UncoverableExampleError(
            f"example {example.id}: no latent labelling satisfies the background constraints")
    return PossibilityGroup(example.id, groups, task.latent.n)


def abduce_all(task: NeuralTask, cache: Optional[AbductionCache] = None) -> dict:
    cache = cache or AbductionCache()
    return {e.id: abduce_neural_possibilities(task, e, cache) for e in task.examples}


def coverage(hypothesis, example: RawExample, groups: PossibilityGroup,
             bias=None, derivations=None) -> set:
    """Latent tuples z such that some possibility in group z, extended with
    the hypothesis, accepts the example: all inclusions hold and no
    exclusion does."""
    from .bias import InterpIndex, rule_consequences
    covered = set()
    for z, ps in groups.groups:
        for p in ps:
            atoms = set(p.answer_set)
            if derivations is not None:
                for h in hypothesis:
                    atoms |= derivations(h, p.answer_set)
            else:
                idx = InterpIndex(p.answer_set)
                for h in hypothesis:
                    atoms |= rule_consequences(h, p.answer_set, bias, idx)
            if example.inclusions <= atoms and not (example.exclusions & atoms):
                covered.add(z)
                break
    return covered
