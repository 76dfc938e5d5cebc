"""Optimal hypothesis search given trained network outputs.

The objective is |E| * S_len(H) + sum over examples of the best covered
latent choice's penalty, where S_len counts literals and a penalty is
-log P(z | x) clamped to be finite.  The native branch-and-bound search is
the reference path; an equivalent weak-constraint program text is emitted
for cross-validation with external solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .asp import min_aggregate_eval
from .errors import TaskValidationError, UnsatisfiableError
from .synthesis import OptSufficientSpace
from .task import NeuralTask

PROB_FLOOR = 1e-9
PENALTY_SCALE = 1000  # integerization for the emitted program


def prior(h_len: int) -> float:
    """Hypothesis-length prior (e-1) * exp(-|H|), |H| in literals."""
    if h_len < 0:
        raise ValueError("hypothesis length must be nonnegative")
    return (math.e - 1.0) * math.exp(-h_len)


def clamp_prob(p: float) -> float:
    return min(max(p, PROB_FLOOR), 1.0)


@dataclass(frozen=True)
class PossRow:
    """Coverage structure of one possibility: which rules are mandatory for
    each not-yet-entailed inclusion atom, which rules fire an exclusion."""

    p_id: int
    needs: tuple        # of (atom, frozenset of rule ids able to derive it)
    banned: frozenset   # rule ids deriving some excluded atom here
    dead: bool          # uncoverable regardless of the hypothesis

    def covered_by(self, chosen: frozenset) -> bool:
        if self.dead or (chosen & self.banned):
            return False
        return all(chosen & opts for _a, opts in self.needs)

    def coverable_with(self, chosen: frozenset, available: frozenset) -> bool:
        if self.dead or (chosen & self.banned):
            return False
        pool = chosen | available
        return all(pool & opts for _a, opts in self.needs)

    def feasible_alone(self) -> bool:
        """Some rule subset covers this possibility: every needed atom has a
        deriving rule that is not banned here."""
        return not self.dead and all(opts - self.banned for _a, opts in self.needs)


@dataclass(frozen=True)
class ZGroup:
    z: tuple
    z_id: int
    penalty: float
    rows: tuple  # of PossRow


@dataclass(frozen=True)
class ExampleData:
    example_id: str
    groups: tuple  # of ZGroup


@dataclass(frozen=True)
class SolveInstance:
    space: OptSufficientSpace
    examples: tuple  # of ExampleData
    n_examples: int

    def rule_lengths(self):
        return [r.length for r in self.space.rules]


@dataclass(frozen=True)
class Solution:
    hypothesis: tuple      # rule ids, ascending
    rule_texts: tuple
    objective: float
    length_term: int       # |E| * S_len(H)
    penalty_term: float
    per_example: dict      # example id -> (z, z_id, penalty)
    n_optimal: int = 1     # how many equal-objective optima were seen


def build_instance(task: NeuralTask, space: OptSufficientSpace,
                   prob_of_z) -> SolveInstance:
    """Assemble per-example coverage rows and penalties.

    `prob_of_z(example_id, z) -> float` is the network's joint probability
    for the latent tuple; probabilities are clamped to [1e-9, 1] before the
    log so penalties stay finite.  Row structure depends only on the
    possibility and the example's inclusion/exclusion sets, so it is memoized
    across examples sharing a label.
    """
    n_rules = len(space.rules)
    row_memo: dict = {}

    def row_for(as_id, inclusions, exclusions, p_id):
        key = (as_id, inclusions, exclusions)
        hit = row_memo.get(key)
        if hit is None:
            base = space.base_true[as_id]
            dead = bool(exclusions & base)
            needs = []
            if not dead:
                for a in sorted(inclusions, key=lambda x: x.key()):
                    if a in base:
                        continue
                    opts = frozenset(i for i in range(n_rules)
                                     if a in space.derived[(i, as_id)])
                    if not opts:
                        dead = True
                        break
                    needs.append((a, opts))
            banned = frozenset(i for i in range(n_rules)
                               if space.derived[(i, as_id)] & exclusions)
            hit = (tuple(needs) if not dead else (), banned, dead)
            row_memo[key] = hit
        needs, banned, dead = hit
        return PossRow(p_id, needs, banned, dead)

    examples = []
    for e in task.examples:
        rows_by_z: dict = {}
        for z, z_id, p_id, as_id in space.example_possibilities[e.id]:
            row = row_for(as_id, e.inclusions, e.exclusions, p_id)
            rows_by_z.setdefault((z_id, z), []).append(row)
        groups = []
        for (z_id, z), rows in sorted(rows_by_z.items(), key=lambda kv: kv[0][0]):
            penalty = -math.log(clamp_prob(prob_of_z(e.id, z)))
            groups.append(ZGroup(z, z_id, penalty, tuple(rows)))
        examples.append(ExampleData(e.id, tuple(groups)))
    return SolveInstance(space, tuple(examples), len(task.examples))


# ---------------------------------------------------------------------------
# Native search
# ---------------------------------------------------------------------------

def _mask(ids) -> int:
    m = 0
    for i in ids:
        m |= 1 << i
    return m


class _FastExample:
    """Penalty-sorted groups with bitmask rows for quick bound evaluation."""

    __slots__ = ("example_id", "sorted_groups")

    def __init__(self, ex: ExampleData):
        self.example_id = ex.example_id
        groups = []
        for g in ex.groups:
            rows = [( tuple(_mask(opts) for _a, opts in r.needs), _mask(r.banned))
                    for r in g.rows if not r.dead]
            if rows:
                groups.append((g.penalty, g.z_id, rows))
        groups.sort(key=lambda t: (t[0], t[1]))
        self.sorted_groups = groups

    def best_covered(self, chosen_mask: int) -> float:
        for penalty, _z_id, rows in self.sorted_groups:
            for needs, banned in rows:
                if not (chosen_mask & banned) and \
                        all(chosen_mask & m for m in needs):
                    return penalty
        return math.inf

    def best_coverable(self, chosen_mask: int, pool_mask: int) -> float:
        for penalty, _z_id, rows in self.sorted_groups:
            for needs, banned in rows:
                if not (chosen_mask & banned) and \
                        all(pool_mask & m for m in needs):
                    return penalty
        return math.inf

    def feasible(self) -> bool:
        return any(all(m & ~banned for m in needs) or not needs
                   for _p, _z, rows in self.sorted_groups
                   for needs, banned in rows)


def _choose_z(ex: ExampleData, chosen: frozenset):
    best = None
    for g in ex.groups:
        if any(row.covered_by(chosen) for row in g.rows):
            if best is None or g.penalty < best[2] - 1e-15:
                best = (g.z, g.z_id, g.penalty)
    return best


def solve_native(inst: SolveInstance) -> Solution:
    """Exact minimizer over rule subsets via depth-first branch and bound.

    Rules are considered in canonical id order; the lower bound adds the
    fixed length cost of chosen rules to each example's best penalty over
    the groups still coverable when every undecided rule is available.
    Ties break on the lexicographically smallest serialized hypothesis,
    then on the smallest id set.
    """
    space = inst.space
    n_rules = len(space.rules)
    lengths = inst.rule_lengths()
    n_ex = inst.n_examples
    fast = [_FastExample(ex) for ex in inst.examples]

    # feasibility: every example must be coverable by some rule subset
    uncovered = sorted(f.example_id for f in fast if not f.feasible())
    if uncovered:
        raise UnsatisfiableError(
            "no hypothesis covers examples: " + ", ".join(uncovered))

    best: dict = {"objective": math.inf, "keys": None, "sol": None}

    def tie_key(chosen_mask: int):
        ids = [i for i in range(n_rules) if chosen_mask >> i & 1]
        texts = tuple(sorted(space.rules[i].text() for i in ids))
        return (texts, tuple(ids))

    def consider(chosen_mask: int, total_len: int, path_lb: float):
        pen = 0.0
        for f in fast:
            covered = f.best_covered(chosen_mask)
            if math.isinf(covered):
                return
            pen += covered
        obj = n_ex * total_len + pen
        # the branch-and-bound bound is admissible: it never exceeds the
        # objective of any completion in its subtree
        assert path_lb <= obj + 1e-9, "lower bound exceeded a subtree optimum"
        if obj < best["objective"] - 1e-12:
            best.update(objective=obj, keys=tie_key(chosen_mask),
                        sol=(chosen_mask, n_ex * total_len, pen), count=1)
        elif abs(obj - best["objective"]) <= 1e-12:
            best["count"] = best.get("count", 1) + 1
            key = tie_key(chosen_mask)
            if key < best["keys"]:
                best.update(keys=key, sol=(chosen_mask, n_ex * total_len, pen))

    def lower_bound(chosen_mask: int, total_len: int, next_i: int):
        pool = chosen_mask | (((1 << n_rules) - 1) >> next_i << next_i)
        lb = n_ex * total_len
        for f in fast:
            coverable = f.best_coverable(chosen_mask, pool)
            if math.isinf(coverable):
                return math.inf
            lb += coverable
        return lb

    def dfs(i: int, chosen_mask: int, total_len: int):
        lb = lower_bound(chosen_mask, total_len, i)
        if lb > best["objective"] + 1e-12:
            return
        consider(chosen_mask, total_len, lb)
        if i == n_rules:
            return
        dfs(i + 1, chosen_mask | (1 << i), total_len + lengths[i])
        dfs(i + 1, chosen_mask, total_len)

    dfs(0, 0, 0)

    if best["sol"] is None:
        # individually coverable examples can still conflict jointly: a rule
        # mandatory for one example may be banned by another
        raise UnsatisfiableError(
            "no hypothesis simultaneously covers all examples")

    chosen_mask, length_term, penalty_term = best["sol"]
    chosen = frozenset(i for i in range(n_rules) if chosen_mask >> i & 1)
    per_example = {}
    for ex in inst.examples:
        z, z_id, pen = _choose_z(ex, chosen)
        per_example[ex.example_id] = (z, z_id, pen)
    ids = tuple(sorted(chosen))
    return Solution(
        hypothesis=ids,
        rule_texts=tuple(space.rules[i].text() for i in ids),
        objective=best["objective"],
        length_term=length_term,
        penalty_term=penalty_term,
        per_example=per_example,
        n_optimal=best.get("count", 1),
    )


def verify_almost_perfect(inst: SolveInstance, h_star_len: int,
                          gold_latents: dict) -> bool:
    """Every example's gold latent tuple carries probability at least
    e^(|E||H*|) / (1 + e^(|E||H*|)) under the penalties in the instance."""
    exponent = inst.n_examples * h_star_len
    threshold = math.exp(exponent) / (1.0 + math.exp(exponent))
    for ex in inst.examples:
        if ex.example_id not in gold_latents:
            raise TaskValidationError(
                f"missing gold latents for example {ex.example_id}")
        zgt = tuple(gold_latents[ex.example_id])
        p = 0.0
        for g in ex.groups:
            if g.z == zgt:
                p = math.exp(-g.penalty)
                break
        if p < threshold:
            return False
    return True


# ---------------------------------------------------------------------------
# Weak-constraint program emission and native cross-evaluation
# ---------------------------------------------------------------------------

def _int_penalty(p: float) -> int:
    return int(round(PENALTY_SCALE * p))


def emit_psolve(inst: SolveInstance) -> str:
    """Textual weak-constraint encoding of the instance.

    The #min aggregate line is emitted verbatim for external solvers; the
    native evaluator materializes min_ex_penalty itself instead of parsing
    the aggregate.
    """
    space = inst.space
    n_ex = inst.n_examples
    out = ["% hypothesis guesses and length prior",
           f"% cost unit: {1.0 / PENALTY_SCALE} nats"]
    for i, rule in enumerate(space.rules):
        out.append(f"0 {{ in_h({i}) }} 1.")
        weight = PENALTY_SCALE * n_ex * rule.length
        out.append(f":~ in_h({i}). [{weight}@1, in_h({i})]")
    out.append("% per-example coverage")
    pid = 0
    pid_of: dict = {}
    for ex in inst.examples:
        eid = ex.example_id
        out.append(f"example({eid}).")
        out.append(f":- not covered({eid}).")
        for g in ex.groups:
            out.append(f"covered({eid}) :- pgroup_covered({eid},{g.z_id}).")
            out.append(f"poss_group_penalty({eid},{g.z_id},{_int_penalty(g.penalty)}).")
            for row in g.rows:
                pid_of[(eid, row.p_id)] = pid
                out.append(f"pgroup_covered({eid},{g.z_id}) :- not poss_not_covered({pid}).")
                if row.dead:
                    out.append(f"poss_not_covered({pid}).")
                else:
                    for _a, opts in row.needs:
                        body = ", ".join(f"not in_h({i})" for i in sorted(opts))
                        out.append(f"poss_not_covered({pid}) :- {body}.")
                    for i in sorted(row.banned):
                        out.append(f"poss_not_covered({pid}) :- in_h({i}).")
                pid += 1
    out.append("% minimum penalty per covered example")
    out.append("pgrp_cov(Ex, Z) :- pgroup_covered(Ex, Z).")
    out.append("pgrp_pen(Ex, Z, P) :- poss_group_penalty(Ex, Z, P).")
    out.append("min_ex_penalty(Ex, Pen) :- example(Ex), "
               "Pen=#min{P : pgrp_cov(Ex, Z), pgrp_pen(Ex, Z, P)}.")
    out.append(":~ min_ex_penalty(Ex, P). [P@1, Ex]")
    return "\n".join(out) + "\n"


def evaluate_psolve_text(text: str, max_models: Optional[int] = None):
    """Native evaluation of an emitted program: parse everything except the
    #min rule, enumerate answer sets, materialize min_ex_penalty per answer
    set, and minimize the two weak-constraint families.

    Returns (best integer cost, list of in_h id sets).  Exponential in the
    rule count; intended for cross-checks on small instances.
    """
    from .asp import Atom, ground, parse_program, answer_sets

    kept_lines = [ln for ln in text.splitlines()
                  if "#min" not in ln and not ln.startswith(":~ min_ex_penalty")]
    weak_min = ":~ min_ex_penalty(Ex, P). [P@1, Ex]" in text
    in_h_weights = {}
    for ln in kept_lines:
        if ln.startswith(":~ in_h("):
            rid = int(ln[len(":~ in_h("):].split(")")[0])
            in_h_weights[rid] = int(ln.split("[")[1].split("@")[0])
    prog = ground(parse_program("\n".join(kept_lines)))
    sets = answer_sets(prog, max_models=max_models)
    best_cost, best_sets = None, []
    for s in sets:
        cost = sum(w for rid, w in in_h_weights.items()
                   if Atom("in_h", (rid,)) in s)
        if weak_min:
            groups: dict = {}
            pens: dict = {}
            for a in s:
                if a.predicate == "pgroup_covered":
                    groups.setdefault(a.args[0], set()).add(a.args[1])
                elif a.predicate == "poss_group_penalty":
                    pens[(a.args[0], a.args[1])] = a.args[2]
            candidates = {
                eid: {pens[(eid, z)] for z in zs if (eid, z) in pens}
                for eid, zs in groups.items()}
            mins = min_aggregate_eval(s, candidates)
            cost += sum(mins.values())
        if best_cost is None or cost < best_cost:
            best_cost, best_sets = cost, [s]
        elif cost == best_cost:
            best_sets.append(s)
    in_h_sets = []
    for s in best_sets:
        in_h_sets.append(frozenset(a.args[0] for a in s if a.predicate == "in_h"))
    return best_cost, in_h_sets
