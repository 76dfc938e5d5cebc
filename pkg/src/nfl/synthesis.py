"""Rule synthesis: maximal candidate rules, generalisation, and the
opt-sufficient rule space.

For every (example, possibility, target-atom) triple the maximal rule holds
every true compatible literal in its body.  Generalisation lifts constants
in var slots to variables, named stably by (type, constant) so that lifts
agree across possibilities.  The optimisation step keeps only minimal
subrules: no strict shortening may leave the coverage signature unchanged,
and a rule that derives an excluded atom under every possibility of some
example is pruned outright.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .abduction import AbductionCache, PossibilityGroup, Possibility
from .asp import Atom, Var
from .bias import (
    CAPTURE,
    RELEASE,
    HypRule,
    ModeBias,
    ModeDecl,
    canonical_hyp,
    ground_compatible,
    index_by_pred,
    iter_subrules,
    rule_consequences,
    valid_hyp,
)
from .errors import EmptySpaceError, TaskValidationError
from .task import NeuralTask, RawExample


# ---------------------------------------------------------------------------
# Bottom (maximal) rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BottomRule:
    """Ground maximal rule proving one target atom in one possibility."""

    head: Atom
    body_pos: frozenset
    body_neg: frozenset
    origin: tuple       # (example id, possibility id, target atom, sign)
    head_decl: ModeDecl

    @property
    def sign(self) -> str:
        return self.origin[3]


def stable_var(typ: str, const) -> Var:
    return Var(f"V_{typ}_{const}")


def _ground_body(answer_set, bias: ModeBias):
    """Every ground literal compatible with a body declaration and true in
    the answer set; negated declarations contribute the compatible ground
    atoms absent from it."""
    by_pred = index_by_pred(answer_set)
    pos, neg = set(), set()
    for d in bias.bodies:
        if d.negated:
            pools = [bias.domain(s.type) for s in d.slots]
            for combo in itertools.product(*pools):
                a = Atom(d.predicate, combo)
                if a not in answer_set:
                    neg.add(a)
        else:
            for a in by_pred.get((d.predicate, d.arity), ()):
                if ground_compatible(a, False, d, bias):
                    pos.add(a)
    return frozenset(pos), frozenset(neg)


def _bottom_rules(task: NeuralTask, example: RawExample, p: Possibility,
                  targets, sign: str, missing_is_error: bool):
    bias = task.mode_bias
    out = []
    body_pos, body_neg = _ground_body(p.answer_set, bias)
    for a in sorted(targets, key=lambda x: x.key()):
        decls = [d for d in bias.heads if ground_compatible(a, False, d, bias)]
        if not decls:
            if missing_is_error:
                raise TaskValidationError(
                    f"example {example.id}: inclusion atom {a!r} is not compatible "
                    f"with any mode head declaration (unlearnable)")
            continue
        for d in decls:
            out.append(BottomRule(a, body_pos, body_neg,
                                  (example.id, p.id, repr(a), sign), d))
    return out


def build_c_plus(task: NeuralTask, example: RawExample, p: Possibility):
    """Maximal rules for each inclusion atom not already entailed by the
    possibility; one rule per compatible mode head declaration."""
    targets = [a for a in example.inclusions if a not in p.answer_set]
    return _bottom_rules(task, example, p, targets, "+", missing_is_error=True)


def build_c_minus(task: NeuralTask, example: RawExample, p: Possibility):
    """As build_c_plus with the exclusion atoms as targets; atoms no head
    declaration can produce are skipped (no hypothesis can derive them)."""
    return _bottom_rules(task, example, p, list(example.exclusions), "-",
                         missing_is_error=False)


# ---------------------------------------------------------------------------
# Generalisation (lifting)
# ---------------------------------------------------------------------------

def lift_atom(atom: Atom, decl: ModeDecl, var_types: dict) -> Atom:
    args = []
    for arg, slot in zip(atom.args, decl.slots):
        if slot.kind == "var":
            v = stable_var(slot.type, arg)
            var_types[v.name] = slot.type
            args.append(v)
        else:
            args.append(arg)
    return Atom(atom.predicate, tuple(args))


def _orbit_sort(atom: Atom, decl: ModeDecl) -> Atom:
    if not decl.symmetric_pairs:
        return atom
    from .asp import term_key
    args = list(atom.args)
    for orbit in decl.orbits():
        vals = sorted((args[i] for i in orbit), key=term_key)
        for i, v in zip(orbit, vals):
            args[i] = v
    return Atom(atom.predicate, tuple(args))


def lift_body(body_pos, body_neg, bias: ModeBias):
    """Lift every (ground literal, compatible declaration) pair; symmetric
    orbits are sorted locally, which is canonical because stable variable
    names fix identities."""
    var_types: dict = {}
    lits: dict = {}
    for a in body_pos:
        for d in bias.bodies:
            if not d.negated and ground_compatible(a, False, d, bias):
                lits[(_orbit_sort(lift_atom(a, d, var_types), d), False)] = None
    for a in body_neg:
        for d in bias.bodies:
            if d.negated and ground_compatible(a, True, d, bias):
                lits[(_orbit_sort(lift_atom(a, d, var_types), d), True)] = None
    ordered = sorted(lits, key=lambda ln: (ln[0].key(), ln[1]))
    return tuple(ordered), var_types


def lift_bottom(bottom: BottomRule, bias: ModeBias) -> HypRule:
    """The generalisation of one maximal ground rule: stable variable names
    keyed by (type, constant), constants kept in const slots.  Equal
    constants of equal type collapse onto one variable by construction."""
    var_types: dict = {}
    head = _orbit_sort(lift_atom(bottom.head, bottom.head_decl, var_types),
                       bottom.head_decl)
    body, body_types = lift_body(bottom.body_pos, bottom.body_neg, bias)
    var_types.update(body_types)
    used = {v.name for v in head.variables()}
    for a, _n in body:
        used |= {v.name for v in a.variables()}
    types = tuple(sorted((v, t) for v, t in var_types.items() if v in used))
    return HypRule(head, body, types)


def generalise(bottoms, bias: ModeBias) -> list:
    """Lift every bottom rule and deduplicate on the stable-named form."""
    seen: dict = {}
    for b in bottoms:
        h = lift_bottom(b, bias)
        if h not in seen:
            seen[h] = b.origin
    return sorted(seen, key=lambda h: h.sort_key())


# ---------------------------------------------------------------------------
# Coverage signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageSignature:
    """Which (possibility, target atom) pairs a rule fires for.  Possibility
    identity is the interned answer-set id, shared across examples; the
    per-(example, possibility, sign) view follows by mapping targets through
    each example's inclusion and exclusion sets."""

    fired: frozenset  # of (as_id, atom)

    def per_example(self, groups_by_example, cache: AbductionCache) -> dict:
        out = {}
        fired = self.fired
        for ex_id, pg in groups_by_example.items():
            for _z, ps in pg.groups:
                for p in ps:
                    as_id = cache.interned[p.answer_set]
                    atoms = {a for i, a in fired if i == as_id}
                    out[(ex_id, p.id)] = atoms
        return out


# ---------------------------------------------------------------------------
# The space builder
# ---------------------------------------------------------------------------

class SpaceBuilder:
    """Shared-structure engine for the synthesis stage.

    Possibility answer sets overlap heavily (they share the background
    closure), so lifting and join indexes are layered: the common atom core
    is processed once, per-possibility deltas stay small.  Subrule
    candidates are memoized per (answer set, target head) and rule
    consequences per (rule, answer set).
    """

    def __init__(self, task: NeuralTask, groups_by_example: dict,
                 cache: AbductionCache, max_body: Optional[int] = None):
        self.task = task
        self.bias = task.mode_bias
        self.groups = groups_by_example
        self.cache = cache
        self.max_body = task.max_body if max_body is None else max_body
        self.universe = frozenset(task.label_space) | frozenset(
            a for e in task.examples for a in (e.inclusions | e.exclusions))
        self._lifted: dict = {}       # as_id -> (body tuple, var_types)
        self._by_pred: dict = {}      # as_id -> layered join index
        self._cands: dict = {}        # (as_id, head, decl idx) -> tuple of HypRule
        self._derived: dict = {}      # (hyp, as_id) -> frozenset (universe cut)
        self._profiles: dict = {}     # (atom, neg) -> capture/release profile
        self.used_as_ids = sorted({
            cache.interned[p.answer_set]
            for pg in groups_by_example.values() for p in pg.possibilities()})
        self.base_true = {i: frozenset(cache.answer_sets[i]) & self.universe
                          for i in self.used_as_ids}
        if self.used_as_ids:
            common = set(cache.answer_sets[self.used_as_ids[0]])
            for i in self.used_as_ids[1:]:
                common &= cache.answer_sets[i]
            self.common = frozenset(common)
        else:
            self.common = frozenset()
        from .bias import InterpIndex
        self._common_index = InterpIndex(self.common)
        self._common_lift = None

    # -- lifting ------------------------------------------------------------

    def _common_lifted(self):
        """Lift of the shared atom core plus the negated-literal universe of
        the whole task; computed once."""
        if self._common_lift is None:
            body_pos, body_neg = _ground_body(self.common, self.bias)
            body, var_types = lift_body(body_pos, body_neg, self.bias)
            self._common_lift = (body, var_types)
        return self._common_lift

    def lifted_body(self, as_id: int):
        hit = self._lifted.get(as_id)
        if hit is not None:
            return hit
        answer_set = self.cache.answer_sets[as_id]
        common_body, common_types = self._common_lifted()
        delta = answer_set - self.common
        lits = dict.fromkeys(common_body)
        var_types = dict(common_types)
        for a in delta:
            for d in self.bias.bodies:
                if not d.negated and ground_compatible(a, False, d, self.bias):
                    lits[(_orbit_sort(lift_atom(a, d, var_types), d), False)] = None
        # negated literals: the common pass assumed absence from the core;
        # delta atoms may cancel some of them
        for a in delta:
            for d in self.bias.bodies:
                if d.negated and ground_compatible(a, True, d, self.bias):
                    lits.pop((_orbit_sort(lift_atom(a, d, var_types), d), True), None)
        body = self._anchored(tuple(lits), var_types)
        self._lifted[as_id] = (body, var_types)
        return body, var_types

    def _profile(self, atom, neg, var_types):
        key = (atom, neg)
        hit = self._profiles.get(key)
        if hit is None:
            from .bias import _literal_cr_profile
            hit = (*_literal_cr_profile(atom, neg, self.bias, var_types),
                   atom.key())
            self._profiles[key] = hit
        return hit

    def _anchored(self, body, var_types):
        """Drop literals whose captured variables can never be released by
        any other kept literal or any head declaration (relevance fixpoint);
        order survivors with release-only literals first.  Only literals
        with a unique declaration are dropped: multi-decl capture sets are
        optimistic unions, too coarse to prune on."""
        head_pool = set()
        for d in self.bias.heads:
            for i in d.release_slots():
                slot = d.slots[i]
                if slot.kind == "var":
                    head_pool |= {stable_var(slot.type, c).name
                                  for c in self.bias.domain(slot.type)}
        profiles = [self._profile(a, n, var_types) for a, n in body]
        keep = set(range(len(body)))
        changed = True
        while changed:
            changed = False
            pool = set(head_pool)
            for i in keep:
                pool |= profiles[i][0]
            for i in sorted(keep):
                if profiles[i][2] is not None and not profiles[i][1] <= pool:
                    keep.remove(i)
                    changed = True
        kept = sorted(keep, key=lambda i: (len(profiles[i][1]) > 0,
                                           len(profiles[i][1]),
                                           profiles[i][3], body[i][1]))
        return tuple(body[i] for i in kept)

    def by_pred(self, as_id: int):
        idx = self._by_pred.get(as_id)
        if idx is None:
            from .bias import InterpIndex
            delta = self.cache.answer_sets[as_id] - self.common
            idx = InterpIndex(delta, base=self._common_index)
            self._by_pred[as_id] = idx
        return idx

    # -- rule consequences and signatures ------------------------------------

    def derived(self, hyp: HypRule, as_id: int) -> frozenset:
        key = (hyp, as_id)
        hit = self._derived.get(key)
        if hit is None:
            full = rule_consequences(hyp, self.cache.answer_sets[as_id],
                                     self.bias, self.by_pred(as_id))
            hit = frozenset(full & self.universe)
            self._derived[key] = hit
        return hit

    def signature(self, hyp: HypRule) -> CoverageSignature:
        fired = []
        for as_id in self.used_as_ids:
            for a in self.derived(hyp, as_id):
                fired.append((as_id, a))
        return CoverageSignature(frozenset(fired))

    def violates_everywhere(self, hyp: HypRule) -> bool:
        """Some example has every possibility deriving one of its excluded
        atoms through this rule."""
        for e in self.task.examples:
            pg = self.groups[e.id]
            fatal = True
            for p in pg.possibilities():
                as_id = self.cache.interned[p.answer_set]
                if not (self.derived(hyp, as_id) & e.exclusions):
                    fatal = False
                    break
            if fatal and pg.groups:
                return True
        return False

    # -- candidates -----------------------------------------------------------

    def head_lift(self, target: Atom, decl: ModeDecl):
        var_types: dict = {}
        head = _orbit_sort(lift_atom(target, decl, var_types), decl)
        return head, var_types

    def candidates(self, as_id: int, target: Atom, decl: ModeDecl):
        """Canonicalized valid subrules of the maximal rule for (possibility,
        target, head declaration), capped at max_body body literals."""
        decl_idx = self.bias.heads.index(decl)
        key = (as_id, target, decl_idx)
        hit = self._cands.get(key)
        if hit is not None:
            return hit
        body, var_types = self.lifted_body(as_id)
        head, head_types = self.head_lift(target, decl)
        types = dict(var_types)
        types.update(head_types)
        seen = {}
        for sub in iter_subrules(head, list(body), self.bias, types,
                                 max_body=self.max_body,
                                 profile_fn=self._profile):
            canon = canonical_hyp(sub.head, list(sub.body), self.bias, sub.types())
            if canon not in seen:
                seen[canon] = None
        out = tuple(sorted(seen, key=lambda h: h.sort_key()))
        self._cands[key] = out
        return out

    def neuropt_entry(self, as_id: int, target: Atom, decl: ModeDecl):
        """Optimisations of the maximal rule for one (possibility, target,
        declaration): minimum length per distinct coverage signature, minus
        the rules that violate every possibility of some example."""
        cands = self.candidates(as_id, target, decl)
        by_sig: dict = {}
        for c in cands:
            by_sig.setdefault(self.signature(c), []).append(c)
        out = []
        for sig, group in by_sig.items():
            min_len = min(c.length for c in group)
            survivors = [c for c in group if c.length == min_len]
            if survivors and not self.violates_everywhere(survivors[0]):
                out.extend(survivors)
        return sorted(out, key=lambda h: h.sort_key())


def neuropt(g_rule: HypRule, builder: SpaceBuilder,
            max_body: Optional[int] = None) -> list:
    """Optimisations of an explicit generalised rule (materialized path):
    valid subrules, canonicalized, minimum length per signature, fatal rules
    pruned."""
    cap = builder.max_body if max_body is None else max_body
    seen = {}
    for sub in iter_subrules(g_rule.head, list(g_rule.body), builder.bias,
                             g_rule.types(), max_body=cap):
        canon = canonical_hyp(sub.head, list(sub.body), builder.bias, sub.types())
        seen[canon] = None
    by_sig: dict = {}
    for c in seen:
        by_sig.setdefault(builder.signature(c), []).append(c)
    out = []
    for sig, group in by_sig.items():
        min_len = min(c.length for c in group)
        survivors = [c for c in group if c.length == min_len]
        if survivors and not builder.violates_everywhere(survivors[0]):
            out.extend(survivors)
    return sorted(out, key=lambda h: h.sort_key())


# ---------------------------------------------------------------------------
# The opt-sufficient space
# ---------------------------------------------------------------------------

@dataclass
class OptSufficientSpace:
    rules: tuple                   # HypRule, ids are positions
    signatures: dict               # id -> CoverageSignature
    origins: dict                  # id -> origin tuple
    universe: frozenset
    derived: dict                  # (id, as_id) -> frozenset
    base_true: dict                # as_id -> frozenset
    example_possibilities: dict    # example id -> tuple of (z, z_id, p_id, as_id)
    max_body: int
    g_size: int = 0

    def __len__(self):
        return len(self.rules)

    def rule_id(self, hyp: HypRule) -> int:
        for i, r in enumerate(self.rules):
            if r == hyp:
                return i
        raise KeyError(hyp.text())

    def texts(self) -> list:
        return [r.text() for r in self.rules]


def build_opt_space(task: NeuralTask, groups_by_example: dict,
                    cache: AbductionCache, g_rules=None,
                    max_body: Optional[int] = None,
                    require_nonempty: bool = True) -> OptSufficientSpace:
    """Union of the optimisations over the generalised set, deduplicated,
    ids assigned in canonical order, signatures cached.

    When `g_rules` is given the materialized path is used (tests, small
    tasks); otherwise generalised rules stay implicit per (possibility,
    target, head declaration), which is equivalent and far lighter.
    """
    builder = SpaceBuilder(task, groups_by_example, cache, max_body)
    pool: dict = {}
    g_count = 0
    if g_rules is not None:
        g_count = len(g_rules)
        for g in g_rules:
            for cand in neuropt(g, builder):
                pool.setdefault(cand, ("g-rule", g.head.key(), None, "+"))
    else:
        g_seen = set()
        for e in task.examples:
            pg = groups_by_example[e.id]
            for p in pg.possibilities():
                as_id = cache.interned[p.answer_set]
                for a in sorted(e.inclusions, key=lambda x: x.key()):
                    if a in p.answer_set:
                        continue
                    decls = [d for d in task.mode_bias.heads
                             if ground_compatible(a, False, d, task.mode_bias)]
                    if not decls:
                        raise TaskValidationError(
                            f"example {e.id}: inclusion atom {a!r} is not compatible "
                            f"with any mode head declaration (unlearnable)")
                    for d in decls:
                        gkey = (as_id, a, task.mode_bias.heads.index(d))
                        if gkey in g_seen:
                            continue
                        g_seen.add(gkey)
                        origin = (e.id, p.id, repr(a), "+")
                        for cand in builder.neuropt_entry(as_id, a, d):
                            pool.setdefault(cand, origin)
        g_count = len(g_seen)

    if not pool and require_nonempty:
        raise EmptySpaceError("optimisation produced an empty rule space; "
                              "the task has no learnable rules")

    rules = tuple(sorted(pool, key=lambda h: h.sort_key()))
    signatures, derived, origins = {}, {}, {}
    for i, r in enumerate(rules):
        signatures[i] = builder.signature(r)
        origins[i] = pool[r]
        for as_id in builder.used_as_ids:
            derived[(i, as_id)] = builder.derived(r, as_id)
        assert not builder.violates_everywhere(r), \
            f"fatal rule survived optimisation: {r.text()}"

    example_possibilities = {}
    for e in task.examples:
        pg = groups_by_example[e.id]
        rows = []
        for z_id, (z, ps) in enumerate(pg.groups):
            for p in ps:
                rows.append((z, z_id, p.id, cache.interned[p.answer_set]))
        example_possibilities[e.id] = tuple(rows)

    return OptSufficientSpace(
        rules=rules,
        signatures=signatures,
        origins=origins,
        universe=builder.universe,
        derived=derived,
        base_true=builder.base_true,
        example_possibilities=example_possibilities,
        max_body=builder.max_body,
        g_size=g_count,
    )
