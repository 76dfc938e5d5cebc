"""Mode bias: declarations, rule compatibility, and the subrule lattice.

A mode bias fixes which rules are admissible.  Two pruning constraints cut
the lattice down: argument symmetry (rules differing only by a declared
argument swap collapse to one canonical representative) and capture/release
polarity (every captured variable must be released exactly once somewhere
else in the rule).
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .asp import Atom, Rule, Var, term_key
from .errors import ConfigError, TaskValidationError

CAPTURE = "capture"
RELEASE = "release"
NONE = "none"

DEFAULT_MAX_BODY = 4


@dataclass(frozen=True)
class Slot:
    kind: str          # "var" | "const"
    type: str
    polarity: str = NONE


@dataclass(frozen=True)
class ModeDecl:
    predicate: str
    slots: tuple
    negated: bool = False
    symmetric_pairs: frozenset = frozenset()  # 0-based slot index pairs

    @property
    def arity(self) -> int:
        return len(self.slots)

    def release_slots(self):
        return [i for i, s in enumerate(self.slots) if s.polarity == RELEASE]

    def capture_slots(self):
        return [i for i, s in enumerate(self.slots) if s.polarity == CAPTURE]

    def orbits(self):
        """Connected components of the symmetric-pair graph, size >= 2."""
        parent = list(range(self.arity))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in self.symmetric_pairs:
            parent[find(i)] = find(j)
        groups: dict = {}
        for i in range(self.arity):
            groups.setdefault(find(i), []).append(i)
        return [sorted(g) for g in groups.values() if len(g) > 1]

    def __repr__(self):
        parts = []
        for s in self.slots:
            mark = {CAPTURE: "-", RELEASE: "+", NONE: ""}[s.polarity]
            parts.append(f"{s.kind}({s.type}){mark}")
        naf = "not " if self.negated else ""
        sym = ""
        if self.symmetric_pairs:
            pairs = sorted(self.symmetric_pairs)
            sym = " [" + ", ".join(f"symmetric({i+1},{j+1})" for i, j in pairs) + "]"
        return f"{naf}{self.predicate}({', '.join(parts)}){sym}"


_DECL_RE = re.compile(
    r"^\s*(?:mode[hb]\s+)?(not\s+)?([a-z][A-Za-z0-9_]*)\s*\((.*?)\)\s*"
    r"(?:\[(.*?)\])?\s*\.?\s*$", re.S)
_SLOT_RE = re.compile(r"^(var|const)\s*\(\s*([a-z][A-Za-z0-9_]*)\s*\)\s*([+-]?)$")
_SYM_RE = re.compile(r"symmetric\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_mode_decl(text: str) -> ModeDecl:
    m = _DECL_RE.match(text)
    if not m:
        raise ConfigError(f"malformed mode declaration: {text!r}")
    negated, pred, slots_text, annot = m.groups()
    slots = []
    depth = 0
    part = ""
    parts = []
    for ch in slots_text:
        if ch == "(" :
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(part)
            part = ""
        else:
            part += ch
    if part.strip():
        parts.append(part)
    for p in parts:
        sm = _SLOT_RE.match(p.strip())
        if not sm:
            raise ConfigError(f"malformed slot {p.strip()!r} in {text!r}")
        kind, typ, mark = sm.groups()
        polarity = {"+": RELEASE, "-": CAPTURE, "": NONE}[mark]
        slots.append(Slot(kind, typ, polarity))
    pairs = set()
    if annot:
        for sm in _SYM_RE.finditer(annot):
            i, j = int(sm.group(1)) - 1, int(sm.group(2)) - 1
            if not (0 <= i < len(slots) and 0 <= j < len(slots)):
                raise ConfigError(f"symmetric pair out of range in {text!r}")
            pairs.add((min(i, j), max(i, j)))
    return ModeDecl(pred, tuple(slots), bool(negated), frozenset(pairs))


@dataclass(frozen=True)
class ModeBias:
    heads: tuple
    bodies: tuple
    type_domains: dict = field(compare=False, default_factory=dict)

    def __post_init__(self):
        for d in self.heads + self.bodies:
            for i, j in d.symmetric_pairs:
                a, b = d.slots[i], d.slots[j]
                if (a.type, a.polarity) != (b.type, b.polarity):
                    raise TaskValidationError(
                        f"symmetric slots {i+1},{j+1} of {d!r} differ in type or polarity")
            for s in d.slots:
                if not self.type_domains.get(s.type):
                    raise TaskValidationError(
                        f"empty or missing domain for type {s.type!r} used by {d!r}")

    def domain(self, typ: str) -> tuple:
        return self.type_domains[typ]


def make_bias(modeh, modeb, type_domains) -> ModeBias:
    domains = {t: tuple(vs) for t, vs in type_domains.items()}
    return ModeBias(tuple(parse_mode_decl(s) for s in modeh),
                    tuple(parse_mode_decl(s) for s in modeb),
                    domains)


# ---------------------------------------------------------------------------
# Hypothesis rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypRule:
    """A candidate rule: head compatible with a head declaration, every body
    literal compatible with a body declaration.  `body` is kept in canonical
    order; `var_types` is a sorted tuple of (name, type)."""

    head: Atom
    body: tuple = ()          # of (Atom, negated: bool)
    var_types: tuple = ()
    id: Optional[int] = field(default=None, compare=False)

    @property
    def length(self) -> int:
        return 1 + len(self.body)

    @property
    def body_pos(self):
        return frozenset(a for a, n in self.body if not n)

    @property
    def body_neg(self):
        return frozenset(a for a, n in self.body if n)

    def types(self) -> dict:
        return dict(self.var_types)

    def to_rule(self) -> Rule:
        return Rule(self.head, self.body_pos, self.body_neg)

    def text(self) -> str:
        if not self.body:
            return f"{self.head!r}."
        lits = ", ".join(("not " if n else "") + repr(a) for a, n in self.body)
        return f"{self.head!r} :- {lits}."

    def __repr__(self):
        return self.text()

    def sort_key(self):
        return (self.length, self.text())


def literal_compatible(atom: Atom, negated: bool, decl: ModeDecl, bias: ModeBias,
                       var_types: Optional[dict] = None) -> bool:
    """Lifted compatibility: var slots hold variables of the slot's type,
    const slots hold constants from the type's domain."""
    if atom.predicate != decl.predicate or atom.arity != decl.arity:
        return False
    if negated != decl.negated:
        return False
    for arg, slot in zip(atom.args, decl.slots):
        if slot.kind == "var":
            if not isinstance(arg, Var):
                return False
            if var_types is not None and var_types.get(arg.name, slot.type) != slot.type:
                return False
        else:
            if isinstance(arg, Var) or arg not in bias.domain(slot.type):
                return False
    return True


def compatible(atom: Atom, decl: ModeDecl, bias: ModeBias,
               negated: bool = False, var_types: Optional[dict] = None) -> bool:
    return literal_compatible(atom, negated, decl, bias, var_types)


def ground_compatible(atom: Atom, negated: bool, decl: ModeDecl, bias: ModeBias) -> bool:
    """Ground compatibility used when harvesting body literals: var slots
    hold constants inside the slot type's domain."""
    if atom.predicate != decl.predicate or atom.arity != decl.arity:
        return False
    if negated != decl.negated:
        return False
    for arg, slot in zip(atom.args, decl.slots):
        if isinstance(arg, Var) or arg not in bias.domain(slot.type):
            return False
    return True


def body_decls_for(atom: Atom, negated: bool, bias: ModeBias,
                   var_types: Optional[dict] = None) -> list:
    return [d for d in bias.bodies
            if literal_compatible(atom, negated, d, bias, var_types)]


def head_decls_for(atom: Atom, bias: ModeBias,
                   var_types: Optional[dict] = None) -> list:
    return [d for d in bias.heads
            if literal_compatible(atom, False, d, bias, var_types)]


def infer_var_types(head: Atom, body, bias: ModeBias) -> dict:
    """Assign one type per variable from some consistent declaration
    assignment; raises if no assignment types every variable consistently."""
    lits = [(head, False, head_decls_for(head, bias))]
    for atom, neg in body:
        lits.append((atom, neg, body_decls_for(atom, neg, bias)))
    for combo in itertools.product(*[ds for _, _, ds in lits]):
        types: dict = {}
        ok = True
        for (atom, _neg, _ds), decl in zip(lits, combo):
            for arg, slot in zip(atom.args, decl.slots):
                if isinstance(arg, Var) and slot.kind == "var":
                    prev = types.setdefault(arg.name, slot.type)
                    if prev != slot.type:
                        ok = False
                        break
            if not ok:
                break
        if ok:
            return types
    raise TaskValidationError(
        f"no consistent typing for rule {head!r} :- {body!r} under the mode bias")


# ---------------------------------------------------------------------------
# Symmetry canonicalization and alpha-invariant canonical form
# ---------------------------------------------------------------------------

def _orbit_sort_args(args: tuple, orbits, key) -> tuple:
    out = list(args)
    for orbit in orbits:
        vals = sorted((out[i] for i in orbit), key=key)
        for i, v in zip(orbit, vals):
            out[i] = v
    return tuple(out)


def _decl_for(atom: Atom, negated: bool, bias: ModeBias, var_types=None) -> Optional[ModeDecl]:
    if negated:
        pool = list(bias.bodies)
    else:
        pool = list(bias.heads) + list(bias.bodies)
    for d in pool:
        if literal_compatible(atom, negated, d, bias, var_types):
            return d
    for d in pool:  # ground instantiations (bottom rules)
        if ground_compatible(atom, negated, d, bias):
            return d
    return None


def _local_term_key(t):
    return term_key(t)


def canonicalize_symmetric(rule: Rule, bias: ModeBias) -> Rule:
    """Sort the arguments of each symmetric orbit by canonical term order.
    Idempotent, and constant on each symmetry equivalence class for rules
    whose variable identities are fixed (ground atoms or stably named
    variables)."""

    def fix(atom: Atom, negated: bool) -> Atom:
        decl = _decl_for(atom, negated, bias)
        if decl is None or not decl.symmetric_pairs:
            return atom
        return Atom(atom.predicate,
                    _orbit_sort_args(atom.args, decl.orbits(), _local_term_key))

    head = fix(rule.head, False) if isinstance(rule.head, Atom) else rule.head
    return Rule(head,
                frozenset(fix(a, False) for a in rule.body_pos),
                frozenset(fix(a, True) for a in rule.body_neg))


def _literal_variants(atom: Atom, negated: bool, bias: ModeBias, var_types):
    """All orbit permutations of a literal (symmetry makes them equivalent)."""
    decl = _decl_for(atom, negated, bias, var_types)
    if decl is None or not decl.symmetric_pairs:
        return [atom]
    orbits = decl.orbits()
    variants = set()
    pools = [list(itertools.permutations(o)) for o in orbits]
    for assignment in itertools.product(*pools):
        args = list(atom.args)
        for orbit, perm in zip(orbits, assignment):
            vals = [atom.args[i] for i in orbit]
            for slot, src in zip(orbit, perm):
                args[slot] = atom.args[src]
        variants.add(tuple(args))
    return [Atom(atom.predicate, v) for v in sorted(variants, key=lambda a: tuple(map(term_key, a)))]


def _arg_marker(arg, naming, local_fresh, var_types):
    if isinstance(arg, Var):
        if arg.name in naming:
            return (0, naming[arg.name], "")
        if arg.name not in local_fresh:
            local_fresh[arg.name] = len(local_fresh)
        return (2, local_fresh[arg.name], var_types.get(arg.name, ""))
    return (1, 0, str(term_key(arg)))


def _literal_key(atom, negated, naming, var_types):
    local: dict = {}
    return ((atom.predicate, atom.arity, negated)
            + tuple(_arg_marker(a, naming, local, var_types) for a in atom.args))


def canonical_hyp(head: Atom, body, bias: ModeBias,
                  var_types: Optional[dict] = None) -> HypRule:
    """Alpha-invariant canonical form: the lexicographically least serialized
    rule over variable renamings and symmetric orbit permutations.  Greedy
    best-first construction with branching only on genuine ties."""
    if var_types is None:
        var_types = infer_var_types(head, body, bias)

    body = list(body)
    best: list = [None, None]  # key sequence, (head variant, literals, naming)

    head_keys = []
    for hv in _literal_variants(head, False, bias, var_types):
        head_keys.append((_literal_key(hv, False, {}, var_types), hv))
    min_hk = min(hk for hk, _ in head_keys)

    def extend_naming(naming, atom):
        new = dict(naming)
        for a in atom.args:
            if isinstance(a, Var) and a.name not in new:
                new[a.name] = len(new)
        return new

    def search(hv, naming, remaining, seq, chosen):
        if not remaining:
            key = tuple(seq)
            if best[0] is None or key < best[0]:
                best[0] = key
                best[1] = (hv, list(chosen), dict(naming))
            return
        options = {}
        for idx, (atom, neg) in enumerate(remaining):
            for v in _literal_variants(atom, neg, bias, var_types):
                options[(_literal_key(v, neg, naming, var_types), idx, v, neg)] = None
        min_key = min(k for k, _i, _v, _n in options)
        if best[0] is not None:
            prefix = tuple(seq) + (min_key,)
            if prefix > best[0][:len(prefix)]:
                return
        for key, idx, v, neg in options:
            if key != min_key:
                continue
            rest = remaining[:idx] + remaining[idx + 1:]
            search(hv, extend_naming(naming, v), rest, seq + [key],
                   chosen + [(v, neg)])

    for hk, hv in head_keys:
        if hk != min_hk:
            continue
        search(hv, extend_naming({}, hv), body, [hk], [])

    hv, chosen, naming = best[1]
    rename = {Var(old): Var(f"V{i+1}") for old, i in naming.items()}
    new_head = hv.substitute(rename)
    new_body = tuple((a.substitute(rename), n) for a, n in chosen)
    new_types = tuple(sorted((f"V{naming[v]+1}", t) for v, t in var_types.items()
                             if v in naming))
    return HypRule(new_head, new_body, new_types)


def hyp_from_rule(rule: Rule, bias: ModeBias) -> HypRule:
    body = [(a, False) for a in sorted(rule.body_pos, key=lambda a: a.key())]
    body += [(a, True) for a in sorted(rule.body_neg, key=lambda a: a.key())]
    return canonical_hyp(rule.head, body, bias)


def parse_hyp(text: str, bias: ModeBias) -> HypRule:
    from .asp import parse_program
    prog = parse_program(text, check_recursion=False)
    (rule,) = prog.rules
    return hyp_from_rule(rule, bias)


# ---------------------------------------------------------------------------
# Capture / release validation
# ---------------------------------------------------------------------------

def _slot_vars(atom: Atom, decl: ModeDecl, polarity: str) -> list:
    out = []
    for arg, slot in zip(atom.args, decl.slots):
        if slot.polarity == polarity and isinstance(arg, Var):
            out.append(arg.name)
    return out


def _cr_check(head, head_decl, body, body_decls) -> bool:
    head_release = set(_slot_vars(head, head_decl, RELEASE))
    body_release = [set(_slot_vars(a, d, RELEASE)) for (a, _n), d in zip(body, body_decls)]
    all_body_release = set().union(*body_release) if body_release else set()
    # (1) body captures released by another body literal or the head
    for i, ((atom, _neg), decl) in enumerate(zip(body, body_decls)):
        others = set().union(*(body_release[: i] + body_release[i + 1:])) \
            if len(body_release) > 1 else set()
        for v in _slot_vars(atom, decl, CAPTURE):
            if v not in others and v not in head_release:
                return False
    # (2) head captures released by some body literal
    for v in _slot_vars(head, head_decl, CAPTURE):
        if v not in all_body_release:
            return False
    # (3) release occurrences are globally unique
    seen: set = set()
    for atom, decl in [(head, head_decl)] + [(a, d) for (a, _n), d in zip(body, body_decls)]:
        for v in _slot_vars(atom, decl, RELEASE):
            if v in seen:
                return False
            seen.add(v)
    return True


def capture_release_ok(hyp: HypRule, bias: ModeBias) -> bool:
    """True when some declaration assignment satisfies all three polarity
    conditions.  A literal compatible with several declarations is checked
    against each (permissive reading)."""
    var_types = hyp.types()
    head_ds = head_decls_for(hyp.head, bias, var_types)
    if not head_ds:
        return False
    body_ds = []
    for atom, neg in hyp.body:
        ds = body_decls_for(atom, neg, bias, var_types)
        if not ds:
            return False
        body_ds.append(ds)
    for hd in head_ds:
        for combo in itertools.product(*body_ds):
            if _cr_check(hyp.head, hd, list(hyp.body), list(combo)):
                return True
    return False


def is_safe(hyp: HypRule) -> bool:
    """Every variable is bound by a positive body literal or carries a type
    (typed variables ground over their domain)."""
    typed = {v for v, _t in hyp.var_types}
    pos_vars = set()
    for a, n in hyp.body:
        if not n:
            pos_vars |= {v.name for v in a.variables()}
    allvars = {v.name for v in hyp.head.variables()}
    for a, _n in hyp.body:
        allvars |= {v.name for v in a.variables()}
    return allvars <= (typed | pos_vars)


def valid_hyp(hyp: HypRule, bias: ModeBias) -> bool:
    return is_safe(hyp) and capture_release_ok(hyp, bias)


# ---------------------------------------------------------------------------
# Subrule lattice
# ---------------------------------------------------------------------------

def _literal_cr_profile(atom, neg, bias, var_types):
    """Optimistic (release, capture) variable sets across compatible decls."""
    rel, cap = set(), set()
    exact = None
    decls = body_decls_for(atom, neg, bias, var_types)
    for d in decls:
        rel |= set(_slot_vars(atom, d, RELEASE))
        cap |= set(_slot_vars(atom, d, CAPTURE))
    if len(decls) == 1:
        exact = decls[0]
    return rel, cap, exact


def iter_subrules(head: Atom, body, bias: ModeBias, var_types: dict,
                  max_body: Optional[int] = None, profile_fn=None):
    """Yield all (head, body subset) pairs of valid subrules, using
    release-uniqueness and capture-coverability pruning.  Bodies come out in
    index order; validity (safety + capture/release) is checked exactly on
    emission."""
    body = list(body)
    n = len(body)
    if max_body is None:
        max_body = n
    if profile_fn is None:
        profiles = [_literal_cr_profile(a, ng, bias, var_types) for a, ng in body]
    else:
        profiles = [profile_fn(a, ng, var_types)[:3] for a, ng in body]
    head_ds = head_decls_for(head, bias, var_types)
    if not head_ds:
        return
    # pruning is exact only when every literal resolves to a single decl;
    # otherwise fall back to plain enumeration with the final validity check
    exact = all(p[2] is not None for p in profiles) and len(head_ds) == 1
    head_release, head_capture = set(), set()
    for d in head_ds:
        head_release |= set(_slot_vars(head, d, RELEASE))
        head_capture |= set(_slot_vars(head, d, CAPTURE))
    releasers: dict = {}
    for i, (rel, _cap, _d) in enumerate(profiles):
        for v in rel:
            releasers.setdefault(v, []).append(i)
    max_rel = max((len(p[0]) for p in profiles), default=0)

    def emit(chosen):
        hyp = HypRule(head, tuple(body[i] for i in chosen),
                      tuple(sorted(var_types.items())))
        if valid_hyp(hyp, bias):
            yield hyp

    def coverable(needed, start, budget):
        if budget <= 0 or len(needed) > budget * max_rel:
            return False
        for v in needed:
            if not any(i >= start for i in releasers.get(v, ())):
                return False
        return True

    def rec(start, chosen, released, captured):
        # head captures need a body release; body captures may also lean on
        # a head release slot
        needed = (captured - released - head_release) | (head_capture - released)
        if not needed or not exact:
            yield from emit(chosen)
        if len(chosen) == max_body:
            return
        if exact and needed and not coverable(needed, start, max_body - len(chosen)):
            return
        for i in range(start, n):
            rel, cap, _d = profiles[i]
            if exact and rel & (released | head_release):
                continue  # duplicate release; downstream supersets stay invalid
            yield from rec(i + 1, chosen + [i], released | rel, captured | cap)

    yield from rec(0, [], set(), set())


def subrules(hyp: HypRule, min_len: int = 1, bias: Optional[ModeBias] = None,
             max_body: Optional[int] = None) -> list:
    """All valid subrules (head kept, body subset) of length >= min_len,
    canonicalized and sorted by (length, canonical form)."""
    assert bias is not None
    var_types = hyp.types()
    seen = {}
    for sub in iter_subrules(hyp.head, list(hyp.body), bias, var_types, max_body):
        if sub.length < min_len:
            continue
        canon = canonical_hyp(sub.head, list(sub.body), bias, sub.types())
        seen[canon] = None
    return sorted(seen, key=lambda h: h.sort_key())


# ---------------------------------------------------------------------------
# Full hypothesis-space enumeration (small biases only)
# ---------------------------------------------------------------------------

def enumerate_space(bias: ModeBias, max_body: int = DEFAULT_MAX_BODY,
                    max_rules: int = 100000) -> list:
    """Every valid rule up to `max_body` body literals: heads from head
    declarations, bodies grown from body declarations over a growing
    variable pool.  Intended for desk-scale biases; guarded by `max_rules`."""
    heads = []
    for d in bias.heads:
        pools = []
        var_types: dict = {}
        fresh = 0
        for slot in d.slots:
            if slot.kind == "var":
                fresh += 1
                name = f"H{fresh}"
                var_types[name] = slot.type
                pools.append((Var(name),))
            else:
                pools.append(tuple(bias.domain(slot.type)))
        for combo in itertools.product(*pools):
            heads.append((Atom(d.predicate, combo), dict(var_types)))

    def body_literals(var_types):
        """Candidate literals over existing vars of matching type or one
        fresh var per slot."""
        out = []
        for d in bias.bodies:
            pools = []
            for si, slot in enumerate(d.slots):
                opts = []
                if slot.kind == "var":
                    for v, t in var_types.items():
                        if t == slot.type:
                            opts.append(Var(v))
                    opts.append(("fresh", si, slot.type))
                else:
                    opts.extend(bias.domain(slot.type))
                pools.append(opts)
            for combo in itertools.product(*pools):
                args = []
                new_types = {}
                fresh_i = 0
                for c in combo:
                    if isinstance(c, tuple) and c and c[0] == "fresh":
                        fresh_i += 1
                        name = f"F{fresh_i}"
                        args.append(Var(name))
                        new_types[name] = c[2]
                    else:
                        args.append(c)
                out.append((Atom(d.predicate, tuple(args)), d.negated, new_types))
        return out

    seen: dict = {}
    frontier = []
    for head, vt in heads:
        canon = canonical_hyp(head, [], bias, vt)
        if valid_hyp(canon, bias) and canon not in seen:
            seen[canon] = None
        frontier.append((head, [], vt))
    for _depth in range(max_body):
        next_frontier = []
        visited_partial: set = set()
        for head, body, vt in frontier:
            for atom, neg, new_types in body_literals(vt):
                # rename fresh vars to globally unused names
                rename = {}
                vt2 = dict(vt)
                for name, t in new_types.items():
                    k = len(vt2) + 1
                    new_name = f"X{k}"
                    while new_name in vt2:
                        k += 1
                        new_name = f"X{k}"
                    rename[Var(name)] = Var(new_name)
                    vt2[new_name] = t
                atom2 = atom.substitute(rename)
                if (atom2, neg) in body:
                    continue
                body2 = body + [(atom2, neg)]
                canon = canonical_hyp(head, body2, bias, vt2)
                pk = canon.text()
                if pk in visited_partial:
                    continue
                visited_partial.add(pk)
                if valid_hyp(canon, bias) and canon not in seen:
                    seen[canon] = None
                    if len(seen) > max_rules:
                        raise ConfigError(
                            f"hypothesis space exceeded {max_rules} rules")
                next_frontier.append((head, body2, vt2))
        frontier = next_frontier
    return sorted(seen, key=lambda h: h.sort_key())


# ---------------------------------------------------------------------------
# Forward evaluation of hypothesis rules
# ---------------------------------------------------------------------------

def index_by_pred(interp) -> dict:
    out: dict = {}
    for a in interp:
        out.setdefault((a.predicate, a.arity), []).append(a)
    return out


class InterpIndex:
    """Join index over an interpretation, with an optional shared base
    layer: possibility answer sets differ from each other in a handful of
    atoms, so the heavy base index is built once and deltas stay tiny.
    Atoms are indexed by (pred, arity) and by (pred, arity, first arg)."""

    __slots__ = ("base", "atoms", "by_pred", "by_first")

    def __init__(self, atoms, base: Optional["InterpIndex"] = None):
        self.base = base
        self.atoms = frozenset(atoms)
        self.by_pred: dict = {}
        self.by_first: dict = {}
        for a in self.atoms:
            self.by_pred.setdefault((a.predicate, a.arity), []).append(a)
            if a.args:
                self.by_first.setdefault(
                    (a.predicate, a.arity, a.args[0]), []).append(a)

    def __contains__(self, atom) -> bool:
        return atom in self.atoms or (self.base is not None and atom in self.base)

    def count(self, pred, arity) -> int:
        n = len(self.by_pred.get((pred, arity), ()))
        if self.base is not None:
            n += self.base.count(pred, arity)
        return n

    def candidates(self, pattern: Atom, sub):
        first = pattern.args[0] if pattern.args else None
        if isinstance(first, Var):
            first = sub.get(first, first)
        if first is not None and not isinstance(first, Var):
            key = (pattern.predicate, pattern.arity, first)
            own = self.by_first.get(key, ())
        else:
            own = self.by_pred.get((pattern.predicate, pattern.arity), ())
        if self.base is None:
            return own
        return list(own) + list(self.base.candidates(pattern, sub))


def rule_consequences(hyp: HypRule, interp, bias: ModeBias,
                      by_pred=None) -> frozenset:
    """All ground head instances the rule derives from an interpretation.
    Positive literals join against the interpretation (respecting variable
    types), negated literals require absence, and variables still free after
    the join range over their type domains."""
    if isinstance(by_pred, InterpIndex):
        idx = by_pred
    else:
        idx = InterpIndex(interp)
    types = hyp.types()

    def in_domain(v: Var, value) -> bool:
        t = types.get(v.name)
        return t is None or value in bias.domain(t)

    def match(pat: Atom, fact: Atom, sub):
        new = dict(sub)
        for pa, fa in zip(pat.args, fact.args):
            if isinstance(pa, Var):
                prev = new.get(pa)
                if prev is None:
                    if not in_domain(pa, fa):
                        return None
                    new[pa] = fa
                elif prev != fa:
                    return None
            elif pa != fa:
                return None
        return new

    pos = [a for a, n in hyp.body if not n]
    neg = [a for a, n in hyp.body if n]
    pos.sort(key=lambda a: idx.count(a.predicate, a.arity))
    derived = set()

    def free_vars(atoms, sub):
        out = []
        for a in atoms:
            for v in a.variables():
                if v not in sub and v not in out:
                    out.append(v)
        return sorted(out, key=lambda v: v.name)

    def check_neg(sub) -> bool:
        # callers bind every negated-literal variable first, so each ground
        # rule instance checks plain absence
        return all(a.substitute(sub) not in idx for a in neg)

    def emit(sub):
        gh = hyp.head.substitute(sub)
        free = free_vars([hyp.head], sub)
        if free:
            pools = [bias.domain(types[v.name]) for v in free]
            for combo in itertools.product(*pools):
                derived.add(gh.substitute(dict(zip(free, combo))))
        else:
            derived.add(gh)

    def rec(i, sub):
        if i == len(pos):
            # bind remaining negated-literal variables over their domains
            nfree = free_vars(neg, sub)
            if nfree:
                pools = [bias.domain(types[v.name]) for v in nfree]
                for combo in itertools.product(*pools):
                    sub2 = dict(sub)
                    sub2.update(zip(nfree, combo))
                    if check_neg(sub2):
                        emit(sub2)
            elif check_neg(sub):
                emit(sub)
            return
        pat = pos[i]
        gpat = pat.substitute(sub)
        if gpat.is_ground():
            if gpat in idx:
                rec(i + 1, sub)
            return
        for fact in idx.candidates(pat, sub):
            new = match(pat, fact, sub)
            if new is not None:
                rec(i + 1, new)

    rec(0, {})
    return frozenset(derived)


def hyp_to_asp_rule(hyp: HypRule):
    """Hypothesis rule as plain ASP rules for program insertion; variables
    not bound by a positive body literal are expanded over their domains at
    the caller's grounding step, so they are pre-substituted here."""
    return hyp.to_rule()


def expand_untyped_safe(hyp: HypRule, bias: ModeBias) -> list:
    """ASP rules for the hypothesis with every variable that no positive
    body literal binds expanded over its type domain (join grounding then
    finishes the rest)."""
    pos_vars = set()
    for a, n in hyp.body:
        if not n:
            pos_vars |= {v.name for v in a.variables()}
    allvars = {v.name for v in hyp.head.variables()}
    for a, _n in hyp.body:
        allvars |= {v.name for v in a.variables()}
    types = hyp.types()
    unbound = sorted(allvars - pos_vars)
    rule = hyp.to_rule()
    if not unbound:
        return [rule]
    pools = [bias.domain(types[v]) for v in unbound]
    out = []
    for combo in itertools.product(*pools):
        sub = {Var(v): c for v, c in zip(unbound, combo)}
        out.append(rule.substitute(sub))
    return out


# ---------------------------------------------------------------------------
# Subrule relations
# ---------------------------------------------------------------------------

def is_subrule(sub: HypRule, sup: HypRule) -> bool:
    """Syntactic subrule relation between rules sharing variable identities."""
    return (sub.head == sup.head
            and set(sub.body) <= set(sup.body))


def subsumes_ground(hyp: HypRule, head: Atom, body_pos: frozenset,
                    body_neg: frozenset, bias: ModeBias) -> bool:
    """There is a type-respecting substitution mapping `hyp` into the ground
    rule (head equal, lifted body inside the ground body)."""
    types = hyp.types()

    def candidates(v):
        return bias.domain(types[v.name])

    def match_atom(pat: Atom, fact: Atom, sub):
        if pat.predicate != fact.predicate or pat.arity != fact.arity:
            return None
        new = dict(sub)
        for pa, fa in zip(pat.args, fact.args):
            if isinstance(pa, Var):
                if pa.name in types and fa not in candidates(pa):
                    return None
                prev = new.get(pa)
                if prev is None:
                    new[pa] = fa
                elif prev != fa:
                    return None
            elif pa != fa:
                return None
        return new

    sub0 = match_atom(hyp.head, head, {})
    if sub0 is None:
        return False
    pos = [a for a, n in hyp.body if not n]
    neg = [a for a, n in hyp.body if n]

    def rec(i, sub):
        if i == len(pos):
            # negated literals: every type-respecting grounding must appear
            for a in neg:
                ga = a.substitute(sub)
                free = sorted(ga.variables(), key=lambda v: v.name)
                if free:
                    pools = [candidates(v) for v in free]
                    ok = any(ga.substitute(dict(zip(free, combo))) in body_neg
                             for combo in itertools.product(*pools))
                else:
                    ok = ga in body_neg
                if not ok:
                    return False
            return True
        for fact in body_pos:
            new = match_atom(pos[i], fact, sub)
            if new is not None and rec(i + 1, new):
                return True
        return False

    return rec(0, sub0)
