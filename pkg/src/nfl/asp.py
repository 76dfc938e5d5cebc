"""Core ASP fragment: parsing, grounding and answer-set enumeration.

The engine handles non-recursive programs made of normal rules, hard
constraints, cardinality choice rules and weak constraints.  Negation as
failure is allowed anywhere in bodies.  Because accepted programs are
non-recursive, answer sets are computed by enumerating choice-rule
selections and evaluating the remaining stratified program bottom-up;
every candidate is then verified against the reduct definition, so the
output is exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import (
    CyclicProgramError,
    GroundingLimitError,
    ParseError,
    ReservedPredicateError,
    UncoveredKeyError,
    UnsafeVariableError,
)

DEFAULT_GROUND_CAP = 10**6

# Reserved predicate linking raw-input indices to latent values; always arity 2.
NN = "nn"


# ---------------------------------------------------------------------------
# Terms and atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __repr__(self):
        return self.name


@dataclass(frozen=True)
class Func:
    """Uninterpreted function term; only used inside weak-constraint tuples."""

    name: str
    args: tuple

    def __repr__(self):
        return f"{self.name}({','.join(term_text(a) for a in self.args)})"


Term = Union[int, str, Var, Func]


def term_text(t: Term) -> str:
    if isinstance(t, (Var, Func)):
        return repr(t)
    return str(t)


def term_key(t: Term):
    """Total order over terms: ints, then symbols, then functions, then vars."""
    if isinstance(t, int):
        return (0, t, "")
    if isinstance(t, str):
        return (1, 0, t)
    if isinstance(t, Func):
        return (2, 0, repr(t))
    return (3, 0, t.name)


def is_ground_term(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, Func):
        return all(is_ground_term(a) for a in t.args)
    return True


class Atom:
    """Predicate applied to terms; immutable, with hash and canonical sort
    key cached (atoms are the hottest objects in the engine)."""

    __slots__ = ("predicate", "args", "_hash", "_key")

    def __init__(self, predicate: str, args: tuple = ()):
        object.__setattr__(self, "predicate", predicate)
        object.__setattr__(self, "args", args)
        object.__setattr__(self, "_hash", hash((predicate, args)))
        object.__setattr__(self, "_key", None)

    def __setattr__(self, *a):
        raise AttributeError("Atom is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return (self is other) or (
            isinstance(other, Atom) and self._hash == other._hash
            and self.predicate == other.predicate and self.args == other.args)

    def __repr__(self):
        if not self.args:
            return self.predicate
        return f"{self.predicate}({','.join(term_text(a) for a in self.args)})"

    @property
    def arity(self) -> int:
        return len(self.args)

    def is_ground(self) -> bool:
        return all(is_ground_term(a) for a in self.args)

    def variables(self) -> set:
        return {a for a in self.args if isinstance(a, Var)}

    def key(self):
        k = self._key
        if k is None:
            k = (self.predicate, len(self.args),
                 tuple(term_key(a) for a in self.args))
            object.__setattr__(self, "_key", k)
        return k

    def substitute(self, sub: dict) -> "Atom":
        return Atom(self.predicate, tuple(sub.get(a, a) if isinstance(a, Var) else a
                                          for a in self.args))


def atom_sort_key(a: Atom):
    return a.key()


Interpretation = frozenset  # of ground Atom


def interp_sort_key(interp: Iterable[Atom]):
    return sorted(a.key() for a in interp)


def interp_text(interp: Iterable[Atom]) -> str:
    return "{" + ", ".join(repr(a) for a in sorted(interp, key=atom_sort_key)) + "}"


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Aggregate:
    """Cardinality head `l { h1; ...; hk } u`."""

    lower: int
    upper: Optional[int]  # None means no explicit bound (|elements| once ground)
    elements: tuple  # of Atom

    def bound_upper(self) -> int:
        return len(self.elements) if self.upper is None else self.upper

    def satisfied_by(self, interp: frozenset) -> bool:
        n = len(interp.intersection(self.elements))
        return self.lower <= n <= self.bound_upper()

    def __repr__(self):
        up = "" if self.upper is None else f" {self.upper}"
        return f"{self.lower} {{ {'; '.join(map(repr, self.elements))} }}{up}"


@dataclass(frozen=True)
class Rule:
    head: Union[Atom, Aggregate, None]
    body_pos: frozenset = frozenset()
    body_neg: frozenset = frozenset()

    @property
    def is_constraint(self) -> bool:
        return self.head is None

    @property
    def is_choice(self) -> bool:
        return isinstance(self.head, Aggregate)

    @property
    def is_fact(self) -> bool:
        return isinstance(self.head, Atom) and not self.body_pos and not self.body_neg

    def body_text(self) -> str:
        parts = [repr(a) for a in sorted(self.body_pos, key=atom_sort_key)]
        parts += [f"not {a!r}" for a in sorted(self.body_neg, key=atom_sort_key)]
        return ", ".join(parts)

    def __repr__(self):
        body = self.body_text()
        if self.head is None:
            return f":- {body}."
        if body:
            return f"{self.head!r} :- {body}."
        return f"{self.head!r}."

    def variables(self) -> set:
        vs = set()
        if isinstance(self.head, Atom):
            vs |= self.head.variables()
        elif isinstance(self.head, Aggregate):
            for e in self.head.elements:
                vs |= e.variables()
        for a in self.body_pos | self.body_neg:
            vs |= a.variables()
        return vs

    def substitute(self, sub: dict) -> "Rule":
        if isinstance(self.head, Atom):
            head = self.head.substitute(sub)
        elif isinstance(self.head, Aggregate):
            head = Aggregate(self.head.lower, self.head.upper,
                             tuple(e.substitute(sub) for e in self.head.elements))
        else:
            head = None
        return Rule(head,
                    frozenset(a.substitute(sub) for a in self.body_pos),
                    frozenset(a.substitute(sub) for a in self.body_neg))


def _subst_term(t: Term, sub: dict) -> Term:
    if isinstance(t, Var):
        return sub.get(t, t)
    if isinstance(t, Func):
        return Func(t.name, tuple(_subst_term(a, sub) for a in t.args))
    return t


@dataclass(frozen=True)
class WeakConstraint:
    """`:~ body. [weight@level, t1, ..., tk]`.

    Distinct ground (weight, level, terms) tuples contribute independently
    to the cost at their level.
    """

    body_pos: frozenset = frozenset()
    body_neg: frozenset = frozenset()
    weight: Union[int, Var] = 1
    priority: int = 0
    terms: tuple = ()

    def variables(self) -> set:
        vs = set()
        for a in self.body_pos | self.body_neg:
            vs |= a.variables()
        return vs

    def substitute(self, sub: dict) -> "WeakConstraint":
        w = sub.get(self.weight, self.weight) if isinstance(self.weight, Var) else self.weight
        return WeakConstraint(
            frozenset(a.substitute(sub) for a in self.body_pos),
            frozenset(a.substitute(sub) for a in self.body_neg),
            w, self.priority,
            tuple(_subst_term(t, sub) for t in self.terms))

    def __repr__(self):
        body = Rule(None, self.body_pos, self.body_neg).body_text()
        terms = "".join(f", {term_text(t)}" for t in self.terms)
        return f":~ {body}. [{term_text(self.weight)}@{self.priority}{terms}]"


@dataclass(frozen=True)
class Program:
    rules: tuple = ()    # normal rules and constraints
    choices: tuple = ()  # rules with Aggregate heads
    weaks: tuple = ()

    def __add__(self, other: "Program") -> "Program":
        return Program(self.rules + other.rules,
                       self.choices + other.choices,
                       self.weaks + other.weaks)

    def __len__(self):
        return len(self.rules) + len(self.choices) + len(self.weaks)

    def all_atoms(self) -> list:
        out = []
        for r in self.rules + self.choices:
            if isinstance(r.head, Atom):
                out.append(r.head)
            elif isinstance(r.head, Aggregate):
                out.extend(r.head.elements)
            out.extend(r.body_pos)
            out.extend(r.body_neg)
        for w in self.weaks:
            out.extend(w.body_pos)
            out.extend(w.body_neg)
        return out

    def constants(self) -> set:
        out = set()
        for a in self.all_atoms():
            for t in a.args:
                if isinstance(t, (int, str)):
                    out.add(t)
        return out

    def to_text(self) -> str:
        lines = [repr(r) for r in self.rules]
        lines += [repr(c) for c in self.choices]
        lines += [repr(w) for w in self.weaks]
        return "\n".join(lines) + ("\n" if lines else "")

    def is_ground(self) -> bool:
        return all(not r.variables() for r in self.rules + self.choices) and \
            all(not w.variables() for w in self.weaks)


EMPTY_PROGRAM = Program()


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

_PUNCT = (":~", ":-", "..", ".", ",", ";", "(", ")", "{", "}", "[", "]", "@")


class _Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind
        self.value = value
        self.line = line
        self.col = col

    def __repr__(self):
        return f"{self.kind}:{self.value}"


def _tokenize(text: str) -> list:
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        matched = False
        for p in _PUNCT:
            if text.startswith(p, i):
                toks.append(_Token("punct", p, line, col))
                i += len(p)
                col += len(p)
                matched = True
                break
        if matched:
            continue
        if c == "-" or c.isdigit():
            j = i + 1 if c == "-" else i
            if j >= n or not text[j].isdigit():
                raise ParseError(f"stray '{c}'", line, col)
            while j < n and text[j].isdigit():
                j += 1
            toks.append(_Token("int", int(text[i:j]), line, col))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if word == "not":
                toks.append(_Token("not", word, line, col))
            elif word[0].isupper() or word[0] == "_":
                toks.append(_Token("var", word, line, col))
            else:
                toks.append(_Token("ident", word, line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    return toks


class _Parser:
    def __init__(self, toks):
        self.toks = toks
        self.pos = 0

    def peek(self, kind=None, value=None):
        if self.pos >= len(self.toks):
            return None
        t = self.toks[self.pos]
        if kind is not None and t.kind != kind:
            return None
        if value is not None and t.value != value:
            return None
        return t

    def next(self):
        if self.pos >= len(self.toks):
            last = self.toks[-1] if self.toks else None
            raise ParseError("unexpected end of input",
                             last.line if last else 1, last.col if last else 1)
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind, value=None):
        t = self.next()
        if t.kind != kind or (value is not None and t.value != value):
            want = value if value is not None else kind
            raise ParseError(f"expected {want!r}, found {t.value!r}", t.line, t.col)
        return t

    # grammar ---------------------------------------------------------------

    def term(self, allow_range=False, allow_func=False):
        t = self.next()
        if t.kind == "int":
            lo = t.value
            if allow_range and self.peek("punct", ".."):
                self.next()
                hi = self.expect("int").value
                if hi < lo:
                    raise ParseError(f"empty range {lo}..{hi}", t.line, t.col)
                return ("range", lo, hi)
            return lo
        if t.kind == "var":
            return Var(t.value)
        if t.kind == "ident":
            if allow_func and self.peek("punct", "("):
                self.next()
                args = [self.term(allow_func=True)]
                while self.peek("punct", ","):
                    self.next()
                    args.append(self.term(allow_func=True))
                self.expect("punct", ")")
                return Func(t.value, tuple(args))
            return t.value
        raise ParseError(f"expected a term, found {t.value!r}", t.line, t.col)

    def atom(self, allow_range=False):
        t = self.expect("ident")
        args = ()
        if self.peek("punct", "("):
            self.next()
            parts = [self.term(allow_range=allow_range)]
            while self.peek("punct", ","):
                self.next()
                parts.append(self.term(allow_range=allow_range))
            self.expect("punct", ")")
            args = tuple(parts)
        if t.value == NN and len(args) != 2:
            raise ReservedPredicateError(
                f"reserved predicate '{NN}' requires arity 2, got {len(args)}",
                t.line, t.col)
        return Atom(t.value, args), t

    def literal(self, allow_range=False):
        if self.peek("not"):
            self.next()
            a, _ = self.atom(allow_range=allow_range)
            return a, True
        a, _ = self.atom(allow_range=allow_range)
        return a, False

    def body(self):
        pos, neg = set(), set()
        while True:
            a, negated = self.literal()
            (neg if negated else pos).add(a)
            if self.peek("punct", ","):
                self.next()
                continue
            break
        return frozenset(pos), frozenset(neg)

    def choice_elements(self):
        elems = []
        while True:
            a, _ = self.atom(allow_range=True)
            elems.extend(_expand_ranges(a))
            t = self.peek()
            if t is not None and t.kind == "punct" and t.value in (";", ","):
                self.next()
                continue
            break
        return tuple(elems)

    def statement(self):
        t = self.peek()
        if t.kind == "punct" and t.value == ":-":
            self.next()
            pos, neg = self.body()
            self.expect("punct", ".")
            return [Rule(None, pos, neg)]
        if t.kind == "punct" and t.value == ":~":
            self.next()
            pos, neg = self.body()
            self.expect("punct", ".")
            self.expect("punct", "[")
            wt = self.term(allow_func=True)
            if not isinstance(wt, (int, Var)):
                raise ParseError("weak-constraint weight must be an integer or variable",
                                 t.line, t.col)
            level = 0
            if self.peek("punct", "@"):
                self.next()
                level = self.expect("int").value
            terms = []
            while self.peek("punct", ","):
                self.next()
                terms.append(self.term(allow_func=True))
            self.expect("punct", "]")
            return [WeakConstraint(pos, neg, wt, level, tuple(terms))]
        if (t.kind == "int") or (t.kind == "punct" and t.value == "{"):
            lower = 0
            if t.kind == "int":
                lower = self.next().value
            self.expect("punct", "{")
            elems = self.choice_elements()
            self.expect("punct", "}")
            upper = None
            if self.peek("int"):
                upper = self.next().value
            pos, neg = frozenset(), frozenset()
            if self.peek("punct", ":-"):
                self.next()
                pos, neg = self.body()
            self.expect("punct", ".")
            if upper is not None and lower > upper:
                raise ParseError(f"choice bounds {lower} > {upper}", t.line, t.col)
            return [Rule(Aggregate(lower, upper, elems), pos, neg)]
        # normal rule or fact
        head, tok = self.atom(allow_range=True)
        if self.peek("punct", ":-"):
            if any(isinstance(a, tuple) for a in head.args):
                raise ParseError("range sugar is only allowed in facts and "
                                 "choice elements", tok.line, tok.col)
            self.next()
            pos, neg = self.body()
            self.expect("punct", ".")
            return [Rule(head, pos, neg)]
        self.expect("punct", ".")
        return [Rule(h) for h in _expand_ranges(head)]


def _expand_ranges(a: Atom) -> list:
    """Expand `p(0..2, x)` into p(0,x), p(1,x), p(2,x)."""
    pools = []
    for t in a.args:
        if isinstance(t, tuple) and t and t[0] == "range":
            pools.append(range(t[1], t[2] + 1))
        else:
            pools.append((t,))
    return [Atom(a.predicate, combo) for combo in itertools.product(*pools)]


def parse_program(text: str, check_recursion: bool = True) -> Program:
    """Parse program text into an AST, validating reserved predicates and,
    unless disabled, non-recursiveness of the predicate dependency graph."""
    toks = _tokenize(text)
    parser = _Parser(toks)
    rules, choices, weaks = [], [], []
    while parser.peek() is not None:
        for stmt in parser.statement():
            if isinstance(stmt, WeakConstraint):
                weaks.append(stmt)
            elif stmt.is_choice:
                choices.append(stmt)
            else:
                rules.append(stmt)
    prog = Program(tuple(rules), tuple(choices), tuple(weaks))
    if check_recursion:
        validate_nonrecursive(prog)
    return prog


def parse_atom(text: str) -> Atom:
    toks = _tokenize(text.strip().rstrip("."))
    parser = _Parser(toks)
    a, _ = parser.atom()
    if parser.peek() is not None:
        t = parser.peek()
        raise ParseError(f"trailing input after atom: {t.value!r}", t.line, t.col)
    return a


def parse_atoms(text: str) -> list:
    """Parse a whitespace/period separated list of ground atoms, with range
    sugar expanded (used for label spaces and contexts given as facts)."""
    toks = _tokenize(text)
    parser = _Parser(toks)
    out = []
    while parser.peek() is not None:
        a, _ = parser.atom(allow_range=True)
        out.extend(_expand_ranges(a))
        if parser.peek("punct", "."):
            parser.next()
    return out


# ---------------------------------------------------------------------------
# Dependency analysis
# ---------------------------------------------------------------------------

def _head_preds(r: Rule):
    if isinstance(r.head, Atom):
        return [r.head.predicate]
    if isinstance(r.head, Aggregate):
        return [e.predicate for e in r.head.elements]
    return []


def _body_preds(r) -> set:
    return {a.predicate for a in r.body_pos} | {a.predicate for a in r.body_neg}


def dependency_graph(p: Program) -> dict:
    """Edges head predicate -> body predicate over rules and choices."""
    graph: dict = {}
    for r in p.rules + p.choices:
        bps = _body_preds(r)
        for hp in _head_preds(r):
            graph.setdefault(hp, set()).update(bps)
        for bp in bps:
            graph.setdefault(bp, set())
    return graph


def _find_cycle(graph: dict):
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {v: WHITE for v in graph}
    stack_path: list = []

    def visit(v):
        color[v] = GRAY
        stack_path.append(v)
        for w in sorted(graph[v]):
            if color[w] == GRAY:
                return stack_path[stack_path.index(w):] + [w]
            if color[w] == WHITE:
                cyc = visit(w)
                if cyc:
                    return cyc
        stack_path.pop()
        color[v] = BLACK
        return None

    for v in sorted(graph):
        if color[v] == WHITE:
            cyc = visit(v)
            if cyc:
                return cyc
    return None


def validate_nonrecursive(p: Program) -> None:
    cyc = _find_cycle(dependency_graph(p))
    if cyc:
        raise CyclicProgramError("recursive program; predicate cycle: "
                                 + " -> ".join(cyc))


def predicate_levels(p: Program) -> dict:
    """Topological level per predicate; every body pred sits strictly below
    the head preds that use it (programs are validated acyclic)."""
    graph = dependency_graph(p)
    levels: dict = {}

    def level(v):
        if v in levels:
            return levels[v]
        levels[v] = 0  # temporary; acyclicity already verified
        lv = 1 + max((level(w) for w in graph[v]), default=-1)
        levels[v] = lv
        return lv

    for v in graph:
        level(v)
    return levels


# ---------------------------------------------------------------------------
# Grounding
# ---------------------------------------------------------------------------

def _match_atom(pattern: Atom, fact: Atom, sub: dict):
    if pattern.predicate != fact.predicate or len(pattern.args) != len(fact.args):
        return None
    new = dict(sub)
    for pa, fa in zip(pattern.args, fact.args):
        if isinstance(pa, Var):
            bound = new.get(pa)
            if bound is None:
                new[pa] = fa
            elif bound != fa:
                return None
        elif pa != fa:
            return None
    return new


def _join_substitutions(body_pos, atoms_by_pred, sub0=None):
    """Yield all substitutions grounding `body_pos` against the indexed atom
    sets.  Literals are matched most-constrained-first."""
    lits = sorted(body_pos, key=lambda a: len(atoms_by_pred.get(a.predicate, ())))

    def rec(i, sub):
        if i == len(lits):
            yield sub
            return
        lit = lits[i]
        glit = lit.substitute(sub)
        if glit.is_ground():
            if glit in atoms_by_pred.get(glit.predicate, ()):  # noqa: SIM108
                yield from rec(i + 1, sub)
            return
        for fact in atoms_by_pred.get(lit.predicate, ()):
            new = _match_atom(lit, fact, sub)
            if new is not None:
                yield from rec(i + 1, new)

    yield from rec(0, sub0 or {})


def _check_safety(p: Program) -> None:
    for r in p.rules + p.choices:
        pos_vars = set()
        for a in r.body_pos:
            pos_vars |= a.variables()
        unsafe = r.variables() - pos_vars
        if unsafe:
            v = sorted(unsafe, key=lambda x: x.name)[0]
            raise UnsafeVariableError(
                f"variable {v.name} in {r!r} does not occur in a positive body literal")
    for w in p.weaks:
        pos_vars = set()
        for a in w.body_pos:
            pos_vars |= a.variables()
        vs = w.variables() | ({w.weight} if isinstance(w.weight, Var) else set())
        for t in w.terms:
            if isinstance(t, Var):
                vs.add(t)
        unsafe = vs - pos_vars
        if unsafe:
            v = sorted(unsafe, key=lambda x: x.name)[0]
            raise UnsafeVariableError(
                f"variable {v.name} in {w!r} does not occur in a positive body literal")


def ground(p: Program, extra_constants: frozenset = frozenset(),
           max_rules: int = DEFAULT_GROUND_CAP) -> Program:
    """Ground a program by joining positive bodies against the possibly
    derivable atoms, iterated to fixpoint (finite; the program is
    non-recursive).  `extra_constants` only widens the Herbrand signature
    reported by `herbrand_base`; join-based grounding never invents atoms.
    """
    _check_safety(p)
    atoms_by_pred: dict = {}
    derivable: set = set()

    def add_atom(a: Atom):
        if a not in derivable:
            derivable.add(a)
            atoms_by_pred.setdefault(a.predicate, set()).add(a)

    ground_rules: dict = {}
    ground_choices: dict = {}

    changed = True
    while changed:
        changed = False
        for r in p.rules + p.choices:
            for sub in _join_substitutions(r.body_pos, atoms_by_pred):
                gr = r.substitute(sub)
                store = ground_choices if gr.is_choice else ground_rules
                if gr in store:
                    continue
                store[gr] = None
                if len(ground_rules) + len(ground_choices) > max_rules:
                    raise GroundingLimitError(
                        f"grounding exceeded {max_rules} rules")
                if isinstance(gr.head, Atom):
                    add_atom(gr.head)
                elif isinstance(gr.head, Aggregate):
                    for e in gr.head.elements:
                        add_atom(e)
                changed = True
    ground_weaks: dict = {}
    for w in p.weaks:
        for sub in _join_substitutions(w.body_pos, atoms_by_pred):
            gw = w.substitute(sub)
            if isinstance(gw.weight, Var):
                raise UnsafeVariableError(
                    f"weak-constraint weight {gw.weight!r} did not ground to an integer")
            ground_weaks[gw] = None
    return Program(tuple(ground_rules), tuple(ground_choices), tuple(ground_weaks))


def herbrand_base(p: Program, extra_constants: frozenset = frozenset()) -> frozenset:
    """All ground atoms over the program's predicates and the joint constant
    signature (program constants plus `extra_constants`)."""
    consts = sorted(p.constants() | set(extra_constants), key=term_key)
    preds = {}
    for a in p.all_atoms():
        preds[(a.predicate, len(a.args))] = None
    out = set()
    for pred, arity in preds:
        if arity == 0:
            out.add(Atom(pred))
        else:
            for combo in itertools.product(consts, repeat=arity):
                out.add(Atom(pred, combo))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Answer sets
# ---------------------------------------------------------------------------

def _least_model(rules, extra_facts: frozenset) -> frozenset:
    """Least model of ground normal rules + facts, with negation evaluated
    per predicate level (sound because programs are stratified)."""
    model = set(extra_facts)
    prog = Program(tuple(rules))
    levels = predicate_levels(prog)

    def rule_level(r):
        return levels.get(r.head.predicate, 0) if isinstance(r.head, Atom) else 0

    for r in sorted((r for r in rules if isinstance(r.head, Atom)),
                    key=rule_level):
        if r.body_pos <= model and not (r.body_neg & model):
            model.add(r.head)
    return frozenset(model)


class _Enumerator:
    """Shared solve state: splits the ground program into a static part,
    evaluated once, and a choice-dependent part evaluated per selection.
    Verification applies the reduct definition with the same split."""

    def __init__(self, p: Program):
        self.p = p
        elem_preds = {e.predicate for c in p.choices for e in c.head.elements}
        graph = dependency_graph(p)
        # a predicate is dynamic when it can reach a choice-element predicate
        dynamic = set(elem_preds)
        changed = True
        while changed:
            changed = False
            for head, bodies in graph.items():
                if head not in dynamic and bodies & dynamic:
                    dynamic.add(head)
                    changed = True
        self.dynamic_preds = dynamic

        levels = predicate_levels(p)
        normal = [r for r in p.rules if r.head is not None]
        normal.sort(key=lambda r: levels.get(r.head.predicate, 0))
        self.static_rules = [r for r in normal
                             if r.head.predicate not in dynamic]
        self.dynamic_rules = [r for r in normal
                              if r.head.predicate in dynamic]
        self.constraints = [r for r in p.rules if r.head is None]

        base: set = set()
        for r in self.static_rules:
            if r.body_pos <= base and not (r.body_neg & base):
                base.add(r.head)
        self.base = frozenset(base)
        self.static_ok = all(
            not (c.body_pos <= base and not (c.body_neg & base))
            for c in self.constraints
            if all(a.predicate not in dynamic for a in c.body_pos | c.body_neg))

    def candidate(self, chosen: frozenset) -> frozenset:
        model = set(self.base)
        model |= chosen
        for r in self.dynamic_rules:
            if r.body_pos <= model and not (r.body_neg & model):
                model.add(r.head)
        return frozenset(model)

    def is_answer_set(self, interp: frozenset) -> bool:
        # constraints and choice-head satisfaction (reduct steps 1 + 3)
        for c in self.constraints:
            if c.body_pos <= interp and not (c.body_neg & interp):
                return False
        for c in self.p.choices:
            if c.body_neg & interp:
                continue
            if c.body_pos <= interp and not c.head.satisfied_by(interp):
                return False
        # minimal model of the reduct (steps 2 + 4), one stratified pass;
        # static predicates keep their base values by construction
        model = set(self.base)
        pending = []
        for c in self.p.choices:
            if c.body_neg & interp:
                continue
            for h in interp.intersection(c.head.elements):
                if c.body_pos:
                    pending.append((h, c.body_pos))
                else:
                    model.add(h)
        changed = True
        while changed:
            changed = False
            still = []
            for h, body in pending:
                if body <= model:
                    if h not in model:
                        model.add(h)
                        changed = True
                else:
                    still.append((h, body))
            pending = still
            for r in self.dynamic_rules:
                if r.head not in model and r.body_pos <= model \
                        and not (r.body_neg & interp):
                    model.add(r.head)
                    changed = True
        return frozenset(model) == interp


def _reduct_minimal_model(p: Program, interp: frozenset):
    """Apply the four reduct steps for `interp` and return (minimal model,
    bottom_derived).  `bottom_derived` is True when a constraint or an
    unsatisfied choice head fires, which disqualifies `interp`."""
    definite = []
    bottom_rules = []
    for r in p.rules:
        if r.body_neg & interp:
            continue  # step 1
        if r.head is None:
            bottom_rules.append(r.body_pos)  # step 3 (constraints)
        else:
            definite.append((r.head, r.body_pos))  # step 2 applied
    for c in p.choices:
        if c.body_neg & interp:
            continue
        head: Aggregate = c.head
        if not head.satisfied_by(interp):
            bottom_rules.append(c.body_pos)  # step 3
        else:
            for h in interp.intersection(head.elements):  # step 4
                definite.append((h, c.body_pos))
    # least fixpoint of the definite program
    model: set = set()
    changed = True
    while changed:
        changed = False
        for head, body in definite:
            if head not in model and body <= model:
                model.add(head)
                changed = True
    bottom = any(body <= model for body in bottom_rules)
    return frozenset(model), bottom


def is_answer_set(p: Program, interp: frozenset) -> bool:
    """Exact check: `interp` is the minimal model of the reduct of `p`."""
    model, bottom = _reduct_minimal_model(p, interp)
    return (not bottom) and model == interp


def _selection_space(choice: Rule):
    head: Aggregate = choice.head
    elems = head.elements
    upper = head.bound_upper()
    seen = set()
    out = []
    for k in range(head.lower, min(upper, len(elems)) + 1):
        for combo in itertools.combinations(elems, k):
            fs = frozenset(combo)
            if fs not in seen:
                seen.add(fs)
                out.append(fs)
    if frozenset() not in seen:
        out.append(frozenset())  # the rule may simply not fire (body false)
    return out


def answer_sets(p: Program, max_models: Optional[int] = None) -> list:
    """All answer sets of a ground program, sorted canonically.

    Enumeration picks one selection per choice rule, evaluates the stratified
    remainder bottom-up and keeps candidates that pass the reduct check.
    The choice-independent part of the program is evaluated only once.
    """
    if not p.is_ground():
        raise UnsafeVariableError("answer_sets requires a ground program; call ground() first")
    validate_nonrecursive(p)
    enum = _Enumerator(p)
    if not enum.static_ok:
        return []
    spaces = [_selection_space(c) for c in p.choices]
    results = set()
    count = 0
    for combo in itertools.product(*spaces):
        chosen = frozenset().union(*combo) if combo else frozenset()
        candidate = enum.candidate(chosen)
        if candidate in results:
            continue
        if enum.is_answer_set(candidate):
            results.add(candidate)
            count += 1
            if max_models is not None and count > max_models:
                raise GroundingLimitError(
                    f"answer-set enumeration exceeded {max_models} models")
    atoms = {a for s in results for a in s}
    rank = {a: i for i, a in enumerate(sorted(atoms, key=atom_sort_key))}
    return sorted(results, key=lambda s: sorted(rank[a] for a in s))


def weak_cost(p: Program, interp: frozenset) -> dict:
    """Cost per priority level: sum of weights over distinct satisfied
    (weight, level, terms) tuples."""
    fired = set()
    for w in p.weaks:
        if w.body_pos <= interp and not (w.body_neg & interp):
            fired.add((w.weight, w.priority, w.terms))
    cost: dict = {}
    for weight, level, _terms in fired:
        cost[level] = cost.get(level, 0) + weight
    return cost


def _cost_key(cost: dict, levels):
    return tuple(cost.get(lv, 0) for lv in levels)


def optimal_answer_sets(p: Program, max_models: Optional[int] = None):
    """Answer sets minimizing weak-constraint cost, compared level-by-level
    from the highest priority downward.  Returns (cost map, sets)."""
    sets = answer_sets(p, max_models=max_models)
    if not sets:
        return {}, []
    levels = sorted({w.priority for w in p.weaks}, reverse=True)
    best_key, best_cost, best_sets = None, {}, []
    for s in sets:
        cost = weak_cost(p, s)
        key = _cost_key(cost, levels)
        if best_key is None or key < best_key:
            best_key, best_cost, best_sets = key, cost, [s]
        elif key == best_key:
            best_sets.append(s)
    return {lv: best_cost.get(lv, 0) for lv in levels}, best_sets


def min_aggregate_eval(interp: frozenset, groups: dict) -> dict:
    """Per-key minimum over candidate integer values, used to materialize
    `min_ex_penalty` atoms during solving.  An empty candidate set signals
    an uncovered key and is a hard failure for the caller."""
    out = {}
    for key in sorted(groups, key=str):
        vals = groups[key]
        if not vals:
            raise UncoveredKeyError(f"no candidate values for key {key!r}")
        out[key] = min(vals)
    return out
