"""Independent reference implementations used as test oracles.

Everything here is deliberately written from the definitions, not from the
engine code paths it checks: answer sets via subset enumeration over the
Herbrand base with an explicit four-step reduct, loss via full product-sum
enumeration, solving via exhaustive subset search.
"""

from __future__ import annotations

import itertools
import random

from nfl.asp import Aggregate, Atom, Program, Rule, weak_cost


# ---------------------------------------------------------------------------
# Subset-enumeration reduct oracle (bitmask-based for speed)
# ---------------------------------------------------------------------------

def _mask(atoms_idx, atoms):
    m = 0
    for a in atoms:
        m |= 1 << atoms_idx[a]
    return m


def oracle_answer_sets(p: Program, herbrand=None):
    """Every I subseteq HB with I == minimal model of the reduct of p wrt I.

    The reduct follows the four steps: drop rules whose negative body meets
    I; strip remaining negative literals; turn constraints and choice rules
    with unsatisfied heads into bottom rules; replace surviving choice rules
    by one definite rule per chosen element.
    """
    if herbrand is None:
        atoms = set()
        for a in p.all_atoms():
            atoms.add(a)
    else:
        atoms = set(herbrand)
    atoms = sorted(atoms, key=lambda a: a.key())
    idx = {a: i for i, a in enumerate(atoms)}
    n = len(atoms)
    if n > 22:
        raise ValueError(f"oracle limited to 22 ground atoms, got {n}")

    normal = []      # (head_bit or None, pos_mask, neg_mask)
    choice = []      # (lower, upper, elem_bits list, elem_mask, pos_mask, neg_mask)
    for r in p.rules:
        pm, nm = _mask(idx, r.body_pos), _mask(idx, r.body_neg)
        hb = None if r.head is None else (1 << idx[r.head])
        normal.append((hb, pm, nm))
    for c in p.choices:
        h: Aggregate = c.head
        pm, nm = _mask(idx, c.body_pos), _mask(idx, c.body_neg)
        bits = [1 << idx[e] for e in h.elements]
        choice.append((h.lower, h.bound_upper(), bits, _mask(idx, h.elements), pm, nm))

    answer_sets = []
    for bits in range(1 << n):
        definite = []
        bottoms = []
        for hb, pm, nm in normal:
            if nm & bits:
                continue
            if hb is None:
                bottoms.append(pm)
            else:
                definite.append((hb, pm))
        ok = True
        for lower, upper, ebits, emask, pm, nm in choice:
            if nm & bits:
                continue
            count = bin(emask & bits).count("1")
            if not (lower <= count <= upper):
                bottoms.append(pm)
            else:
                for eb in ebits:
                    if eb & bits:
                        definite.append((eb, pm))
        model = 0
        changed = True
        while changed:
            changed = False
            for hb, pm in definite:
                if not (model & hb) and (pm & model) == pm:
                    model |= hb
                    changed = True
        for pm in bottoms:
            if (pm & model) == pm:
                ok = False
                break
        if ok and model == bits:
            answer_sets.append(frozenset(atoms[i] for i in range(n) if bits >> i & 1))
    return sorted(answer_sets, key=lambda s: sorted(a.key() for a in s))


def oracle_optimal_answer_sets(p: Program):
    sets = oracle_answer_sets(p)
    levels = sorted({w.priority for w in p.weaks}, reverse=True)
    best_key, best = None, []
    for s in sets:
        cost = weak_cost(p, s)
        key = tuple(cost.get(lv, 0) for lv in levels)
        if best_key is None or key < best_key:
            best_key, best = key, [s]
        elif key == best_key:
            best.append(s)
    return best_key, best


# ---------------------------------------------------------------------------
# Random non-recursive program generation
# ---------------------------------------------------------------------------

def random_program(rng: random.Random, max_atoms: int = 10) -> Program:
    """Random propositional, non-recursive program with choices, negation
    and constraints.  Atoms are layered so the dependency graph is acyclic.
    """
    n = rng.randint(2, max_atoms)
    names = [f"a{i}" for i in range(n)]
    layer = {nm: rng.randint(0, 3) for nm in names}
    atoms = {nm: Atom(nm) for nm in names}

    def below(nm):
        return [m for m in names if layer[m] < layer[nm]]

    rules, choices = [], []
    for nm in names:
        for _ in range(rng.randint(0, 2)):
            pool = below(nm)
            nb = rng.randint(0, min(2, len(pool)))
            body = rng.sample(pool, nb)
            pos = frozenset(atoms[b] for b in body if rng.random() < 0.7)
            neg = frozenset(atoms[b] for b in body) - pos
            if rng.random() < 0.25 and not pos and not neg:
                rules.append(Rule(atoms[nm]))  # fact
            else:
                rules.append(Rule(atoms[nm], pos, neg))
    # a couple of choice rules over same-layer atoms
    for _ in range(rng.randint(0, 2)):
        lv = rng.randint(1, 3)
        elems = [nm for nm in names if layer[nm] == lv]
        if len(elems) < 2:
            continue
        chosen = rng.sample(elems, rng.randint(2, min(3, len(elems))))
        lower = rng.randint(0, len(chosen))
        upper = rng.randint(lower, len(chosen))
        pool = [m for m in names if layer[m] < lv]
        body = rng.sample(pool, rng.randint(0, min(1, len(pool))))
        pos = frozenset(atoms[b] for b in body if rng.random() < 0.7)
        neg = frozenset(atoms[b] for b in body) - pos
        choices.append(Rule(Aggregate(lower, upper, tuple(atoms[e] for e in chosen)),
                            pos, neg))
    # constraints
    for _ in range(rng.randint(0, 2)):
        body = rng.sample(names, rng.randint(1, min(2, len(names))))
        pos = frozenset(atoms[b] for b in body if rng.random() < 0.6)
        neg = frozenset(atoms[b] for b in body) - pos
        rules.append(Rule(None, pos, neg))
    prog = Program(tuple(rules), tuple(choices))
    # reject the rare recursive draw (same-layer edges cannot happen, so
    # this only guards against degenerate empty programs)
    return prog


# ---------------------------------------------------------------------------
# Brute-force semantic loss
# ---------------------------------------------------------------------------

def oracle_event_probability(as_index_sets, p):
    """Probability that independently sampled X-atoms reproduce exactly the
    pattern of one of the answer sets, by enumerating all 2^|X| assignments."""
    n = len(p)
    patterns = {frozenset(s) for s in as_index_sets}
    total = 0.0
    for bits in itertools.product((0, 1), repeat=n):
        on = frozenset(i for i, b in enumerate(bits) if b)
        if on not in patterns:
            continue
        prob = 1.0
        for i, b in enumerate(bits):
            prob *= p[i] if b else (1.0 - p[i])
        total += prob
    return total
