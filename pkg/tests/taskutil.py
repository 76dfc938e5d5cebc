"""Shared builders for small synthetic tasks used across the test suite."""

from __future__ import annotations

import itertools

import numpy as np

from nfl.asp import Atom, parse_atom, parse_program
from nfl.bias import make_bias
from nfl.task import Dataset, LatentSpace, NeuralTask, RawExample, datapoint_to_example


def plus_table(values, name="plus"):
    rows = []
    for a, b in itertools.product(values, repeat=2):
        rows.append(f"{name}({a},{b},{a+b}).")
    return "\n".join(rows)


def add_task(digits=(0, 1, 2), labels=None, extra_background="",
             symmetric=True, examples=(), gold=None, max_body=4):
    """Two-input addition task over a small digit range."""
    digits = list(digits)
    nums = sorted({a + b for a in digits for b in digits} | set(digits))
    sym = " [symmetric(1,2)]" if symmetric else ""
    background = parse_program(plus_table(digits) + "\n" + extra_background)
    bias = make_bias(
        ["result(var(num)-)"],
        ["nn(const(img), var(digit)+)",
         f"plus(var(digit)-, var(digit)-, var(num)+){sym}"],
        {"num": nums, "digit": digits, "img": [1, 2]},
    )
    label_space = frozenset(Atom("result", (v,)) for v in nums)
    exs = []
    for ex_id, label in examples:
        exs.append(datapoint_to_example(ex_id, (f"{ex_id}_1", f"{ex_id}_2"),
                                        parse_atom(label), label_space))
    task = NeuralTask(background, bias, tuple(exs),
                      LatentSpace((tuple(digits), tuple(digits))),
                      label_space, {}, max_body, "tiny-add")
    refs = {r for e in exs for r in e.raw}
    data = Dataset({r: np.zeros(4) for r in refs}, dict(gold or {}))
    return task, data


def const_task(values=("x", "y"), target="p"):
    """Single-input task whose label is a direct copy of the latent value."""
    background = parse_program(
        "\n".join(f"is({v},{v})." for v in values))
    bias = make_bias(
        [f"{target}(var(val)-)"],
        ["nn(const(img), var(val)+)", "is(var(val)-, var(val)+)"],
        {"val": list(values), "img": [1]},
    )
    label_space = frozenset(Atom(target, (v,)) for v in values)
    return background, bias, label_space


def brute_force_coverage(task, hypothesis, example):
    """Re-solve background + latent program + hypothesis + context from
    scratch for every latent tuple and collect the accepting ones."""
    from nfl.abduction import build_pz
    from nfl.asp import Program, Rule, answer_sets, ground
    from nfl.bias import expand_untyped_safe
    from nfl.task import latent_facts

    hyp_rules = []
    for h in hypothesis:
        hyp_rules.extend(expand_untyped_safe(h, task.mode_bias))
    hp = Program(tuple(hyp_rules))
    covered = set()
    for z in itertools.product(*task.latent.arities):
        prog = task.background + example.ctx + latent_facts(z) + hp
        try:
            sets = answer_sets(ground(prog))
        except Exception:
            continue
        for s in sets:
            if example.inclusions <= s and not (example.exclusions & s):
                covered.add(z)
                break
    return covered
