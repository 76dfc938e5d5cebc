"""Synthetic desk-scale tasks: arithmetic formulae and the even-nine-plus
rule over noisy prototype feature vectors.

Each raw input encodes a digit as a Gaussian bump on a short pixel strip
(or a plain one-hot), plus isotropic noise.  Gold latents and the
generating hypothesis are recorded for evaluation; the pipeline itself
never reads them.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ConfigError

KINDS = ("add", "mul-add", "e9p")


def prototype(value_index: int, n_values: int, proto: str) -> np.ndarray:
    if proto == "onehot":
        v = np.zeros(n_values)
        v[value_index] = 1.0
        return v
    if proto == "blur":
        d = 2 * n_values
        centre = 2 * value_index + 1
        j = np.arange(d, dtype=np.float64)
        return np.exp(-((j - centre) ** 2) / 2.0)
    raise ConfigError(f"unknown prototype kind {proto!r}")


def _table(name, rows):
    return "\n".join(f"{name}({','.join(map(str, r))})." for r in rows)


def _task_skeleton(kind: str, n_digits: int):
    digits = list(range(n_digits))
    if kind == "add":
        nums = list(range(2 * (n_digits - 1) + 1))
        background = _table("plus", [(a, b, a + b)
                                     for a, b in itertools.product(digits, digits)])
        modeb = ["nn(const(img), var(digit)+)",
                 "plus(var(digit)-, var(digit)-, var(num)+) [symmetric(1,2)]"]
        types = {"num": nums, "digit": digits, "img": [1, 2]}
        gold_hyp = ["result(C) :- nn(1,A), nn(2,B), plus(A,B,C)."]
        n_inputs, max_body = 2, 4

        def label(z):
            return z[0] + z[1]
    elif kind == "mul-add":
        prods = list(range((n_digits - 1) ** 2 + 1))
        nums = list(range((n_digits - 1) ** 2 + n_digits))
        background = (
            _table("times", [(a, b, a * b)
                             for a, b in itertools.product(digits, digits)])
            + "\n"
            + _table("plus", [(p, c, p + c)
                              for p, c in itertools.product(prods, digits)]))
        modeb = ["nn(const(img), var(digit)+)",
                 "times(var(digit)-, var(digit)-, var(prod)+) [symmetric(1,2)]",
                 "plus(var(prod)-, var(digit)-, var(num)+)"]
        types = {"num": nums, "prod": prods, "digit": digits, "img": [1, 2, 3]}
        gold_hyp = ["result(R) :- nn(1,A), nn(2,B), nn(3,C), times(A,B,P), plus(P,C,R)."]
        n_inputs, max_body = 3, 5

        def label(z):
            return z[0] * z[1] + z[2]
    elif kind == "e9p":
        nums = list(range(n_digits + 9))
        background = (
            _table("even", [(v,) for v in digits if v % 2 == 0]) + "\n"
            + _table("plus9", [(v, v + 9) for v in digits]) + "\n"
            + _table("value", [(v, v) for v in digits]))
        modeb = ["nn(const(img), var(digit)+)",
                 "even(var(digit)-)",
                 "not even(var(digit)-)",
                 "plus9(var(digit)-, var(num)+)",
                 "value(var(digit)-, var(num)+)"]
        types = {"num": nums, "digit": digits, "img": [1, 2]}
        gold_hyp = [
            "result(R) :- nn(1,A), even(A), nn(2,B), plus9(B,R).",
            "result(R) :- nn(1,A), not even(A), nn(2,B), value(B,R).",
        ]
        n_inputs, max_body = 2, 4

        def label(z):
            return z[1] + 9 if z[0] % 2 == 0 else z[1]
    else:
        raise ConfigError(f"unknown task kind {kind!r}; expected one of {KINDS}")
    return {
        "digits": digits,
        "nums": types["num"],
        "background": background,
        "modeb": modeb,
        "types": types,
        "gold_hyp": gold_hyp,
        "n_inputs": n_inputs,
        "max_body": max_body,
        "label": label,
    }


def generate(kind: str, n_examples: int, seed: int, n_digits: int = 10,
             noise: float = 0.3, proto: str = "blur",
             prefix: str = "e", model_hidden=(32,)) -> dict:
    """One manifest dict with inline feature vectors and gold metadata."""
    sk = _task_skeleton(kind, n_digits)
    rng = np.random.default_rng(seed)
    digits = sk["digits"]
    protos = [prototype(v, n_digits, proto) for v in digits]
    examples, data, gold = [], {}, {}
    for i in range(n_examples):
        ex_id = f"{prefix}{i:04d}"
        z = tuple(int(rng.integers(0, n_digits)) for _ in range(sk["n_inputs"]))
        refs = []
        for j, v in enumerate(z):
            ref = f"{ex_id}_x{j+1}"
            vec = protos[v] + noise * rng.normal(size=len(protos[v]))
            data[ref] = [round(float(x), 6) for x in vec]
            refs.append(ref)
        examples.append({"id": ex_id, "label": f"result({sk['label'](z)})",
                         "raw": refs})
        gold[ex_id] = list(z)
    top = sk["nums"][-1]
    return {
        "schema_version": 1,
        "name": f"{kind}-{n_digits}d",
        "background": sk["background"],
        "modeh": ["result(var(num)-)"],
        "modeb": sk["modeb"],
        "types": sk["types"],
        "latent": [digits] * sk["n_inputs"],
        "label_space": [f"result(0..{top})"],
        "max_body": sk["max_body"],
        "model_config": {"hidden": list(model_hidden)},
        "examples": examples,
        "data": data,
        "gold_latents": gold,
        "gold_hypothesis": sk["gold_hyp"],
    }


def generate_pair(kind: str, n_train: int, n_test: int, seed: int, **kw):
    train = generate(kind, n_train, seed, prefix="t", **kw)
    test = generate(kind, n_test, seed + 10_000, prefix="v", **kw)
    return train, test
