"""Atom indexing, circuits, exact semantic loss, gradients, training."""

import math
import random

import numpy as np
import pytest

from nfl.abduction import AbductionCache, abduce_all
from nfl.asp import Atom
from nfl.errors import DivergenceError, UncoverableExampleError
from nfl.synthesis import build_opt_space
from nfl.trainer import (
    Adam,
    AtomIndex,
    LossCircuit,
    circuit_from_rows,
    circuit_from_sets,
    MLPConfig,
    PerceptionModel,
    RulePosterior,
    TrainConfig,
    atom_index_for,
    build_circuit,
    build_circuit_generic,
    build_py,
    example_probability_vector,
    semantic_loss,
    semantic_loss_grad,
    softmax,
    train,
)

from oracles import oracle_event_probability
from taskutil import add_task


def small_pipeline(digits=range(3), examples=(("e1", "result(2)"),), gold=None):
    task, data = add_task(digits=digits, examples=list(examples), gold=gold)
    cache = AbductionCache()
    groups = abduce_all(task, cache)
    space = build_opt_space(task, groups, cache)
    return task, data, space


def random_circuit(rng, max_x=16):
    """A random pipeline-shaped circuit: one use block plus nn blocks."""
    n_rules = rng.randint(1, 4)
    n_inputs = rng.randint(1, 2)
    widths = []
    remaining = max_x - n_rules
    for _ in range(n_inputs):
        w = rng.randint(2, max(2, min(4, remaining // n_inputs)))
        widths.append(w)
    index = AtomIndex(n_rules, tuple(widths),
                      tuple(tuple(range(w)) for w in widths))
    combos = [(i,) + ks
              for i in range(n_rules)
              for ks in _value_combos(widths)]
    rng.shuffle(combos)
    take = combos[: rng.randint(1, min(len(combos), 8))]
    rows = []
    for i, *ks in [list(c) for c in take]:
        rows.append([index.use_index(i)]
                    + [index.nn_index(j, k) for j, k in enumerate(ks)])
    rows.sort()
    return circuit_from_rows("r", Atom("y"), rows, index)


def _value_combos(widths):
    import itertools
    return list(itertools.product(*[range(w) for w in widths]))


class TestAtomIndex:
    def test_bijection(self):
        idx = AtomIndex(3, (2, 4), ((0, 1), (0, 1, 2, 3)))
        assert idx.size == 9
        for i in range(idx.size):
            a = idx.atom_for(i)
            assert idx.index_for(a) == i

    def test_heterogeneous_offsets(self):
        idx = AtomIndex(2, (3, 2), ((5, 6, 7), ("a", "b")))
        assert idx.nn_index(0, 2) == 4
        assert idx.nn_index(1, 0) == 5
        assert idx.atom_for(6) == Atom("nn", (2, "b"))

    def test_out_of_range(self):
        idx = AtomIndex(1, (2,), ((0, 1),))
        with pytest.raises(IndexError):
            idx.use_index(1)
        with pytest.raises(IndexError):
            idx.nn_index(0, 2)


class TestBuildPy:
    def test_structure(self):
        task, data, space = small_pipeline()
        prog = build_py(task, task.examples[0], space)
        use_choices = [c for c in prog.choices
                       if c.head.elements[0].predicate == "use"]
        assert len(use_choices) == 1
        assert len(use_choices[0].head.elements) == len(space.rules)
        nn_choices = [c for c in prog.choices
                      if c.head.elements[0].predicate == "nn"]
        assert len(nn_choices) == 2
        label_constraints = [r for r in prog.rules
                             if r.head is None and r.body_neg]
        assert any(Atom("result", (2,)) in r.body_neg for r in label_constraints)

    def test_label_entailed_by_background(self):
        task, data, space = small_pipeline()
        from dataclasses import replace
        from nfl.asp import parse_program
        task2 = replace(task, background=task.background + parse_program("result(2)."))
        cache = AbductionCache()
        groups = abduce_all(task2, cache)
        space2 = build_opt_space(task2, groups, cache, require_nonempty=False)
        if not space2.rules:
            return
        circ = build_circuit(task2, task2.examples[0], space2)
        # every (use, z) combination proves the label via the background
        assert circ.n_answer_sets == len(space2.rules) * 9
        gen = build_circuit_generic(task2, task2.examples[0], space2)
        assert circ.rows.tolist() == gen.rows.tolist()

    def test_single_rule_forced_choice(self):
        # an odd label prunes the digit-doubling rules: the space collapses
        # to the addition rule alone
        task, data, space = small_pipeline(
            examples=(("e1", "result(2)"), ("e2", "result(3)")))
        assert len(space.rules) == 1
        prog = build_py(task, task.examples[0], space)
        (use_choice,) = [c for c in prog.choices
                         if c.head.elements[0].predicate == "use"]
        assert use_choice.head.lower == use_choice.head.upper == 1
        assert len(use_choice.head.elements) == 1


class TestCircuit:
    def test_fast_equals_generic(self):
        task, data, space = small_pipeline(digits=range(3))
        for e in task.examples:
            fast = build_circuit(task, e, space)
            gen = build_circuit_generic(task, e, space)
            assert fast.rows.tolist() == gen.rows.tolist()

    def test_fast_equals_generic_with_constraint(self):
        task, data, space = small_pipeline()
        from dataclasses import replace
        from nfl.asp import parse_program
        task2 = replace(task, background=task.background
                        + parse_program(":- nn(1,0), nn(2,0)."))
        cache = AbductionCache()
        groups = abduce_all(task2, cache)
        space2 = build_opt_space(task2, groups, cache)
        e = task2.examples[0]
        fast = build_circuit(task2, e, space2)
        gen = build_circuit_generic(task2, e, space2)
        assert fast.rows.tolist() == gen.rows.tolist()

    def test_rows_contain_label_consistent_assignments(self):
        task, data, space = small_pipeline(
            examples=(("e1", "result(2)"), ("e2", "result(3)")))
        circ = build_circuit(task, task.examples[0], space)
        # with the single addition rule, rows are the z pairs summing to 2
        assert circ.n_answer_sets == 3
        circ2 = build_circuit(task, task.examples[1], space)
        assert circ2.n_answer_sets == 2  # (1,2) and (2,1)

    def test_unprovable_label(self):
        task, data, space = small_pipeline()
        from dataclasses import replace
        e = task.examples[0]
        bad = replace(e, inclusions=frozenset({Atom("result", (17,))}),
                      exclusions=frozenset())
        space.example_possibilities[bad.id] = space.example_possibilities[e.id]
        with pytest.raises(UncoverableExampleError, match="17"):
            build_circuit(task, bad, space)


class TestSemanticLoss:
    def make_index(self, n_rules, widths):
        return AtomIndex(n_rules, tuple(widths),
                         tuple(tuple(range(w)) for w in widths))

    def test_worked_two_rule_example(self):
        # 2 rules, 1 input with 2 values; the two answer sets pair rule i
        # with value i; p_use=(0.5,0.5), p_nn=(0.9,0.1)
        idx = self.make_index(2, [2])
        circ = circuit_from_rows("e", Atom("y"), [[0, 2], [1, 3]], idx)
        p = np.array([0.5, 0.5, 0.9, 0.1])
        want = -math.log(0.5 * 0.9 * (1 - 0.5) * (1 - 0.1)
                         + 0.5 * 0.1 * (1 - 0.5) * (1 - 0.9))
        assert semantic_loss(circ, p) == pytest.approx(want, abs=1e-12)
        assert want == pytest.approx(1.584745, abs=1e-5)

    def test_certain_single_answer_set(self):
        idx = self.make_index(2, [2])
        circ = circuit_from_rows("e", Atom("y"), [[0, 2]], idx)
        p = np.array([1.0, 0.0, 1.0, 0.0])
        assert semantic_loss(circ, p) == pytest.approx(0.0, abs=1e-12)

    def test_all_assignments_total_probability(self):
        # the unconstrained circuit: every subset of X is an answer set, so
        # the summed mass is exactly one and the loss is zero
        import itertools
        idx = self.make_index(1, [2])
        sets = [set(c) for k in range(4) for c in itertools.combinations(range(3), k)]
        circ = circuit_from_sets("e", Atom("y"), sets, idx)
        p = np.array([0.35, 0.3, 0.7])
        assert semantic_loss(circ, p) == pytest.approx(0.0, abs=1e-12)

    def test_empty_rows_infinite(self):
        idx = self.make_index(1, [2])
        circ = circuit_from_rows("e", Atom("y"), [[0, 1]], idx)
        p = np.array([0.0, 0.5, 0.5])  # the only row contains a zero atom
        assert semantic_loss(circ, p) == math.inf

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_bruteforce_event_probability(self, seed):
        rng = random.Random(seed)
        circ = random_circuit(rng)
        p = np.array([rng.random() for _ in range(circ.index.size)])
        loss = semantic_loss(circ, p)
        want = oracle_event_probability([set(r) for r in circ.rows.tolist()], p)
        assert math.exp(-loss) == pytest.approx(want, abs=1e-9)
        assert 0.0 <= math.exp(-loss) <= 1.0
        # the membership matrix agrees with the index rows
        for a, row in enumerate(circ.rows.tolist()):
            assert set(np.flatnonzero(circ.member[a])) == set(row)

    @pytest.mark.parametrize("seed", range(10))
    def test_boundary_probabilities(self, seed):
        rng = random.Random(1000 + seed)
        circ = random_circuit(rng)
        p = np.array([rng.choice([0.0, 1.0, rng.random()])
                      for _ in range(circ.index.size)])
        loss = semantic_loss(circ, p)
        want = oracle_event_probability([set(r) for r in circ.rows.tolist()], p)
        assert math.exp(-loss) == pytest.approx(want, abs=1e-9)

    def test_categorical_mode(self):
        idx = self.make_index(2, [2])
        circ = circuit_from_rows("e", Atom("y"), [[0, 2], [1, 3]], idx)
        p = np.array([0.5, 0.5, 0.9, 0.1])
        want = -math.log(0.5 * 0.9 + 0.5 * 0.1)
        assert semantic_loss(circ, p, "categorical") == pytest.approx(want, abs=1e-12)


class TestGradient:
    def test_finite_differences(self):
        rng = random.Random(7)
        for _ in range(25):
            circ = random_circuit(rng)
            x = circ.index.size
            p = np.array([0.05 + 0.9 * rng.random() for _ in range(x)])
            loss, grad = semantic_loss_grad(circ, p)
            if math.isinf(loss):
                continue
            h = 1e-5
            for i in range(x):
                pp, pm = p.copy(), p.copy()
                pp[i] += h
                pm[i] -= h
                num = (semantic_loss(circ, pp) - semantic_loss(circ, pm)) / (2 * h)
                denom = max(abs(num), 1.0)
                assert abs(grad[i] - num) / denom < 1e-6

    def test_zero_gradient_at_total_mass(self):
        # every assignment pattern present: S == 1 identically, and the
        # gradient vanishes at interior points
        import itertools
        idx = AtomIndex(1, (2,), ((0, 1),))
        sets = [set(c) for k in range(4) for c in itertools.combinations(range(3), k)]
        circ = circuit_from_sets("e", Atom("y"), sets, idx)
        p = np.array([0.2, 0.4, 0.6])
        loss, grad = semantic_loss_grad(circ, p)
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(grad, 0.0, atol=1e-9)

    def test_symmetric_circuit_symmetric_gradient(self):
        idx = AtomIndex(2, (2,), ((0, 1),))
        circ = circuit_from_rows("e", Atom("y"), [[0, 2], [1, 3]], idx)
        p = np.array([0.5, 0.5, 0.5, 0.5])
        _loss, grad = semantic_loss_grad(circ, p)
        # swapping (use0,nn0) with (use1,nn1) maps the circuit to itself
        assert grad[0] == pytest.approx(grad[1], abs=1e-12)
        assert grad[2] == pytest.approx(grad[3], abs=1e-12)


class TestModel:
    def test_softmax_heads_on_simplex(self):
        rng = np.random.default_rng(0)
        model = PerceptionModel(MLPConfig(4, (3, 5), (8,)), rng)
        probs, _ = model.forward(rng.normal(size=(2, 4)))
        for s in probs:
            assert abs(s.sum() - 1.0) < 1e-9
            assert (s >= 0).all()

    def test_theta_roundtrip(self):
        rng = np.random.default_rng(1)
        model = PerceptionModel(MLPConfig(4, (3,), (6, 2)), rng)
        theta = model.theta
        model.set_theta(theta * 0 + 0.5)
        assert np.allclose(model.theta, 0.5)
        model.set_theta(theta)
        assert np.allclose(model.theta, theta)

    def test_model_gradient_finite_difference(self):
        rng = np.random.default_rng(2)
        model = PerceptionModel(MLPConfig(3, (2, 3), (4,)), rng)
        xs = rng.normal(size=(2, 3))
        gp = [rng.normal(size=2), rng.normal(size=3)]

        def scalar():
            probs, _ = model.forward(xs)
            return sum(float(g @ s) for g, s in zip(gp, probs))

        probs, cache = model.forward(xs)
        grad = model.backward(cache, gp)
        theta = model.theta
        h = 1e-6
        for i in rng.choice(len(theta), size=12, replace=False):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += h
            tm[i] -= h
            model.set_theta(tp)
            up = scalar()
            model.set_theta(tm)
            down = scalar()
            model.set_theta(theta)
            num = (up - down) / (2 * h)
            assert abs(grad[i] - num) < 1e-5


class TestTrain:
    def test_zero_learning_rate_freezes_parameters(self):
        task, data, space = small_pipeline(gold={"e1": (1, 1)})
        data.inputs = {r: np.random.default_rng(0).normal(size=4)
                       for r in data.inputs}
        cfg = TrainConfig(epochs=2, lr=0.0, batch=4, seed=3)
        res = train(task, space, data, cfg)
        rng = np.random.default_rng(3)
        fresh = PerceptionModel(MLPConfig.from_task(task, data), rng)
        assert np.allclose(res.theta, fresh.theta)
        assert np.allclose(res.theta_r, 0.0)

    def test_posterior_initialized_uniform(self):
        task, data, space = small_pipeline()
        res = train(task, space, data, TrainConfig(epochs=0, lr=0.1, seed=0))
        assert np.allclose(RulePosterior(res.theta_r).posterior(),
                           1.0 / max(len(space.rules), 1))

    def test_single_example_loss_decreases_monotonically(self):
        rng = np.random.default_rng(5)
        task, data, space = small_pipeline(digits=range(3),
                                           examples=[("e1", "result(4)")],
                                           gold={"e1": (2, 2)})
        data.inputs = {r: rng.normal(size=4) for r in data.inputs}
        cfg = TrainConfig(epochs=30, lr=0.05, batch=1, seed=5)
        res = train(task, space, data, cfg)
        losses = [t["loss"] for t in res.trajectory]
        for a, b in zip(losses, losses[1:]):
            assert b < a + 1e-12
        # result(4) forces z=(2,2): the trained head probabilities approach 1
        p, _probs, _ = example_probability_vector(
            res.model, res.theta_r, np.stack([data.inputs[r]
                                              for r in task.examples[0].raw]))
        idx = res.index
        assert p[idx.nn_index(0, 2)] > 0.9
        assert p[idx.nn_index(1, 2)] > 0.9

    def test_bit_reproducible_with_seed(self):
        task, data, space = small_pipeline(
            examples=[("a", "result(2)"), ("b", "result(3)")])
        rng = np.random.default_rng(11)
        data.inputs = {r: rng.normal(size=4) for r in data.inputs}
        cfg = TrainConfig(epochs=3, lr=0.01, batch=2, seed=9)
        r1 = train(task, space, data, cfg)
        r2 = train(task, space, data, cfg)
        assert np.array_equal(r1.theta, r2.theta)
        assert np.array_equal(r1.theta_r, r2.theta_r)
        assert r1.trajectory == r2.trajectory

    def test_trajectory_records_accuracy_with_gold(self):
        task, data, space = small_pipeline(gold={"e1": (1, 1)})
        res = train(task, space, data, TrainConfig(epochs=1, lr=0.01, seed=0))
        assert "latent_accuracy" in res.trajectory[0]
