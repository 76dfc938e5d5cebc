"""Task model: manifests, examples, datasets, collapse."""

import json

import numpy as np
import pytest

from nfl.asp import Atom, parse_atom, parse_atoms
from nfl.task import (
    Dataset,
    LatentSpace,
    collapse,
    datapoint_to_example,
    load_manifest,
    load_task,
    pinned_task,
    read_idx_labels,
    read_idx_vector,
    save_task,
    serialize_task,
)
from nfl.errors import TaskValidationError

from taskutil import add_task, plus_table


def manifest_dict(n_examples=2):
    digits = list(range(3))
    nums = list(range(5))
    examples = []
    data = {}
    for i in range(n_examples):
        examples.append({"id": f"e{i}", "label": "result(2)",
                         "raw": [f"r{i}a", f"r{i}b"]})
        data[f"r{i}a"] = [0.1, 0.2]
        data[f"r{i}b"] = [0.3, 0.4]
    return {
        "schema_version": 1,
        "background": plus_table(digits),
        "modeh": ["result(var(num)-)"],
        "modeb": ["nn(const(img), var(digit)+)",
                  "plus(var(digit)-, var(digit)-, var(num)+) [symmetric(1,2)]"],
        "types": {"num": nums, "digit": digits, "img": [1, 2]},
        "latent": [digits, digits],
        "label_space": ["result(0..4)"],
        "examples": examples,
        "data": data,
        "gold_latents": {f"e{i}": [1, 1] for i in range(n_examples)},
    }


class TestManifest:
    def test_load_two_digit_addition(self, tmp_path):
        m = tmp_path / "task.json"
        m.write_text(json.dumps(manifest_dict()))
        task, data = load_task(m)
        assert task.n_inputs == 2
        assert all(len(vs) == 3 for vs in task.latent.arities)
        assert len(task.examples) == 2
        assert data.dim == 2

    def test_opl_violation_in_context_body(self, tmp_path):
        d = manifest_dict()
        d["examples"][0]["ctx"] = "q :- result(2)."
        m = tmp_path / "task.json"
        m.write_text(json.dumps(d))
        with pytest.raises(TaskValidationError, match="result"):
            load_task(m)

    def test_opl_violation_in_mode_body(self):
        d = manifest_dict()
        d["modeb"].append("result(var(num)+)")
        with pytest.raises(TaskValidationError, match="result"):
            load_manifest(d, None)

    def test_empty_example_list_valid(self):
        d = manifest_dict(0)
        task, _ = load_manifest(d, None)
        assert task.examples == ()

    def test_dangling_raw_reference(self):
        d = manifest_dict()
        del d["data"]["r0a"]
        with pytest.raises(TaskValidationError, match="r0a"):
            load_manifest(d, None)

    def test_gold_latents_validated(self):
        d = manifest_dict()
        d["gold_latents"]["e0"] = [7, 7]
        with pytest.raises(TaskValidationError, match="e0"):
            load_manifest(d, None)

    def test_missing_key(self):
        d = manifest_dict()
        del d["latent"]
        with pytest.raises(TaskValidationError, match="latent"):
            load_manifest(d, None)

    def test_unknown_key_rejected(self):
        d = manifest_dict()
        d["surprise"] = 1
        with pytest.raises(TaskValidationError, match="surprise"):
            load_manifest(d, None)

    def test_roundtrip_idempotent(self, tmp_path):
        m = tmp_path / "task.json"
        m.write_text(json.dumps(manifest_dict()))
        task, data = load_task(m)
        once = serialize_task(task, data)
        task2, data2 = load_manifest(once, tmp_path)
        twice = serialize_task(task2, data2)
        assert once == twice

    def test_csv_data(self, tmp_path):
        d = manifest_dict(1)
        (tmp_path / "vecs.csv").write_text("0.5,0.25\n1.0,2.0\n")
        d["data"]["r0a"] = {"csv": "vecs.csv", "row": 1}
        task, data = load_manifest(d, tmp_path)
        assert np.allclose(data.inputs["r0a"], [1.0, 2.0])

    def test_inconsistent_dims(self):
        d = manifest_dict(1)
        d["data"]["r0a"] = [0.1, 0.2, 0.3]
        with pytest.raises(TaskValidationError, match="dimension"):
            load_manifest(d, None)


class TestIdx:
    def test_idx_roundtrip(self, tmp_path):
        import struct
        path = tmp_path / "imgs.idx"
        imgs = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(3, 2, 2)
        with open(path, "wb") as fh:
            fh.write(struct.pack(">iiii", 0x00000803, 3, 2, 2))
            fh.write(imgs.tobytes())
        v = read_idx_vector(path, 2)
        assert np.allclose(v, imgs[2].reshape(-1) / 255.0)

        lpath = tmp_path / "labels.idx"
        with open(lpath, "wb") as fh:
            fh.write(struct.pack(">ii", 0x00000801, 4))
            fh.write(bytes([1, 0, 2, 9]))
        assert list(read_idx_labels(lpath)) == [1, 0, 2, 9]

    def test_bad_magic(self, tmp_path):
        import struct
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">iiii", 0x00000999, 1, 1, 1))
        with pytest.raises(TaskValidationError, match="magic"):
            read_idx_vector(path, 0)


class TestDatapointToExample:
    def test_exclusions_are_rest_of_label_space(self):
        space = parse_atoms("result(0..18)")
        e = datapoint_to_example("e1", ["i1", "i2"], parse_atom("result(7)"), space)
        assert e.inclusions == frozenset({Atom("result", (7,))})
        assert len(e.exclusions) == 18
        assert not (e.inclusions & e.exclusions)

    def test_singleton_label_space(self):
        e = datapoint_to_example("e1", ["i1"], parse_atom("result(0)"),
                                 [Atom("result", (0,))])
        assert e.exclusions == frozenset()

    def test_label_outside_space(self):
        with pytest.raises(TaskValidationError):
            datapoint_to_example("e1", ["i1"], parse_atom("result(9)"),
                                 [Atom("result", (0,))])


class TestCollapse:
    def test_gold_tuple_becomes_nn_facts(self):
        task, _ = add_task(digits=range(6), examples=[("e1", "result(8)")])
        sym = collapse(task, {"e1": (3, 5)})
        (w,) = sym.examples
        assert w.mandatory
        facts = {r.head for r in w.ctx.rules}
        assert facts == {Atom("nn", (1, 3)), Atom("nn", (2, 5))}

    def test_empty_examples(self):
        task, _ = add_task(examples=[])
        assert collapse(task, {}).examples == ()

    def test_preserves_count_and_ids(self):
        task, _ = add_task(examples=[("a", "result(1)"), ("b", "result(2)")])
        sym = collapse(task, {"a": (0, 1), "b": (1, 1)})
        assert [w.id for w in sym.examples] == ["a", "b"]

    def test_missing_gold(self):
        task, _ = add_task(examples=[("a", "result(1)")])
        with pytest.raises(TaskValidationError, match="a"):
            collapse(task, {})

    def test_collapse_then_abduction_single_possibility(self):
        from nfl.abduction import abduce_all
        task, _ = add_task(examples=[("a", "result(2)"), ("b", "result(3)")])
        pinned = pinned_task(task, {"a": (0, 2), "b": (1, 2)})
        for pg in abduce_all(pinned).values():
            assert pg.total() == 1

    def test_save_load(self, tmp_path):
        task, data = add_task(examples=[("a", "result(1)")], gold={"a": (0, 1)})
        p = tmp_path / "t.json"
        save_task(task, data, p)
        task2, data2 = load_task(p)
        assert task2.label_space == task.label_space
        assert data2.gold_latents == {"a": (0, 1)}


class TestLatentSpace:
    def test_empty_value_set_rejected(self):
        with pytest.raises(TaskValidationError):
            LatentSpace(((), (1, 2)))

    def test_size_and_contains(self):
        ls = LatentSpace(((0, 1), (0, 1, 2)))
        assert ls.size() == 6
        assert ls.contains((1, 2))
        assert not ls.contains((2, 0))
