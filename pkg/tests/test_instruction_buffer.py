import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from oir.instruction_buffer import (
    FAILING, LEARNING, MASTERED, Instruction, InstructionBuffer, SnapshotError, merge_stats,
    record_return, status,
)


def I(text, r=0.0, n=0, source="seed"):
    return Instruction(text, source, r, n)


@pytest.mark.parametrize("r,expected", [(0.5, LEARNING), (0.1, FAILING), (0.05, FAILING),
                                        (0.95, MASTERED), (0.9, LEARNING), (0.0, FAILING)])
def test_status_buckets(r, expected):
    assert status(I("x", r), 0.1, 0.9) == expected


def test_record_return_examples():
    a = record_return(I("x"), 1.0)
    assert (a.mean_return, a.seen_count) == (1.0, 1)
    b = record_return(a, 0.0)
    assert b.mean_return == 0.5
    c = I("x")
    for v in [1, 1, 0, 0, 1]:
        c = record_return(c, v)
    assert c.mean_return == pytest.approx(0.6, abs=1e-12) and c.seen_count == 5


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=50))
def test_record_return_is_arithmetic_mean(vals):
    c = I("x")
    for v in vals:
        c = record_return(c, v)
    assert abs(c.mean_return - float(np.mean(vals))) < 1e-12
    assert c.seen_count == len(vals)


@given(st.floats(0, 1, allow_nan=False))
def test_status_partition(r):
    inst = I("x", r)
    hits = [0.1 < r <= 0.9, r <= 0.1, r > 0.9]
    assert sum(hits) == 1 and hits[status(inst)]


def test_instruction_validation():
    assert Instruction("  collect wood ").text == "collect wood"
    with pytest.raises(ValueError):
        Instruction("   ")
    with pytest.raises(ValueError):
        Instruction("x", source="oracle")


def test_insert_example_round_robin():
    buf = InstructionBuffer(3)
    buf.seed(["A", "B", "C"])
    assert buf.cursor == 0
    evicted = buf.insert_batch([I("Y", 0.0), I("X", 0.3)])
    assert [e.text for e in buf.slots] == ["X", "Y", "C"]
    assert buf.cursor == 2
    assert [e.text for e in evicted] == ["A", "B"]


def test_empty_batch_is_noop():
    buf = InstructionBuffer(3)
    buf.seed(["A", "B"])
    before = buf.dumps()
    assert buf.insert_batch([]) == []
    assert buf.dumps() == before


def test_overflow_keeps_top_by_priority():
    buf = InstructionBuffer(3)
    cands = [I("m", 0.95, 3), I("f2", 0.0, 4), I("l", 0.5, 1), I("f1", 0.0, 1), I("l2", 0.2, 7)]
    buf.insert_batch(cands)
    assert [e.text for e in buf.slots] == ["l2", "l", "f1"]


def test_ties_preserve_input_order():
    buf = InstructionBuffer(4)
    buf.insert_batch([I("b"), I("a"), I("c")])
    assert [e.text for e in buf.entries] == ["b", "a", "c"]


def test_duplicates_merge_instead_of_inserting():
    buf = InstructionBuffer(3)
    buf.seed([I("Collect Wood", 1.0, 1)])
    buf.insert_batch([I("collect wood", 0.0, 1, "rule"), I("place table")])
    assert len(buf) == 2
    e = buf.slots[buf.find("COLLECT WOOD")]
    assert (e.text, e.source, e.mean_return, e.seen_count) == ("Collect Wood", "seed", 0.5, 2)


def test_merge_stats_pools_means():
    m = merge_stats(I("x", 1.0, 3), I("x", 0.0, 1))
    assert m.mean_return == 0.75 and m.seen_count == 4
    assert merge_stats(I("x"), I("x")).seen_count == 0


def test_pinned_entries_survive():
    buf = InstructionBuffer(3, pinned=frozenset({"A"}))
    buf.seed(["A", "B", "C"])
    buf.insert_batch([I("X"), I("Y"), I("Z")])
    assert "A" in buf and len(buf) == 3
    assert [e.text for e in buf.slots] == ["A", "X", "Y"]


def test_record_updates_entry():
    buf = InstructionBuffer(2)
    buf.seed(["collect wood"])
    assert buf.record("Collect Wood", 1.0)
    assert buf.entries[0].mean_return == 1.0
    assert not buf.record("eat cow", 1.0)


def test_sample_singleton_and_empty():
    rng = np.random.default_rng(0)
    buf = InstructionBuffer(3)
    with pytest.raises(IndexError):
        buf.sample(rng)
    buf.seed(["only"])
    assert all(buf.sample(rng).text == "only" for _ in range(20))


def test_sample_is_uniform():
    rng = np.random.default_rng(1)
    buf = InstructionBuffer(10)
    buf.seed(["a", "b", "c", "d"])
    draws = [buf.sample(rng).text for _ in range(40_000)]
    counts = np.array([draws.count(t) for t in "abcd"])
    assert np.all(np.abs(counts / 40_000 - 0.25) < 0.02)
    assert chisquare(counts).pvalue > 1e-3


ops = st.lists(st.lists(st.tuples(st.sampled_from("abcdefghij"), st.floats(0, 1)), max_size=6), max_size=12)


@given(batches=ops, cap=st.integers(1, 6))
def test_capacity_and_cursor_bounds(batches, cap):
    buf = InstructionBuffer(cap)
    for batch in batches:
        buf.insert_batch([I(t, r, 1) for t, r in batch])
        assert len(buf) <= cap and 0 <= buf.cursor < cap
        keys = [e.key for e in buf.entries]
        assert len(keys) == len(set(keys))


def test_histogram():
    buf = InstructionBuffer(4)
    buf.insert_batch([I("a", 0.5, 1), I("b"), I("c", 1.0, 2)])
    assert buf.histogram() == {"learning-boundary": 1, "failing": 1, "mastered": 1}


def test_snapshot_round_trip(tmp_path):
    buf = InstructionBuffer(4, 0.2, 0.8, pinned=frozenset({"a"}))
    buf.insert_batch([I("a", 0.5, 2), I("b", 0.0, 0, "rule"), I("c", 1.0, 3, "llm-high")])
    path = tmp_path / "buffer.jsonl"
    buf.export(path)
    back = InstructionBuffer.load(path)
    assert back.dumps() == buf.dumps()
    assert back.cursor == buf.cursor and back.pinned == buf.pinned
    header = json.loads(path.read_text().splitlines()[0])
    assert header["format"] == "oir-instruction-buffer" and header["version"] == 1


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("not json\n", "JSONL"),
    ('{"slot": 0, "text": "x"}\n', "header"),
])
def test_snapshot_errors(text, match):
    with pytest.raises(SnapshotError, match=match):
        InstructionBuffer.loads(text)


def test_snapshot_version_mismatch():
    buf = InstructionBuffer(2)
    buf.seed(["a"])
    lines = buf.dumps().splitlines()
    head = json.loads(lines[0])
    head["version"] = 99
    with pytest.raises(SnapshotError, match="version"):
        InstructionBuffer.loads("\n".join([json.dumps(head)] + lines[1:]))
