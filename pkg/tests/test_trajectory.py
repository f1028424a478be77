import pytest

from oir.trajectory import Trajectory, TrajectoryFormatError, TrajectoryStep, read_trajectories, write_trajectories


def test_round_trip(tmp_path):
    trajs = [
        Trajectory([TrajectoryStep("o0", "tree", "tree: gained wood, collect wood", ("collect wood",)),
                    TrajectoryStep("o1", "noop", died=True)], id="a"),
        Trajectory([TrajectoryStep("o2", "left")], id="b"),
    ]
    path = tmp_path / "t.jsonl"
    write_trajectories(path, trajs)
    back = read_trajectories(path)
    assert [t.id for t in back] == ["a", "b"]
    assert back[0].steps == trajs[0].steps and back[1].steps == trajs[1].steps
    assert back[0].fired() == ["collect wood"]


def test_missing_id_defaults_to_single_trajectory(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"observation": "a", "action": "noop"}\n\n{"observation": "b", "action": "do"}\n')
    (t,) = read_trajectories(path)
    assert t.id == "0" and len(t) == 2


@pytest.mark.parametrize("line,msg", [
    ("{not json", "invalid JSON"),
    ("[1, 2]", "JSON object"),
    ('{"action": "noop"}', "observation"),
    ('{"observation": "a", "action": "noop", "events": "collect wood"}', "events"),
    ('{"observation": "a", "action": "noop", "step": "one"}', "step"),
])
def test_malformed_lines_report_line_number(tmp_path, line, msg):
    path = tmp_path / "t.jsonl"
    path.write_text('{"observation": "a", "action": "noop"}\n' + line + "\n")
    with pytest.raises(TrajectoryFormatError, match=msg) as err:
        read_trajectories(path)
    assert err.value.line == 2
