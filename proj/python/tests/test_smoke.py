import json

import pytest

import bimanual_sg as bs


def test_vocabularies():
    assert len(bs.ACTIONS) == 14 and bs.ACTIONS[0] == "idle"
    assert "right_hand" in bs.OBJECTS
    assert len(bs.RELATIONS) == 15


def test_static_relations_stacked():
    table = (0, 0, 0, 100, 50, 100)
    resting = (20, 50, 20, 60, 120, 60)
    assert "contact" in bs.static_relations(resting, table)
    hovering = (20, 80, 20, 60, 150, 60)
    assert bs.static_relations(hovering, table) == ["above"]
    assert bs.static_relations(table, hovering) == ["below"]


def test_bad_box_raises():
    with pytest.raises(ValueError):
        bs.static_relations((0, 0, 0, 1, 1), (0, 0, 0, 1, 1, 1))
    with pytest.raises(ValueError):
        bs.static_relations((1, 0, 0, 0, 1, 1), (0, 0, 0, 1, 1, 1))


def test_dynamic_stationary_is_stable():
    a = [(0, 0, 0, 50, 50, 50)] * 8
    b = [(300, 0, 0, 350, 50, 50)] * 8
    assert bs.dynamic_relations(a, b) == ["stable"]


def test_score_worked_example():
    peak = lambda i: [0.9 if j == i else 0.1 / 13 for j in range(14)]
    a, b = bs.ACTIONS.index("approach"), bs.ACTIONS.index("lift")
    r = bs.score([peak(a), peak(b), peak(b), peak(b)], ["approach", "approach", "lift", "lift"])
    assert r["macro"]["f1"] == pytest.approx((2 / 3 + 0.8) / 2)
    assert r["micro"]["precision"] == pytest.approx(r["accuracy"])


def test_pipeline(tmp_path):
    cfg = json.dumps({"suite": {"name": "kitchen-mini", "subjects": 2, "repetitions": 2}})
    n = bs.generate_dataset(cfg, str(tmp_path))
    assert n == 16
    frames = sorted((tmp_path / "frames").glob("*.jsonl"))
    graphs = bs.frame_graphs(str(frames[0]))
    assert len(graphs) > 10
    g = json.loads(graphs[-1])
    assert g["nodes"]
    window = bs.temporal_concat(graphs[-10:])
    assert bs.mirror(bs.mirror(window)) == window


def test_gradcheck_small():
    r = bs.gradcheck(graphs=2, latent=4, steps=2)
    assert r["passed"], r
