import json
import os

import pytest

import dwfs

HERE = os.path.dirname(os.path.abspath(__file__))


def test_score_matches_hand_computation():
    # one obfuscated condition that costs 10% accuracy and wipes feature 1
    r = dwfs.score([0.6, 0.4], 1.0, [[1.0, 0.0]], [0.9], beta=1.0, theta=0.0)
    assert r["alpha_bar"] == pytest.approx(1.0)
    assert r["w1"] == pytest.approx(0.0)
    assert r["delta_importance"] == pytest.approx([0.4, 0.4])
    assert r["scores"] == pytest.approx([-0.4, -0.4])
    assert r["selected"] == []


def test_score_with_beta_zero_is_plain_importance():
    r = dwfs.score([0.5, 0.3, 0.2], 0.9, [[0.2, 0.3, 0.5]], [0.5], beta=0.0)
    assert r["scores"] == pytest.approx([0.5, 0.3, 0.2])
    assert r["selected"] == [0]


def test_extract_sbs_keeps_neighbors_of_sensitive_nodes():
    g = {
        "nodes": [{"id": i, "sig": f"m{i}", "sensitive": i == 2} for i in range(5)],
        "edges": [[0, 1], [1, 2], [2, 3], [4, 0]],
        "label": 0,
    }
    out = dwfs.extract_sbs(g, hops=0)
    assert [n["id"] for n in out["nodes"]] == [1, 2, 3]
    assert out["edges"] == [[1, 2], [2, 3]]
    wider = dwfs.extract_sbs(g, hops=2)
    assert [n["id"] for n in wider["nodes"]] == [0, 1, 2, 3]


def test_family_metrics_worked_example():
    y_true = [0] * 10 + [1] * 10
    y_pred = [0] * 8 + [1] * 2 + [0] + [1] * 9
    r = dwfs.family_metrics(y_true, y_pred, 2)
    assert r["metrics"]["families"][0]["f1"] == pytest.approx(0.8421052631578947, abs=1e-12)


def test_errors_carry_their_kind():
    with pytest.raises(dwfs.DwfsError, match="^argument"):
        dwfs.extract_sbs({"nodes": [], "edges": []}, origin="sideways")
    with pytest.raises(dwfs.DwfsError):
        dwfs.family_metrics([0, 3], [0, 0], 2)


def test_pipeline_runs_end_to_end(tmp_path):
    with open(os.path.join(HERE, "..", "data", "small_run.json"), encoding="utf-8") as f:
        cfg = json.load(f)
    cfg["out"] = str(tmp_path / "run")
    p = dwfs.Pipeline(cfg)
    report = p.run()
    assert report["models"] == ["gcn"]
    assert (tmp_path / "run" / "report" / "report.md").exists()
    with pytest.raises(dwfs.DwfsError, match="^io"):
        dwfs.Pipeline({"out": str(tmp_path / "absent")}).select()
