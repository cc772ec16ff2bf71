import json
import math
from pathlib import Path

import pytest

import repairlab

ROOT = Path(__file__).resolve().parents[2]


def test_metrics():
    assert repairlab.pass_at_k(5, 2, 1) == pytest.approx(0.4)
    assert repairlab.bleu("return max(a, b)", ["return max(a, b)"]) == pytest.approx(1.0)
    gap = repairlab.performance_gap("pass@1", [35.8], [30.8])
    assert gap["delta"] == pytest.approx(5.0)
    assert gap["metric_name"] == "pass@1"


def test_rl_math():
    deltas = repairlab.td_errors([0.0, 1.0], [0.5, 0.25, 0.0], 1.0)
    assert deltas == pytest.approx([-0.25, 0.75])
    adv = repairlab.gae(deltas, 1.0, 0.5)
    assert adv == pytest.approx([-0.25 + 0.5 * 0.75, 0.75])
    assert repairlab.ppo_clip_objective([1.5], [2.0]) == pytest.approx(2.4)
    assert repairlab.pref_prob(math.log(3.0), 0.0) == pytest.approx(0.75)
    assert repairlab.kl_estimate([-1.0, -2.0], [-1.0, -2.0]) == 0.0


def test_errors_cross_the_boundary():
    with pytest.raises(repairlab.RepairlabError):
        repairlab.pass_at_k(3, 1, 4)


def test_toy_verification():
    tasks = repairlab.toy_tasks()
    assert len(tasks) == 20
    task = tasks[0]
    assert repairlab.verify(task, task["ground_truth"])["valid"]
    assert not repairlab.verify(task, task["buggy_code"])["valid"]


def test_pipeline_front_stages(tmp_path):
    overrides = {
        "paths": {
            "tasks": str(ROOT / "data/toy/tasks.jsonl"),
            "output": str(tmp_path / "run"),
            "cache": str(tmp_path / "cache"),
        }
    }
    p = repairlab.Pipeline(ROOT / "configs/toy.json", overrides)
    assert p.run_stage("collect")
    assert not p.run_stage("collect")
    assert p.run_stage("filter")
    assert p.manifest()["stages"]["filter"]["status"] == "done"
    kept = (p.output_dir / "sft_data.jsonl").read_text().splitlines()
    assert len(kept) == 18
    assert all(json.loads(line)["verified"] for line in kept)
    with pytest.raises(repairlab.RepairlabError):
        p.run_stage("ppo")
