"""
End-to-end run of every command on a tiny configuration, twice with the same seed
"""

import json
import os

import pytest

from checkpoint import inspect_checkpoint
from main import EXIT_OK, main

RUN_CONFIG = """\
EDGENAV_DATASET_SIZE=8
EDGENAV_IMAGE_SIZE=32
EDGENAV_BATCH_SIZE=4
EDGENAV_TEACHER_EPOCHS=1
EDGENAV_STUDENT_EPOCHS=1
EDGENAV_PROGRESS=false
EDGENAV_PPO_BATCH=16
EDGENAV_HORIZON=32
EDGENAV_TOTAL_STEPS=64
EDGENAV_MAX_EPISODE_STEPS=20
"""


def _run_pipeline(root: str, seed: int = 5) -> dict:
    """Run gen-data through eval-nav; returns the paths that were written"""
    run_file = os.path.join(root, "run.env")
    with open(run_file, "w") as fh:
        fh.write(RUN_CONFIG)
    common = ["--config", run_file, "--seed", str(seed)]
    paths = {
        "data": os.path.join(root, "data"),
        "teacher": os.path.join(root, "teacher"),
        "student": os.path.join(root, "student"),
        "policy": os.path.join(root, "policy"),
        "bench": os.path.join(root, "bench.csv"),
        "trace": os.path.join(root, "trace.jsonl"),
    }
    teacher_ckpt = os.path.join(paths["teacher"], "teacher.ckpt")
    student_ckpt = os.path.join(paths["student"], "student.ckpt")
    policy_ckpt = os.path.join(paths["policy"], "policy.ckpt")

    commands = [
        ["gen-data", "--out", paths["data"]],
        ["train-teacher", "--data", paths["data"], "--out", paths["teacher"]],
        ["distill", "--data", paths["data"], "--out", paths["student"], "--teacher", teacher_ckpt],
        ["eval-map", "--ckpt", student_ckpt, "--data", paths["data"]],
        ["bench", "--ckpt", student_ckpt, "--model", "teacher", "--image-size", "32", "--runs", "2", "--csv", paths["bench"]],
        ["train-policy", "--out", paths["policy"]],
        ["eval-nav", "--policy", policy_ckpt, "--episodes", "3", "--trace", paths["trace"]],
        ["export-plot", "--csv", os.path.join(paths["student"], "train_log.csv"), "--columns", "epoch,val_mAP"],
    ]
    for argv in commands:
        assert main(argv + common) == EXIT_OK, argv[0]
    return paths


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    first = _run_pipeline(str(tmp_path_factory.mktemp("run_a")))
    second = _run_pipeline(str(tmp_path_factory.mktemp("run_b")))
    return first, second


class TestPipeline:
    """Test that the commands chain together"""

    def test_outputs_exist(self, pipeline_runs):
        """Every stage leaves its artifact behind"""
        paths, _ = pipeline_runs
        expected = [
            os.path.join(paths["data"], "manifest.json"),
            os.path.join(paths["teacher"], "teacher.ckpt"),
            os.path.join(paths["teacher"], "train_log.csv"),
            os.path.join(paths["student"], "student.ckpt"),
            os.path.join(paths["student"], "train_log.csv"),
            os.path.join(paths["student"], "train_log.dat"),
            os.path.join(paths["policy"], "policy.ckpt"),
            os.path.join(paths["policy"], "ppo_metrics.csv"),
            paths["bench"],
            paths["trace"],
        ]
        missing = [path for path in expected if not os.path.exists(path)]
        assert missing == []

    def test_checkpoint_metadata(self, pipeline_runs):
        """Checkpoints record their kind, architecture and training summary"""
        paths, _ = pipeline_runs
        student = inspect_checkpoint(os.path.join(paths["student"], "student.ckpt"))
        assert student["kind"] == "detector"
        assert student["extra"]["kd"] is True
        policy = inspect_checkpoint(os.path.join(paths["policy"], "policy.ckpt"))
        assert policy["kind"] == "policy"

    def test_student_is_smaller(self, pipeline_runs):
        """The bench report lists the student below the teacher"""
        paths, _ = pipeline_runs
        lines = _read(paths["bench"]).decode().strip().split("\n")
        params = {line.split(",")[0]: int(line.split(",")[1]) for line in lines[1:]}
        assert params["student"] < params["teacher"]

    def test_logs_have_one_row_per_epoch(self, pipeline_runs):
        paths, _ = pipeline_runs
        lines = _read(os.path.join(paths["student"], "train_log.csv")).decode().strip().split("\n")
        assert lines[0] == "epoch,train_loss,L_det,L_KD,L_feat,val_mAP,lr"
        assert len(lines) == 2

    def test_trace_covers_episodes(self, pipeline_runs):
        paths, _ = pipeline_runs
        with open(paths["trace"]) as fh:
            records = [json.loads(line) for line in fh]
        assert {r["episode"] for r in records} == {1, 2, 3}
        assert all(len(r["state_vector"]) == 18 for r in records)


class TestReproducibility:
    """Test that a fixed seed reproduces every logged number"""

    @pytest.mark.parametrize(
        "relative",
        [
            ("data", "manifest.json"),
            ("data", "train.txt"),
            ("data", "val.txt"),
            ("teacher", "train_log.csv"),
            ("student", "train_log.csv"),
            ("policy", "ppo_metrics.csv"),
            ("trace",),
        ],
    )
    def test_bit_identical(self, pipeline_runs, relative):
        """Same seed, same bytes"""
        first, second = pipeline_runs
        head, *rest = relative
        assert _read(os.path.join(first[head], *rest)) == _read(os.path.join(second[head], *rest))

    def test_checkpoint_tensors_identical(self, pipeline_runs):
        """Trained weights match exactly"""
        first, second = pipeline_runs
        for stage, name in [("teacher", "teacher.ckpt"), ("student", "student.ckpt"), ("policy", "policy.ckpt")]:
            assert _read(os.path.join(first[stage], name)) == _read(os.path.join(second[stage], name)), stage
