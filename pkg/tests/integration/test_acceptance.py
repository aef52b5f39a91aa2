"""
Desk-scale quality targets. Hours of CPU time; run with EDGENAV_RUN_ACCEPTANCE=1
"""

import os

import numpy as np
import pytest

from bench import bench_latency
from detector import build_model, student_config, teacher_config
from distill import KdConfig, distill_student, train_teacher
from navsim import NavConfig, NavEnv
from ppo import PpoConfig, train_policy
from scenegen import gen_dataset, load_dataset, write_dataset

pytestmark = [
    pytest.mark.acceptance,
    pytest.mark.skipif(os.getenv("EDGENAV_RUN_ACCEPTANCE") != "1", reason="set EDGENAV_RUN_ACCEPTANCE=1"),
]

DESK_IMAGE_SIZE = 128


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("desk") / "data")
    train, val = gen_dataset(5500, seed=0, image_size=DESK_IMAGE_SIZE, workers=os.cpu_count() or 1)
    write_dataset(root, train, val, seed=0, image_size=DESK_IMAGE_SIZE)
    return load_dataset(root)


class TestNavigationAcceptance:
    """Rolling success over the last 100 training episodes"""

    @pytest.fixture(scope="class")
    def success_by_objects(self, tmp_path_factory):
        rates = {}
        for num_objects in (1, 2, 3):
            nav = NavConfig(num_objects=num_objects)
            out_dir = str(tmp_path_factory.mktemp(f"nav{num_objects}"))
            result = train_policy(lambda seed: NavEnv(nav, seed=seed), PpoConfig(total_steps=200_000), 0, out_dir)
            rates[num_objects] = result.success_rate
        return rates

    @pytest.mark.parametrize("num_objects,threshold", [(1, 0.90), (2, 0.75), (3, 0.65)])
    def test_success_threshold(self, success_by_objects, num_objects, threshold):
        assert success_by_objects[num_objects] >= threshold

    def test_harder_rooms_are_not_easier(self, success_by_objects):
        assert success_by_objects[1] >= success_by_objects[2] >= success_by_objects[3]


class TestDetectionAcceptance:
    """Teacher and distilled student mAP@0.5 on the validation split"""

    @pytest.fixture(scope="class")
    def teacher_result(self, desk_dataset, tmp_path_factory):
        model = build_model(teacher_config(DESK_IMAGE_SIZE), seed=0)
        return train_teacher(model, desk_dataset, KdConfig(), 30, str(tmp_path_factory.mktemp("teacher")))

    def test_teacher_map(self, teacher_result):
        assert teacher_result.best_map >= 0.90

    def test_student_map(self, desk_dataset, teacher_result, tmp_path_factory):
        student = build_model(student_config(DESK_IMAGE_SIZE), seed=0)
        out_dir = str(tmp_path_factory.mktemp("student"))
        result = distill_student(student, teacher_result.model, desk_dataset, KdConfig(), 50, out_dir)
        assert result.best_map >= 0.88

    def test_distillation_helps(self, desk_dataset, teacher_result):
        """Mean over three seeds, with and without the distillation terms"""
        with_kd, without_kd = [], []
        for seed in range(3):
            student = build_model(student_config(DESK_IMAGE_SIZE), seed=seed)
            with_kd.append(distill_student(student, teacher_result.model, desk_dataset, KdConfig(), 50, seed=seed).best_map)
            baseline = build_model(student_config(DESK_IMAGE_SIZE), seed=seed)
            no_kd = KdConfig(lambda_kd=0.0, lambda_feat=0.0)
            without_kd.append(distill_student(baseline, None, desk_dataset, no_kd, 50, seed=seed).best_map)
        assert np.mean(with_kd) >= np.mean(without_kd)


class TestEfficiencyAcceptance:
    """Single-image float32 latency at 224px"""

    def test_latency_ratio(self):
        student = bench_latency(build_model(student_config(), seed=0), runs=50)
        teacher = bench_latency(build_model(teacher_config(), seed=0), runs=50)
        assert student.mean < teacher.mean
        assert student.mean / teacher.mean <= 0.55

    def test_repeat_runs_agree(self):
        model = build_model(student_config(), seed=0)
        first = bench_latency(model, runs=50).mean
        second = bench_latency(model, runs=50).mean
        assert abs(first - second) / max(first, second) <= 0.15
