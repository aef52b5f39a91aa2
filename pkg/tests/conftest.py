"""
Shared fixtures: tiny detector configs and a small rendered dataset on disk
"""

import os

import pytest

from detector import ModelConfig
from scenegen import gen_dataset, load_dataset, write_dataset

TINY_IMAGE_SIZE = 32


def make_tiny_config(name: str = "tiny", channels=(8, 16, 32, 64), head_width: int = 16, **overrides) -> ModelConfig:
    """Four one-block stages at 32x32 input"""
    base = dict(
        depths=[1, 1, 1, 1],
        channels=list(channels),
        head_width=head_width,
        input_size=TINY_IMAGE_SIZE,
        name=name,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_student_config() -> ModelConfig:
    return make_tiny_config("student")


@pytest.fixture
def tiny_teacher_config() -> ModelConfig:
    return make_tiny_config("teacher", channels=(16, 32, 64, 128), head_width=32)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory) -> str:
    """Sixteen rendered 32px scenes, 12 train / 4 val"""
    root = str(tmp_path_factory.mktemp("data") / "tiny")
    train, val = gen_dataset(16, seed=3, image_size=TINY_IMAGE_SIZE, train_fraction=0.75)
    write_dataset(root, train, val, seed=3, image_size=TINY_IMAGE_SIZE)
    assert os.path.exists(os.path.join(root, "manifest.json"))
    return root


@pytest.fixture
def tiny_dataset(tiny_dataset_dir):
    return load_dataset(tiny_dataset_dir)
