"""
Batch loading for detector training: decoding, resizing, augmentation,
normalization and ground-truth packing
"""

import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Deque, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from scenegen import NUM_CLASSES, Label, Sample

logger = logging.getLogger(__name__)


@dataclass
class GroundTruth:
    """Per image, per class presence flag and normalized (x1, y1, x2, y2) box"""

    present: np.ndarray  # [B, n] bool
    boxes: np.ndarray  # [B, n, 4]

    def __len__(self) -> int:
        return int(self.present.shape[0])

    @classmethod
    def from_labels(cls, labels_per_image: Sequence[Sequence[Label]], num_classes: int = NUM_CLASSES) -> "GroundTruth":
        count = len(labels_per_image)
        present = np.zeros((count, num_classes), dtype=bool)
        boxes = np.zeros((count, num_classes, 4))
        for i, labels in enumerate(labels_per_image):
            for class_id, x1, y1, x2, y2 in labels:
                present[i, class_id] = True
                boxes[i, class_id] = (x1, y1, x2, y2)
        return cls(present, boxes)

    def subset(self, indices: Sequence[int]) -> "GroundTruth":
        idx = np.asarray(indices, dtype=int)
        return GroundTruth(self.present[idx], self.boxes[idx])


@dataclass
class Batch:
    images: np.ndarray  # [B, 3, S, S] normalized
    gt: GroundTruth
    indices: List[int]


@dataclass(frozen=True)
class Augmentation:
    flip: bool
    brightness: float
    contrast: float


def resize_pixels(pixels: np.ndarray, size: int) -> np.ndarray:
    if pixels.shape[0] == size and pixels.shape[1] == size:
        return pixels
    resized = Image.fromarray(pixels).resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(resized, dtype=np.uint8)


def apply_augmentation(pixels: np.ndarray, labels: Sequence[Label], aug: Augmentation) -> Tuple[np.ndarray, List[Label]]:
    """Horizontal flip (boxes mirrored) and brightness/contrast jitter"""
    out = pixels.astype(np.float64)
    new_labels = list(labels)
    if aug.flip:
        out = out[:, ::-1]
        new_labels = [(c, 1.0 - x2, y1, 1.0 - x1, y2) for c, x1, y1, x2, y2 in labels]
    mean = out.mean()
    out = ((out - mean) * aug.contrast + mean) * aug.brightness
    return np.clip(out, 0.0, 255.0), new_labels


def normalize(pixels: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    """[..., S, S, 3] pixel values in 0..255 -> [..., 3, S, S] standardized floats"""
    scaled = np.asarray(pixels, dtype=np.float64) / 255.0
    standardized = (scaled - np.asarray(mean)) / np.asarray(std)
    return np.moveaxis(standardized, -1, -3)


class BatchLoader:
    """Deterministic batches with optional shuffling/augmentation, decoded ahead on a thread pool"""

    def __init__(
        self,
        samples: Sequence[Sample],
        batch_size: int,
        image_size: int,
        mean: Sequence[float],
        std: Sequence[float],
        shuffle: bool = False,
        augment: bool = False,
        seed: int = 0,
        workers: int = 2,
        prefetch: int = 2,
    ):
        self.samples = list(samples)
        self.batch_size = batch_size
        self.image_size = image_size
        self.mean = list(mean)
        self.std = list(std)
        self.shuffle = shuffle
        self.augment = augment
        self.seed = seed
        self.workers = max(1, workers)
        self.prefetch = max(1, prefetch)

    def __len__(self) -> int:
        return (len(self.samples) + self.batch_size - 1) // self.batch_size

    def _plan(self, epoch: int) -> List[List[Tuple[int, Optional[Augmentation]]]]:
        rng = np.random.default_rng([self.seed, epoch])
        order = rng.permutation(len(self.samples)) if self.shuffle else np.arange(len(self.samples))
        plan = []
        for start in range(0, len(order), self.batch_size):
            items: List[Tuple[int, Optional[Augmentation]]] = []
            for index in order[start : start + self.batch_size]:
                aug = None
                if self.augment:
                    aug = Augmentation(
                        flip=bool(rng.random() < 0.5),
                        brightness=float(rng.uniform(0.8, 1.2)),
                        contrast=float(rng.uniform(0.8, 1.2)),
                    )
                items.append((int(index), aug))
            plan.append(items)
        return plan

    def _load(self, items: List[Tuple[int, Optional[Augmentation]]]) -> Batch:
        images = []
        labels_per_image = []
        for index, aug in items:
            sample = self.samples[index]
            pixels = resize_pixels(sample.load_pixels(), self.image_size)
            labels: List[Label] = list(sample.labels)
            if aug is not None:
                pixels, labels = apply_augmentation(pixels, labels, aug)
            images.append(pixels)
            labels_per_image.append(labels)
        batch_images = normalize(np.stack(images), self.mean, self.std)
        return Batch(np.ascontiguousarray(batch_images), GroundTruth.from_labels(labels_per_image), [i for i, _ in items])

    def iter_epoch(self, epoch: int = 0) -> Iterator[Batch]:
        plan = self._plan(epoch)
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            pending: Deque[Future] = deque()
            for items in plan:
                pending.append(pool.submit(self._load, items))
                if len(pending) > self.prefetch:
                    yield pending.popleft().result()
            while pending:
                yield pending.popleft().result()

    def __iter__(self) -> Iterator[Batch]:
        return self.iter_epoch(0)


def ground_truth_for(samples: Sequence[Sample]) -> GroundTruth:
    return GroundTruth.from_labels([s.labels for s in samples])
