"""
Synthetic room scenes with red, blue and black boxes

Renders first-person views by casting one ray per pixel against the room shell
(floor, ceiling, four walls) and the box cuboids, then labels every visible box
with its exact projected extent. Also owns the on-disk dataset format.
"""

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from tqdm import tqdm

from errors import ContractError, DatasetError
from utils.geometry import Box, Camera, box_iou, project_cuboid

logger = logging.getLogger(__name__)

NUM_CLASSES = 3
CLASS_COLORS = {
    0: (200, 30, 30),  # red
    1: (30, 60, 200),  # blue
    2: (25, 25, 25),  # black
}
FACE_SHADE = {"top": 1.0, "x": 0.8, "y": 0.65}
WALL_HEIGHT = 2.5
MIN_VISIBLE_PIXELS = 12
MAX_LABEL_IOU = 0.3
CLASS_PRESENCE = 0.7
TRAIN_FRACTION = 0.9
LABEL_FORMAT = "{:d} {:.17g} {:.17g} {:.17g} {:.17g}"

Label = Tuple[int, float, float, float, float]


@dataclass
class BoxPlacement:
    class_id: int
    x: float
    y: float
    size: float


@dataclass
class SceneSpec:
    image_size: int
    camera_x: float
    camera_y: float
    camera_yaw: float
    boxes: List[BoxPlacement] = field(default_factory=list)
    room_size: float = 10.0
    floor_colors: Tuple[Tuple[int, int, int], Tuple[int, int, int]] = ((150, 140, 120), (118, 110, 96))
    wall_colors: Tuple[Tuple[int, int, int], Tuple[int, int, int]] = ((182, 176, 160), (160, 156, 142))
    ceiling_color: Tuple[int, int, int] = (205, 205, 200)
    lighting: float = 1.0
    noise_sigma: float = 3.0
    seed: int = 0

    @property
    def camera(self) -> Camera:
        return Camera(self.camera_x, self.camera_y, self.camera_yaw, self.image_size)


@dataclass
class LabeledImage:
    pixels: np.ndarray  # [S, S, 3] uint8
    labels: List[Label]
    instance_mask: Optional[np.ndarray] = None  # [S, S] class id per pixel, -1 for background


# ======================================================================
# Rendering
# ======================================================================


def _slab_hits(origin: np.ndarray, rays: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ray/AABB entry distance (inf on miss) and the axis of the entered face"""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rays
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    near = np.minimum(t0, t1)
    far = np.maximum(t0, t1)
    t_enter = near.max(axis=-1)
    t_exit = far.min(axis=-1)
    hit = (t_exit >= t_enter) & (t_enter > 0)
    return np.where(hit, t_enter, np.inf), near.argmax(axis=-1)


def _room_shell(spec: SceneSpec, origin: np.ndarray, rays: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance to, and flat color of, the room surface hit by each ray"""
    room = spec.room_size
    dx, dy, dz = rays[..., 0], rays[..., 1], rays[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (room - origin[0]) / dx, np.where(dx < 0, -origin[0] / dx, np.inf))
        ty = np.where(dy > 0, (room - origin[1]) / dy, np.where(dy < 0, -origin[1] / dy, np.inf))
        tz = np.where(dz > 0, (WALL_HEIGHT - origin[2]) / dz, np.where(dz < 0, -origin[2] / dz, np.inf))
    t = np.minimum(np.minimum(tx, ty), tz)
    hit = origin + t[..., None] * rays

    colors = np.empty(rays.shape[:-1] + (3,))
    floor_a, floor_b = (np.array(c, dtype=np.float64) for c in spec.floor_colors)
    wall_a, wall_b = (np.array(c, dtype=np.float64) for c in spec.wall_colors)

    on_plane = tz <= np.minimum(tx, ty)
    checker = (np.floor(hit[..., 0] / 0.5) + np.floor(hit[..., 1] / 0.5)) % 2 == 0
    floor = on_plane & (dz < 0)
    ceiling = on_plane & (dz > 0)
    colors[floor & checker] = floor_a
    colors[floor & ~checker] = floor_b
    colors[ceiling] = np.array(spec.ceiling_color, dtype=np.float64)

    wall = ~on_plane
    along = np.where(tx <= ty, hit[..., 1], hit[..., 0])
    stripe = (np.floor(along / 0.4) % 2 == 0) | (hit[..., 2] < 0.15)
    colors[wall & stripe] = wall_a
    colors[wall & ~stripe] = wall_b
    return t, colors


def render_scene(spec: SceneSpec) -> LabeledImage:
    """Flat-shaded perspective rendering plus exact projected labels"""
    seen = set()
    for box in spec.boxes:
        if not 0 <= box.class_id < NUM_CLASSES:
            raise ContractError(f"box class id {box.class_id} outside [0, {NUM_CLASSES})")
        if box.class_id in seen:
            raise ContractError(f"class {box.class_id} placed twice; each class appears at most once")
        seen.add(box.class_id)
    if len(spec.boxes) > NUM_CLASSES:
        raise ContractError(f"scene has {len(spec.boxes)} boxes, at most {NUM_CLASSES} allowed")

    camera = spec.camera
    origin = camera.position
    rays = camera.pixel_rays()
    depth, colors = _room_shell(spec, origin, rays)
    mask = np.full(depth.shape, -1, dtype=np.int8)

    for box in spec.boxes:
        half = box.size / 2.0
        lo = np.array([box.x - half, box.y - half, 0.0])
        hi = np.array([box.x + half, box.y + half, box.size])
        t, axis = _slab_hits(origin, rays, lo, hi)
        closer = t < depth
        shade = np.where(axis == 2, FACE_SHADE["top"], np.where(axis == 0, FACE_SHADE["x"], FACE_SHADE["y"]))
        colors[closer] = np.array(CLASS_COLORS[box.class_id], dtype=np.float64) * shade[closer][:, None]
        depth = np.where(closer, t, depth)
        mask[closer] = box.class_id

    rng = np.random.default_rng(spec.seed)
    noisy = colors * spec.lighting + rng.normal(0.0, spec.noise_sigma, size=colors.shape)
    pixels = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)

    labels: List[Label] = []
    for box in sorted(spec.boxes, key=lambda b: b.class_id):
        visible = int(np.count_nonzero(mask == box.class_id))
        if visible < MIN_VISIBLE_PIXELS:
            continue
        projected = project_cuboid(camera, box.x, box.y, box.size)
        if projected is not None:
            labels.append((box.class_id,) + projected)
    return LabeledImage(pixels, labels, mask)


# ======================================================================
# Scene sampling
# ======================================================================


def sample_scene(
    rng: np.random.Generator,
    image_size: int,
    room_size: float = 10.0,
    presence: float = CLASS_PRESENCE,
    max_tries: int = 50,
) -> SceneSpec:
    """Random camera pose, each class present with probability `presence`, placed inside the view"""
    margin = 1.0
    camera_x = float(rng.uniform(margin, room_size - margin))
    camera_y = float(rng.uniform(margin, room_size - margin))
    camera_yaw = float(rng.uniform(-math.pi, math.pi))
    camera = Camera(camera_x, camera_y, camera_yaw, image_size)
    half_fov = math.radians(camera.hfov_degrees) / 2.0

    placed: List[BoxPlacement] = []
    boxes_2d: List[Box] = []
    for class_id in rng.permutation(NUM_CLASSES):
        if rng.random() >= presence:
            continue
        for _ in range(max_tries):
            size = float(rng.uniform(0.5, 0.9))
            distance = float(rng.uniform(1.2, 6.0))
            bearing = camera_yaw + float(rng.uniform(-0.85 * half_fov, 0.85 * half_fov))
            x = camera_x + distance * math.cos(bearing)
            y = camera_y + distance * math.sin(bearing)
            limit = size / 2.0 + 0.1
            if not (limit <= x <= room_size - limit and limit <= y <= room_size - limit):
                continue
            if any(math.hypot(x - p.x, y - p.y) < (size + p.size) / 2.0 + 0.1 for p in placed):
                continue
            projected = project_cuboid(camera, x, y, size)
            if projected is None or any(box_iou(projected, other) > MAX_LABEL_IOU for other in boxes_2d):
                continue
            placed.append(BoxPlacement(int(class_id), x, y, size))
            boxes_2d.append(projected)
            break

    return SceneSpec(
        image_size=image_size,
        camera_x=camera_x,
        camera_y=camera_y,
        camera_yaw=camera_yaw,
        boxes=placed,
        room_size=room_size,
        lighting=float(rng.uniform(0.8, 1.2)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


def _render_from_seed(seed_seq: np.random.SeedSequence, image_size: int) -> LabeledImage:
    return render_scene(sample_scene(np.random.default_rng(seed_seq), image_size))


def gen_dataset(
    count: int,
    seed: int,
    image_size: int = 224,
    workers: int = 1,
    progress: bool = False,
    train_fraction: float = TRAIN_FRACTION,
) -> Tuple[List[LabeledImage], List[LabeledImage]]:
    """Render `count` scenes; the first floor(train_fraction * count) form the training split"""
    children = np.random.SeedSequence(seed).spawn(count)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        images = list(
            tqdm(
                pool.map(lambda s: _render_from_seed(s, image_size), children),
                total=count,
                desc="rendering scenes",
                disable=not progress,
            )
        )
    n_train = math.floor(train_fraction * count)
    logger.info(f"generated {count} scenes ({n_train} train / {count - n_train} val) with seed {seed}")
    return images[:n_train], images[n_train:]


def class_presence(images: Sequence[LabeledImage]) -> List[int]:
    counts = [0] * NUM_CLASSES
    for image in images:
        for class_id in {label[0] for label in image.labels}:
            counts[class_id] += 1
    return counts


# ======================================================================
# On-disk format
# ======================================================================


def channel_stats(images: Sequence[LabeledImage]) -> Tuple[List[float], List[float]]:
    """Per-channel mean/std of pixel values scaled to [0, 1]"""
    if not images:
        return [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for image in images:
        px = image.pixels.reshape(-1, 3).astype(np.float64) / 255.0
        total += px.sum(axis=0)
        total_sq += (px * px).sum(axis=0)
        count += px.shape[0]
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean * mean, 1e-12))
    return mean.tolist(), std.tolist()


def write_dataset(
    root: str, train: Sequence[LabeledImage], val: Sequence[LabeledImage], seed: int, image_size: int
) -> Dict[str, object]:
    """images/NNNNNN.png + labels/NNNNNN.txt + train.txt/val.txt + manifest.json"""
    os.makedirs(os.path.join(root, "images"), exist_ok=True)
    os.makedirs(os.path.join(root, "labels"), exist_ok=True)
    splits: Dict[str, List[str]] = {"train": [], "val": []}
    for index, (split_name, image) in enumerate([("train", im) for im in train] + [("val", im) for im in val]):
        stem = f"{index:06d}"
        Image.fromarray(image.pixels).save(os.path.join(root, "images", f"{stem}.png"))
        with open(os.path.join(root, "labels", f"{stem}.txt"), "w", encoding="utf-8") as fh:
            for label in image.labels:
                fh.write(LABEL_FORMAT.format(*label) + "\n")
        splits[split_name].append(stem)

    for split_name, stems in splits.items():
        with open(os.path.join(root, f"{split_name}.txt"), "w", encoding="utf-8") as fh:
            fh.write("".join(f"{stem}\n" for stem in stems))

    mean, std = channel_stats(train)
    manifest: Dict[str, object] = {
        "seed": seed,
        "count": len(train) + len(val),
        "train_count": len(train),
        "val_count": len(val),
        "image_size": image_size,
        "num_classes": NUM_CLASSES,
        "class_presence": class_presence(list(train) + list(val)),
        "norm_mean": mean,
        "norm_std": std,
    }
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    logger.info(f"wrote dataset to {root}")
    return manifest


@dataclass
class Sample:
    image_path: str
    labels: List[Label]

    def load_pixels(self) -> np.ndarray:
        with Image.open(self.image_path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)


@dataclass
class DatasetHandle:
    root: str
    train: List[Sample]
    val: List[Sample]
    manifest: Dict[str, object]

    @property
    def norm_mean(self) -> List[float]:
        return list(self.manifest.get("norm_mean", [0.0, 0.0, 0.0]))  # type: ignore[arg-type]

    @property
    def norm_std(self) -> List[float]:
        return list(self.manifest.get("norm_std", [1.0, 1.0, 1.0]))  # type: ignore[arg-type]

    @property
    def image_size(self) -> int:
        return int(self.manifest.get("image_size", 224))  # type: ignore[arg-type]


def parse_label_file(path: str) -> List[Label]:
    labels: List[Label] = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise DatasetError(f"expected 'class x1 y1 x2 y2', got {len(parts)} fields", path, line_no)
            try:
                class_id = int(parts[0])
                x1, y1, x2, y2 = (float(p) for p in parts[1:])
            except ValueError as exc:
                raise DatasetError(f"unparseable label: {exc}", path, line_no) from exc
            if not 0 <= class_id < NUM_CLASSES:
                raise DatasetError(f"class id {class_id} outside [0, {NUM_CLASSES})", path, line_no)
            if not all(0.0 <= v <= 1.0 for v in (x1, y1, x2, y2)):
                raise DatasetError("box coordinates must lie in [0, 1]", path, line_no)
            if not (x1 < x2 and y1 < y2):
                raise DatasetError("box corners must satisfy x1 < x2 and y1 < y2", path, line_no)
            if class_id in seen:
                raise DatasetError(f"class {class_id} labeled twice", path, line_no)
            seen.add(class_id)
            labels.append((class_id, x1, y1, x2, y2))
    return labels


def load_dataset(root: str) -> DatasetHandle:
    """Read and validate a dataset directory written by write_dataset()"""
    if not os.path.isdir(root):
        raise DatasetError("dataset directory not found", root)
    manifest_path = os.path.join(root, "manifest.json")
    manifest: Dict[str, object] = {}
    if os.path.exists(manifest_path):
        try:
            with open(manifest_path, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid manifest: {exc.msg}", manifest_path, exc.lineno) from exc

    splits: Dict[str, List[Sample]] = {"train": [], "val": []}
    for split_name in splits:
        list_path = os.path.join(root, f"{split_name}.txt")
        if not os.path.exists(list_path):
            continue
        with open(list_path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                stem = raw.strip()
                if not stem:
                    continue
                image_path = os.path.join(root, "images", f"{stem}.png")
                label_path = os.path.join(root, "labels", f"{stem}.txt")
                if not os.path.exists(image_path):
                    raise DatasetError(f"missing image {image_path}", list_path, line_no)
                if not os.path.exists(label_path):
                    raise DatasetError(f"missing label file {label_path}", list_path, line_no)
                splits[split_name].append(Sample(image_path, parse_label_file(label_path)))

    logger.info(f"loaded dataset {root}: {len(splits['train'])} train / {len(splits['val'])} val")
    return DatasetHandle(root, splits["train"], splits["val"], manifest)
