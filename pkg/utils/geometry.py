"""
Pinhole camera, cuboid projection and box overlap helpers shared by the scene
renderer, the navigation oracle and mAP evaluation
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

Box = Tuple[float, float, float, float]

CAMERA_HEIGHT = 0.6
HFOV_DEGREES = 60.0
NEAR_PLANE = 0.05

# cuboid edges as index pairs into the 8 corners produced by cuboid_corners()
_EDGES = (
    (0, 1), (1, 3), (3, 2), (2, 0),
    (4, 5), (5, 7), (7, 6), (6, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)  # fmt: skip


@dataclass(frozen=True)
class Camera:
    """Camera on the floor plane at (x, y), looking along heading yaw (radians, CCW from +x)"""

    x: float
    y: float
    yaw: float
    image_size: int
    height: float = CAMERA_HEIGHT
    hfov_degrees: float = HFOV_DEGREES

    @property
    def focal(self) -> float:
        return (self.image_size / 2.0) / math.tan(math.radians(self.hfov_degrees) / 2.0)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.height])

    def basis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """forward, right, up unit vectors in world coordinates"""
        forward = np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])
        right = np.array([math.sin(self.yaw), -math.cos(self.yaw), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        return forward, right, up

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points [..., 3] -> camera coords [..., 3] as (right, up, depth)"""
        forward, right, up = self.basis()
        d = np.asarray(points, dtype=np.float64) - self.position
        return np.stack([d @ right, d @ up, d @ forward], axis=-1)

    def project(self, cam_points: np.ndarray) -> np.ndarray:
        """Camera coords with depth > 0 -> normalized image coords [..., 2] (u right, v down)"""
        f = self.focal
        size = float(self.image_size)
        u = (size / 2.0 + f * cam_points[..., 0] / cam_points[..., 2]) / size
        v = (size / 2.0 - f * cam_points[..., 1] / cam_points[..., 2]) / size
        return np.stack([u, v], axis=-1)

    def pixel_rays(self) -> np.ndarray:
        """Unnormalized world ray direction through every pixel center, [S, S, 3]"""
        forward, right, up = self.basis()
        size = self.image_size
        f = self.focal
        offsets = (np.arange(size) + 0.5 - size / 2.0) / f
        cols = offsets[None, :, None]
        rows = offsets[:, None, None]
        return forward[None, None, :] + cols * right[None, None, :] - rows * up[None, None, :]


def cuboid_corners(cx: float, cy: float, size: float) -> np.ndarray:
    """8 corners of an axis-aligned cube of edge `size` resting on the floor, centered at (cx, cy)"""
    half = size / 2.0
    xs = (cx - half, cx + half)
    ys = (cy - half, cy + half)
    zs = (0.0, size)
    return np.array([[x, y, z] for z in zs for y in ys for x in xs])


def project_cuboid(camera: Camera, cx: float, cy: float, size: float) -> Optional[Box]:
    """Normalized image bbox of a floor cube, clipped to the near plane and to [0, 1]; None when out of view"""
    corners = camera.to_camera(cuboid_corners(cx, cy, size))
    points = [c for c in corners if c[2] >= NEAR_PLANE]
    for a, b in _EDGES:
        za, zb = corners[a][2], corners[b][2]
        if (za - NEAR_PLANE) * (zb - NEAR_PLANE) < 0:
            t = (NEAR_PLANE - za) / (zb - za)
            points.append(corners[a] + t * (corners[b] - corners[a]))
    if not points:
        return None
    uv = camera.project(np.array(points))
    x1, y1 = np.clip(uv.min(axis=0), 0.0, 1.0)
    x2, y2 = np.clip(uv.max(axis=0), 0.0, 1.0)
    if x2 <= x1 or y2 <= y1:
        return None
    return float(x1), float(y1), float(x2), float(y2)


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two (x1, y1, x2, y2) boxes"""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def wrap_angle(angle: float) -> float:
    """Map an angle to (-pi, pi]"""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return wrapped
