"""Pinhole camera math: projection, unprojection, centers, ray directions.

Conventions used throughout the package:

* poses are world-to-camera, ``x_cam = R @ x_world + t``;
* pixel coordinates ``(u, v)`` address pixel centers, so the integer pixel
  at row ``i``, column ``j`` sits at the continuous point ``(j + 0.5, i + 0.5)``;
* no lens distortion (inputs are assumed rectified).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Intrinsics",
    "Pose",
    "camera_center",
    "unproject",
    "project",
    "project_points",
    "ray_direction",
    "pixel_centers",
]

# Rotations loaded from text files are accepted up to this deviation from
# orthonormality; exact constructions satisfy it trivially.
ROTATION_TOL = 1e-4


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform (3x3 rotation, 3-vector translation)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        tr = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        dev = np.abs(rot.T @ rot - np.eye(3)).max()
        if not np.isfinite(dev) or dev > ROTATION_TOL:
            raise ValueError(f"non-orthonormal rotation (deviation {dev:.3g})")
        if not np.all(np.isfinite(tr)):
            raise ValueError("non-finite translation")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return camera_center(self)


def camera_center(pose: Pose) -> np.ndarray:
    """World-space camera center, ``-R^T t``."""
    return -(pose.rotation.T @ pose.translation)


def unproject(u, v, depth, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Lift pixel coordinates at a given metric depth to world points.

    ``u``, ``v``, ``depth`` broadcast; the result has shape ``(..., 3)``.
    Depth is the camera-space z of the point and must be positive.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("depth must be positive")
    x = (u - intrinsics.cx) / intrinsics.fx * depth
    y = (v - intrinsics.cy) / intrinsics.fy * depth
    cam = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
    # world = R^T (cam - t); with row vectors that is (cam - t) @ R
    return (cam - pose.translation) @ pose.rotation


def project(point, intrinsics: Intrinsics, pose: Pose):
    """Pinhole projection of world points to ``(u, v, depth)``.

    Raises for any point at or behind the camera plane; use
    :func:`project_points` when culling is wanted instead.
    """
    uv, depth, in_front = project_points(point, intrinsics, pose)
    if not np.all(in_front):
        raise ValueError("behind camera")
    return uv[..., 0], uv[..., 1], depth


def project_points(points, intrinsics: Intrinsics, pose: Pose):
    """Non-raising projection: ``(uv, depth, in_front)`` with a validity mask."""
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[..., 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = intrinsics.fx * cam[..., 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[..., 1] / safe_z + intrinsics.cy
    return np.stack([u, v], axis=-1), z, in_front


def ray_direction(u, v, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Unit world-space direction from the camera center through pixel ``(u, v)``.

    Depth-independent: for any d > 0 it equals
    ``normalize(unproject(u, v, d) - camera_center)``.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - intrinsics.cx) / intrinsics.fx
    y = (v - intrinsics.cy) / intrinsics.fy
    d_cam = np.stack(np.broadcast_arrays(x, y, np.ones_like(x)), axis=-1)
    d_world = d_cam @ pose.rotation
    return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def pixel_centers(height: int, width: int):
    """Continuous center coordinates ``(u, v)`` of every pixel, each (H, W)."""
    v, u = np.meshgrid(
        np.arange(height, dtype=np.float64) + 0.5,
        np.arange(width, dtype=np.float64) + 0.5,
        indexing="ij",
    )
    return u, v
