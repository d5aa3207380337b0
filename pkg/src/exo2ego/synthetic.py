"""Synthetic textured-plane scene with exact analytic ground truth.

The scene is a plane at constant world z viewed by a slightly tilted static
exocentric camera and a laterally offset egocentric camera per frame. The
texture encodes provenance: channel 0 is ``(col + 0.5) / W``, channel 1 is
``(row + 0.5) / H``, channel 2 is ``(frame + 1) / (F + 1)``, so any rendered
pixel identifies its source pixel exactly. Because the plane is flat, the
exo-to-ego pixel mapping has a closed-form homography that serves as an
independent oracle for the renderer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depth_align import KIND_VIDEO, DepthStack
from .geometry import Intrinsics, Pose, pixel_centers
from .io_formats import Camera, CameraTrajectory

__all__ = [
    "PlaneSceneConfig",
    "PlaneScene",
    "make_plane_scene",
    "corrupt_depth",
    "plane_homography",
    "decode_texture",
]


@dataclass(frozen=True)
class PlaneSceneConfig:
    frames: int = 8
    height: int = 64
    width: int = 64
    plane_z: float = 2.0
    focal: float = 64.0
    exo_tilt_deg: float = 8.0
    ego_offset: tuple = (0.10, 0.06, 0.0)
    ego_drift: float = 0.01  # per-frame lateral shift of the ego camera


@dataclass
class PlaneScene:
    video: np.ndarray  # (F, 3, H, W) float32, provenance texture
    depth_true: np.ndarray  # (F, H, W) float64 camera-space depth
    static: np.ndarray  # (F, H, W) uint8, all ones
    exo_cams: CameraTrajectory
    ego_cams: CameraTrajectory
    plane_z: float

    def true_depth_stack(self, kind: str = KIND_VIDEO) -> DepthStack:
        return DepthStack(self.depth_true.copy(), kind)


def _rot_x(degrees: float) -> np.ndarray:
    rad = np.deg2rad(degrees)
    c, s = np.cos(rad), np.sin(rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def make_plane_scene(cfg: PlaneSceneConfig = PlaneSceneConfig()) -> PlaneScene:
    k = Intrinsics(cfg.focal, cfg.focal, cfg.width / 2.0, cfg.height / 2.0)
    rot = _rot_x(cfg.exo_tilt_deg)
    exo_pose = Pose(rot, np.zeros(3))
    exo_cams = CameraTrajectory([Camera(k, exo_pose)] * cfg.frames)

    ego_cams = []
    base = np.asarray(cfg.ego_offset, dtype=np.float64)
    for f in range(cfg.frames):
        center = base + np.array([cfg.ego_drift * f, 0.0, 0.0])
        ego_cams.append(Camera(k, Pose(rot, -rot @ center)))
    ego_cams = CameraTrajectory(ego_cams)

    # ray through each pixel: plane hit parameter equals camera-space depth
    u, v = pixel_centers(cfg.height, cfg.width)
    d_cam = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1)
    dir_world_z = (d_cam @ rot)[..., 2]
    if np.any(dir_world_z <= 0):
        raise ValueError("tilt too large: some rays miss the plane")
    depth_frame = cfg.plane_z / dir_world_z

    rows = np.arange(cfg.height, dtype=np.float32)
    cols = np.arange(cfg.width, dtype=np.float32)
    tex_r = np.broadcast_to((cols[None, :] + 0.5) / cfg.width, (cfg.height, cfg.width))
    tex_g = np.broadcast_to((rows[:, None] + 0.5) / cfg.height, (cfg.height, cfg.width))

    video = np.empty((cfg.frames, 3, cfg.height, cfg.width), dtype=np.float32)
    depth_true = np.empty((cfg.frames, cfg.height, cfg.width))
    for f in range(cfg.frames):
        video[f, 0] = tex_r
        video[f, 1] = tex_g
        video[f, 2] = np.float32((f + 1) / (cfg.frames + 1))
        depth_true[f] = depth_frame

    static = np.ones((cfg.frames, cfg.height, cfg.width), dtype=np.uint8)
    return PlaneScene(video, depth_true, static, exo_cams, ego_cams, cfg.plane_z)


def decode_texture(rgb, height: int, width: int, frames: int):
    """Recover ``(row, col, frame)`` from provenance-texture colors."""
    rgb = np.asarray(rgb, dtype=np.float64)
    col = np.rint(rgb[..., 0] * width - 0.5).astype(np.int64)
    row = np.rint(rgb[..., 1] * height - 0.5).astype(np.int64)
    frame = np.rint(rgb[..., 2] * (frames + 1) - 1.0).astype(np.int64)
    return row, col, frame


def corrupt_depth(true_depth, alphas, betas) -> np.ndarray:
    """Video-depth stack whose per-frame affine fit against ``true_depth``
    recovers exactly the given ``(alpha, beta)``: ``1/true = a*(1/out) + b``."""
    true_depth = np.asarray(true_depth, dtype=np.float64)
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    betas = np.atleast_1d(np.asarray(betas, dtype=np.float64))
    if alphas.shape[0] != true_depth.shape[0] or betas.shape[0] != true_depth.shape[0]:
        raise ValueError("one (alpha, beta) per frame required")
    inv_out = (1.0 / true_depth - betas[:, None, None]) / alphas[:, None, None]
    if np.any(inv_out <= 0):
        raise ValueError("corruption drives inverse depth non-positive")
    return 1.0 / inv_out


def _k_matrix(intr: Intrinsics) -> np.ndarray:
    return np.array([[intr.fx, 0.0, intr.cx], [0.0, intr.fy, intr.cy], [0.0, 0.0, 1.0]])


def plane_homography(src: Camera, dst: Camera, plane_normal, plane_offset: float) -> np.ndarray:
    """Closed-form pixel homography induced by the world plane ``n . X = d``.

    Derived purely from the plane-restricted rigid transform between the two
    cameras; independent of the point-based projection code, which makes it
    an oracle for rendering tests. Apply to homogeneous pixels of ``src``.
    """
    n = np.asarray(plane_normal, dtype=np.float64)
    r1, t1 = src.pose.rotation, src.pose.translation
    r2, t2 = dst.pose.rotation, dst.pose.translation
    r_rel = r2 @ r1.T
    t_rel = t2 - r_rel @ t1
    n1 = r1 @ n
    delta1 = plane_offset + n1 @ t1
    if abs(delta1) < 1e-12:
        raise ValueError("plane passes through the source camera center")
    h_metric = r_rel + np.outer(t_rel, n1) / delta1
    return _k_matrix(dst.intrinsics) @ h_metric @ np.linalg.inv(_k_matrix(src.intrinsics))
