"""Point-cloud lifting and z-buffer splat rendering of the egocentric prior.

Each exocentric frame's valid static pixels are unprojected into a world-space
point cloud, then rendered from that frame's egocentric camera: every point
stamps a square splat and the nearest depth wins per pixel. Holes keep a
neutral fill color, zero depth, and a zero validity bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io_formats
from .geometry import Intrinsics, Pose, project_points, unproject

__all__ = [
    "PointCloudFrame",
    "RenderedPrior",
    "lift_frame",
    "lift_video",
    "render_frame",
    "render_clouds",
    "render_prior",
    "write_clouds",
    "read_clouds",
]

DEFAULT_RADIUS = 1
DEFAULT_FILL = 0.5


@dataclass
class PointCloudFrame:
    """World-space points of one frame with colors and source-pixel provenance."""

    points: np.ndarray  # (N, 3) world coordinates
    colors: np.ndarray  # (N, 3) in [0, 1]
    source_pixel: np.ndarray  # (N, 2) integer (row, col)
    frame_index: int
    source_height: int
    source_width: int

    @property
    def empty(self) -> bool:
        return self.points.shape[0] == 0


@dataclass
class RenderedPrior:
    """Rendered egocentric prior video: valid == 0 exactly where depth == 0."""

    rgb: np.ndarray  # (F, 3, H, W) float32
    depth: np.ndarray  # (F, H, W) float64
    valid: np.ndarray  # (F, H, W) bool


def lift_frame(rgb, depth, valid, intrinsics: Intrinsics, pose: Pose, frame_index: int = 0) -> PointCloudFrame:
    """Unproject one frame's valid pixels into a world point cloud.

    An all-invalid frame yields an empty cloud (flagged via ``.empty``),
    not an error.
    """
    rgb = np.asarray(rgb)
    depth = np.asarray(depth, dtype=np.float64)
    sel = np.asarray(valid).astype(bool)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError("rgb must be 3 x H x W")
    if depth.shape != rgb.shape[1:] or sel.shape != depth.shape:
        raise ValueError("depth/valid shape mismatch")
    rows, cols = np.nonzero(sel)
    if rows.size == 0:
        return PointCloudFrame(
            np.zeros((0, 3)), np.zeros((0, 3), dtype=np.float32), np.zeros((0, 2), dtype=np.int64),
            frame_index, depth.shape[0], depth.shape[1],
        )
    d = depth[rows, cols]
    if np.any(d <= 0):
        raise ValueError("non-positive depth on a valid pixel")
    points = unproject(cols + 0.5, rows + 0.5, d, intrinsics, pose)
    colors = np.ascontiguousarray(rgb[:, rows, cols].T, dtype=np.float32)
    source = np.stack([rows, cols], axis=1)
    return PointCloudFrame(points, colors, source, frame_index, depth.shape[0], depth.shape[1])


def lift_video(video, depth_stack, static_mask, exo_cams) -> list[PointCloudFrame]:
    """Per-frame clouds from static pixels with valid positive depth."""
    video = np.asarray(video)
    static = np.asarray(static_mask)
    frames = video.shape[0]
    if not (depth_stack.frames == frames == static.shape[0] == len(exo_cams)):
        raise ValueError("frame count mismatch")
    clouds = []
    for f in range(frames):
        sel = (static[f] > 0) & depth_stack.valid[f]
        cam = exo_cams[f]
        clouds.append(lift_frame(video[f], depth_stack.values[f], sel, cam.intrinsics, cam.pose, frame_index=f))
    return clouds


def render_frame(
    cloud: PointCloudFrame,
    intrinsics: Intrinsics,
    pose: Pose,
    height: int,
    width: int,
    radius: int = DEFAULT_RADIUS,
    fill: float = DEFAULT_FILL,
):
    """Z-buffer splat render of one cloud; returns ``(rgb, depth, valid)``.

    Points behind the camera or projecting outside the image are culled.
    Each surviving point stamps a (2*radius+1)^2 square clipped to bounds;
    per pixel the smallest depth wins, equal depths resolved in favor of the
    lower point index.
    """
    if radius < 0 or int(radius) != radius:
        raise ValueError("radius must be a non-negative integer")
    rgb = np.full((3, height, width), fill, dtype=np.float32)
    depth = np.zeros((height, width), dtype=np.float64)
    valid = np.zeros((height, width), dtype=bool)
    if cloud.empty:
        return rgb, depth, valid

    uv, z, in_front = project_points(cloud.points, intrinsics, pose)
    base_col = np.floor(uv[:, 0]).astype(np.int64)
    base_row = np.floor(uv[:, 1]).astype(np.int64)
    keep = in_front & (base_col >= 0) & (base_col < width) & (base_row >= 0) & (base_row < height)
    if not np.any(keep):
        return rgb, depth, valid
    base_col = base_col[keep]
    base_row = base_row[keep]
    z = z[keep]
    colors = cloud.colors[keep]
    point_idx = np.arange(z.size, dtype=np.int64)

    side = 2 * radius + 1
    offsets = np.arange(-radius, radius + 1, dtype=np.int64)
    d_row, d_col = np.meshgrid(offsets, offsets, indexing="ij")
    rows = (base_row[:, None, None] + d_row[None]).reshape(-1)
    cols = (base_col[:, None, None] + d_col[None]).reshape(-1)
    idx = np.repeat(point_idx, side * side)
    inb = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    rows, cols, idx = rows[inb], cols[inb], idx[inb]

    pix = rows * width + cols
    order = np.lexsort((idx, z[idx], pix))
    pix_sorted = pix[order]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]

    wr, wc, wi = rows[win], cols[win], idx[win]
    rgb[:, wr, wc] = colors[wi].T
    depth[wr, wc] = z[wi]
    valid[wr, wc] = True
    return rgb, depth, valid


def render_clouds(
    clouds: list[PointCloudFrame],
    ego_cams,
    height: int,
    width: int,
    radius: int = DEFAULT_RADIUS,
    fill: float = DEFAULT_FILL,
) -> RenderedPrior:
    if len(clouds) != len(ego_cams):
        raise ValueError("frame count mismatch")
    frames = len(clouds)
    rgb = np.empty((frames, 3, height, width), dtype=np.float32)
    depth = np.empty((frames, height, width), dtype=np.float64)
    valid = np.empty((frames, height, width), dtype=bool)
    for f in range(frames):
        cam = ego_cams[f]
        rgb[f], depth[f], valid[f] = render_frame(clouds[f], cam.intrinsics, cam.pose, height, width, radius, fill)
    return RenderedPrior(rgb, depth, valid)


def render_prior(
    video,
    depth_stack,
    static_mask,
    exo_cams,
    ego_cams,
    height: int,
    width: int,
    radius: int = DEFAULT_RADIUS,
    fill: float = DEFAULT_FILL,
) -> RenderedPrior:
    """Lift every exocentric frame and render it from its egocentric camera."""
    if len(ego_cams) != np.asarray(video).shape[0]:
        raise ValueError("frame count mismatch")
    clouds = lift_video(video, depth_stack, static_mask, exo_cams)
    return render_clouds(clouds, ego_cams, height, width, radius, fill)


# ---------------------------------------------------------------------------
# Cloud serialization (single-tensor wire format for the CLI)
# ---------------------------------------------------------------------------

# Row layout of the (N, 11) float32 cloud tensor:
#   frame, source_row, source_col, x, y, z, r, g, b, source_height, source_width
_CLOUD_COLS = 11


def write_clouds(path, clouds: list[PointCloudFrame]) -> None:
    rows = []
    for cloud in clouds:
        n = cloud.points.shape[0]
        if n == 0:
            continue
        block = np.empty((n, _CLOUD_COLS), dtype=np.float32)
        block[:, 0] = cloud.frame_index
        block[:, 1:3] = cloud.source_pixel
        block[:, 3:6] = cloud.points
        block[:, 6:9] = cloud.colors
        block[:, 9] = cloud.source_height
        block[:, 10] = cloud.source_width
        rows.append(block)
    if not rows:
        raise ValueError("cannot serialize an all-empty cloud set")
    io_formats.write_tensor(path, np.concatenate(rows, axis=0))


def read_clouds(path, num_frames: int = None) -> list[PointCloudFrame]:
    data = io_formats.read_tensor(path)
    if data.ndim != 2 or data.shape[1] != _CLOUD_COLS:
        raise ValueError(f"cloud tensor must be N x {_CLOUD_COLS}")
    frame_ids = data[:, 0].astype(np.int64)
    frames = int(frame_ids.max()) + 1 if num_frames is None else num_frames
    if np.any(frame_ids >= frames) or np.any(frame_ids < 0):
        raise ValueError("cloud frame index out of range")
    h = int(data[0, 9])
    w = int(data[0, 10])
    clouds = []
    for f in range(frames):
        block = data[frame_ids == f]
        clouds.append(
            PointCloudFrame(
                block[:, 3:6].astype(np.float64),
                block[:, 6:9].astype(np.float32),
                block[:, 1:3].astype(np.int64),
                f,
                h,
                w,
            )
        )
    return clouds
