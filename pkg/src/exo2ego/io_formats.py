"""Bit-exact file formats: tensors, camera trajectories, object annotations.

Tensor files (extension ``.egxt``) are the wire contract for every CLI
subcommand. Layout, all little-endian:

    magic      4 bytes  b"EGXT"
    version    u32      1
    dtype      u8       0 = float32, 1 = uint8
    ndim       u8       1..=5
    dims       ndim*u32 every dim >= 1
    payload    row-major values

Camera files are text, one camera per line (``#`` starts a comment):

    fx fy cx cy  r11 r12 r13 t1  r21 r22 r23 t2  r31 r32 r33 t3

with ``[R|t]`` the world-to-camera transform. Object annotation files are
JSON; see :func:`read_objects`.

Canonical array layouts used across the package: videos are ``F x 3 x H x W``
float32 in [0, 1]; binary masks are ``F x H x W`` uint8 in {0, 1}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, Pose

__all__ = [
    "write_tensor",
    "read_tensor",
    "Camera",
    "CameraTrajectory",
    "read_cameras",
    "write_cameras",
    "ObjectTrack",
    "ObjectSet",
    "read_objects",
    "write_objects",
    "tight_box",
]

MAGIC = b"EGXT"
VERSION = 1
MAX_RANK = 5
_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_BY_KIND = {("f", 4): 0, ("u", 1): 1}

_MAX_DIM = 2**32 - 1


def write_tensor(path, data: np.ndarray) -> None:
    """Serialize a float32 or uint8 array; round-trips bit-exactly."""
    arr = np.asarray(data)
    code = _CODE_BY_KIND.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype} (float32 or uint8 only)")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise ValueError(f"unsupported rank {arr.ndim} (must be 1..{MAX_RANK})")
    if any(d < 1 for d in arr.shape):
        raise ValueError("all dims must be >= 1")
    if any(d > _MAX_DIM for d in arr.shape):
        raise ValueError("dims overflow 32-bit range")
    header = struct.pack("<4sIBB", MAGIC, VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_DTYPE_BY_CODE[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path) -> np.ndarray:
    """Inverse of :func:`write_tensor`."""
    raw = Path(path).read_bytes()
    if len(raw) < 10:
        raise ValueError(f"{path}: truncated header")
    magic, version, code, ndim = struct.unpack_from("<4sIBB", raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if code not in _DTYPE_BY_CODE:
        raise ValueError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= MAX_RANK:
        raise ValueError(f"{path}: unsupported rank {ndim}")
    offset = 10
    if len(raw) < offset + 4 * ndim:
        raise ValueError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    if any(d < 1 for d in dims):
        raise ValueError(f"{path}: zero dim in header")
    dtype = _DTYPE_BY_CODE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    body = raw[offset:]
    if len(body) < expected:
        raise ValueError(f"{path}: truncated payload ({len(body)} < {expected} bytes)")
    if len(body) > expected:
        raise ValueError(f"{path}: payload size mismatch ({len(body)} > {expected} bytes)")
    return np.frombuffer(body, dtype=dtype).reshape(dims).copy()


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose


@dataclass
class CameraTrajectory:
    """Per-frame cameras; index ``traj[i]`` gives frame i's :class:`Camera`."""

    cameras: list[Camera] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    def __iter__(self):
        return iter(self.cameras)

    def centers(self) -> np.ndarray:
        return np.array([cam.pose.center for cam in self.cameras])


def read_cameras(path) -> CameraTrajectory:
    """Parse a camera text file; validates rotations on load."""
    cams = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 16:
            raise ValueError(f"{path}:{lineno}: wrong field count {len(fields)} (want 16)")
        vals = [float(tok) for tok in fields]
        fx, fy, cx, cy = vals[:4]
        mat = np.array(vals[4:], dtype=np.float64).reshape(3, 4)
        try:
            cams.append(Camera(Intrinsics(fx, fy, cx, cy), Pose(mat[:, :3], mat[:, 3])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not cams:
        raise ValueError(f"{path}: empty trajectory")
    return CameraTrajectory(cams)


def write_cameras(path, trajectory: CameraTrajectory) -> None:
    """Write cameras with full float precision (repr round-trip)."""
    lines = []
    for cam in trajectory:
        k = cam.intrinsics
        rt = np.hstack([cam.pose.rotation, cam.pose.translation[:, None]])
        vals = [k.fx, k.fy, k.cx, k.cy] + [float(x) for x in rt.ravel()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Object annotations
# ---------------------------------------------------------------------------

# Embeddings are supplied pre-normalized by external tooling; tolerate float
# truncation up to this deviation (then renormalize), reject beyond.
_EMBED_NORM_SLACK = 1e-2


@dataclass
class ObjectTrack:
    """One tracked object: per-frame masks, tight boxes, appearance embedding.

    Boxes use the half-open pixel convention ``(x_min, y_min, x_max, y_max)``
    so a single pixel at row i, col j has box ``(j, i, j+1, i+1)`` and area 1.
    ``boxes[f]`` is None on frames where the object is absent (empty mask).
    """

    object_id: int
    masks: np.ndarray  # (F, H, W) uint8 in {0, 1}
    boxes: list  # length F, each (x0, y0, x1, y1) or None
    embedding: np.ndarray  # (d,) unit norm


@dataclass
class ObjectSet:
    objects: list[ObjectTrack] = field(default_factory=list)
    side: str = ""

    def get(self, object_id: int) -> ObjectTrack:
        for track in self.objects:
            if track.object_id == object_id:
                return track
        raise KeyError(f"no object with id {object_id}")


def tight_box(mask: np.ndarray):
    """Half-open tight bounding box of a 2-D binary mask, or None if empty."""
    rows, cols = np.nonzero(np.asarray(mask))
    if rows.size == 0:
        return None
    return (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


def track_from_masks(object_id: int, masks: np.ndarray, embedding: np.ndarray) -> ObjectTrack:
    """Build a track with boxes computed as the tight boxes of the masks."""
    masks = np.asarray(masks, dtype=np.uint8)
    boxes = [tight_box(masks[f]) for f in range(masks.shape[0])]
    return ObjectTrack(object_id, masks, boxes, _check_embedding(np.asarray(embedding, np.float64), object_id))


def _check_embedding(vec: np.ndarray, object_id) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > _EMBED_NORM_SLACK:
        raise ValueError(f"object {object_id}: embedding norm {norm:.4g} deviates beyond {_EMBED_NORM_SLACK}")
    return vec / norm


def read_objects(path) -> ObjectSet:
    """Load an object annotation JSON file.

    Schema::

        {"side": "ground_truth",
         "objects": [{"id": 0,
                      "embedding": [...],
                      "mask": "relative/path.egxt",   # F x H x W uint8 tensor
                      "boxes": [[x0, y0, x1, y1] | null, ...]}]}

    Mask paths are resolved relative to the JSON file. Each non-null box must
    equal the tight box of that frame's mask; embeddings must be unit-norm
    within 1e-2 (they are renormalized on load).
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    objects = []
    for entry in doc.get("objects", []):
        oid = int(entry["id"])
        masks = read_tensor(path.parent / entry["mask"])
        if masks.ndim != 3 or masks.dtype != np.uint8:
            raise ValueError(f"object {oid}: mask must be a F x H x W uint8 tensor")
        if np.any(masks > 1):
            raise ValueError(f"object {oid}: mask values must be in {{0, 1}}")
        boxes_raw = entry["boxes"]
        if len(boxes_raw) != masks.shape[0]:
            raise ValueError(f"object {oid}: {len(boxes_raw)} boxes for {masks.shape[0]} frames")
        boxes = []
        for f, box in enumerate(boxes_raw):
            tight = tight_box(masks[f])
            if box is None:
                if tight is not None:
                    raise ValueError(f"object {oid} frame {f}: missing box for non-empty mask")
                boxes.append(None)
                continue
            box = tuple(float(x) for x in box)
            if tight is None or tuple(float(x) for x in tight) != box:
                raise ValueError(f"object {oid} frame {f}: box {box} is not the tight box {tight}")
            boxes.append(box)
        embedding = _check_embedding(np.asarray(entry["embedding"], dtype=np.float64), oid)
        objects.append(ObjectTrack(oid, masks, boxes, embedding))
    return ObjectSet(objects, side=doc.get("side", ""))


def write_objects(path, obj_set: ObjectSet) -> None:
    """Write an annotation JSON plus one mask tensor per object next to it."""
    path = Path(path)
    entries = []
    for track in obj_set.objects:
        mask_name = f"{path.stem}_obj{track.object_id}_mask.egxt"
        write_tensor(path.parent / mask_name, np.asarray(track.masks, dtype=np.uint8))
        entries.append(
            {
                "id": track.object_id,
                "embedding": [float(x) for x in track.embedding],
                "mask": mask_name,
                "boxes": [list(b) if b is not None else None for b in track.boxes],
            }
        )
    path.write_text(json.dumps({"side": obj_set.side, "objects": entries}, indent=1))
