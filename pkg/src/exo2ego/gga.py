"""Geometry-guided self-attention: direction fields, log-gain bias, attention.

View-direction agreement between the two segments of a fused token sequence
is turned into an additive attention-logit bias. For a query direction q and
key direction k (unit vectors in world space, both measured from the same
frame's egocentric camera center) the gain is ``g = cos_sim(q, k) + 1`` in
[0, 2] and the bias is ``log(max(g, eps) * weight)``. Egocentric token
directions are camera-ray directions and therefore need no depth; exocentric
token directions point from the egocentric camera center to the token's
lifted world position, so the same key token carries different directions on
different frames.

Directions are computed per pixel and averaged over non-overlapping
time x height x width patches (default 4 x 16 x 16) to reach token
resolution; the bias is precomputed once per frame pair and is constant with
respect to the attention inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import camera_center, pixel_centers, ray_direction

__all__ = [
    "PatchGrid",
    "DirectionField",
    "GeometryBias",
    "AttentionBlockLayout",
    "patch_directions",
    "geometry_gain",
    "bias_matrix",
    "gga_attention",
    "attention_gradients",
    "gradient_check",
    "build_direction_inputs",
]

DEFAULT_LAMBDA = 1.0
DEFAULT_EPS_GAIN = 1e-4
# a patch whose mean direction is shorter than this is treated as degenerate
MIN_MEAN_NORM = 1e-3


@dataclass(frozen=True)
class PatchGrid:
    """Pixel-to-token reduction strides (time, height, width)."""

    t_stride: int = 4
    h_stride: int = 16
    w_stride: int = 16

    def __post_init__(self):
        if min(self.t_stride, self.h_stride, self.w_stride) < 1:
            raise ValueError("strides must be >= 1")

    def token_dims(self, frames: int, height: int, width: int):
        return (
            -(-frames // self.t_stride),
            -(-height // self.h_stride),
            -(-width // self.w_stride),
        )

    @classmethod
    def parse(cls, text: str) -> "PatchGrid":
        """Parse a ``TxHxW`` string such as ``4x16x16``."""
        parts = text.lower().split("x")
        if len(parts) != 3:
            raise ValueError(f"bad grid spec {text!r} (want TxHxW)")
        return cls(*(int(p) for p in parts))


@dataclass
class DirectionField:
    """Per-token unit directions over a (frames, h, w) token grid."""

    directions: np.ndarray  # (f, h, w, 3)
    valid: np.ndarray  # (f, h, w) bool

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.valid = np.asarray(self.valid).astype(bool)
        if self.directions.ndim != 4 or self.directions.shape[-1] != 3:
            raise ValueError("directions must be (frames, h, w, 3)")
        if self.valid.shape != self.directions.shape[:3]:
            raise ValueError("validity shape mismatch")
        norms = np.linalg.norm(self.directions[self.valid], axis=-1)
        if norms.size and np.abs(norms - 1.0).max() > 1e-5:
            raise ValueError("valid directions must be unit norm")

    @property
    def frames(self) -> int:
        return self.directions.shape[0]

    @property
    def tokens_per_frame(self) -> int:
        return self.directions.shape[1] * self.directions.shape[2]

    def frame_flat(self):
        """Directions and validity flattened per frame: (f, l, 3) and (f, l)."""
        f = self.frames
        return self.directions.reshape(f, -1, 3), self.valid.reshape(f, -1)

    @classmethod
    def from_vectors(cls, vectors, valid=None) -> "DirectionField":
        """Wrap a flat (n, 3) direction list as a single-frame 1 x 1 x n field."""
        vecs = np.asarray(vectors, dtype=np.float64).reshape(1, 1, -1, 3)
        if valid is None:
            valid = np.ones(vecs.shape[:3], dtype=bool)
        else:
            valid = np.asarray(valid).astype(bool).reshape(vecs.shape[:3])
        return cls(vecs, valid)


def patch_directions(pixel_dirs, grid: PatchGrid, valid=None) -> DirectionField:
    """Average pixel directions over each grid patch and renormalize.

    ``pixel_dirs`` is (F, H, W, 3); ``valid`` marks pixels that contribute
    (default: all). A token with no valid pixels, or whose mean direction
    nearly cancels (norm < 1e-3, e.g. antipodal members), is flagged invalid
    and later receives the neutral gain g = 1.
    """
    dirs = np.asarray(pixel_dirs, dtype=np.float64)
    if dirs.ndim != 4 or dirs.shape[-1] != 3:
        raise ValueError("pixel directions must be (F, H, W, 3)")
    frames, height, width = dirs.shape[:3]
    if valid is None:
        valid = np.ones((frames, height, width), dtype=bool)
    else:
        valid = np.asarray(valid).astype(bool)
        if valid.shape != (frames, height, width):
            raise ValueError("validity shape mismatch")

    weighted = np.where(valid[..., None], dirs, 0.0)
    counts = valid.astype(np.float64)

    def block_sum(arr, axis, stride):
        edges = np.arange(0, arr.shape[axis], stride)
        return np.add.reduceat(arr, edges, axis=axis)

    for axis, stride in ((0, grid.t_stride), (1, grid.h_stride), (2, grid.w_stride)):
        weighted = block_sum(weighted, axis, stride)
        counts = block_sum(counts, axis, stride)

    has_pixels = counts > 0
    mean = np.zeros_like(weighted)
    mean[has_pixels] = weighted[has_pixels] / counts[has_pixels][..., None]
    norms = np.linalg.norm(mean, axis=-1)
    token_valid = has_pixels & (norms >= MIN_MEAN_NORM)
    out = np.zeros_like(mean)
    out[token_valid] = mean[token_valid] / norms[token_valid][..., None]
    return DirectionField(out, token_valid)


def geometry_gain(qhat, khat):
    """Gain ``cos_sim + 1`` for unit directions; in [0, 2]."""
    q = np.asarray(qhat, dtype=np.float64)
    k = np.asarray(khat, dtype=np.float64)
    return np.sum(q * k, axis=-1) + 1.0


@dataclass(frozen=True)
class GeometryBias:
    """Precomputed log-gain bias blocks, one (queries x keys) matrix per frame.

    ``values[i][m, n] = log(max(g(q_i,m, k_i,n), eps_gain) * weight)``; rows
    or columns of invalid tokens carry the neutral gain 1. The reverse
    (key-segment query to query-segment key) block of frame i is the
    transpose, since both directions are measured from frame i's camera
    center and the gain is symmetric.
    """

    values: np.ndarray  # (frames, n_query, n_key) or (n_query, n_key)
    weight: float = DEFAULT_LAMBDA
    eps_gain: float = DEFAULT_EPS_GAIN

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim not in (2, 3):
            raise ValueError("bias values must be 2-D or stacked per frame (3-D)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("bias values must be finite")

    def block(self, frame: int = 0) -> np.ndarray:
        return self.values if self.values.ndim == 2 else self.values[frame]

    @property
    def frames(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[0]


def bias_matrix(
    query_field: DirectionField,
    key_field: DirectionField,
    weight: float = DEFAULT_LAMBDA,
    eps_gain: float = DEFAULT_EPS_GAIN,
) -> GeometryBias:
    """Per-frame bias blocks ``log(max(g, eps) * weight)`` between two fields."""
    if weight <= 0:
        raise ValueError("gain weight must be positive")
    if eps_gain <= 0:
        raise ValueError("gain clamp must be positive")
    if query_field.frames != key_field.frames:
        raise ValueError("direction fields disagree on frame count")
    q_dirs, q_valid = query_field.frame_flat()
    k_dirs, k_valid = key_field.frame_flat()
    gains = np.einsum("fmd,fnd->fmn", q_dirs, k_dirs) + 1.0
    neutral = ~(q_valid[:, :, None] & k_valid[:, None, :])
    gains[neutral] = 1.0
    values = np.log(np.maximum(gains, eps_gain) * weight)
    return GeometryBias(values, weight, eps_gain)


@dataclass(frozen=True)
class AttentionBlockLayout:
    """Index ranges of the two segments along a fused token sequence.

    The two ranges must be disjoint and cover the whole sequence. Bias is
    applied to the (ego query, exo key) and (exo query, ego key) blocks; the
    within-segment blocks stay unbiased.
    """

    ego_start: int
    ego_length: int
    exo_start: int
    exo_length: int

    def __post_init__(self):
        if self.ego_length <= 0 or self.exo_length <= 0:
            raise ValueError("segment lengths must be positive")
        spans = sorted([(self.ego_start, self.ego_length), (self.exo_start, self.exo_length)])
        if spans[0][0] != 0 or spans[0][0] + spans[0][1] != spans[1][0]:
            raise ValueError("segments must be disjoint and cover the sequence")

    @property
    def total(self) -> int:
        return self.ego_length + self.exo_length

    @property
    def ego_slice(self) -> slice:
        return slice(self.ego_start, self.ego_start + self.ego_length)

    @property
    def exo_slice(self) -> slice:
        return slice(self.exo_start, self.exo_start + self.exo_length)

    @classmethod
    def ego_then_exo(cls, ego_length: int, exo_length: int) -> "AttentionBlockLayout":
        return cls(0, ego_length, ego_length, exo_length)


def _bias_block(bias, layout: AttentionBlockLayout) -> np.ndarray:
    block = bias.block() if isinstance(bias, GeometryBias) else np.asarray(bias, dtype=np.float64)
    if block.shape != (layout.ego_length, layout.exo_length):
        raise ValueError(
            f"bias block {block.shape} does not match layout ({layout.ego_length}, {layout.exo_length})"
        )
    return block


def _biased_logits(q, k, layout: AttentionBlockLayout, bias) -> np.ndarray:
    logits = q @ k.T / math.sqrt(q.shape[1])
    if bias is not None:
        block = _bias_block(bias, layout)
        logits[layout.ego_slice, layout.exo_slice] += block
        logits[layout.exo_slice, layout.ego_slice] += block.T
    return logits


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gga_attention(q, k, v, layout: AttentionBlockLayout, bias=None, return_weights: bool = False):
    """Biased softmax attention over one fused sequence.

    ``q``, ``k`` are (l_total, d), ``v`` is (l_total, d_v); the bias block is
    added to the cross-segment logits per the layout before the row softmax.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim != 2 or k.shape != q.shape or v.ndim != 2 or v.shape[0] != q.shape[0]:
        raise ValueError("attention input shape mismatch")
    if q.shape[0] != layout.total:
        raise ValueError("sequence length does not match layout")
    if q.shape[1] == 0:
        raise ValueError("feature dimension must be positive")
    weights = _softmax_rows(_biased_logits(q, k, layout, bias))
    out = weights @ v
    return (out, weights) if return_weights else out


def attention_gradients(q, k, v, layout: AttentionBlockLayout, bias=None):
    """Analytic gradients of ``loss = sum(output)`` with respect to q, k, v.

    The bias is precomputed from geometry and constant with respect to the
    attention inputs, so it contributes no gradient term of its own.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scale = 1.0 / math.sqrt(q.shape[1])
    weights = _softmax_rows(_biased_logits(q, k, layout, bias))
    d_out = np.ones((q.shape[0], v.shape[1]))
    d_v = weights.T @ d_out
    d_weights = d_out @ v.T
    d_logits = weights * (d_weights - (d_weights * weights).sum(axis=1, keepdims=True))
    d_q = d_logits @ k * scale
    d_k = d_logits.T @ q * scale
    return d_q, d_k, d_v


def gradient_check(q, k, v, layout: AttentionBlockLayout, bias=None, step: float = 1e-4) -> float:
    """Max norm-relative error between analytic and central-difference gradients."""
    if not 1e-5 <= step <= 1e-3:
        raise ValueError("step must be in [1e-5, 1e-3]")
    # owned contiguous copies: the central-difference loop pokes entries in place
    q = np.array(q, dtype=np.float64)
    k = np.array(k, dtype=np.float64)
    v = np.array(v, dtype=np.float64)

    def loss(q_, k_, v_):
        return float(gga_attention(q_, k_, v_, layout, bias).sum())

    analytic = attention_gradients(q, k, v, layout, bias)
    worst = 0.0
    for slot, tensor in enumerate((q, k, v)):
        numeric = np.zeros_like(tensor)
        flat = numeric.reshape(-1)
        base = tensor.reshape(-1)
        for i in range(base.size):
            saved = base[i]
            base[i] = saved + step
            hi = loss(q, k, v)
            base[i] = saved - step
            lo = loss(q, k, v)
            base[i] = saved
            flat[i] = (hi - lo) / (2.0 * step)
        a_norm = np.linalg.norm(analytic[slot])
        n_norm = np.linalg.norm(numeric)
        denom = max(a_norm, n_norm, 1e-12)
        err = np.linalg.norm(analytic[slot] - numeric) / denom
        if a_norm < 1e-12 and n_norm < 1e-12:
            err = 0.0
        worst = max(worst, float(err))
    return worst


def build_direction_inputs(prior_valid, ego_cams, exo_clouds, grid: PatchGrid = PatchGrid()):
    """Token direction fields for the egocentric and exocentric segments.

    Egocentric pixel directions are the camera-ray directions of each frame's
    egocentric camera over the grid given by ``prior_valid``'s shape; rays
    exist for every pixel regardless of rendered coverage, so every ego pixel
    contributes. Exocentric pixel directions point from that same frame's
    egocentric camera center to the cloud's world points; pixels that lifted
    no point stay invalid. Both are then patch-averaged to token resolution.
    """
    prior_valid = np.asarray(prior_valid)
    if prior_valid.ndim != 3:
        raise ValueError("prior validity must be F x H x W")
    frames, height, width = prior_valid.shape
    if len(ego_cams) != frames or len(exo_clouds) != frames:
        raise ValueError("frame count mismatch")

    u, v = pixel_centers(height, width)
    ego_dirs = np.empty((frames, height, width, 3))
    for f in range(frames):
        cam = ego_cams[f]
        ego_dirs[f] = ray_direction(u, v, cam.intrinsics, cam.pose)
    ego_field = patch_directions(ego_dirs, grid)

    src_h = exo_clouds[0].source_height
    src_w = exo_clouds[0].source_width
    exo_dirs = np.zeros((frames, src_h, src_w, 3))
    exo_valid = np.zeros((frames, src_h, src_w), dtype=bool)
    for f in range(frames):
        cloud = exo_clouds[f]
        if cloud.source_height != src_h or cloud.source_width != src_w:
            raise ValueError("clouds disagree on source frame size")
        if cloud.empty:
            continue
        center = camera_center(ego_cams[f].pose)
        vec = cloud.points - center
        norms = np.linalg.norm(vec, axis=1)
        ok = norms > 0
        rows = cloud.source_pixel[ok, 0]
        cols = cloud.source_pixel[ok, 1]
        exo_dirs[f, rows, cols] = vec[ok] / norms[ok, None]
        exo_valid[f, rows, cols] = True
    exo_field = patch_directions(exo_dirs, grid, valid=exo_valid)
    return ego_field, exo_field
