"""Image and object-level evaluation metrics.

Image side: PSNR and Gaussian-windowed SSIM. Object side: greedy one-to-one
matching of appearance embeddings at a similarity threshold, then per matched
pair the box-center location error, bounding-box IoU, and contour IoU,
averaged over frames where both objects are present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import binary_dilation

from .io_formats import ObjectSet

__all__ = [
    "psnr",
    "ssim",
    "MatchResult",
    "match_objects",
    "location_error",
    "bbox_iou",
    "contour_mask",
    "contour_accuracy",
    "evaluate_video",
]

PSNR_CAP = 99.0
DEFAULT_TAU_SIM = 0.9

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs cap at 99.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    coords = np.arange(window, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(
    a,
    b,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    peak: float = 1.0,
) -> float:
    """Mean local SSIM over all fully-interior window positions.

    2-D inputs are scored directly; higher-rank inputs (C, H, W) or
    (F, C, H, W) are scored per 2-D plane and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if a.ndim > 2:
        planes_a = a.reshape(-1, *a.shape[-2:])
        planes_b = b.reshape(-1, *b.shape[-2:])
        return float(np.mean([ssim(pa, pb, window, sigma, k1, k2, peak) for pa, pb in zip(planes_a, planes_b)]))
    if a.ndim != 2:
        raise ValueError("images must be 2-D (or stacks of 2-D planes)")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} window")

    kernel = _gaussian_kernel(window, sigma)
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a = np.tensordot(wa, kernel, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, kernel, axes=([2, 3], [0, 1]))
    e_aa = np.tensordot(wa * wa, kernel, axes=([2, 3], [0, 1]))
    e_bb = np.tensordot(wb * wb, kernel, axes=([2, 3], [0, 1]))
    e_ab = np.tensordot(wa * wb, kernel, axes=([2, 3], [0, 1]))
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(score.mean())


@dataclass
class MatchResult:
    """Accepted (gt_id, gen_id, similarity) pairs; one-to-one, all >= tau."""

    pairs: list
    tau: float


def match_objects(gt: ObjectSet, gen: ObjectSet, tau: float = DEFAULT_TAU_SIM) -> MatchResult:
    """Greedy one-to-one embedding matching.

    Candidate pairs are ranked by similarity descending, ties broken by
    (lower GT id, lower generated id), and accepted while both sides are
    unmatched and the similarity clears ``tau``. The ranking depends only on
    ids and similarities, so the result is invariant to input object order.
    """
    for side in (gt, gen):
        for track in side.objects:
            norm = np.linalg.norm(track.embedding)
            if abs(norm - 1.0) > 1e-4:
                raise ValueError(f"object {track.object_id}: embedding norm {norm:.6g} not unit")
    candidates = []
    for g in gt.objects:
        for m in gen.objects:
            s = float(np.dot(g.embedding, m.embedding))
            if s >= tau:
                candidates.append((s, g.object_id, m.object_id))
    candidates.sort(key=lambda item: (-item[0], item[1], item[2]))
    used_gt, used_gen = set(), set()
    pairs = []
    for s, gi, mj in candidates:
        if gi in used_gt or mj in used_gen:
            continue
        used_gt.add(gi)
        used_gen.add(mj)
        pairs.append((gi, mj, s))
    return MatchResult(pairs, tau)


def _center(box) -> np.ndarray:
    x0, y0, x1, y1 = (float(v) for v in box)
    return np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])


def location_error(box_a, box_b) -> float:
    """Euclidean distance between box centers, in pixels."""
    return float(np.linalg.norm(_center(box_a) - _center(box_b)))


def bbox_iou(box_a, box_b) -> float:
    """Intersection over union of two half-open boxes; disjoint gives 0."""
    ax0, ay0, ax1, ay1 = (float(v) for v in box_a)
    bx0, by0, bx1, by1 = (float(v) for v in box_b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union <= 0.0:
        return 1.0 if box_a == box_b else 0.0
    return inter / union


def contour_mask(mask, thickness: int = 1) -> np.ndarray:
    """Boundary band of a binary mask.

    A pixel is boundary when it is in the mask and at least one of its four
    neighbors (image border counts as outside) is not. ``thickness`` widens
    the band by cross-shaped dilation; 1 is the raw one-pixel boundary.
    """
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    band = m & ~interior
    for _ in range(thickness - 1):
        band = binary_dilation(band, structure=_CROSS)
    return band


def contour_accuracy(mask_a, mask_b, thickness: int = 1) -> float:
    """IoU of the two boundary bands; two empty contours count as identical."""
    a = np.asarray(mask_a)
    b = np.asarray(mask_b)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    ca = contour_mask(a, thickness)
    cb = contour_mask(b, thickness)
    union = int(np.logical_or(ca, cb).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(ca, cb).sum()) / union


def evaluate_video(
    gt: ObjectSet,
    gen: ObjectSet,
    tau: float = DEFAULT_TAU_SIM,
    thickness: int = 1,
) -> dict:
    """Match objects, then score every pair over frames where both appear.

    Per-pair metrics are frame means; video-level means average over pairs
    that have at least one co-present frame. With no such pair the means are
    None (undefined rather than zero).
    """
    matches = match_objects(gt, gen, tau)
    pair_reports = []
    for gi, mj, s in matches.pairs:
        track_gt = gt.get(gi)
        track_gen = gen.get(mj)
        frames = min(len(track_gt.boxes), len(track_gen.boxes))
        loc, biou, ciou = [], [], []
        for f in range(frames):
            box_g = track_gt.boxes[f]
            box_m = track_gen.boxes[f]
            if box_g is None or box_m is None:
                continue
            loc.append(location_error(box_g, box_m))
            biou.append(bbox_iou(box_g, box_m))
            ciou.append(contour_accuracy(track_gt.masks[f], track_gen.masks[f], thickness))
        report = {
            "gt_id": gi,
            "gen_id": mj,
            "similarity": s,
            "co_present_frames": len(loc),
            "location_error": float(np.mean(loc)) if loc else None,
            "bbox_iou": float(np.mean(biou)) if biou else None,
            "contour_accuracy": float(np.mean(ciou)) if ciou else None,
        }
        pair_reports.append(report)

    def aggregate(key):
        vals = [p[key] for p in pair_reports if p[key] is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "tau_sim": tau,
        "match_count": len(matches.pairs),
        "pairs": pair_reports,
        "mean_location_error": aggregate("location_error"),
        "mean_bbox_iou": aggregate("bbox_iou"),
        "mean_contour_accuracy": aggregate("contour_accuracy"),
    }
