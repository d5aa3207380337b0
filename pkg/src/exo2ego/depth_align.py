"""Temporal depth alignment: fuse per-frame monocular depth with smooth video depth.

Monocular depth is metrically plausible but flickers across frames; video
depth is temporally smooth but only defined up to a per-frame affine map of
inverse depth. Each frame gets an affine fit ``1/D_mono ~= a * (1/D_video) + b``
over static pixels, the per-frame ``(a, b)`` are smoothed with an exponential
moving average, and the aligned depth is ``D = 1 / (a_hat / D_video + b_hat)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DepthStack",
    "AffineParams",
    "fit_affine_frame",
    "smooth_params",
    "apply_alignment",
    "align_video",
]

KIND_MONOCULAR = "monocular"
KIND_VIDEO = "video"
KIND_ALIGNED = "aligned"
_KINDS = (KIND_MONOCULAR, KIND_VIDEO, KIND_ALIGNED)

DEFAULT_MIN_STATIC = 64
DEFAULT_EPS_DEN = 1e-6
# fraction of a frame's valid pixels that may be invalidated by alignment
MAX_INVALID_FRAC = 0.10


@dataclass
class DepthStack:
    """F x H x W metric depth with a validity mask; 0 is the invalid sentinel."""

    values: np.ndarray
    kind: str
    valid: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError("depth stack must be F x H x W")
        if self.kind not in _KINDS:
            raise ValueError(f"unknown depth kind {self.kind!r}")
        if self.valid is None:
            self.valid = self.values > 0
        else:
            self.valid = np.asarray(self.valid).astype(bool)
            if self.valid.shape != self.values.shape:
                raise ValueError("validity mask shape mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("depth values must be finite")
        if np.any(self.values[self.valid] <= 0):
            raise ValueError("valid depth values must be positive")

    @property
    def frames(self) -> int:
        return self.values.shape[0]


@dataclass
class AffineParams:
    """Per-frame raw and EMA-smoothed inverse-depth affine parameters."""

    alpha_raw: np.ndarray
    beta_raw: np.ndarray
    alpha: np.ndarray  # smoothed
    beta: np.ndarray  # smoothed
    momentum: float
    flags: list = None

    def __post_init__(self):
        for name in ("alpha_raw", "beta_raw", "alpha", "beta"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.flags is None:
            self.flags = [None] * len(self.alpha)

    @property
    def frames(self) -> int:
        return len(self.alpha)


def fit_affine_frame(mono, video, mask, min_static: int = DEFAULT_MIN_STATIC, outlier_sigma: float = None):
    """Closed-form least-squares affine fit in inverse-depth space.

    Solves ``argmin sum_masked (a * (1/video) + b - 1/mono)^2`` via the 2x2
    normal equations. Returns ``(a, b, flag)`` where flag is None for a clean
    fit or ``"rank_deficient"`` when 1/video is constant over the mask (then
    only b is fitted and a = 1). With ``outlier_sigma`` set, residuals beyond
    that many standard deviations are dropped once and the fit repeated.
    """
    mono = np.asarray(mono, dtype=np.float64)
    video = np.asarray(video, dtype=np.float64)
    sel = np.asarray(mask).astype(bool)
    if mono.shape != video.shape or sel.shape != mono.shape:
        raise ValueError("shape mismatch between depths and mask")
    n = int(sel.sum())
    if n < min_static:
        raise ValueError(f"degenerate frame: {n} static pixels < {min_static}")
    dm = mono[sel]
    dv = video[sel]
    if np.any(dm <= 0) or np.any(dv <= 0):
        raise ValueError("non-positive depth under static mask")
    x = 1.0 / dv
    y = 1.0 / dm
    alpha, beta, flag = _solve_affine(x, y)
    if outlier_sigma is not None and flag is None:
        residuals = alpha * x + beta - y
        spread = residuals.std()
        if spread > 0:
            keep = np.abs(residuals) <= outlier_sigma * spread
            if min_static <= int(keep.sum()) < x.size:
                alpha, beta, flag = _solve_affine(x[keep], y[keep])
    return alpha, beta, flag


def _solve_affine(x: np.ndarray, y: np.ndarray):
    x_mean = x.mean()
    y_mean = y.mean()
    xc = x - x_mean
    sxx = float(np.dot(xc, xc))
    if sxx / x.size <= 1e-12 * max(x_mean * x_mean, 1e-30):
        return 1.0, float(y_mean - x_mean), "rank_deficient"
    alpha = float(np.dot(xc, y - y_mean) / sxx)
    beta = float(y_mean - alpha * x_mean)
    return alpha, beta, None


def smooth_params(raw, momentum: float) -> np.ndarray:
    """EMA along axis 0: ``out[0] = raw[0]; out[f] = mu*out[f-1] + (1-mu)*raw[f]``."""
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must be in [0, 1)")
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape[0] == 0:
        raise ValueError("empty parameter sequence")
    out = np.empty_like(arr)
    out[0] = arr[0]
    for f in range(1, arr.shape[0]):
        out[f] = momentum * out[f - 1] + (1.0 - momentum) * arr[f]
    return out


def apply_alignment(
    video: DepthStack,
    params: AffineParams,
    eps_den: float = DEFAULT_EPS_DEN,
    max_invalid_frac: float = MAX_INVALID_FRAC,
) -> DepthStack:
    """Elementwise ``D = 1 / (alpha_hat / D_video + beta_hat)`` per frame.

    Pixels whose denominator falls at or below ``eps_den`` are invalidated
    (zero sentinel); a frame losing more than ``max_invalid_frac`` of its
    valid pixels is an error.
    """
    if video.kind != KIND_VIDEO:
        raise ValueError(f"expected a video depth stack, got {video.kind!r}")
    if params.frames != video.frames:
        raise ValueError("parameter count does not match frame count")
    if np.any(params.alpha <= 0):
        raise ValueError("non-positive smoothed scale")
    aligned = np.zeros_like(video.values)
    valid = np.zeros_like(video.valid)
    for f in range(video.frames):
        src_valid = video.valid[f]
        safe = np.where(src_valid, video.values[f], 1.0)
        den = params.alpha[f] / safe + params.beta[f]
        good = src_valid & (den > eps_den)
        lost = int((src_valid & ~good).sum())
        if lost > max_invalid_frac * max(int(src_valid.sum()), 1):
            raise ValueError(f"frame {f}: {lost} pixels invalid after alignment (> {max_invalid_frac:.0%})")
        aligned[f][good] = 1.0 / den[good]
        valid[f] = good
    return DepthStack(aligned, KIND_ALIGNED, valid)


def align_video(
    mono: DepthStack,
    video: DepthStack,
    static_mask,
    momentum: float = 0.9,
    min_static: int = DEFAULT_MIN_STATIC,
    eps_den: float = DEFAULT_EPS_DEN,
):
    """Per-frame fits in temporal order, EMA smoothing, then alignment.

    ``static_mask`` is F x H x W binary, 1 on static background usable for
    fitting. Returns ``(aligned DepthStack, AffineParams)``.
    """
    if mono.kind != KIND_MONOCULAR:
        raise ValueError(f"expected a monocular depth stack, got {mono.kind!r}")
    if video.kind != KIND_VIDEO:
        raise ValueError(f"expected a video depth stack, got {video.kind!r}")
    static = np.asarray(static_mask)
    if mono.values.shape != video.values.shape or static.shape != mono.values.shape:
        raise ValueError("shape mismatch between depth stacks and static mask")
    raw = np.empty((mono.frames, 2), dtype=np.float64)
    flags = []
    for f in range(mono.frames):
        sel = (static[f] > 0) & mono.valid[f] & video.valid[f]
        alpha, beta, flag = fit_affine_frame(mono.values[f], video.values[f], sel, min_static=min_static)
        raw[f] = (alpha, beta)
        flags.append(flag)
    smoothed = smooth_params(raw, momentum)
    params = AffineParams(raw[:, 0], raw[:, 1], smoothed[:, 0], smoothed[:, 1], momentum, flags)
    return apply_alignment(video, params, eps_den=eps_den), params
