"""Latent conditioning layout and the clean-latent denoising schedule.

The fused latent places the clean exocentric latent x0 and the evolving noisy
latent z_t side by side along width; the condition channels carry x0 over the
exocentric width range and the egocentric prior latent p0 over the rest; a
single binary mask marks the conditioning columns. Across denoising steps
only the z_t columns change, the x0 columns stay bit-identical, and after the
last step the egocentric width range is extracted as the result.

The step rule is the linear contraction ``z_{t-1} = z_t + (pred - z_t) / t``,
which reaches the prediction exactly at t = 1; any single-step denoiser
satisfying the :data:`DenoiserContract` shape plugs in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import io_formats

__all__ = [
    "ROLE_EXO_CLEAN",
    "ROLE_EGO_PRIOR",
    "ROLE_NOISY",
    "LatentTensor",
    "ConditionState",
    "DenoiserContract",
    "pack_input",
    "unpack",
    "extract_ego",
    "denoise_step",
    "run_denoising",
    "make_toy_denoiser",
    "save_state",
    "load_state",
]

ROLE_EXO_CLEAN = "exo_clean"
ROLE_EGO_PRIOR = "ego_prior"
ROLE_NOISY = "noisy"
_ROLES = (ROLE_EXO_CLEAN, ROLE_EGO_PRIOR, ROLE_NOISY)

DEFAULT_CHANNELS = 16

# (state, t) -> predicted clean egocentric latent of shape (f, c, h, w_ego)
DenoiserContract = Callable[["ConditionState", int], np.ndarray]


@dataclass(frozen=True)
class LatentTensor:
    """A (f, c, h, w) float32 latent with its role tag."""

    data: np.ndarray
    role: str

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 4:
            raise ValueError("latent must be f x c x h x w")
        if not np.all(np.isfinite(arr)):
            raise ValueError("latent values must be finite")
        if self.role not in _ROLES:
            raise ValueError(f"unknown latent role {self.role!r}")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class ConditionState:
    """Packed conditioning layout at one denoising step.

    ``fused`` is ``[x0 | z_t]`` along width, ``condition`` is ``[x0 | p0]``,
    ``mask`` is ``[1 | 0]`` with a single channel. ``step`` counts down from
    ``total_steps`` to 0.
    """

    fused: np.ndarray
    condition: np.ndarray
    mask: np.ndarray
    exo_width: int
    step: int = 0
    total_steps: int = 0

    @property
    def ego_width(self) -> int:
        return self.fused.shape[3] - self.exo_width


def pack_input(
    x0: LatentTensor,
    z_t: LatentTensor,
    p0: LatentTensor,
    total_steps: int = 0,
) -> ConditionState:
    """Assemble the width/channel/mask layout from the three role-tagged latents."""
    if x0.role != ROLE_EXO_CLEAN or z_t.role != ROLE_NOISY or p0.role != ROLE_EGO_PRIOR:
        raise ValueError(f"role-tag mismatch: got ({x0.role}, {z_t.role}, {p0.role})")
    f, c, h, w = x0.data.shape
    if w == 0:
        raise ValueError("zero-width exocentric latent")
    if z_t.data.shape[:3] != (f, c, h) or p0.data.shape[:3] != (f, c, h):
        raise ValueError("latents disagree on f, c, h")
    if p0.width != z_t.width:
        raise ValueError("prior and noisy latents disagree on width")
    fused = np.concatenate([x0.data, z_t.data], axis=3)
    condition = np.concatenate([x0.data, p0.data], axis=3)
    mask = np.zeros((f, 1, h, w + z_t.width), dtype=np.float32)
    mask[..., :w] = 1.0
    return ConditionState(fused, condition, mask, w, step=total_steps, total_steps=total_steps)


def unpack(state: ConditionState):
    """Recover ``(x0, z_t, p0)``; inverse of :func:`pack_input`."""
    w = state.exo_width
    x0 = LatentTensor(state.fused[..., :w].copy(), ROLE_EXO_CLEAN)
    z_t = LatentTensor(state.fused[..., w:].copy(), ROLE_NOISY)
    p0 = LatentTensor(state.condition[..., w:].copy(), ROLE_EGO_PRIOR)
    return x0, z_t, p0


def extract_ego(state: ConditionState) -> LatentTensor:
    """The egocentric width range of the fused latent."""
    return LatentTensor(state.fused[..., state.exo_width:].copy(), ROLE_NOISY)


def denoise_step(state: ConditionState, denoiser: DenoiserContract) -> ConditionState:
    """One schedule step; only the egocentric columns of the fused latent change."""
    if state.step <= 0:
        raise ValueError("no denoising steps remain")
    w = state.exo_width
    z_t = state.fused[..., w:]
    pred = np.asarray(denoiser(state, state.step), dtype=np.float32)
    if pred.shape != z_t.shape:
        raise ValueError(f"denoiser output shape {pred.shape} != {z_t.shape}")
    fused = state.fused.copy()
    # algebraically z_t + (pred - z_t) / t; this form hits pred exactly at t = 1
    t = np.float32(state.step)
    fused[..., w:] = (z_t * (t - np.float32(1.0)) + pred) / t
    return replace(state, fused=fused, step=state.step - 1)


def run_denoising(
    x0: LatentTensor,
    p0: LatentTensor,
    z_init: LatentTensor,
    denoiser: DenoiserContract,
    steps: int,
) -> LatentTensor:
    """Pack, run ``steps`` schedule steps, and extract the egocentric part."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    state = pack_input(x0, z_init, p0, total_steps=steps)
    for _ in range(steps):
        state = denoise_step(state, denoiser)
    return extract_ego(state)


def make_toy_denoiser(alpha_mix: float = 1.0) -> DenoiserContract:
    """Deterministic stand-in denoiser.

    Predicts ``alpha_mix * p0 + (1 - alpha_mix) * mean(p0)`` where p0 is the
    egocentric slice of the condition channels and the mean is a scalar over
    that slice. With alpha_mix = 1 the prediction is exactly p0.
    """

    def toy(state: ConditionState, t: int) -> np.ndarray:
        prior = state.condition[..., state.exo_width:]
        if alpha_mix == 1.0:
            return prior.copy()
        mean = np.float32(prior.mean())
        return np.float32(alpha_mix) * prior + np.float32(1.0 - alpha_mix) * mean

    return toy


# ---------------------------------------------------------------------------
# State serialization: one 5-D tensor (3, f, c, h, w_total) stacking the fused
# latent, the condition channels, and the mask broadcast across channels.
# ---------------------------------------------------------------------------


def save_state(path, state: ConditionState) -> None:
    f, c, h, w_total = state.fused.shape
    stacked = np.stack(
        [state.fused, state.condition, np.broadcast_to(state.mask, (f, c, h, w_total))],
        axis=0,
    ).astype(np.float32)
    io_formats.write_tensor(path, stacked)


def load_state(path, total_steps: int = 0) -> ConditionState:
    stacked = io_formats.read_tensor(path)
    if stacked.ndim != 5 or stacked.shape[0] != 3:
        raise ValueError("state tensor must be (3, f, c, h, w_total)")
    fused, condition, mask_full = stacked
    mask = mask_full[:, :1].copy()
    if not np.array_equal(mask_full, np.broadcast_to(mask, mask_full.shape)):
        raise ValueError("state mask is not channel-uniform")
    col = mask[0, 0, 0]
    exo_width = int(col.sum())
    expected = np.zeros_like(mask)
    expected[..., :exo_width] = 1.0
    if exo_width == 0 or exo_width == mask.shape[3] or not np.array_equal(mask, expected):
        raise ValueError("state mask is not a [1|0] width split")
    return ConditionState(fused, condition, mask, exo_width, step=total_steps, total_steps=total_steps)
