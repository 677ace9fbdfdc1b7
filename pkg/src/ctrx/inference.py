"""Full-resolution denoising by windowed overlap-add of fixed-size patches.

The image is padded circularly so a grid of P x P patches with stride s
covers it, each patch is denoised independently, and outputs are blended
under a 2D Tukey window. The blend divides by the accumulated window map
(an exact partition of unity), so an identity denoiser reproduces the input
for any taper and stride the plan accepts.

Windows use the periodic (DFT-even) Tukey convention: taper 0 is the
all-ones rectangle, taper 1 the periodic Hann, and for taper > 0 only sample
0 is zero. Non-overlapping plans (s = P) therefore require taper 0; the plan
constructor rejects any geometry whose accumulated weight is not strictly
positive.

On robustness: each output pixel is a convex combination (weights w/W) of
per-patch outputs, so by Jensen the squared output change is at most the
weighted mean of per-patch squared changes; per-patch changes are bounded by
the per-patch Lipschitz constant times the local input change. Overlap makes
the patchwise sum overcount the input change, so this argument alone bounds
the blended map by L * P/s rather than L; the stronger per-model statement
(output change <= input change for trained networks) is established
empirically by the perturbation tests.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .layers import network_forward
from .tensorops import as_image

DEFAULT_TAPER = 0.5


def _tukey1d(patch, taper):
    if not 0.0 <= taper <= 1.0:
        raise ValidationError(f"taper must be in [0, 1], got {taper}")
    if patch < 1:
        raise ValidationError(f"patch must be positive, got {patch}")
    n = np.arange(patch, dtype=np.float64)
    w = np.ones(patch)
    if taper > 0.0:
        edge = taper * patch / 2.0
        rising = n < edge
        falling = n > patch - edge
        w[rising] = 0.5 * (1.0 + np.cos(np.pi * (2.0 * n[rising] / (taper * patch) - 1.0)))
        w[falling] = 0.5 * (1.0 + np.cos(
            np.pi * (2.0 * (patch - n[falling]) / (taper * patch) - 1.0)))
    return w


def tukey_window(patch, taper):
    """Periodic 1D Tukey window of length ``patch``, outer-product to 2D.

    ``taper`` in [0, 1] interpolates from rectangular (0) to periodic Hann
    (1). Returns a (patch, patch) array.
    """
    w = _tukey1d(patch, taper)
    return np.outer(w, w)


def _cover(length, patch, stride):
    """Padding and patch starts covering ``length`` samples along one axis.

    Pads ``patch - stride`` before (so every original sample sees window
    interior) and enough after to align the last patch. Returns
    (pad_before, padded_length, starts).
    """
    before = patch - stride
    span = before + length + (patch - stride)
    n_steps = max(0, -(-(span - patch) // stride))
    padded = patch + n_steps * stride
    starts = np.arange(0, padded - patch + 1, stride)
    return before, padded, starts


@dataclass(frozen=True)
class PatchPlan:
    """Geometry of one overlap-add pass over a fixed image size."""

    patch: int
    stride: int
    taper: float
    height: int
    width: int
    window: np.ndarray
    pad_top: int
    pad_left: int
    padded_h: int
    padded_w: int
    row_starts: np.ndarray
    col_starts: np.ndarray


def plan_patches(height, width, patch, stride, taper=DEFAULT_TAPER):
    """Build and validate an overlap-add plan for an image size.

    Requires ``patch % stride == 0`` and a strictly positive accumulated
    window everywhere; a zero-boundary window with non-overlapping stride is
    rejected here rather than producing 0/0 pixels later.
    """
    if stride < 1 or patch < 1:
        raise ValidationError(f"patch and stride must be positive, got {patch}, {stride}")
    if patch % stride != 0:
        raise ValidationError(
            f"stride must divide the patch size, got patch={patch} stride={stride}")
    if height < 1 or width < 1:
        raise DimensionError(f"empty image {height}x{width}")
    window = tukey_window(patch, taper)
    pad_top, padded_h, row_starts = _cover(height, patch, stride)
    pad_left, padded_w, col_starts = _cover(width, patch, stride)
    # the window is separable, so positivity of the accumulated 2D map reduces
    # to positivity of the accumulated 1D profile along each axis; only the
    # original region matters, pad rows are cropped before the division
    w1d = _tukey1d(patch, taper)
    for padded, starts, before, length in (
            (padded_h, row_starts, pad_top, height),
            (padded_w, col_starts, pad_left, width)):
        acc = np.zeros(padded)
        for t in starts:
            acc[t:t + patch] += w1d
        if not np.all(acc[before:before + length] > 0.0):
            raise ValidationError(
                "accumulated window weight vanishes somewhere; use a smaller "
                "stride or taper 0 for non-overlapping patches")
    return PatchPlan(patch, stride, float(taper), height, width, window,
                     pad_top, pad_left, padded_h, padded_w, row_starts, col_starts)


def _pad_circular(x, plan):
    rows = (np.arange(plan.padded_h) - plan.pad_top) % plan.height
    cols = (np.arange(plan.padded_w) - plan.pad_left) % plan.width
    return x[:, rows[:, None], cols[None, :]]


def patch_denoise(x, denoiser, plan):
    """Apply a patch denoiser over the whole image with windowed overlap-add.

    ``denoiser`` is NetworkParams (patches are batched through the network)
    or any callable mapping a (C, P, P) patch to the same shape.
    """
    x = as_image(x)
    if x.ndim != 3:
        raise DimensionError(f"patch_denoise expects (C, H, W), got {x.shape}")
    if x.shape[1:] != (plan.height, plan.width):
        raise DimensionError(
            f"plan was built for {plan.height}x{plan.width}, image is "
            f"{x.shape[1]}x{x.shape[2]}")
    padded = _pad_circular(x, plan)
    c = x.shape[0]
    p = plan.patch
    patches = np.empty((len(plan.row_starts) * len(plan.col_starts), c, p, p))
    i = 0
    for r in plan.row_starts:
        for col in plan.col_starts:
            patches[i] = padded[:, r:r + p, col:col + p]
            i += 1
    if callable(denoiser):
        outs = np.stack([denoiser(patch) for patch in patches])
    else:
        if plan.patch != denoiser.patch:
            raise ValidationError(
                f"plan patch {plan.patch} differs from network patch "
                f"{denoiser.patch}")
        outs = network_forward(patches, denoiser)
    num = np.zeros((c, plan.padded_h, plan.padded_w))
    den = np.zeros((plan.padded_h, plan.padded_w))
    i = 0
    for r in plan.row_starts:
        for col in plan.col_starts:
            num[:, r:r + p, col:col + p] += plan.window * outs[i]
            den[r:r + p, col:col + p] += plan.window
            i += 1
    rows = slice(plan.pad_top, plan.pad_top + plan.height)
    cols = slice(plan.pad_left, plan.pad_left + plan.width)
    return num[:, rows, cols] / den[rows, cols]
