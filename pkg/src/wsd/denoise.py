"""Spectral clipping denoiser.

A frame is projected onto the singular basis of the row-orthonormalizing
operator (``z = diag(s) V^T y``), components are clipped in magnitude to a
threshold read off a window of the spectrum, and the result is mapped back
with ``V diag(1/s)``.  Indices are 1-based into ``z`` ordered by descending
singular value.
"""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .measurement import ShapeError, unvectorize, vectorize
from .operators import working_maps


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WsdConfig:
    """Threshold window fractions.

    With ``protect_tail`` the components past the window (the smallest
    singular values of the operator, which carry the molecules and the
    background) are passed through unclipped.
    """

    star: float = 0.9
    tail: float = 0.95
    protect_tail: bool = True

    def __post_init__(self):
        if not 0 < self.star < self.tail <= 1:
            raise ConfigError(f"need 0 < star < tail <= 1, got star={self.star}, tail={self.tail}")

    def window(self, M):
        """``(i_star, i_tail)``, floors of ``M * star`` and ``M * tail``."""
        # go through the decimal repr so 0.9 * 100 floors to 90, not 89
        i_star = math.floor(Fraction(repr(float(self.star))) * M)
        i_tail = math.floor(Fraction(repr(float(self.tail))) * M)
        if i_star < 1:
            raise ConfigError(f"floor({M} * star) = {i_star} is below 1")
        if i_star > i_tail:
            raise ConfigError(f"empty threshold window [{i_star}, {i_tail}]")
        return i_star, i_tail


@dataclass(frozen=True)
class PatchPlan:
    patch_side: int = 14
    core_side: int = 10

    def __post_init__(self):
        if not 1 <= self.core_side <= self.patch_side:
            raise ConfigError("need 1 <= core_side <= patch_side")
        if (self.patch_side - self.core_side) % 2:
            raise ConfigError("patch_side - core_side must be even")

    @property
    def margin(self):
        return (self.patch_side - self.core_side) // 2

    def core_starts(self, length):
        if length < self.patch_side:
            raise ShapeError(
                f"frame side {length} is smaller than the patch side {self.patch_side}; "
                "use denoise_frame directly")
        starts = list(range(0, length - self.core_side + 1, self.core_side))
        if starts[-1] + self.core_side < length:
            starts.append(length - self.core_side)
        return starts

    def patch_start(self, core_start, length):
        # shift inward at the borders so the patch stays inside the frame
        return min(max(core_start - self.margin, 0), length - self.patch_side)

    def tiles(self, shape):
        """``[(patch_origin, core_origin)]`` in row-major order of the cores."""
        rows, cols = shape
        out = []
        for cr in self.core_starts(rows):
            for cc in self.core_starts(cols):
                out.append(((self.patch_start(cr, rows), self.patch_start(cc, cols)), (cr, cc)))
        return out


@dataclass(frozen=True)
class DenoiseReport:
    cri: float
    clipped_count: int
    i_star: int
    i_tail: int


def _check_length(v, M):
    v = np.asarray(v, dtype=float)
    if v.shape[0] != M:
        raise ShapeError(f"vector length {v.shape[0]} does not match operator size {M}")
    return v


def forward_project(y, bundle):
    maps = working_maps(bundle)
    return maps.forward @ _check_length(y, maps.M)


def inverse_project(z, bundle):
    maps = working_maps(bundle)
    return maps.inverse @ _check_length(z, maps.M)


def select_threshold(z, M=None, config=None):
    """``(cri, i_star, i_tail)``: the largest ``|z_i|`` over ``i_star <= i <= i_tail``."""
    config = config or WsdConfig()
    z = np.asarray(z, dtype=float)
    M = len(z) if M is None else M
    i_star, i_tail = config.window(M)
    cri = float(np.max(np.abs(z[i_star - 1:i_tail])))
    return cri, i_star, i_tail


def clip(z, cri, limit=None):
    """Clip magnitudes above ``cri`` to ``cri`` keeping the sign.

    Only the first ``limit`` entries are eligible (all when None).  Returns the
    clipped vector and the number of entries changed.
    """
    if cri < 0:
        raise ValueError("cri must be non-negative")
    z = np.asarray(z, dtype=float)
    out = z.copy()
    head = out[:limit]
    over = np.abs(head) > cri
    head[over] = np.sign(head[over]) * cri
    return out, int(over.sum())


def denoise_vector(y, bundle, config=None):
    config = config or WsdConfig()
    maps = working_maps(bundle)
    z = forward_project(y, maps)
    cri, i_star, i_tail = select_threshold(z, maps.M, config)
    z_wsd, count = clip(z, cri, i_tail if config.protect_tail else None)
    return inverse_project(z_wsd, maps), DenoiseReport(cri, count, i_star, i_tail)


def denoise_frame(frame, bundle, config=None):
    """Denoise one operator-sized frame; returns ``(frame_wsd, report)``."""
    frame = np.asarray(frame, dtype=float)
    maps = working_maps(bundle)
    side = math.isqrt(maps.M)
    if frame.ndim != 2 or frame.size != maps.M or frame.shape != (side, side):
        raise ShapeError(f"frame {frame.shape} does not match the {maps.M}-pixel operator")
    y_wsd, report = denoise_vector(vectorize(frame), maps, config)
    return unvectorize(y_wsd, frame.shape), report


def denoise_tiled(frame, bundle, plan=None, config=None):
    """Denoise a frame larger than the operator through overlapping patches.

    Each distinct patch is denoised once; the cores are committed in row-major
    order and a pixel already written is never overwritten.  Returns the frame
    and the per-patch reports in commit order.
    """
    plan = plan or PatchPlan()
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise ShapeError("expected a 2-D frame")
    maps = working_maps(bundle)
    if plan.patch_side ** 2 != maps.M:
        raise ConfigError(f"patch side {plan.patch_side} does not match operator size {maps.M}")
    p, c = plan.patch_side, plan.core_side
    out = np.zeros_like(frame)
    written = np.zeros(frame.shape, dtype=bool)
    cache = {}
    reports = []
    for (pr, pc), (cr, cc) in plan.tiles(frame.shape):
        if (pr, pc) not in cache:
            cache[pr, pc] = denoise_frame(frame[pr:pr + p, pc:pc + p], maps, config)
            reports.append(cache[pr, pc][1])
        patch = cache[pr, pc][0]
        target = (slice(cr, cr + c), slice(cc, cc + c))
        local = patch[cr - pr:cr - pr + c, cc - pc:cc - pc + c]
        free = ~written[target]
        out[target][free] = local[free]
        written[target] = True
    return out, reports


def denoise_stack_tiled(stack, bundle, plan=None, config=None):
    """Denoise every frame of a stack, dispatching on frame size.

    Returns ``(frames, reports)`` where ``reports[k]`` lists the patch reports of frame ``k``.
    """
    plan = plan or PatchPlan()
    maps = working_maps(bundle)
    frames = []
    reports = []
    for frame in stack:
        frame = np.asarray(frame, dtype=float)
        if frame.size == maps.M and frame.shape[0] == frame.shape[1]:
            out, rep = denoise_frame(frame, maps, config)
            rep = [rep]
        else:
            out, rep = denoise_tiled(frame, maps, plan, config)
        frames.append(out)
        reports.append(rep)
    return np.array(frames), reports
