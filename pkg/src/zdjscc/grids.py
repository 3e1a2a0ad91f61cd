"""Uniform sampling lattices and multilinear interpolation of tabulated values."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np

# Tabulation defaults: per-axis support of +-5 standard deviations, step of
# 0.01 standard deviations for scalar grids and 0.05 for two-dimensional ones.
DEFAULT_SUPPORT_SIGMAS = 5.0
DEFAULT_STEP_SCALE = 0.01
DEFAULT_STEP_SCALE_2D = 0.05

# Cap on total tabulated points for product constructions.
MAX_GRID_POINTS = 1 << 24


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular lattice on R^dim with one step shared by all axes.

    Axis i holds ``counts[i]`` points ``lower[i] + j*step``; the upper bound
    is ``lower[i] + (counts[i]-1)*step``.
    """

    dim: int
    lower: tuple[float, ...]
    step: float
    counts: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(np.asarray(self.lower, dtype=float)))
        counts = tuple(int(c) for c in np.atleast_1d(np.asarray(self.counts)))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "step", float(self.step))
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if len(lower) != self.dim or len(counts) != self.dim:
            raise ValueError("lower and counts must have one entry per axis")
        if not math.isfinite(self.step) or self.step <= 0.0:
            raise ValueError(f"step must be a positive real, got {self.step}")
        if any(c < 2 for c in counts):
            raise ValueError(f"every axis needs at least 2 points, got counts={counts}")

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(lo + (c - 1) * self.step for lo, c in zip(self.lower, self.counts))

    @property
    def n_points(self) -> int:
        return int(np.prod(self.counts))

    @property
    def cell_volume(self) -> float:
        return self.step**self.dim

    def axis(self, i: int = 0) -> np.ndarray:
        return self.lower[i] + self.step * np.arange(self.counts[i])

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim)]

    @cached_property
    def points(self) -> np.ndarray:
        """All lattice points as an (n_points, dim) array in C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    def contains(self, point) -> bool:
        p = np.atleast_1d(np.asarray(point, dtype=float))
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return bool(np.all(p >= lo - 1e-12) and np.all(p <= hi + 1e-12))

    @classmethod
    def symmetric(cls, halfwidth: float, step: float, dim: int = 1) -> "GridSpec":
        """Symmetric grid covering [-halfwidth, halfwidth] on every axis.

        The lattice always contains 0 exactly; the halfwidth is rounded up
        to a whole number of steps.
        """
        if halfwidth <= 0 or step <= 0:
            raise ValueError("halfwidth and step must be positive")
        n_half = int(math.ceil(halfwidth / step - 1e-12))
        n_half = max(n_half, 1)
        count = 2 * n_half + 1
        lower = -n_half * step
        return cls(dim=dim, lower=(lower,) * dim, step=step, counts=(count,) * dim)

    @classmethod
    def for_std(
        cls,
        std: float,
        dim: int = 1,
        step_scale: float | None = None,
        support_sigmas: float = DEFAULT_SUPPORT_SIGMAS,
    ) -> "GridSpec":
        """Default grid for a density of scale ``std``: +-5 sigma, step 0.01 sigma."""
        if step_scale is None:
            step_scale = DEFAULT_STEP_SCALE if dim == 1 else DEFAULT_STEP_SCALE_2D
        return cls.symmetric(support_sigmas * std, step_scale * std, dim=dim)


def _ravel_strides(counts: tuple[int, ...]) -> np.ndarray:
    strides = np.ones(len(counts), dtype=np.int64)
    for i in range(len(counts) - 2, -1, -1):
        strides[i] = strides[i + 1] * counts[i + 1]
    return strides


def interp_table(grid: GridSpec, table: np.ndarray, queries, outside: str = "clamp") -> np.ndarray:
    """Multilinear interpolation of per-grid-point values.

    ``table`` has shape ``(*grid.counts, width)``; queries of shape (n, dim)
    yield an (n, width) result (a single (dim,) query yields (width,)).
    ``outside`` is 'clamp' (snap the query to the domain box) or 'zero'.
    """
    if outside not in ("clamp", "zero"):
        raise ValueError(f"unknown outside mode {outside!r}")
    q = np.asarray(queries, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != grid.dim:
        raise ValueError(f"query dimension {q.shape[1]} != grid dimension {grid.dim}")
    width = table.shape[-1]
    lo = np.asarray(grid.lower)

    if grid.dim == 1:
        x = grid.axis(0)
        qx = q[:, 0]
        if outside == "clamp":
            out = np.stack([np.interp(qx, x, table[:, w]) for w in range(width)], axis=-1)
        else:
            out = np.stack(
                [np.interp(qx, x, table[:, w], left=0.0, right=0.0) for w in range(width)], axis=-1
            )
        return out[0] if single else out

    nmax = np.asarray(grid.counts, dtype=np.int64) - 1
    t = (q - lo) / grid.step
    if outside == "zero":
        bad = np.any((t < -1e-9) | (t > nmax + 1e-9), axis=1)
    t = np.clip(t, 0.0, nmax)
    i0 = np.minimum(t.astype(np.int64), nmax - 1)
    frac = t - i0
    strides = _ravel_strides(grid.counts)
    flat = table.reshape(grid.n_points, width)
    base = i0 @ strides
    out = np.zeros((q.shape[0], width))
    for corner in range(1 << grid.dim):
        bits = np.array([(corner >> a) & 1 for a in range(grid.dim)], dtype=np.int64)
        w = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        out += w[:, None] * flat[base + bits @ strides]
    if outside == "zero":
        out[bad] = 0.0
    return out[0] if single else out
