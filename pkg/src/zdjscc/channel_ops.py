"""Fast averages of tabulated functions of y = s + z over a noise grid.

The inner integrals of the cost and gradient all have the form
``sum_l w_l * t(s_i + z_l)`` where t is a table on a uniform y grid evaluated
by linear interpolation, s_i are per-source-point channel values and w_l are
noise quadrature weights. When the y step divides the noise step exactly,
every shifted query for a given s shares one fractional offset, so the whole
family reduces to a strided correlation computed once per table (FFT) plus
two gathers. Results match the direct interpolate-and-sum evaluation up to
floating-point reassociation.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.signal import fftconvolve

from .density import SampledDensity
from .grids import GridSpec


class ChannelAverager:
    def __init__(self, y_grid: GridSpec, noise: SampledDensity):
        if y_grid.dim != 1 or noise.grid.dim != 1:
            raise ValueError("ChannelAverager handles scalar channels only")
        ratio = noise.grid.step / y_grid.step
        q = int(round(ratio))
        if q < 1 or abs(ratio - q) > 1e-9 * ratio:
            raise ValueError("y step must divide the noise step exactly")
        self.y_grid = y_grid
        self.q = q
        self.y0 = y_grid.lower[0]
        self.dy = y_grid.step
        self.ny = y_grid.counts[0]
        self.z0 = noise.grid.lower[0]
        nz = noise.grid.counts[0]
        self.weights = noise.values * noise.grid.step
        self.total_weight = float(self.weights.sum())
        self.kernel_len = (nz - 1) * q + 1
        kernel = np.zeros(self.kernel_len)
        kernel[:: q] = self.weights
        self._kernel_rev = kernel[::-1]
        # valid base indices b for T[b] = sum_l w_l t[b + l*q]
        self.n_base = self.ny - self.kernel_len + 1

    @classmethod
    def try_build(cls, y_grid: GridSpec, noise: SampledDensity) -> "ChannelAverager | None":
        try:
            return cls(y_grid, noise)
        except ValueError:
            return None

    def covers(self, s_min: float, s_max: float) -> bool:
        """Whether all queries s + z stay strictly inside the y grid."""
        u_min = (s_min + self.z0 - self.y0) / self.dy
        u_max = (s_max + self.z0 - self.y0) / self.dy
        return u_min >= 0.0 and math.floor(u_max) <= self.n_base - 2

    def locate(self, s: np.ndarray):
        """Base index and interpolation fractions shared by all noise shifts."""
        u = (np.asarray(s, dtype=float) + self.z0 - self.y0) / self.dy
        base = np.floor(u).astype(np.int64)
        if base.min() < 0 or base.max() > self.n_base - 2:
            raise ValueError("channel values leave the decoder grid; rebuild it wider")
        frac = u - base
        return base, 1.0 - frac, frac

    def corr(self, table: np.ndarray) -> np.ndarray:
        """T[b] = sum_l w_l table[b + l*q] for every valid base b (axis 0)."""
        kern = self._kernel_rev
        if table.ndim > 1:
            kern = kern.reshape((-1,) + (1,) * (table.ndim - 1))
        return fftconvolve(table, kern, mode="valid", axes=0)

    def average(self, loc, table: np.ndarray) -> np.ndarray:
        """sum_l w_l * interp(table)(s + z_l) per located s (table axis 0 is y)."""
        base, w0, w1 = loc
        t = self.corr(table)
        if table.ndim == 1:
            return w0 * t[base] + w1 * t[base + 1]
        shape = (-1,) + (1,) * (table.ndim - 1)
        return w0.reshape(shape) * t[base] + w1.reshape(shape) * t[base + 1]

    def average_product(self, loc, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """sum_l w_l * interp(a)(s+z_l) * interp(b)(s+z_l) per located s.

        Expands the product of two linear interpolations into node products:
        w0^2 a_j b_j + w0 w1 (a_j b_{j+1} + a_{j+1} b_j) + w1^2 a_{j+1} b_{j+1}.
        """
        base, w0, w1 = loc
        diag = self.corr(a * b)
        cross = self.corr(a[:-1] * b[1:] + a[1:] * b[:-1])
        if a.ndim == 1:
            return w0 * w0 * diag[base] + w0 * w1 * cross[base] + w1 * w1 * diag[base + 1]
        shape = (-1,) + (1,) * (a.ndim - 1)
        w0 = w0.reshape(shape)
        w1 = w1.reshape(shape)
        return w0 * w0 * diag[base] + w0 * w1 * cross[base] + w1 * w1 * diag[base + 1]


def hat_scatter(n_nodes: int, base: np.ndarray, frac: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Accumulate values onto nodes with linear (hat) weights."""
    out = np.zeros(n_nodes)
    np.add.at(out, base, (1.0 - frac) * values)
    np.add.at(out, base + 1, frac * values)
    return out
