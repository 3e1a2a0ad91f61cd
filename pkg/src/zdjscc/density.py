"""Densities tabulated on uniform grids: constructors, moments, transforms.

All quadrature is the plain Riemann sum on the lattice (value * step^dim).
Constructors renormalize after truncating to the grid support so downstream
conditional-expectation integrals are proper expectations.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, reduce

import numpy as np

from .grids import MAX_GRID_POINTS, GridSpec, interp_table

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class SampledDensity:
    """Probability density sampled on a GridSpec (one value per lattice point)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != tuple(self.grid.counts):
            raise ValueError(f"values shape {v.shape} != grid counts {self.grid.counts}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        if np.any(v < 0):
            raise ValueError("density values must be nonnegative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @cached_property
    def mass(self) -> float:
        """Riemann mass: sum of values times cell volume."""
        return float(self.values.sum() * self.grid.cell_volume)

    def normalized(self) -> "SampledDensity":
        if self.mass <= 0:
            raise ValueError("cannot normalize a zero-mass density")
        return SampledDensity(self.grid, self.values / self.mass)

    @cached_property
    def flat_weights(self) -> np.ndarray:
        """Per-point quadrature weights f(x)*step^dim, flattened in C order."""
        w = self.values.ravel() * self.grid.cell_volume
        w.setflags(write=False)
        return w

    def mean(self) -> np.ndarray:
        return self.flat_weights @ self.grid.points

    def cov(self) -> np.ndarray:
        pts = self.grid.points - self.mean()
        return (pts * self.flat_weights[:, None]).T @ pts

    def var(self) -> float:
        """Average per-axis variance (trace of covariance / dim)."""
        return float(np.trace(self.cov()) / self.grid.dim)

    def pdf(self, points) -> np.ndarray:
        """Density evaluated off-grid by multilinear interpolation, 0 outside."""
        out = interp_table(self.grid, self.values.reshape(*self.grid.counts, 1), points, outside="zero")
        return out[..., 0]

    def marginal(self, keep_axes: tuple[int, ...] | int) -> "SampledDensity":
        """Marginalize onto the listed axes by Riemann sums over the others."""
        keep = (keep_axes,) if isinstance(keep_axes, int) else tuple(keep_axes)
        drop = tuple(a for a in range(self.grid.dim) if a not in keep)
        if not drop:
            return self
        vals = self.values.sum(axis=drop) * self.grid.step ** len(drop)
        vals = np.moveaxis(vals, range(len(keep)), np.argsort(np.argsort(keep)))
        g = GridSpec(
            dim=len(keep),
            lower=tuple(self.grid.lower[a] for a in keep),
            step=self.grid.step,
            counts=tuple(self.grid.counts[a] for a in keep),
        )
        return SampledDensity(g, vals)


@dataclass(frozen=True)
class CharacteristicTable:
    """E[exp(-i w X)] tabulated on a frequency sweep."""

    freqs: np.ndarray
    values: np.ndarray
    origin_value: complex

    def __post_init__(self):
        f = np.asarray(self.freqs, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        if f.ndim != 1 or f.shape != v.shape:
            raise ValueError("freqs and values must be matching 1-D arrays")
        if abs(self.origin_value - 1.0) > 1e-9:
            raise ValueError(f"value at zero frequency must be 1, got {self.origin_value}")
        if np.any(np.abs(v) > 1.0 + 1e-9):
            raise ValueError("characteristic values must have modulus <= 1")
        f.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "values", v)


def _gaussian_profile(x: np.ndarray, mean: float, variance: float) -> np.ndarray:
    return np.exp(-0.5 * (x - mean) ** 2 / variance) / np.sqrt(2.0 * np.pi * variance)


def make_gaussian(variance: float, grid: GridSpec) -> SampledDensity:
    """Zero-mean normal density sampled on a scalar grid, then renormalized."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if grid.dim != 1:
        raise ValueError("make_gaussian needs a 1-D grid; use make_iid_product for more")
    sigma = np.sqrt(variance)
    if grid.upper[0] - grid.lower[0] < 2.0 * sigma:
        raise ValueError("grid support narrower than 2 standard deviations; truncation too severe")
    vals = _gaussian_profile(grid.axis(0), 0.0, variance)
    return SampledDensity(grid, vals).normalized()


def make_gmm(weights, means, variances, grid: GridSpec) -> SampledDensity:
    """Gaussian mixture density sampled on a scalar grid and renormalized."""
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    if w.ndim != 1 or w.size < 1 or w.shape != mu.shape or w.shape != var.shape:
        raise ValueError("weights, means and variances must be equal-length nonempty vectors")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be nonnegative and sum to 1, got sum {w.sum()}")
    if np.any(var <= 0):
        raise ValueError("component variances must be positive")
    if grid.dim != 1:
        raise ValueError("make_gmm needs a 1-D grid")
    x = grid.axis(0)
    vals = np.zeros_like(x)
    for wi, mi, vi in zip(w, mu, var):
        vals += wi * _gaussian_profile(x, mi, vi)
    return SampledDensity(grid, vals).normalized()


def make_uniform(halfwidth: float, grid: GridSpec) -> SampledDensity:
    """Uniform density on [-halfwidth, halfwidth], cell-averaged at the edges.

    Each lattice point represents the cell [x - step/2, x + step/2]; edge
    cells carry the overlapped fraction of 1/(2a) so the Riemann mass is
    exactly one without distorting interior values.
    """
    if halfwidth <= 0:
        raise ValueError(f"halfwidth must be positive, got {halfwidth}")
    if grid.dim != 1:
        raise ValueError("make_uniform needs a 1-D grid")
    if grid.lower[0] > -halfwidth or grid.upper[0] < halfwidth:
        raise ValueError("halfwidth exceeds the grid support")
    x = grid.axis(0)
    h = grid.step / 2.0
    overlap = np.clip(np.minimum(x + h, halfwidth) - np.maximum(x - h, -halfwidth), 0.0, None)
    vals = overlap / (grid.step * 2.0 * halfwidth)
    return SampledDensity(grid, vals).normalized()


def make_iid_product(marginal: SampledDensity, dim: int) -> SampledDensity:
    """Product density of ``dim`` independent copies of a scalar marginal."""
    if marginal.grid.dim != 1:
        raise ValueError("marginal must be one-dimensional")
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    n = marginal.grid.counts[0]
    if n**dim > MAX_GRID_POINTS:
        raise ValueError(f"product grid would hold {n**dim} points, above the cap {MAX_GRID_POINTS}")
    if dim == 1:
        return marginal
    vals = reduce(np.multiply.outer, [marginal.values] * dim)
    g = GridSpec(dim=dim, lower=marginal.grid.lower * dim, step=marginal.grid.step, counts=marginal.grid.counts * dim)
    return SampledDensity(g, vals).normalized()


def make_correlated_gaussian_pair(variance: float, rho: float, grid: GridSpec) -> SampledDensity:
    """Zero-mean bivariate normal with covariance variance*[[1, rho], [rho, 1]]."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    if abs(rho) >= 1:
        raise ValueError(f"correlation must lie in (-1, 1), got {rho}")
    if grid.dim != 2:
        raise ValueError("make_correlated_gaussian_pair needs a 2-D grid")
    x1 = grid.axis(0)[:, None]
    x2 = grid.axis(1)[None, :]
    quad = (x1**2 - 2.0 * rho * x1 * x2 + x2**2) / (variance * (1.0 - rho**2))
    vals = np.exp(-0.5 * quad) / (2.0 * np.pi * variance * np.sqrt(1.0 - rho**2))
    return SampledDensity(grid, vals).normalized()


def mix(d1: SampledDensity, d2: SampledDensity, p: float) -> SampledDensity:
    """Convex combination p*d1 + (1-p)*d2 of densities on the same grid."""
    if d1.grid != d2.grid:
        raise ValueError("mixture components must share one grid")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"mixture weight must lie in [0, 1], got {p}")
    return SampledDensity(d1.grid, p * d1.values + (1.0 - p) * d2.values).normalized()


def characteristic_function(d: SampledDensity, freqs) -> CharacteristicTable:
    """Direct Riemann sum of f(x) exp(-i w x) step over the grid, per frequency.

    Direct summation (no fast transform) so arbitrary frequencies are
    supported, including the scaled sweeps used by the matching checker.
    """
    if d.grid.dim != 1:
        raise ValueError("characteristic_function needs a scalar density")
    w = np.atleast_1d(np.asarray(freqs, dtype=float))
    if w.size == 0:
        raise ValueError("frequency list must not be empty")
    x = d.grid.axis(0)
    weights = d.values * d.grid.step
    vals = np.exp(-1j * np.outer(w, x)) @ weights
    origin = complex(weights.sum())
    return CharacteristicTable(freqs=w, values=vals, origin_value=origin)


def density_to_csv(d: SampledDensity, path) -> None:
    """One row per grid point: coordinates then the density value."""
    g = d.grid
    header = "# dim={} lower={} step={:.17g} counts={}".format(
        g.dim,
        ",".join(f"{v:.17g}" for v in g.lower),
        g.step,
        ",".join(str(c) for c in g.counts),
    )
    data = np.column_stack([g.points, d.values.ravel()])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def density_from_csv(path) -> SampledDensity:
    grid, cols = _read_grid_csv(path, "dim")
    vals = cols[:, grid.dim]
    return SampledDensity(grid, vals.reshape(grid.counts))


def _read_grid_csv(path, dim_key: str):
    """Shared CSV reader: commented header describing the grid, then rows."""
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing grid header line")
        fields = dict(tok.split("=", 1) for tok in header[1:].split())
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    dim = int(fields[dim_key])
    grid = GridSpec(
        dim=dim,
        lower=tuple(float(v) for v in fields["lower"].split(",")),
        step=float(fields["step"]),
        counts=tuple(int(c) for c in fields["counts"].split(",")),
    )
    if rows.shape[0] != grid.n_points:
        raise ValueError(f"{path}: expected {grid.n_points} rows, found {rows.shape[0]}")
    return grid, rows
