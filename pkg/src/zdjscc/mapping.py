"""Encoder/decoder functions tabulated on grids, plus linear and spiral baselines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .grids import GridSpec, interp_table


@dataclass(frozen=True)
class SampledMapping:
    """Vector-valued function tabulated on a GridSpec.

    Evaluation between lattice points is multilinear interpolation of the
    stored values; queries outside the domain are clamped to the nearest
    domain point (MMSE decoders flatten toward the prior mean at extremes,
    so extrapolation would be wrong on both ends of the pipeline).
    """

    domain: GridSpec
    codomain_dim: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = tuple(self.domain.counts) + (self.codomain_dim,)
        if v.shape != expected:
            raise ValueError(f"values shape {v.shape} != {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("mapping values must be finite at every grid point")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def values_flat(self) -> np.ndarray:
        """(n_points, codomain_dim) view in C order."""
        return self.values.reshape(self.domain.n_points, self.codomain_dim)

    def eval(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if (p.ndim == 1 and p.shape[0] != self.domain.dim) or (
            p.ndim == 2 and p.shape[1] != self.domain.dim
        ):
            raise ValueError(f"point dimension does not match domain dimension {self.domain.dim}")
        return interp_table(self.domain, self.values, p, outside="clamp")

    __call__ = eval


@dataclass(frozen=True)
class LinearCoeffs:
    """Gains of a linear encoder/decoder pair y = encoder_gain*x, xhat = decoder_gain*y."""

    encoder_gain: float
    decoder_gain: float

    def __post_init__(self):
        if not (np.isfinite(self.encoder_gain) and np.isfinite(self.decoder_gain)):
            raise ValueError("gains must be finite")


def gaussian_linear_coeffs(power: float, var_x: float, var_z: float) -> LinearCoeffs:
    """Jointly optimal linear gains for a Gaussian source over a Gaussian channel.

    encoder_gain = sqrt(P/var_x) spends the full power budget;
    decoder_gain = (1/encoder_gain) * P/(P + var_z) is the matching scalar
    Wiener gain.
    """
    if power <= 0 or var_x <= 0 or var_z <= 0:
        raise ValueError("power and variances must be positive")
    ke = float(np.sqrt(power / var_x))
    kd = float(power / (power + var_z) / ke)
    return LinearCoeffs(encoder_gain=ke, decoder_gain=kd)


def from_function(grid: GridSpec, fn, codomain_dim: int) -> SampledMapping:
    """Tabulate a callable (n, dim) -> (n, codomain_dim) on the grid."""
    vals = np.asarray(fn(grid.points), dtype=float).reshape(*grid.counts, codomain_dim)
    return SampledMapping(grid, codomain_dim, vals)


def make_linear_encoder(coeffs: LinearCoeffs, grid: GridSpec) -> SampledMapping:
    """Tabulated g(x) = encoder_gain * x (diagonal scaling when dim > 1)."""
    vals = coeffs.encoder_gain * grid.points
    return SampledMapping(grid, grid.dim, vals.reshape(*grid.counts, grid.dim))


def make_linear_decoder(coeffs: LinearCoeffs, grid: GridSpec) -> SampledMapping:
    """Tabulated h(y) = decoder_gain * y on the channel-output grid."""
    vals = coeffs.decoder_gain * grid.points
    return SampledMapping(grid, grid.dim, vals.reshape(*grid.counts, grid.dim))


def _spiral_arc_length(theta: np.ndarray, c: float) -> np.ndarray:
    # Arc length of r = c*theta from the origin: (c/2)(theta*sqrt(1+theta^2)+asinh(theta)).
    return 0.5 * c * (theta * np.sqrt(1.0 + theta**2) + np.arcsinh(theta))


def spiral_points(radial_gap: float, max_radius: float, ds: float):
    """Sample one arm of r = (radial_gap/pi)*theta at uniform arc-length spacing.

    Returns (points (n, 2), arc_lengths (n,)). The two-armed curve is this
    arm plus its image under point reflection.
    """
    c = radial_gap / np.pi
    theta_max = max_radius / c
    dense = np.linspace(0.0, theta_max, max(2048, int(theta_max * 64) + 2))
    arc_dense = _spiral_arc_length(dense, c)
    s = np.arange(0.0, arc_dense[-1] + ds, ds)
    theta = np.interp(s, arc_dense, dense)
    r = c * theta
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return pts, s


def make_spiral_encoder(
    grid: GridSpec, angular_rate: float, radial_gap: float, gain: float
) -> SampledMapping:
    """2:1 encoder: project onto a two-armed Archimedean spiral, emit its parameter.

    Every source point is snapped to the nearest point of the double spiral
    r = (radial_gap/pi)*theta (second arm = point reflection of the first);
    the scalar channel value is gain times the signed arc-length parameter
    of that point, where ``angular_rate`` sets the arc length traversed per
    unit parameter. Nearest points come from a dense parameter search with
    sample spacing <= step/2.
    """
    if grid.dim != 2:
        raise ValueError("spiral encoders need a 2-D source grid")
    if angular_rate <= 0 or radial_gap <= 0 or gain <= 0:
        raise ValueError("angular_rate, radial_gap and gain must be positive")
    corners = np.abs(np.array([grid.lower, grid.upper]))
    max_radius = float(np.hypot(corners[:, 0].max(), corners[:, 1].max())) + grid.step
    pts, s = spiral_points(radial_gap, max_radius, ds=grid.step / 2.0)
    curve = np.vstack([pts, -pts])
    params = np.concatenate([s, -s]) / angular_rate
    tree = cKDTree(curve)
    _, idx = tree.query(grid.points, k=1)
    vals = gain * params[idx]
    return SampledMapping(grid, 1, vals.reshape(*grid.counts, 1))


def write_mapping_csv(m: SampledMapping, path) -> None:
    """Interchange format: commented grid header, then coordinate/output rows."""
    g = m.domain
    header = "# dim_in={} dim_out={} lower={} step={:.17g} counts={}".format(
        g.dim,
        m.codomain_dim,
        ",".join(f"{v:.17g}" for v in g.lower),
        g.step,
        ",".join(str(c) for c in g.counts),
    )
    data = np.column_stack([g.points, m.values_flat])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_mapping_csv(path) -> SampledMapping:
    from .density import _read_grid_csv

    grid, cols = _read_grid_csv(path, "dim_in")
    with open(path) as fh:
        header = fh.readline()
    fields = dict(tok.split("=", 1) for tok in header[1:].split())
    d_out = int(fields["dim_out"])
    vals = cols[:, grid.dim : grid.dim + d_out]
    return SampledMapping(grid, d_out, vals.reshape(*grid.counts, d_out))
