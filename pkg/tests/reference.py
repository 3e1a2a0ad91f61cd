"""Independent reference implementations used as test oracles.

Everything here re-derives quantities with straightforward loops and manual
interpolation so the library's computational paths are checked against a
second, unrelated derivation rather than against themselves.
"""
from __future__ import annotations

import numpy as np

from zdjscc import ProblemInstance, SampledMapping, lagrangian, si_lagrangian
from zdjscc.density import SampledDensity


def riemann_mean(d: SampledDensity) -> np.ndarray:
    pts = d.grid.points
    w = d.values.ravel() * d.grid.cell_volume
    return pts.T @ w


def riemann_var(d: SampledDensity) -> float:
    pts = d.grid.points
    w = d.values.ravel() * d.grid.cell_volume
    mu = pts.T @ w
    return float(np.sum(w[:, None] * (pts - mu) ** 2) / d.grid.dim)


def riemann_correlation(d2: SampledDensity) -> float:
    pts = d2.grid.points
    w = d2.values.ravel() * d2.grid.cell_volume
    mu = pts.T @ w
    c = (pts - mu).T @ ((pts - mu) * w[:, None])
    return float(c[0, 1] / np.sqrt(c[0, 0] * c[1, 1]))


def interp_zero_outside(q: np.ndarray, axis: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Manual linear interpolation with zero fill outside the table.

    Inclusion at the support endpoints compares q against the axis values
    themselves (the tabulated density is discontinuous there, so the
    boundary convention must be pinned, not left to rounding).
    """
    step = axis[1] - axis[0]
    pos = (q - axis[0]) / step
    inside = (q >= axis[0]) & (q <= axis[-1])
    i0 = np.clip(np.floor(pos).astype(int), 0, axis.size - 2)
    frac = np.clip(pos - i0, 0.0, 1.0)
    out = vals[i0] * (1.0 - frac) + vals[i0 + 1] * frac
    out[~inside] = 0.0
    return out


def bayes_decoder_brute(
    G: np.ndarray, source: SampledDensity, noise: SampledDensity, y_axis: np.ndarray, floor: float = 1e-12
) -> np.ndarray:
    """Conditional mean E[X | y] per output point, one plain loop over y."""
    x = source.grid.points
    wx = source.values.ravel() * source.grid.cell_volume
    za = noise.grid.axis(0)
    fz = noise.values
    prior = x.T @ wx
    out = np.empty((y_axis.size, x.shape[1]))
    for iy, y in enumerate(y_axis):
        w = interp_zero_outside(y - G, za, fz)
        den = float(w @ wx)
        if den < floor:
            out[iy] = prior
        else:
            out[iy] = (x.T @ (w * wx)) / den
    return out


def si_decoder_brute(
    G: np.ndarray,
    joint: SampledDensity,
    noise: SampledDensity,
    y_axis: np.ndarray,
    floor: float = 1e-12,
) -> np.ndarray:
    """E[X1 | y, x2] on the product grid, loops over both arguments."""
    x1 = joint.grid.axis(0)
    x2 = joint.grid.axis(1)
    J = joint.values
    step = joint.grid.step
    za = noise.grid.axis(0)
    fz = noise.values
    f1 = J.sum(axis=1) * step
    prior = float((x1 * f1).sum() * step)
    out = np.empty((y_axis.size, x2.size))
    for iy, y in enumerate(y_axis):
        w = interp_zero_outside(y - G, za, fz)
        for j in range(x2.size):
            den = float((w * J[:, j]).sum() * step)
            if den < floor:
                col = float(J[:, j].sum() * step)
                out[iy, j] = float((x1 * J[:, j]).sum() * step / col) if col > floor else prior
            else:
                out[iy, j] = float((x1 * w * J[:, j]).sum() * step / den)
    return out


def fd_encoder_gradient(
    prob: ProblemInstance, G: np.ndarray, h: SampledMapping, indices, component: int = 0
) -> np.ndarray:
    """Central finite differences of the cost through each encoder grid value.

    Tabulated costs only touch the encoder at lattice points, so perturbing
    grid value i by delta moves the cost by 2 * delta * cellvol * grad_i;
    dividing that out returns the pointwise gradient density for comparison.
    The probe size is scaled by 1/(f_X * cellvol) so tail points get a
    resolvable signal, capped so the probe stays second-order and inside the
    decoder table (float64 leaves ample headroom for the tiny responses).
    """
    grid = prob.source.grid
    cellvol = grid.cell_volume
    fx = prob.source.values.ravel()
    out = np.empty(len(indices))
    for row, i in enumerate(indices):
        delta = min(1e-5 / max(fx[i] * cellvol, 1e-12), 0.02)
        plus = np.array(G)
        minus = np.array(G)
        plus[i, component] += delta
        minus[i, component] -= delta
        g_plus = SampledMapping(grid, prob.k, plus.reshape(*grid.counts, prob.k))
        g_minus = SampledMapping(grid, prob.k, minus.reshape(*grid.counts, prob.k))
        dj = lagrangian(g_plus, h, prob) - lagrangian(g_minus, h, prob)
        out[row] = dj / (2.0 * delta) / (2.0 * cellvol)
    return out


def fd_si_encoder_gradient(prob, G: np.ndarray, h: SampledMapping, indices) -> np.ndarray:
    """Same probe through the side-information cost (scalar X1 cell width)."""
    grid = prob.x1_grid
    step = grid.step
    f1 = prob.x1_marginal().values
    out = np.empty(len(indices))
    for row, i in enumerate(indices):
        delta = min(1e-5 / max(f1[i] * step, 1e-12), 0.02)
        plus = np.array(G)
        minus = np.array(G)
        plus[i, 0] += delta
        minus[i, 0] -= delta
        g_plus = SampledMapping(grid, 1, plus.reshape(*grid.counts, 1))
        g_minus = SampledMapping(grid, 1, minus.reshape(*grid.counts, 1))
        dj = si_lagrangian(g_plus, h, prob) - si_lagrangian(g_minus, h, prob)
        out[row] = dj / (2.0 * delta) / (2.0 * step)
    return out
