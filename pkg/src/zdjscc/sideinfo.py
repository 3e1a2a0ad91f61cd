"""Decoder side information: the decoder sees a correlated companion source.

The decoder becomes E[X1 | y, x2], tabulated on the product (y, x2) grid,
and the encoder gradient integrates the joint density over both the noise
and the side-information axis. The descent loop is shared with the
point-to-point solver.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel_ops import ChannelAverager
from .density import SampledDensity
from .grids import GridSpec
from .mapping import SampledMapping
from .solver import (
    NumericalFailure,
    SolveReport,
    SolverConfig,
    _DescentOps,
    DENOMINATOR_FLOOR,
    initial_encoder_values,
    run_descent,
    _schedule_for,
    geometric_schedule,
)

WORKERS_ENV = "ZDJSCC_WORKERS"


@dataclass(frozen=True)
class SideInfoProblem:
    """Joint density of (X1, X2) with X2 revealed to the decoder only."""

    joint: SampledDensity
    noise: SampledDensity
    lam: float
    m1: int = 1
    m2: int = 1
    k: int = 1

    def __post_init__(self):
        if self.m1 != 1 or self.m2 != 1 or self.k != 1:
            raise ValueError("side-information problems are supported for scalar X1, X2 and channel")
        if self.joint.grid.dim != self.m1 + self.m2:
            raise ValueError("joint density dimension must be m1 + m2")
        if self.noise.grid.dim != self.k:
            raise ValueError("noise dimension must equal k")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lam must be a nonnegative real, got {self.lam}")
        if abs(self.joint.mass - 1.0) > 1e-9:
            raise ValueError(f"joint density is not normalized (mass {self.joint.mass})")
        if np.max(np.abs(self.noise.mean())) > 1e-6:
            raise ValueError("noise must be zero-mean")

    @property
    def x1_grid(self) -> GridSpec:
        g = self.joint.grid
        return GridSpec(dim=1, lower=(g.lower[0],), step=g.step, counts=(g.counts[0],))

    def x1_marginal(self) -> SampledDensity:
        return self.joint.marginal(0)


class _SideInfoKernels:
    def __init__(self, prob: SideInfoProblem, decoder_step_scale: float = 0.01):
        self.prob = prob
        g = prob.joint.grid
        self.step = g.step
        self.x1 = g.axis(0)
        self.x2 = g.axis(1)
        self.J = prob.joint.values
        self.f1 = self.J.sum(axis=1) * self.step
        self.w1 = self.f1 * self.step
        self.JW = self.J * self.step**2
        self.J2 = self.J * self.step  # joint times the x2 cell width
        col = self.J.sum(axis=0) * self.step
        num = (self.x1[:, None] * self.J).sum(axis=0) * self.step
        prior = float((self.x1 * self.f1).sum() * self.step)
        with np.errstate(invalid="ignore", divide="ignore"):
            cm = np.where(col > DENOMINATOR_FLOOR, num / np.maximum(col, DENOMINATOR_FLOOR), prior)
        self.cond_mean = cm
        self.prior_mean = prior
        self.z = prob.noise.grid.axis(0)
        self.fz = prob.noise.values
        self.wz = prob.noise.flat_weights
        self.z_lo, self.z_hi = float(self.z[0]), float(self.z[-1])
        self.var_z = prob.noise.var()
        self.x1_sq = self.x1**2

    def g_values(self, g: SampledMapping) -> np.ndarray:
        grid = self.prob.x1_grid
        if g.domain == grid:
            return g.values_flat
        return np.atleast_2d(g.eval(grid.points))

    def power(self, G: np.ndarray) -> float:
        return float(self.w1 @ (G[:, 0] ** 2))

    def auto_y_axis(self, G: np.ndarray) -> GridSpec:
        dy = self.step
        lo = float(G.min()) + self.z_lo
        hi = float(G.max()) + self.z_hi
        pad = 0.05 * max(hi - lo, dy) + 2 * dy
        quantum = 64 * dy
        lo = math.floor((lo - pad) / quantum) * quantum
        hi = math.ceil((hi + pad) / quantum) * quantum
        count = int(round((hi - lo) / dy)) + 1
        if count * self.x2.size > (1 << 22):
            raise NumericalFailure("side-information decoder grid grew past 4M points")
        return GridSpec(dim=1, lower=(lo,), step=dy, counts=(count,))

    def decoder_values(self, G: np.ndarray, y_grid: GridSpec):
        y = y_grid.axis(0)
        w = np.interp(
            (y[:, None] - G[None, :, 0]).ravel(), self.z, self.fz, left=0.0, right=0.0
        ).reshape(y.size, G.shape[0])
        den = w @ (self.J * self.step)
        num = w @ (self.x1[:, None] * self.J * self.step)
        safe = den >= DENOMINATOR_FLOOR
        if not safe.any():
            raise ValueError("Bayes denominator vanished everywhere; encoder and grids are inconsistent")
        fallback = np.broadcast_to(self.cond_mean, den.shape)
        vals = np.where(safe, num / np.where(safe, den, 1.0), fallback)
        return vals, den

    def decoder(self, G: np.ndarray, y_grid: GridSpec) -> SampledMapping:
        if abs(y_grid.step - self.step) > 1e-12 * self.step:
            raise ValueError("output grid step must match the joint grid step (shared product step)")
        vals, _ = self.decoder_values(G, y_grid)
        domain = GridSpec(
            dim=2,
            lower=(y_grid.lower[0], self.x2[0]),
            step=self.step,
            counts=(y_grid.counts[0], self.x2.size),
        )
        return SampledMapping(domain, 1, vals[..., None])

    def _y_axis_of(self, h: SampledMapping) -> GridSpec:
        self._check_product_domain(h)
        return GridSpec(dim=1, lower=(h.domain.lower[0],), step=h.domain.step, counts=(h.domain.counts[0],))

    def _check_product_domain(self, h: SampledMapping) -> None:
        dom = h.domain
        if (
            dom.dim != 2
            or abs(dom.step - self.step) > 1e-12 * self.step
            or dom.counts[1] != self.x2.size
            or abs(dom.lower[1] - self.x2[0]) > 1e-9
        ):
            raise ValueError("decoder domain must be the product of a y axis and the joint's x2 axis")

    def _averager(self, h: SampledMapping, G: np.ndarray) -> ChannelAverager | None:
        ca = ChannelAverager.try_build(self._y_axis_of(h), self.prob.noise)
        if ca is not None and ca.covers(float(G.min()), float(G.max())):
            return ca
        return None

    def _gather_tables(self, G: np.ndarray, h: SampledMapping, tables):
        """Direct fallback: evaluate (y, x2) tables at (G + z, all x2)."""
        y = h.domain.axis(0)
        q = (G[:, 0][:, None] + self.z[None, :]).ravel()
        t = np.clip((q - y[0]) / h.domain.step, 0.0, y.size - 1)
        i0 = np.minimum(t.astype(np.int64), y.size - 2)
        frac = (t - i0)[:, None]
        return [tab[i0] * (1.0 - frac) + tab[i0 + 1] * frac for tab in tables]

    def distortion(self, G: np.ndarray, h: SampledMapping) -> float:
        self._check_product_domain(h)
        hv = h.values[:, :, 0]
        ca = self._averager(h, G)
        if ca is not None:
            loc = ca.locate(G[:, 0])
            s1 = ca.average(loc, hv)
            s2 = ca.average_product(loc, hv, hv)
            acc = self.x1_sq[:, None] * ca.total_weight - 2.0 * self.x1[:, None] * s1 + s2
            return float(np.sum(self.JW * acc))
        (H,) = self._gather_tables(G, h, [hv])
        H = H.reshape(self.x1.size, self.z.size, self.x2.size)
        r = self.x1[:, None, None] - H
        return float(np.einsum("ilj,l,ij->", r**2, self.wz, self.JW))

    def cost(self, G: np.ndarray, h: SampledMapping, lam: float):
        d = self.distortion(G, h)
        p = self.power(G)
        return d, p, d + lam * p

    def gradient_values(self, G: np.ndarray, h: SampledMapping, lam: float) -> np.ndarray:
        hv = h.values[:, :, 0]
        hp = np.gradient(hv, h.domain.step, axis=0)
        ca = self._averager(h, G)
        if ca is not None:
            loc = ca.locate(G[:, 0])
            t_hp = ca.average(loc, hp)
            t_hph = ca.average_product(loc, hp, hv)
            integ = np.sum(self.J2 * (self.x1[:, None] * t_hp - t_hph), axis=1)
        else:
            H, HP = self._gather_tables(G, h, [hv, hp])
            shape = (self.x1.size, self.z.size, self.x2.size)
            H = H.reshape(shape)
            HP = HP.reshape(shape)
            r = self.x1[:, None, None] - H
            integ = np.einsum("ilj,ilj,l,ij->i", HP, r, self.wz, self.J2)
        return (lam * self.f1 * G[:, 0] - integ)[:, None]


# -- public operations ------------------------------------------------------


def si_optimal_decoder(g: SampledMapping, prob: SideInfoProblem, y_grid: GridSpec) -> SampledMapping:
    """Conditional mean E[X1 | y, x2] on the product of y_grid and the x2 axis.

    Columns where the Bayes denominator underflows fall back to E[X1 | x2].
    """
    kern = _SideInfoKernels(prob)
    return kern.decoder(kern.g_values(g), y_grid)


def si_distortion(g: SampledMapping, h: SampledMapping, prob: SideInfoProblem) -> float:
    kern = _SideInfoKernels(prob)
    return kern.distortion(kern.g_values(g), h)


def si_power(g: SampledMapping, prob: SideInfoProblem) -> float:
    kern = _SideInfoKernels(prob)
    return kern.power(kern.g_values(g))


def si_lagrangian(g: SampledMapping, h: SampledMapping, prob: SideInfoProblem) -> float:
    kern = _SideInfoKernels(prob)
    G = kern.g_values(g)
    return kern.distortion(G, h) + prob.lam * kern.power(G)


def si_encoder_gradient(g: SampledMapping, h: SampledMapping, prob: SideInfoProblem) -> SampledMapping:
    """Pointwise cost variation with respect to the encoder at each x1:

        lam f_X1(x1) g(x1)
        - sum_{x2, z} h'(g(x1)+z, x2) [x1 - h(g(x1)+z, x2)] f_Z(z) f(x1, x2) dz dx2

    with h' the derivative of the decoder in its channel argument only.
    """
    kern = _SideInfoKernels(prob)
    vals = kern.gradient_values(kern.g_values(g), h, prob.lam)
    grid = prob.x1_grid
    return SampledMapping(grid, 1, vals.reshape(*grid.counts, 1))


class _SideInfoOps(_DescentOps):
    def __init__(self, prob: SideInfoProblem, cfg: SolverConfig):
        self.kern = _SideInfoKernels(prob, cfg.decoder_step_scale)

    def decoder_for(self, G):
        return self.kern.decoder(G, self.kern.auto_y_axis(G))

    def cost(self, G, h, lam):
        return self.kern.cost(G, h, lam)

    def gradient(self, G, h, lam):
        return self.kern.gradient_values(G, h, lam)


def si_solve(prob: SideInfoProblem, cfg: SolverConfig | None = None, init="random") -> SolveReport:
    """Same loop contract as the point-to-point solve with the side-information
    updates substituted. Annealing is on by default: this cost surface is
    riddled with poor local minima, so a decreasing-lam continuation from a
    random start is the default protocol rather than an option.
    """
    cfg = cfg or SolverConfig()
    if cfg.anneal_schedule is None and not isinstance(init, SampledMapping):
        cfg = SolverConfig(**{**cfg.__dict__, "anneal_schedule": geometric_schedule(prob.lam)})
    schedule = _schedule_for(cfg, prob.lam)
    ops = _SideInfoOps(prob, cfg)
    G0 = initial_encoder_values(prob.x1_marginal(), prob.noise, 1, 1, init, schedule[0], cfg)
    trace, G, h, converged = run_descent(ops, G0, schedule, cfg)
    grid = prob.x1_grid
    enc = SampledMapping(grid, 1, G.reshape(*grid.counts, 1))
    return SolveReport(tuple(trace), enc, h, converged, prob.lam)


def _seed_run(args) -> SolveReport:
    prob, cfg, seed = args
    cfg = SolverConfig(**{**cfg.__dict__, "seed": seed})
    return si_solve(prob, cfg, init="random")


def si_solve_best_of(prob: SideInfoProblem, cfg: SolverConfig | None = None, n_seeds: int = 5):
    """Run ``n_seeds`` random-start annealed solves, return (best, all_reports).

    Seeds are independent, so they may run in parallel processes
    (ZDJSCC_WORKERS caps the pool; default is the CPU count).
    """
    cfg = cfg or SolverConfig()
    jobs = [(prob, cfg, cfg.seed + i) for i in range(n_seeds)]
    workers = int(os.environ.get(WORKERS_ENV, os.cpu_count() or 1))
    workers = max(1, min(workers, n_seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_seed_run, jobs))
    else:
        reports = [_seed_run(j) for j in jobs]
    best = min(reports, key=lambda r: r.cost)
    return best, reports
