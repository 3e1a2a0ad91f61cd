"""Point-to-point mapping optimizer.

Alternates the closed-form conditional-expectation decoder update with
backtracking steepest-descent steps on the encoder, minimizing the
power-weighted cost J = D + lam * P, optionally continuing the solution
along a decreasing lam schedule (noisy relaxation) to escape poor local
minima.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel_ops import ChannelAverager
from .density import SampledDensity
from .grids import GridSpec
from .mapping import (
    LinearCoeffs,
    SampledMapping,
    make_linear_encoder,
    make_spiral_encoder,
)

# Below this Bayes denominator the observation is numerically impossible and
# the conditional mean falls back to the prior mean.
DENOMINATOR_FLOOR = 1e-12

_CHUNK_BUDGET = 4_000_000


class NumericalFailure(RuntimeError):
    """An update produced non-finite numbers; aborting is safer than continuing."""


@dataclass(frozen=True)
class ProblemInstance:
    """Source/noise pair with dimensions and the power-tradeoff multiplier."""

    source: SampledDensity
    noise: SampledDensity
    lam: float
    m: int
    k: int

    def __post_init__(self):
        if self.source.grid.dim != self.m:
            raise ValueError(f"source grid dimension {self.source.grid.dim} != m={self.m}")
        if self.noise.grid.dim != self.k:
            raise ValueError(f"noise grid dimension {self.noise.grid.dim} != k={self.k}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"lam must be a nonnegative real, got {self.lam}")
        for name, d in (("source", self.source), ("noise", self.noise)):
            if abs(d.mass - 1.0) > 1e-9:
                raise ValueError(f"{name} density is not normalized (mass {d.mass})")
        if np.max(np.abs(self.noise.mean())) > 1e-6:
            raise ValueError("noise must be zero-mean")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the descent loop; defaults follow the stopping rules in use
    throughout the test suite (relative cost change 1e-8, gradient sup-norm
    1e-6, 5000 iterations per schedule stage)."""

    step_mu: float = 1.0
    backtrack_factor: float = 0.5
    max_iters: int = 5000
    grad_tol: float = 1e-6
    cost_tol: float = 1e-8
    anneal_schedule: tuple[float, ...] | None = None
    seed: int = 0
    max_backtracks: int = 45
    decoder_step_scale: float = 0.01
    spiral_radial_gap: float | None = None

    def __post_init__(self):
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.step_mu <= 0 or self.max_iters < 1 or self.grad_tol <= 0 or self.cost_tol <= 0:
            raise ValueError("step_mu, max_iters, grad_tol, cost_tol must be positive")


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    lam: float
    distortion: float
    power: float
    cost: float
    grad_norm: float


@dataclass(frozen=True)
class SolveReport:
    trace: tuple[TracePoint, ...]
    final_encoder: SampledMapping
    final_decoder: SampledMapping
    converged: bool
    lambda_used: float

    @property
    def distortion(self) -> float:
        return self.trace[-1].distortion

    @property
    def power(self) -> float:
        return self.trace[-1].power

    @property
    def cost(self) -> float:
        return self.trace[-1].cost


def trace_is_monotone(trace) -> bool:
    """Accepted costs never increase within any fixed-lam stage."""
    last: dict[float, float] = {}
    for pt in trace:
        if pt.lam in last and pt.cost > last[pt.lam] + 0.0:
            return False
        last[pt.lam] = pt.cost
    return True


def geometric_schedule(lam_target: float, start_factor: float = 100.0, ratio: float = 0.7) -> tuple[float, ...]:
    """Decreasing lam values from start_factor*lam down to exactly lam."""
    if lam_target <= 0:
        return (max(lam_target, 0.0),)
    if start_factor <= 1.0:
        return (lam_target,)
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    vals = []
    f = start_factor
    while f > 1.0 + 1e-9:
        vals.append(lam_target * f)
        f *= ratio
    vals.append(lam_target)
    return tuple(vals)


def linear_lambda_estimate(var_x: float, var_z: float, power: float, k: int = 1, m: int = 1) -> float:
    """Slope of the ideal distortion-power curve at the target power.

    For matched scalar Gaussian statistics this is the multiplier at which
    the jointly optimal linear pair spends exactly ``power``.
    """
    gamma = power / var_z
    return k * (var_x / var_z) * (1.0 + gamma) ** (-(k / m + 1.0))


def linear_power_for_lambda(var_x: float, var_z: float, lam: float) -> float:
    """Inverse of the scalar lam(P) relation; 0 when power is priced out."""
    if lam <= 0:
        raise ValueError("lam must be positive to invert")
    gamma = math.sqrt(var_x / (var_z * lam)) - 1.0
    return max(gamma, 0.0) * var_z


def _require_finite(value, context: str) -> None:
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in {context}")


class _ProblemKernels:
    """Cached quadrature arrays and the core integral routines for one
    (source, noise) pair. Encoders are handled as plain (n, k) value arrays
    on the source lattice."""

    def __init__(self, source: SampledDensity, noise: SampledDensity, decoder_step_scale: float = 0.01):
        self.source = source
        self.noise = noise
        self.m = source.grid.dim
        self.k = noise.grid.dim
        self.x = source.grid.points
        self.fx = source.values.ravel()
        self.wx = source.flat_weights
        self.z = noise.grid.points
        self.wz = noise.flat_weights
        self.x_sq = np.sum(self.x**2, axis=1)
        self.prior_mean = source.mean()
        self.var_z = noise.var()
        self.decoder_step_scale = decoder_step_scale
        if self.k == 1:
            za = noise.grid.axis(0)
            self.z_lo, self.z_hi = float(za[0]), float(za[-1])

    def g_values(self, g: SampledMapping) -> np.ndarray:
        if g.domain == self.source.grid:
            return g.values_flat
        return np.atleast_2d(g.eval(self.x))

    def power(self, G: np.ndarray) -> float:
        return float(self.wx @ np.sum(G**2, axis=1))

    # -- distortion ------------------------------------------------------

    def distortion(self, G: np.ndarray, h: SampledMapping) -> float:
        if self.k == 1:
            ca = ChannelAverager.try_build(h.domain, self.noise)
            if ca is not None and ca.covers(float(G.min()), float(G.max())):
                return self._distortion_fast(G, h, ca)
        return self._distortion_direct(G, h)

    def _distortion_fast(self, G: np.ndarray, h: SampledMapping, ca: ChannelAverager) -> float:
        hv = h.values_flat
        loc = ca.locate(G[:, 0])
        acc = self.x_sq * ca.total_weight
        for j in range(self.m):
            acc = acc - 2.0 * self.x[:, j] * ca.average(loc, hv[:, j])
            acc = acc + ca.average_product(loc, hv[:, j], hv[:, j])
        return float(self.wx @ acc)

    def _distortion_direct(self, G: np.ndarray, h: SampledMapping) -> float:
        n = G.shape[0]
        nz = self.z.shape[0]
        chunk = max(1, _CHUNK_BUDGET // (nz * max(self.m, self.k)))
        total = 0.0
        for i0 in range(0, n, chunk):
            i1 = min(i0 + chunk, n)
            y = (G[i0:i1, None, :] + self.z[None, :, :]).reshape(-1, self.k)
            xhat = h.eval(y).reshape(i1 - i0, nz, self.m)
            err = np.sum((self.x[i0:i1, None, :] - xhat) ** 2, axis=2)
            total += float(self.wx[i0:i1] @ (err @ self.wz))
        return total

    def cost(self, G: np.ndarray, h: SampledMapping, lam: float):
        d = self.distortion(G, h)
        p = self.power(G)
        return d, p, d + lam * p

    # -- conditional-expectation decoder ---------------------------------

    def bayes_sums(self, G: np.ndarray, out_grid: GridSpec):
        """Riemann numerator/denominator of E[X | y] on the output grid."""
        if self.k == 1:
            return self._bayes_sums_1d(G, out_grid)
        return self._bayes_sums_nd(G, out_grid)

    def _bayes_sums_1d(self, G: np.ndarray, out_grid: GridSpec):
        y = out_grid.axis(0)
        za = self.noise.grid.axis(0)
        fz = self.noise.values
        order = np.argsort(G[:, 0], kind="stable")
        gs = G[order, 0]
        wf = self.wx[order]
        xwf = self.x[order] * wf[:, None]
        ny = y.shape[0]
        num = np.zeros((ny, self.m))
        den = np.zeros(ny)
        block = 256
        for b0 in range(0, ny, block):
            b1 = min(b0 + block, ny)
            lo = np.searchsorted(gs, y[b0] - self.z_hi - out_grid.step)
            hi = np.searchsorted(gs, y[b1 - 1] - self.z_lo + out_grid.step)
            if lo >= hi:
                continue
            q = y[b0:b1, None] - gs[None, lo:hi]
            w = np.interp(q.ravel(), za, fz, left=0.0, right=0.0).reshape(q.shape)
            den[b0:b1] = w @ wf[lo:hi]
            num[b0:b1] = w @ xwf[lo:hi]
        return num, den

    def _bayes_sums_nd(self, G: np.ndarray, out_grid: GridSpec):
        ypts = out_grid.points
        ny = ypts.shape[0]
        n = G.shape[0]
        num = np.zeros((ny, self.m))
        den = np.zeros(ny)
        chunk = max(1, _CHUNK_BUDGET // max(n, 1))
        xw = self.x * self.wx[:, None]
        for b0 in range(0, ny, chunk):
            b1 = min(b0 + chunk, ny)
            q = (ypts[b0:b1, None, :] - G[None, :, :]).reshape(-1, self.k)
            w = self.noise.pdf(q).reshape(b1 - b0, n)
            den[b0:b1] = w @ self.wx
            num[b0:b1] = w @ xw
        return num, den

    def decoder_values(self, G: np.ndarray, out_grid: GridSpec):
        num, den = self.bayes_sums(G, out_grid)
        if np.all(den < DENOMINATOR_FLOOR):
            raise ValueError("Bayes denominator vanished on the whole output grid; encoder and grids are inconsistent")
        safe = den >= DENOMINATOR_FLOOR
        vals = np.empty_like(num)
        vals[safe] = num[safe] / den[safe, None]
        vals[~safe] = self.prior_mean
        return vals, den

    def decoder(self, G: np.ndarray, out_grid: GridSpec) -> SampledMapping:
        vals, _ = self.decoder_values(G, out_grid)
        return SampledMapping(out_grid, self.m, vals.reshape(*out_grid.counts, self.m))

    def auto_decoder_grid(self, G: np.ndarray) -> GridSpec:
        """Output grid covering every reachable y = g(x) + z with headroom.

        For scalar channels the step divides the noise step so the fast
        correlation path applies; extents are quantized so small encoder
        changes reuse the identical grid.
        """
        if self.k == 1:
            dz = self.noise.grid.step
            p_comp = self.power(G) / self.k
            sigma_y = math.sqrt(p_comp + self.var_z)
            target = max(self.decoder_step_scale * sigma_y, 1e-12)
            q = max(1, math.ceil(dz / target - 1e-9))
            dy = dz / q
            lo = float(G.min()) + self.z_lo
            hi = float(G.max()) + self.z_hi
            pad = 0.05 * max(hi - lo, dy) + 2 * dy
            quantum = 64 * dy
            lo = math.floor((lo - pad) / quantum) * quantum
            hi = math.ceil((hi + pad) / quantum) * quantum
            count = int(round((hi - lo) / dy)) + 1
            if count > (1 << 22):
                raise NumericalFailure("decoder grid grew past 4M points; encoder is diverging")
            return GridSpec(dim=1, lower=(lo,), step=dy, counts=(count,))
        los, his = [], []
        for a in range(self.k):
            za = self.noise.grid.axis(a)
            lo = float(G[:, a].min()) + za[0]
            hi = float(G[:, a].max()) + za[-1]
            pad = 0.05 * max(hi - lo, self.noise.grid.step)
            los.append(lo - pad)
            his.append(hi + pad)
        step = self.noise.grid.step
        counts = tuple(int(math.ceil((hi - lo) / step)) + 1 for lo, hi in zip(los, his))
        if int(np.prod(counts)) > (1 << 22):
            raise NumericalFailure("decoder grid grew past 4M points; encoder is diverging")
        return GridSpec(dim=self.k, lower=tuple(los), step=step, counts=counts)

    # -- encoder gradient -------------------------------------------------

    def decoder_jacobian_tables(self, h: SampledMapping) -> np.ndarray:
        """d h / d y by central differences on the decoder grid (one-sided at
        the edges), shape (*counts, m, k)."""
        hv = h.values
        cols = [np.gradient(hv, h.domain.step, axis=a) for a in range(h.domain.dim)]
        return np.stack(cols, axis=-1)

    def gradient_values(self, G: np.ndarray, h: SampledMapping, lam: float) -> np.ndarray:
        if self.k == 1:
            ca = ChannelAverager.try_build(h.domain, self.noise)
            if ca is not None and ca.covers(float(G.min()), float(G.max())):
                pull = self._pull_fast(G, h, ca)
            else:
                pull = self._pull_direct(G, h)
        else:
            pull = self._pull_direct(G, h)
        return lam * self.fx[:, None] * G - self.fx[:, None] * pull

    def _pull_fast(self, G: np.ndarray, h: SampledMapping, ca: ChannelAverager) -> np.ndarray:
        hv = h.values_flat
        dy = h.domain.step
        loc = ca.locate(G[:, 0])
        acc = np.zeros(G.shape[0])
        for j in range(self.m):
            hp = np.gradient(hv[:, j], dy)
            acc = acc + self.x[:, j] * ca.average(loc, hp)
            acc = acc - ca.average_product(loc, hp, hv[:, j])
        return acc[:, None]

    def _pull_direct(self, G: np.ndarray, h: SampledMapping) -> np.ndarray:
        hp = self.decoder_jacobian_tables(h)
        hp_flat = hp.reshape(*h.domain.counts, self.m * self.k)
        hp_map = SampledMapping(h.domain, self.m * self.k, hp_flat)
        n = G.shape[0]
        nz = self.z.shape[0]
        chunk = max(1, _CHUNK_BUDGET // (nz * self.m * self.k))
        out = np.zeros((n, self.k))
        for i0 in range(0, n, chunk):
            i1 = min(i0 + chunk, n)
            y = (G[i0:i1, None, :] + self.z[None, :, :]).reshape(-1, self.k)
            hvals = h.eval(y).reshape(i1 - i0, nz, self.m)
            jac = hp_map.eval(y).reshape(i1 - i0, nz, self.m, self.k)
            resid = self.x[i0:i1, None, :] - hvals
            pulled = np.einsum("cnmk,cnm->cnk", jac, resid)
            out[i0:i1] = np.einsum("cnk,n->ck", pulled, self.wz)
        return out


# -- public operations ----------------------------------------------------


def power(g: SampledMapping, prob: ProblemInstance) -> float:
    """Average transmitted energy E||g(X)||^2 by Riemann sum."""
    kern = _ProblemKernels(prob.source, prob.noise)
    return kern.power(kern.g_values(g))


def distortion(g: SampledMapping, h: SampledMapping, prob: ProblemInstance) -> float:
    """Mean square reconstruction error E||X - h(g(X)+Z)||^2 by double Riemann sum."""
    if g.domain.dim != prob.m or g.codomain_dim != prob.k:
        raise ValueError("encoder must map the source space to the channel space")
    if h.domain.dim != prob.k or h.codomain_dim != prob.m:
        raise ValueError("decoder must map the channel space to the source space")
    kern = _ProblemKernels(prob.source, prob.noise)
    return kern.distortion(kern.g_values(g), h)


def lagrangian(g: SampledMapping, h: SampledMapping, prob: ProblemInstance) -> float:
    return distortion(g, h, prob) + prob.lam * power(g, prob)


def optimal_decoder(g: SampledMapping, prob: ProblemInstance, out_grid: GridSpec) -> SampledMapping:
    """Conditional mean E[X | y] tabulated on ``out_grid``.

    Where the Bayes denominator drops below the floor the observation is
    numerically impossible and the prior mean is emitted.
    """
    kern = _ProblemKernels(prob.source, prob.noise)
    return kern.decoder(kern.g_values(g), out_grid)


def output_density(g: SampledMapping, prob: ProblemInstance, out_grid: GridSpec) -> SampledDensity:
    """Density of the channel output y = g(X) + Z on ``out_grid``."""
    kern = _ProblemKernels(prob.source, prob.noise)
    _, den = kern.bayes_sums(kern.g_values(g), out_grid)
    return SampledDensity(out_grid, den.reshape(out_grid.counts)).normalized()


def encoder_gradient(g: SampledMapping, h: SampledMapping, prob: ProblemInstance) -> SampledMapping:
    """Pointwise variation of the cost with respect to the encoder values:

        lam f_X(x) g(x) - f_X(x) * integral h'(g(x)+z)^T [x - h(g(x)+z)] f_Z(z) dz

    with the decoder Jacobian h' from central differences on its grid.
    """
    kern = _ProblemKernels(prob.source, prob.noise)
    vals = kern.gradient_values(kern.g_values(g), h, prob.lam)
    return SampledMapping(prob.source.grid, prob.k, vals.reshape(*prob.source.grid.counts, prob.k))


# -- descent driver --------------------------------------------------------


class _DescentOps:
    """Adapter between the generic descent loop and one problem family."""

    def decoder_for(self, G):
        raise NotImplementedError

    def cost(self, G, h, lam):
        raise NotImplementedError

    def gradient(self, G, h, lam):
        raise NotImplementedError


class _PointToPointOps(_DescentOps):
    def __init__(self, prob: ProblemInstance, cfg: SolverConfig):
        self.kern = _ProblemKernels(prob.source, prob.noise, cfg.decoder_step_scale)

    def decoder_for(self, G):
        grid = self.kern.auto_decoder_grid(G)
        return self.kern.decoder(G, grid)

    def cost(self, G, h, lam):
        return self.kern.cost(G, h, lam)

    def gradient(self, G, h, lam):
        return self.kern.gradient_values(G, h, lam)


def run_descent(ops: _DescentOps, G0: np.ndarray, schedule, cfg: SolverConfig):
    """Shared annealed loop: decoder refresh, frozen-decoder line search,
    refresh-checked acceptance so recorded costs never increase in a stage."""
    G = np.array(G0, dtype=float)
    trace: list[TracePoint] = []
    it = 0
    converged = False
    for lam in schedule:
        h = ops.decoder_for(G)
        d, p, cost = ops.cost(G, h, lam)
        _require_finite(cost, f"cost at stage lam={lam}")
        grad = ops.gradient(G, h, lam)
        _require_finite(grad, f"gradient at stage lam={lam}")
        gn = float(np.max(np.abs(grad)))
        trace.append(TracePoint(it, lam, d, p, cost, gn))
        it += 1
        converged = gn <= cfg.grad_tol
        steps = 0
        while not converged and steps < cfg.max_iters:
            steps += 1
            mu = cfg.step_mu
            accepted = False
            for _ in range(cfg.max_backtracks):
                G_try = G - mu * grad
                _require_finite(G_try, "encoder update")
                d_t, p_t, cost_t = ops.cost(G_try, h, lam)
                _require_finite(cost_t, "line-search cost")
                if cost_t <= cost:
                    h_try = ops.decoder_for(G_try)
                    d_t, p_t, cost_t = ops.cost(G_try, h_try, lam)
                    _require_finite(cost_t, "post-refresh cost")
                    if cost_t <= cost:
                        accepted = True
                        break
                mu *= cfg.backtrack_factor
            if not accepted:
                converged = True  # stationary at line-search resolution
                break
            rel_drop = (cost - cost_t) / max(abs(cost), 1e-300)
            G, h, d, p, cost = G_try, h_try, d_t, p_t, cost_t
            grad = ops.gradient(G, h, lam)
            _require_finite(grad, "gradient")
            gn = float(np.max(np.abs(grad)))
            trace.append(TracePoint(it, lam, d, p, cost, gn))
            it += 1
            if gn <= cfg.grad_tol or rel_drop <= cfg.cost_tol:
                converged = True
    return trace, G, h, converged


def _validate_schedule(schedule, lam_target: float) -> None:
    if len(schedule) == 0:
        raise ValueError("anneal schedule must be nonempty")
    arr = np.asarray(schedule, dtype=float)
    if np.any(np.diff(arr) >= 0):
        raise ValueError("anneal schedule must be strictly decreasing")
    if abs(arr[-1] - lam_target) > 1e-12 * max(1.0, abs(lam_target)):
        raise ValueError("anneal schedule must end at the problem's lam")


def _schedule_for(cfg: SolverConfig, lam: float) -> tuple[float, ...]:
    if cfg.anneal_schedule is None:
        return (lam,)
    if len(cfg.anneal_schedule) > 1:
        _validate_schedule(cfg.anneal_schedule, lam)
    return tuple(cfg.anneal_schedule)


def initial_encoder_values(
    prob_source: SampledDensity,
    noise: SampledDensity,
    m: int,
    k: int,
    init,
    lam_first: float,
    cfg: SolverConfig,
) -> np.ndarray:
    """Starting encoder values on the source lattice for a named or explicit init."""
    grid = prob_source.grid
    n = grid.n_points
    if isinstance(init, SampledMapping):
        if init.domain.dim != m or init.codomain_dim != k:
            raise ValueError("initial mapping has incompatible dimensions")
        if init.domain == grid:
            return np.array(init.values_flat)
        return np.atleast_2d(init.eval(grid.points))
    if init == "random":
        rng = np.random.default_rng(cfg.seed)
        return rng.uniform(-0.1, 0.1, size=(n, k))
    var_x = prob_source.var()
    var_z = noise.var()
    p_est = linear_power_for_lambda(var_x, var_z, lam_first) if lam_first > 0 else var_x
    if init == "linear":
        if m != k:
            raise ValueError("linear initialization needs matched dimensions m == k")
        if p_est <= 0:
            return np.zeros((n, k))
        gain = math.sqrt(p_est / var_x)
        return gain * grid.points
    if init == "spiral":
        if m != 2 or k != 1:
            raise ValueError("spiral initialization is a 2:1 construction")
        gap = cfg.spiral_radial_gap if cfg.spiral_radial_gap is not None else 1.5 * math.sqrt(var_x)
        base = make_spiral_encoder(grid, angular_rate=1.0, radial_gap=gap, gain=1.0)
        p1 = float(SampledDensity(grid, prob_source.values).flat_weights @ (base.values_flat[:, 0] ** 2))
        scale = math.sqrt(max(p_est, 1e-12) / max(p1, 1e-300))
        return scale * np.array(base.values_flat)
    raise ValueError(f"unknown initializer {init!r}")


def solve(prob: ProblemInstance, cfg: SolverConfig | None = None, init="linear") -> SolveReport:
    """Optimize encoder and decoder for ``prob``.

    ``init`` is a SampledMapping or one of 'linear', 'spiral', 'random'.
    When ``cfg.anneal_schedule`` is set, each stage warm-starts from the
    previous stage's encoder. Non-convergence is reported via the flag;
    non-finite updates raise NumericalFailure.
    """
    cfg = cfg or SolverConfig()
    schedule = _schedule_for(cfg, prob.lam)
    ops = _PointToPointOps(prob, cfg)
    G0 = initial_encoder_values(prob.source, prob.noise, prob.m, prob.k, init, schedule[0], cfg)
    trace, G, h, converged = run_descent(ops, G0, schedule, cfg)
    enc = SampledMapping(prob.source.grid, prob.k, G.reshape(*prob.source.grid.counts, prob.k))
    return SolveReport(tuple(trace), enc, h, converged, prob.lam)


def solve_for_power(
    source: SampledDensity,
    noise: SampledDensity,
    m: int,
    k: int,
    target_power: float,
    cfg: SolverConfig | None = None,
    init="linear",
    rel_tol: float = 0.01,
    max_bisect: int = 48,
) -> SolveReport:
    """Calibrate lam by bisection so the solved transmit power hits the target.

    Power is monotone decreasing in lam; after the first (possibly annealed)
    solve every further evaluation warm-starts from the previous encoder at a
    single-stage lam, tracking the same solution branch.
    """
    if target_power <= 0:
        raise ValueError("target power must be positive")
    cfg = cfg or SolverConfig()
    lam0 = linear_lambda_estimate(source.var(), noise.var(), target_power, k, m)

    reports: dict[float, SolveReport] = {}

    def run(lam: float, warm: SolveReport | None) -> SolveReport:
        prob = ProblemInstance(source, noise, lam, m, k)
        if warm is None:
            rep = solve(prob, cfg, init)
        else:
            rep = solve(prob, replace(cfg, anneal_schedule=None), warm.final_encoder)
        reports[lam] = rep
        return rep

    rep = run(lam0, None)
    # Bracket: lam_lo spends at least the target power, lam_hi at most.
    lam_lo = lam_hi = lam0
    if rep.power > target_power:
        while rep.power > target_power:
            lam_lo = lam_hi
            lam_hi = lam_hi * 4.0
            if lam_hi > lam0 * 4.0**30:
                raise RuntimeError("failed to bracket the target power from above")
            rep = run(lam_hi, rep)
    else:
        while rep.power < target_power:
            lam_hi = lam_lo
            lam_lo = lam_lo / 4.0
            if lam_lo < lam0 / 4.0**30:
                raise RuntimeError("failed to bracket the target power from below")
            rep = run(lam_lo, rep)

    best = min(reports.values(), key=lambda r: abs(r.power - target_power))
    for _ in range(max_bisect):
        if abs(best.power - target_power) <= rel_tol * target_power:
            return best
        lam_mid = math.sqrt(lam_lo * lam_hi)
        rep = run(lam_mid, best)
        if rep.power > target_power:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
        if abs(rep.power - target_power) < abs(best.power - target_power):
            best = rep
    if abs(best.power - target_power) > rel_tol * target_power:
        raise RuntimeError(
            f"power calibration did not reach the target within {rel_tol:.1%}: "
            f"best {best.power:.6g} vs {target_power:.6g}"
        )
    return best
