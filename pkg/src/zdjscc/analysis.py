"""Theory-facing utilities: capacity-based distortion bounds, dB accounting,
the characteristic-function matching check for linearity of optimal mappings,
linearity probes, Monte-Carlo cross-validation of the grid integrals, and the
fixed-resolution comparison against a discrete-codebook baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel_ops import hat_scatter
from .density import SampledDensity, characteristic_function
from .grids import GridSpec
from .mapping import SampledMapping
from .solver import (
    SolverConfig,
    _DescentOps,
    _ProblemKernels,
    linear_lambda_estimate,
    linear_power_for_lambda,
    run_descent,
)


def opta(var_x: float, var_z: float, power: float, k: int, m: int) -> float:
    """Distortion floor from equating rate-distortion to k/m channel capacities."""
    if var_x <= 0 or var_z <= 0 or power < 0:
        raise ValueError("variances must be positive and power nonnegative")
    return var_x / (1.0 + power / var_z) ** (k / m)


def opta_side_info(var_x: float, var_z: float, power: float, rho: float, k: int, m: int) -> float:
    """Distortion floor when the decoder also sees a rho-correlated companion."""
    if abs(rho) > 1:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    return (1.0 - rho**2) * opta(var_x, var_z, power, k, m)


def csnr_db(power: float, var_z: float) -> float:
    return 10.0 * math.log10(power / var_z)


def snr_db(var_x: float, distortion: float) -> float:
    return 10.0 * math.log10(var_x / distortion)


@dataclass(frozen=True)
class OperatingPoint:
    """One (power, distortion) point with its dB coordinates."""

    csnr_db: float
    snr_db: float
    power: float
    distortion: float
    var_x: float
    var_z: float

    def __post_init__(self):
        if abs(self.csnr_db - csnr_db(self.power, self.var_z)) > 1e-9:
            raise ValueError("csnr_db is inconsistent with power/var_z")
        if abs(self.snr_db - snr_db(self.var_x, self.distortion)) > 1e-9:
            raise ValueError("snr_db is inconsistent with var_x/distortion")

    @classmethod
    def from_linear(cls, power: float, distortion: float, var_x: float, var_z: float) -> "OperatingPoint":
        return cls(
            csnr_db=csnr_db(power, var_z),
            snr_db=snr_db(var_x, distortion),
            power=power,
            distortion=distortion,
            var_x=var_x,
            var_z=var_z,
        )


@dataclass(frozen=True)
class MatchReport:
    """Outcome of the linearity matching check F_X(alpha w) vs F_Z^gamma(w)."""

    gamma: float
    alpha: float
    max_abs_mismatch: float
    window: tuple[float, float]


CHAR_MODULUS_FLOOR = 1e-3


def match_check(
    fx: SampledDensity,
    fz: SampledDensity,
    power: float,
    wmax: float = 8.0,
    n_freq: int = 1601,
    eps_char: float = CHAR_MODULUS_FLOOR,
) -> MatchReport:
    """Tabulate F_X(alpha w) against F_Z(w)^gamma over a symmetric window.

    gamma = power / var_z and alpha = sqrt(power / var_x); the noise power is
    taken through the principal complex logarithm with the phase unwrapped
    outward from w = 0 (where both sides are exactly 1), and the mismatch is
    reported only where |F_Z| stays above ``eps_char`` so the multivalued
    power is well defined.
    """
    if fx.grid.dim != 1 or fz.grid.dim != 1:
        raise ValueError("match_check needs scalar densities")
    if power <= 0 or wmax <= 0:
        raise ValueError("power and wmax must be positive")
    n = int(n_freq)
    if n % 2 == 0:
        n += 1
    freqs = np.linspace(-wmax, wmax, n)
    gamma = power / fz.var()
    alpha = math.sqrt(power / fx.var())
    fz_tab = characteristic_function(fz, freqs).values
    fx_tab = characteristic_function(fx, alpha * freqs).values
    mask = np.abs(fz_tab) >= eps_char
    if mask.sum() < n / 2:
        raise ValueError("noise characteristic function vanishes over more than half the window")
    c = n // 2
    phase = np.empty(n)
    phase[c:] = np.unwrap(np.angle(fz_tab[c:]))
    phase[: c + 1] = np.unwrap(np.angle(fz_tab[c::-1]))[::-1]
    log_fz = np.log(np.maximum(np.abs(fz_tab), 1e-300)) + 1j * phase
    target = np.exp(gamma * log_fz)
    mismatch = float(np.max(np.abs(fx_tab[mask] - target[mask])))
    return MatchReport(gamma=gamma, alpha=alpha, max_abs_mismatch=mismatch, window=(-wmax, wmax))


def nonlinearity_index(g: SampledMapping, source: SampledDensity) -> float:
    """Source-weighted relative L2 distance from the best affine fit.

    Zero exactly when g is affine almost everywhere on the weighted support;
    invariant under nonzero rescaling of g. Zero-power mappings map to 0.
    """
    if g.domain.dim != 1 or g.codomain_dim != 1:
        raise ValueError("nonlinearity_index handles scalar mappings")
    x = source.grid.points[:, 0]
    w = source.flat_weights
    y = g.eval(source.grid.points)[:, 0]
    energy = float(w @ y**2)
    if energy < 1e-300:
        return 0.0
    design = np.column_stack([np.ones_like(x), x])
    a = design.T @ (design * w[:, None])
    b = design.T @ (w * y)
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = y - design @ coef
    return float(np.sqrt(max(float(w @ resid**2), 0.0) / energy))


# -- Monte-Carlo cross-check -------------------------------------------------


@dataclass(frozen=True)
class MonteCarloReport:
    d_hat: float
    p_hat: float
    d_se: float
    p_se: float
    n: int


def gaussian_sampler(variance: float, dim: int = 1):
    sigma = math.sqrt(variance)

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(0.0, sigma, size=(n, dim))

    return draw


def gmm_sampler(weights, means, variances):
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    sd = np.sqrt(np.asarray(variances, dtype=float))

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(w.size, size=n, p=w / w.sum())
        return (mu[comp] + sd[comp] * rng.normal(size=n))[:, None]

    return draw


def uniform_sampler(halfwidth: float, dim: int = 1):
    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-halfwidth, halfwidth, size=(n, dim))

    return draw


def monte_carlo_eval(
    g: SampledMapping,
    h: SampledMapping,
    source_sampler,
    noise_sampler,
    n: int,
    seed: int = 0,
) -> MonteCarloReport:
    """Empirical distortion/power over i.i.d. draws, mappings interpolated.

    Uses a counter-based generator so a fixed seed is bitwise reproducible
    and shards can be split deterministically.
    """
    if n < 100:
        raise ValueError("need at least 100 samples for a meaningful standard error")
    rng = np.random.Generator(np.random.Philox(seed))
    x = np.asarray(source_sampler(rng, n), dtype=float)
    z = np.asarray(noise_sampler(rng, n), dtype=float)
    y = g.eval(x)
    xhat = h.eval(y + z)
    sq_err = np.sum((x - xhat) ** 2, axis=1)
    sq_pow = np.sum(y**2, axis=1)
    return MonteCarloReport(
        d_hat=float(sq_err.mean()),
        p_hat=float(sq_pow.mean()),
        d_se=float(sq_err.std(ddof=1) / math.sqrt(n)),
        p_se=float(sq_pow.std(ddof=1) / math.sqrt(n)),
        n=n,
    )


# -- linear baselines ---------------------------------------------------------


@dataclass(frozen=True)
class GainScanPoint:
    gain: float
    distortion: float
    power: float
    cost: float


def linear_gain_scan(source: SampledDensity, noise: SampledDensity, lam: float, gains) -> list[GainScanPoint]:
    """Evaluate g(x) = gain*x with its conditional-mean decoder for every gain."""
    kern = _ProblemKernels(source, noise)
    rows = []
    for gain in np.asarray(gains, dtype=float):
        G = gain * kern.x
        h = kern.decoder(G, kern.auto_decoder_grid(G))
        d, p, cost = kern.cost(G, h, lam)
        rows.append(GainScanPoint(float(gain), d, p, cost))
    return rows


def best_linear_at_power(source: SampledDensity, noise: SampledDensity, power: float) -> GainScanPoint:
    """Best +-sqrt(P/var_x) linear encoder (with conditional-mean decoder)."""
    gain = math.sqrt(power / source.var())
    rows = linear_gain_scan(source, noise, 0.0, [gain, -gain])
    return min(rows, key=lambda r: r.distortion)


def best_linear_compressive(source2d: SampledDensity, noise: SampledDensity, power: float) -> GainScanPoint:
    """Best linear 2:1 scheme at the power budget.

    For an i.i.d. source any unit direction is equivalent, so the scan covers
    a few projection angles at full power (less power is strictly worse here).
    """
    kern = _ProblemKernels(source2d, noise)
    var_c = source2d.var()
    a = math.sqrt(power / var_c)
    best = None
    for phi in (0.0, math.pi / 8, math.pi / 4):
        w = np.array([math.cos(phi), math.sin(phi)])
        G = a * (kern.x @ w)[:, None]
        h = kern.decoder(G, kern.auto_decoder_grid(G))
        d, p, cost = kern.cost(G, h, 0.0)
        pt = GainScanPoint(a, d, p, cost)
        if best is None or pt.distortion < best.distortion:
            best = pt
    return best


# -- many-to-one structure probes ---------------------------------------------


def _central_index_range(source: SampledDensity, mass: float) -> tuple[int, int]:
    w = source.flat_weights
    cum = np.cumsum(w)
    tail = (1.0 - mass) / 2.0
    lo = int(np.searchsorted(cum, tail))
    hi = int(np.searchsorted(cum, 1.0 - tail))
    return lo, min(hi, w.size - 1)


def monotone_segments(values: np.ndarray) -> list[tuple[int, int]]:
    """Maximal index ranges on which the sequence is monotone (by step sign)."""
    d = np.diff(values)
    signs = np.sign(d)
    for i in range(1, signs.size):  # let flats continue the current run
        if signs[i] == 0:
            signs[i] = signs[i - 1]
    segments = []
    start = 0
    for i in range(1, signs.size):
        if signs[i] != 0 and signs[i - 1] != 0 and signs[i] != signs[i - 1]:
            segments.append((start, i))
            start = i
    segments.append((start, values.size - 1))
    return segments


def fold_overlap_count(g: SampledMapping, source: SampledDensity, mass: float = 0.998) -> int:
    """Number of monotone-branch pairs whose channel images overlap.

    A nonzero count certifies a many-to-one encoder: at least two disjoint
    source intervals share channel values. Branch boundaries come from sign
    changes of the tabulated derivative inside the central ``mass`` of the
    source; one-point branches are ignored as derivative noise.
    """
    lo, hi = _central_index_range(source, mass)
    y = g.values_flat[:, 0][lo : hi + 1]
    if y.size < 3:
        return 0
    span = float(y.max() - y.min())
    if span <= 0:
        return 0
    segs = [(a, b) for a, b in monotone_segments(y) if b - a >= 2]
    count = 0
    for i in range(len(segs)):
        ia, ib = segs[i]
        i_lo, i_hi = sorted((y[ia], y[ib]))
        for j in range(i + 1, len(segs)):
            ja, jb = segs[j]
            j_lo, j_hi = sorted((y[ja], y[jb]))
            overlap = min(i_hi, j_hi) - max(i_lo, j_lo)
            if overlap > 1e-3 * span:
                count += 1
    return count


def same_value_separation(
    g: SampledMapping, source: SampledDensity, n_levels: int = 65, mass: float = 0.998
) -> float:
    """Mean source-space distance between points sharing a channel value.

    Levels sweep the central channel range; levels hit by fewer than two
    branches are skipped. NaN for strictly monotone encoders.
    """
    lo, hi = _central_index_range(source, mass)
    x = source.grid.points[lo : hi + 1, 0]
    y = g.values_flat[lo : hi + 1, 0]
    y_lo, y_hi = np.quantile(y, [0.1, 0.9])
    gaps = []
    for level in np.linspace(y_lo, y_hi, n_levels):
        s = y - level
        flips = np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]
        if flips.size < 2:
            continue
        xc = x[flips] + (x[flips + 1] - x[flips]) * s[flips] / (s[flips] - s[flips + 1])
        gaps.append(float(np.mean(np.diff(xc))))
    return float(np.mean(gaps)) if gaps else float("nan")


# -- fixed-resolution comparison ----------------------------------------------


@dataclass(frozen=True)
class FixedResolutionRow:
    csnr_db: float
    n_points: int
    snr_interp_db: float
    snr_snap_db: float
    snr_snap_ml_db: float
    power_interp: float
    power_snap: float


class _NodeDesignOps(_DescentOps):
    """Descent over encoder values at a handful of fixed sample locations.

    'interp' expands the nodes onto the fine source lattice by linear
    interpolation (the deployed configuration is what gets optimized);
    'snap' assigns every fine point its nearest node value, which is the
    discrete-codebook design rule that ignores eventual interpolation.
    """

    def __init__(self, source: SampledDensity, noise: SampledDensity, node_axis: np.ndarray, mode: str):
        self.kern = _ProblemKernels(source, noise)
        self.mode = mode
        self.nodes = node_axis
        xf = source.grid.axis(0)
        step = node_axis[1] - node_axis[0]
        t = np.clip((xf - node_axis[0]) / step, 0.0, node_axis.size - 1)
        if mode == "interp":
            self.base = np.minimum(t.astype(np.int64), node_axis.size - 2)
            self.frac = t - self.base
        elif mode == "snap":
            self.idx = np.round(t).astype(np.int64)
        else:
            raise ValueError(f"unknown node design mode {mode!r}")

    def expand(self, v: np.ndarray) -> np.ndarray:
        vv = v[:, 0]
        if self.mode == "interp":
            return (vv[self.base] * (1.0 - self.frac) + vv[self.base + 1] * self.frac)[:, None]
        return vv[self.idx][:, None]

    def decoder_for(self, v):
        G = self.expand(v)
        return self.kern.decoder(G, self.kern.auto_decoder_grid(G))

    def cost(self, v, h, lam):
        return self.kern.cost(self.expand(v), h, lam)

    def gradient(self, v, h, lam):
        gf = self.kern.gradient_values(self.expand(v), h, lam)[:, 0] * self.kern.source.grid.step
        if self.mode == "interp":
            return hat_scatter(self.nodes.size, self.base, self.frac, gf)[:, None]
        out = np.zeros(self.nodes.size)
        np.add.at(out, self.idx, gf)
        return out[:, None]


def _node_design_cfg() -> SolverConfig:
    return SolverConfig(max_iters=400, cost_tol=1e-10, grad_tol=1e-9)


def _design_nodes(ops: _NodeDesignOps, lam: float, v0: np.ndarray) -> np.ndarray:
    _, v, _, _ = run_descent(ops, v0, (lam,), _node_design_cfg())
    return v


def _deployed_metrics(ops_interp: _NodeDesignOps, v: np.ndarray) -> tuple[float, float]:
    G = ops_interp.expand(v)
    h = ops_interp.kern.decoder(G, ops_interp.kern.auto_decoder_grid(G))
    d, p, _ = ops_interp.kern.cost(G, h, 0.0)
    return d, p


def _calibrate_nodes(
    ops: _NodeDesignOps,
    ops_interp: _NodeDesignOps,
    target_power: float,
    var_x: float,
    var_z: float,
    rel_tol: float = 0.01,
) -> np.ndarray:
    """Bisection on lam so the deployed (interpolated) encoder spends the budget."""
    lam = linear_lambda_estimate(var_x, var_z, target_power)
    p_lin = linear_power_for_lambda(var_x, var_z, lam)
    v = (math.sqrt(max(p_lin, 1e-12) / var_x) * ops.nodes)[:, None]

    def eval_at(lam_val: float, warm: np.ndarray):
        v_new = _design_nodes(ops, lam_val, warm)
        return v_new, _deployed_metrics(ops_interp, v_new)[1]

    v, p = eval_at(lam, v)
    # Bracket: lam_lo spends at least the target power, lam_hi at most.
    if p > target_power:
        lam_lo = lam_hi = lam
        for _ in range(40):
            lam_hi *= 4.0
            v, p = eval_at(lam_hi, v)
            if p <= target_power:
                break
            lam_lo = lam_hi
        else:
            raise RuntimeError("could not bracket the power target from above")
    else:
        lam_lo = lam_hi = lam
        for _ in range(40):
            lam_lo /= 4.0
            v, p = eval_at(lam_lo, v)
            if p >= target_power:
                break
            lam_hi = lam_lo
        else:
            raise RuntimeError("could not bracket the power target from below")
    best_v, best_gap = v, abs(p - target_power)
    for _ in range(48):
        if best_gap <= rel_tol * target_power:
            return best_v
        lam = math.sqrt(lam_lo * lam_hi)
        v, p = eval_at(lam, v)
        if p > target_power:
            lam_lo = lam
        else:
            lam_hi = lam
        if abs(p - target_power) < best_gap:
            best_v, best_gap = v, abs(p - target_power)
    if best_gap > rel_tol * target_power:
        raise RuntimeError("node design power calibration failed")
    return best_v


def _ml_baseline_distortion(
    source: SampledDensity, noise: SampledDensity, ops_snap: _NodeDesignOps, v: np.ndarray
) -> float:
    """Digital deployment of the snapped design: nearest-codeword decoding by
    noise likelihood, reconstruction at per-cell source centroids."""
    vv = v[:, 0]
    w = source.flat_weights
    x = source.grid.points[:, 0]
    n_nodes = vv.size
    s0 = np.zeros(n_nodes)
    s1 = np.zeros(n_nodes)
    s2 = np.zeros(n_nodes)
    np.add.at(s0, ops_snap.idx, w)
    np.add.at(s1, ops_snap.idx, w * x)
    np.add.at(s2, ops_snap.idx, w * x**2)
    centroid = np.where(s0 > 0, s1 / np.maximum(s0, 1e-300), 0.0)
    z = noise.grid.axis(0)
    wz = noise.flat_weights
    recv = vv[:, None] + z[None, :]
    like = noise.pdf((recv[:, :, None] - vv[None, None, :]).reshape(-1, 1)).reshape(n_nodes, z.size, n_nodes)
    jhat = np.argmax(like, axis=2)
    err = s2[:, None] - 2.0 * s1[:, None] * centroid[jhat] + s0[:, None] * centroid[jhat] ** 2
    return float(np.sum(err * wz[None, :]))


def fixed_resolution_compare(prob, n_points: int, csnr_list, rel_tol: float = 0.01) -> list[FixedResolutionRow]:
    """Interpolation-aware design vs discrete-codebook design at few samples.

    Both sides pick values for the same ``n_points`` uniform encoder sample
    locations and are deployed identically (linear interpolation plus the
    conditional-expectation decoder) at a matched power budget per CSNR; the
    baseline additionally gets its native digital deployment (nearest-node
    encoder, likelihood decoding to per-cell centroids) reported alongside.
    """
    if n_points < 2:
        raise ValueError("need at least 2 encoder points")
    source, noise = prob.source, prob.noise
    if source.grid.dim != 1 or noise.grid.dim != 1:
        raise ValueError("fixed-resolution comparison is a scalar construction")
    var_x, var_z = source.var(), noise.var()
    lo, hi = source.grid.lower[0], source.grid.upper[0]
    nodes = np.linspace(lo, hi, n_points)
    ops_interp = _NodeDesignOps(source, noise, nodes, "interp")
    ops_snap = _NodeDesignOps(source, noise, nodes, "snap")
    rows = []
    for c in csnr_list:
        target_power = var_z * 10.0 ** (c / 10.0)
        v_int = _calibrate_nodes(ops_interp, ops_interp, target_power, var_x, var_z, rel_tol)
        d_int, p_int = _deployed_metrics(ops_interp, v_int)
        v_snap = _calibrate_nodes(ops_snap, ops_interp, target_power, var_x, var_z, rel_tol)
        d_snap, p_snap = _deployed_metrics(ops_interp, v_snap)
        d_ml = _ml_baseline_distortion(source, noise, ops_snap, v_snap)
        rows.append(
            FixedResolutionRow(
                csnr_db=float(c),
                n_points=n_points,
                snr_interp_db=snr_db(var_x, d_int),
                snr_snap_db=snr_db(var_x, d_snap),
                snr_snap_ml_db=snr_db(var_x, d_ml),
                power_interp=p_int,
                power_snap=p_snap,
            )
        )
    return rows
