"""Bootstrap machinery and specification/exogeneity tests.

Statistics compare bid quantile-regression slope paths: the coefficient
comparison statistic

    L int_0^1 sum_l (X1_l' beta_H0(alpha) - X1_l' beta_hat(alpha))^2 d alpha

(Riemann sum on the coefficient grid), the entry-exogeneity transform that
maps I1-bidder slopes into their I2-bidder counterparts, the auction-format
null slope built from ascending data, and a Cramer-von-Mises comparison of
constrained and unconstrained joint bid/covariate cdfs with a semiparametric
bootstrap. Pairwise bootstraps resample whole auctions with replacement using
per-replicate substreams, so results do not depend on worker scheduling.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import gauss_legendre
from .errors import AuctionQRError, InputError
from .model import AuctionSample
from .rng import substream
from .solver import aqr_fit, ascending_value_fit

DEFAULT_STAT_GRID = np.round(np.linspace(0.0, 1.0, 101), 10)


@dataclass
class CoefficientPath:
    """A (D+1)-vector coefficient path on a quantile-level grid."""

    grid: np.ndarray
    values: np.ndarray  # (G, D+1)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.grid.size:
            raise InputError("coefficient path rows must match the grid")

    def at(self, alphas):
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        out = np.empty((alphas.size, self.values.shape[1]))
        for j in range(self.values.shape[1]):
            out[:, j] = np.interp(alphas, self.grid, self.values[:, j])
        return out


@dataclass
class TestReport:
    """Bootstrap test outcome: statistic, replicates and p-value."""

    statistic: float
    p_value: float
    replicates: np.ndarray
    method: str
    seed: int
    n_requested: int
    n_failed: int = 0
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"statistic": self.statistic, "p_value": self.p_value,
                "replicates": np.asarray(self.replicates).tolist(),
                "method": self.method, "seed": self.seed,
                "B": self.n_requested, "n_failed": self.n_failed,
                "meta": self.meta}


def bootstrap_p_value(statistic, replicates):
    """(1 + #{replicates >= statistic}) / (B + 1); never exactly zero."""
    replicates = np.asarray(replicates, dtype=float)
    if replicates.size == 0:
        raise InputError("p-value undefined without bootstrap replicates")
    return float((1 + np.sum(replicates >= statistic))
                 / (replicates.size + 1))


@dataclass
class BootstrapResult:
    replicates: np.ndarray
    n_failed: int
    seed: int
    n_requested: int


def _resample(sample, rng):
    idx = rng.integers(0, sample.n_auctions, sample.n_auctions)
    return AuctionSample([sample.records[i] for i in idx],
                         format=sample.format)


def pairwise_bootstrap(sample, n_replicates, seed, stat_fn, threads=1):
    """Resample whole auctions with replacement and recompute a statistic.

    Replicate r uses the (seed, r) substream; failed replicates (package
    errors raised by stat_fn) are dropped and counted.
    """

    def one(r):
        rng = substream(seed, r)
        try:
            return float(stat_fn(_resample(sample, rng)))
        except AuctionQRError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_replicates)))
    else:
        results = [one(r) for r in range(n_replicates)]
    values = np.array([v for v in results if v is not None])
    return BootstrapResult(replicates=values,
                           n_failed=n_replicates - values.size,
                           seed=seed, n_requested=n_replicates)


# ----------------------------------------------------------------------
# coefficient comparison statistic

def liu_luo_stat(sample, path_h0, path_hat, n_bidders=None):
    """L int sum_l (X1_l'(beta_H0 - beta_hat))^2 d alpha on the path grid."""
    if path_h0.grid.shape != path_hat.grid.shape or \
            not np.allclose(path_h0.grid, path_hat.grid):
        raise InputError("grid mismatch between the two slope paths")
    if path_h0.values.shape != path_hat.values.shape:
        raise InputError("slope paths disagree on the coefficient dimension")
    xs = sample.covariates(n_bidders)
    x1 = np.column_stack([np.ones(xs.shape[0]), xs])
    diff = path_h0.values - path_hat.values          # (G, D+1)
    proj = diff @ x1.T                                # (G, L)
    grid = path_h0.grid
    w = np.empty_like(grid)
    w[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    w[0] = 0.5 * (grid[1] - grid[0])
    w[-1] = 0.5 * (grid[-1] - grid[-2])
    return float(x1.shape[0] * w @ np.sum(proj * proj, axis=1))


def _ols_slopes(sample, n_bidders):
    xs, y = sample.design_long(n_bidders)
    x1 = np.column_stack([np.ones(len(y)), xs])
    return np.linalg.lstsq(x1, y, rcond=None)[0]


def homogenized_h0_path(sample, n_bidders, fit):
    """Null path for the location-shift model: AQR intercept, OLS slopes."""
    coefs = _ols_slopes(sample, n_bidders)
    values = np.tile(coefs, (fit.grid.size, 1))
    values[:, 0] = fit.beta0[:, 0]
    return CoefficientPath(grid=fit.grid.copy(), values=values)


def entry_transform(path, from_bidders, to_bidders, nodes=64):
    """Map I1-bidder bid slopes to the I2-bidder slopes implied by exogeneity.

    beta_{I1}(alpha | I2) = (I2-1)/(I1-1) beta(alpha | I1)
        + (I2-1)(I1-I2)/(I1-1) int_0^1 u^{I2-2} beta(alpha u | I1) du,
    the substituted form being exact down to alpha = 0.
    """
    i1, i2 = int(from_bidders), int(to_bidders)
    if i1 < 2 or i2 < 2:
        raise InputError("bidder counts must be >= 2")
    if i1 == i2:
        return CoefficientPath(grid=path.grid.copy(),
                               values=path.values.copy())
    u, w = gauss_legendre(0.0, 1.0, nodes)
    grid = path.grid
    pts = np.clip(grid[:, None] * u[None, :], 0.0, 1.0)
    vals = path.at(pts.ravel()).reshape(grid.size, nodes, -1)
    integral = np.einsum("gmk,m->gk", vals, w * u ** (i2 - 2))
    out = ((i2 - 1) / (i1 - 1)) * path.values \
        + ((i2 - 1) * (i1 - i2) / (i1 - 1)) * integral
    return CoefficientPath(grid=grid.copy(), values=out)


def format_exo_slope(asc_sample, n_bidders, cfg, nodes=64):
    """First-price bid slopes implied by ascending data under format                 exogeneity.

    Fits the ascending private-value slopes at the transformed winning-bid
    levels, then pushes them through the equilibrium map
    beta_H0(alpha) = (I-1) int_0^1 u^{I-2} gamma_asc(alpha u) du.
    """
    if asc_sample.format != "ascending":
        raise InputError("format-exogeneity null needs ascending winning bids")
    asc_fit = ascending_value_fit(asc_sample, n_bidders, cfg)
    gamma_path = CoefficientPath(grid=asc_fit.grid.copy(),
                                 values=asc_fit.beta0.copy())
    u, w = gauss_legendre(0.0, 1.0, nodes)
    grid = gamma_path.grid
    pts = np.clip(grid[:, None] * u[None, :], 0.0, 1.0)
    vals = gamma_path.at(pts.ravel()).reshape(grid.size, nodes, -1)
    out = (n_bidders - 1) * np.einsum("gmk,m->gk", vals,
                                      w * u ** (n_bidders - 2))
    return CoefficientPath(grid=grid.copy(), values=out)


# ----------------------------------------------------------------------
# packaged coefficient-comparison bootstrap tests

def _fit_paths_homogenized(sample, n_bidders, cfg):
    fit = aqr_fit(sample, n_bidders, cfg)
    hat = CoefficientPath(grid=fit.grid.copy(), values=fit.beta0.copy())
    h0 = homogenized_h0_path(sample, n_bidders, fit)
    return h0, hat


def liu_luo_homogenized_test(sample, n_bidders, cfg, n_replicates, seed,
                             threads=1):
    """Coefficient-comparison test of the location-shift (homogenized) null.

    The bootstrap recentres at the sample path difference: each replicate
    resamples auctions, refits both paths and evaluates the statistic on the
    difference-of-differences, approximating the null distribution.
    """
    h0, hat = _fit_paths_homogenized(sample, n_bidders, cfg)
    stat = liu_luo_stat(sample, h0, hat, n_bidders)
    delta = h0.values - hat.values

    def boot_stat(resampled):
        h0_b, hat_b = _fit_paths_homogenized(resampled, n_bidders, cfg)
        centered = CoefficientPath(
            grid=h0_b.grid, values=h0_b.values - hat_b.values - delta)
        zero = CoefficientPath(grid=h0_b.grid,
                               values=np.zeros_like(centered.values))
        return liu_luo_stat(resampled, centered, zero, n_bidders)

    boot = pairwise_bootstrap(sample, n_replicates, seed, boot_stat,
                              threads=threads)
    return TestReport(statistic=stat,
                      p_value=bootstrap_p_value(stat, boot.replicates),
                      replicates=boot.replicates, method="liu-luo-homogenized",
                      seed=seed, n_requested=n_replicates,
                      n_failed=boot.n_failed,
                      meta={"n_bidders": n_bidders, "h": cfg.h})


def liu_luo_entry_test(sample, from_bidders, to_bidders, cfg, n_replicates,
                       seed, threads=1):
    """Entry-exogeneity test comparing transformed I1 slopes with I2 slopes."""

    def paths(s):
        fit1 = aqr_fit(s, from_bidders, cfg)
        fit2 = aqr_fit(s, to_bidders, cfg)
        base = CoefficientPath(grid=fit1.grid.copy(), values=fit1.beta0.copy())
        h0 = entry_transform(base, from_bidders, to_bidders)
        hat = CoefficientPath(grid=fit2.grid.copy(), values=fit2.beta0.copy())
        return h0, hat

    h0, hat = paths(sample)
    stat = liu_luo_stat(sample, h0, hat, to_bidders)
    delta = h0.values - hat.values

    def boot_stat(resampled):
        h0_b, hat_b = paths(resampled)
        centered = CoefficientPath(grid=h0_b.grid,
                                   values=h0_b.values - hat_b.values - delta)
        zero = CoefficientPath(grid=h0_b.grid,
                               values=np.zeros_like(centered.values))
        return liu_luo_stat(resampled, centered, zero, to_bidders)

    boot = pairwise_bootstrap(sample, n_replicates, seed, boot_stat,
                              threads=threads)
    return TestReport(statistic=stat,
                      p_value=bootstrap_p_value(stat, boot.replicates),
                      replicates=boot.replicates, method="liu-luo-entry",
                      seed=seed, n_requested=n_replicates,
                      n_failed=boot.n_failed,
                      meta={"from": from_bidders, "to": to_bidders,
                            "h": cfg.h})


def liu_luo_format_test(fp_sample, asc_sample, n_bidders, cfg, n_replicates,
                        seed, threads=1):
    """Auction-format exogeneity test: ascending-implied vs first-price slopes."""
    fit = aqr_fit(fp_sample, n_bidders, cfg)
    hat = CoefficientPath(grid=fit.grid.copy(), values=fit.beta0.copy())
    h0 = format_exo_slope(asc_sample, n_bidders, cfg)
    stat = liu_luo_stat(fp_sample, h0, hat, n_bidders)
    delta = h0.values - hat.values

    def one(r):
        rng = substream(seed, r)
        fp_b = _resample(fp_sample, rng)
        asc_b = _resample(asc_sample, rng)
        try:
            fit_b = aqr_fit(fp_b, n_bidders, cfg)
            hat_b = CoefficientPath(grid=fit_b.grid.copy(),
                                    values=fit_b.beta0.copy())
            h0_b = format_exo_slope(asc_b, n_bidders, cfg)
            centered = CoefficientPath(grid=h0_b.grid,
                                       values=h0_b.values - hat_b.values
                                       - delta)
            zero = CoefficientPath(grid=h0_b.grid,
                                   values=np.zeros_like(centered.values))
            return liu_luo_stat(fp_b, centered, zero, n_bidders)
        except AuctionQRError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_replicates)))
    else:
        results = [one(r) for r in range(n_replicates)]
    reps = np.array([v for v in results if v is not None])
    return TestReport(statistic=stat,
                      p_value=bootstrap_p_value(stat, reps),
                      replicates=reps, method="liu-luo-format", seed=seed,
                      n_requested=n_replicates,
                      n_failed=n_replicates - reps.size,
                      meta={"n_bidders": n_bidders, "h": cfg.h})


# ----------------------------------------------------------------------
# Cramer-von-Mises comparison of constrained and unconstrained cdfs

def _long_arrays(sample, n_bidders=None):
    recs = (sample.records if n_bidders is None
            else [r for r in sample.records if r.n_bidders == n_bidders])
    xs = np.repeat(np.array([r.x for r in recs]).reshape(len(recs), sample.d),
                   [r.n_bidders for r in recs], axis=0)
    bids = np.concatenate([r.bids for r in recs])
    levels = np.array([r.n_bidders for r in recs])
    return xs, bids, np.repeat(np.arange(len(recs)), levels), recs


def rothe_wied_test(sample, model_quantile, n_replicates, seed,
                    grid=DEFAULT_STAT_GRID, n_bidders=None):
    """Cramer-von-Mises specification test with a semiparametric bootstrap.

    The unconstrained estimator is the joint empirical cdf of
    (bid, covariates); the constrained one averages the model-implied
    conditional cdf G(b | x', model) = int 1[model(alpha, x') <= b] d alpha
    over the empirical covariate distribution restricted to x' <= x.
    Bootstrap replicates redraw bids from the model at uniform levels holding
    covariates fixed.
    """
    if n_replicates < 50:
        warnings.warn("fewer than 50 bootstrap replicates gives a coarse "
                      "p-value", stacklevel=2)
    xs, bids, owner, recs = _long_arrays(sample, n_bidders)
    n = bids.size
    n_rec = len(recs)
    counts = np.array([r.n_bidders for r in recs], dtype=float)
    # covariate dominance is fixed across semiparametric replicates:
    # dom_rec[k, l] = 1[X_l <= X_k componentwise]
    rec_x = np.array([r.x for r in recs]).reshape(n_rec, sample.d)
    dom_rec = np.ones((n, n_rec), dtype=bool)
    for d in range(sample.d):
        dom_rec &= rec_x[None, :, d] <= xs[:, None, d]
    dom_bid = dom_rec[:, owner]
    # model quantile curves per auction, sorted for fast cdf lookups
    curves = np.sort(np.array([np.asarray(model_quantile(grid, rec.x),
                                          dtype=float) for rec in recs]),
                     axis=1)

    def statistic(bvec):
        # cmat[k, l] = G(b_k | X_l, model)
        cmat = np.empty((n, n_rec))
        for ell in range(n_rec):
            cmat[:, ell] = np.searchsorted(curves[ell], bvec,
                                           side="right") / grid.size
        bid_le = bvec[None, :] <= bvec[:, None]
        g_emp = (bid_le & dom_bid).mean(axis=1)
        g_h0 = (dom_rec * cmat * counts[None, :]).sum(axis=1) / n
        return float(np.mean((g_h0 - g_emp) ** 2))

    stat = statistic(bids)

    reps = np.empty(n_replicates)
    for r in range(n_replicates):
        rng = substream(seed, r)
        levels = rng.random(n)
        b_star = np.empty(n)
        for ell, rec in enumerate(recs):
            mask = owner == ell
            b_star[mask] = np.asarray(
                model_quantile(levels[mask], rec.x), dtype=float)
        reps[r] = statistic(b_star)

    return TestReport(statistic=stat, p_value=bootstrap_p_value(stat, reps),
                      replicates=reps, method="rothe-wied", seed=seed,
                      n_requested=n_replicates,
                      meta={"n": n, "grid_size": grid.size})


def model_quantile_from_fit(fit):
    """Bid-quantile model (alphas, x) -> b from a fitted AQR."""

    def fn(alphas, x=()):
        return fit.bid(alphas, x)

    return fn
