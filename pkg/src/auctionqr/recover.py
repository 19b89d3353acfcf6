"""Private-value curves, monotone rearrangement, cdf/pdf and GPV baseline.

A fitted bid quantile regression turns into the private-value quantile
V(alpha | x) = B(alpha | x) + nu alpha B'(alpha | x) / (I - 1), read off the
coefficient blocks of an AqrFit. Downstream objects (cdf, pdf, rearranged
curves) operate on grid-backed ValueCurve containers.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .basis import get_kernel
from .errors import InputError, NumericalError
from .model import FIRST_PRICE
from .solver import AffineBasis


@dataclass
class ValueCurve:
    """A private-value quantile curve on a grid, with provenance."""

    grid: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict)
    monotone: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise InputError("curve grid and values must be matching 1-d arrays")
        if self.monotone and np.any(np.diff(self.values) < 0):
            raise InputError("curve flagged monotone but values decrease")

    def at(self, alphas):
        return np.interp(np.asarray(alphas, dtype=float), self.grid,
                         self.values)


def private_value(fit, alpha, x=(), n_bidders=None, nu=1.0):
    """x1'(beta_0(alpha) + nu alpha beta_1(alpha) / (I-1)) from a fit.

    Off-grid levels use linear interpolation of the coefficient paths; the
    derivative block is the fitted one, not a finite difference.
    """
    I = fit.n_bidders if n_bidders is None else n_bidders
    alphas = np.asarray(alpha, dtype=float)
    row = fit.design_row(x)
    flat = np.atleast_1d(alphas)
    coef = fit.coef_at(flat)
    q = fit.q
    b0 = coef[:, :q] @ row
    b1 = coef[:, q:2 * q] @ row
    out = b0 + nu * flat * b1 / (I - 1)
    return float(out[0]) if alphas.ndim == 0 else out


def value_curve(fit, x=(), nu=1.0, grid=None):
    """Materialise the fitted private-value curve on a grid."""
    grid = fit.grid if grid is None else np.asarray(grid, dtype=float)
    vals = private_value(fit, grid, x, nu=nu)
    prov = {"x": np.atleast_1d(np.asarray(x, dtype=float)).tolist(),
            "n_bidders": fit.n_bidders, "nu": nu, "h": fit.h,
            "n_obs": fit.n_auctions * fit.n_bidders}
    return ValueCurve(grid=grid, values=vals, provenance=prov)


def rearrange(curve):
    """Monotone rearrangement: sort the values, keep the grid. Idempotent."""
    return replace(curve, values=np.sort(curve.values), monotone=True)


def _grid_weights(grid):
    w = np.empty_like(grid)
    w[1:-1] = 0.5 * (grid[2:] - grid[:-2])
    w[0] = 0.5 * (grid[1] - grid[0])
    w[-1] = 0.5 * (grid[-1] - grid[-2])
    return w


def cdf_indicator(curve, v):
    """F(v) = int 1[V(alpha) <= v] d alpha, Riemann sum on the curve grid."""
    w = _grid_weights(curve.grid)
    v = np.asarray(v, dtype=float)
    flat = np.atleast_1d(v)
    out = np.array([(w * (curve.values <= vv)).sum() for vv in flat])
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if v.ndim == 0 else out


def cdf_smoothed(curve, v, eta, kernel="epanechnikov"):
    """Smoothed cdf int I_eta[v - V(alpha)] d alpha, I_eta(t) = K_cdf(t/eta)."""
    if eta <= 0:
        raise InputError("smoothing bandwidth eta must be positive")
    ker = get_kernel(kernel)
    w = _grid_weights(curve.grid)
    v = np.asarray(v, dtype=float)
    flat = np.atleast_1d(v)
    out = np.array([(w * ker.cdf((vv - curve.values) / eta)).sum()
                    for vv in flat])
    return float(out[0]) if v.ndim == 0 else out


def pdf_smoothed(curve, v, eta, kernel="epanechnikov"):
    """Smoothed pdf (1/eta) int k((v - V(alpha)) / eta) d alpha."""
    if eta <= 0:
        raise InputError("smoothing bandwidth eta must be positive")
    ker = get_kernel(kernel)
    w = _grid_weights(curve.grid)
    v = np.asarray(v, dtype=float)
    flat = np.atleast_1d(v)
    out = np.array([(w * ker.pdf((vv - curve.values) / eta)).sum() / eta
                    for vv in flat])
    return float(out[0]) if v.ndim == 0 else out


def rule_of_thumb_bandwidth(curve, n_obs=None):
    """3 (L I)^(-1/5) sd_alpha(V-hat), the pdf plug-in bandwidth."""
    n_obs = curve.provenance.get("n_obs") if n_obs is None else n_obs
    if not n_obs:
        raise InputError("curve provenance lacks the sample size n_obs")
    w = _grid_weights(curve.grid)
    mean = (w * curve.values).sum() / w.sum()
    var = (w * (curve.values - mean) ** 2).sum() / w.sum()
    sd = float(np.sqrt(var))
    if sd <= 0:
        raise NumericalError("degenerate rule-of-thumb bandwidth: the value "
                             "curve is constant")
    return 3.0 * sd / float(n_obs) ** 0.2


def aqr_pdf(curve, v, n_obs=None, bandwidth=None):
    """Private-value pdf from a fitted quantile curve with triweight kernel."""
    h_a = rule_of_thumb_bandwidth(curve, n_obs) if bandwidth is None \
        else float(bandwidth)
    return pdf_smoothed(curve, v, h_a, kernel="triweight")


# ----------------------------------------------------------------------
# GPV pseudo-value baseline

def gpv_identity(bids, cdf_vals, pdf_vals, n_bidders):
    """V = B + G(B) / ((I-1) g(B)); the two-step identity in raw form."""
    return np.asarray(bids, dtype=float) + np.asarray(cdf_vals, dtype=float) \
        / ((n_bidders - 1) * np.asarray(pdf_vals, dtype=float))


def _triweight_kde(points, eval_at, bandwidth):
    u = (eval_at[:, None] - points[None, :]) / bandwidth
    inside = np.abs(u) <= 1.0
    k = np.where(inside, (35.0 / 32.0) * (1.0 - u * u) ** 3, 0.0)
    return k.sum(axis=1) / (points.size * bandwidth)


@dataclass
class GpvResult:
    """Pseudo private values with the trimming mask applied downstream."""

    pseudo_values: np.ndarray
    kept: np.ndarray
    bandwidth: float
    gamma1: np.ndarray


def gpv_pseudo_values(sample, n_bidders, gbar_bandwidth=None, pdf_floor=1e-6):
    """Two-step pseudo private values with covariates homogenized first.

    Bids are residualised on the covariates by OLS, the empirical cdf and a
    triweight kernel density of the homogenized bids feed the markup identity,
    and the covariate index is added back. Pseudo values whose density
    evaluation falls below `pdf_floor` are flagged for exclusion.
    """
    if sample.format != FIRST_PRICE:
        raise InputError("GPV pseudo values need first-price bids")
    xs, y = sample.design_long(n_bidders)
    d = sample.d
    if d > 0:
        x1 = np.column_stack([np.ones(len(y)), xs])
        coefs = np.linalg.lstsq(x1, y, rcond=None)[0]
        gamma1 = coefs[1:]
        resid = y - xs @ gamma1
        index = xs @ gamma1
    else:
        gamma1 = np.zeros(0)
        resid = y
        index = np.zeros_like(y)
    n = resid.size
    if gbar_bandwidth is None:
        sd = np.std(resid)
        iqr = np.subtract(*np.percentile(resid, [75, 25])) / 1.349
        gbar_bandwidth = 1.06 * min(sd, iqr if iqr > 0 else sd) * n ** -0.2
    order = np.argsort(resid)
    ranks = np.empty(n)
    ranks[order] = np.arange(1, n + 1)
    cdf_vals = ranks / n
    pdf_vals = _triweight_kde(resid, resid, gbar_bandwidth)
    kept = pdf_vals >= pdf_floor
    pseudo = np.full(n, np.nan)
    pseudo[kept] = index[kept] + gpv_identity(resid[kept], cdf_vals[kept],
                                              pdf_vals[kept], n_bidders)
    return GpvResult(pseudo_values=pseudo, kept=kept,
                     bandwidth=float(gbar_bandwidth), gamma1=gamma1)
