"""Plug-in auction functionals: expected revenue, reserve, risk aversion.

Seller expected revenue for CRRA bidders at screening level a_R:

    ER(a_R) = nu I V(a_R) / d * a_R^e (1 - a_R^(d/nu))
              + I (I-1) / d * int_{a_R}^1 a^(e-1) (1 - a^(d/nu)) V(a) da,

with e = (I-1)/nu and d = (I-1)(nu-1) + nu; the d -> 0 case is handled by its
logarithmic limit. Risk aversion is identified by ratios of quantile-level
integrals of fitted bid quantile functions and their derivatives; all
alpha-integrals there are Riemann sums on the fit grid with trapezoid end
correction and covariate integrals are sample means.
"""

from dataclasses import dataclass

import numpy as np

from .basis import gauss_legendre
from .errors import InputError, NumericalError, QuadratureError


def _value_callable(value_fn):
    if hasattr(value_fn, "at"):
        return value_fn.at
    return value_fn


def _er_first_term(v_at_r, alpha_r, n_bidders, nu, d):
    I = n_bidders
    e = (I - 1) / nu
    if alpha_r <= 0.0:
        return 0.0  # a^e (1 - a^(d/nu)) -> a^e - a^I -> 0
    if abs(d) < 1e-9:
        return I * v_at_r * alpha_r ** e * (-np.log(alpha_r))
    return nu * I * v_at_r / d * alpha_r ** e * (1.0 - alpha_r ** (d / nu))


def expected_revenue(value_fn, alpha_r, n_bidders, nu=1.0, nodes=64):
    """Seller expected revenue at screening level alpha_r (seller value 0)."""
    if not 0.0 < nu <= 1.0:
        raise InputError("CRRA exponent nu must lie in (0, 1]")
    if not 0.0 <= alpha_r <= 1.0:
        raise InputError("screening level must lie in [0, 1]")
    I = int(n_bidders)
    if I < 2:
        raise InputError("bidder count I must be >= 2")
    value_at = _value_callable(value_fn)
    e = (I - 1) / nu
    d = (I - 1) * (nu - 1.0) + nu
    v_r = float(np.asarray(value_at(np.array([max(alpha_r, 0.0)])))[0]) \
        if alpha_r > 0 else 0.0
    first = _er_first_term(v_r, alpha_r, I, nu, d)
    if alpha_r >= 1.0:
        return first

    def integral(m):
        a, w = gauss_legendre(alpha_r, 1.0, m)
        vals = np.asarray(value_at(a), dtype=float)
        if abs(d) < 1e-9:
            weight = a ** (e - 1.0) * (-np.log(a)) / nu
            return float(I * (I - 1) * np.sum(w * weight * vals))
        weight = a ** (e - 1.0) * (1.0 - a ** (d / nu))
        return float(I * (I - 1) / d * np.sum(w * weight * vals))

    coarse = integral(nodes)
    fine = integral(2 * nodes)
    if abs(fine - coarse) > 1e-7 * max(1.0, abs(fine)) + 1e-12:
        raise QuadratureError(
            f"expected-revenue quadrature failed to converge: error estimate "
            f"{abs(fine - coarse):.3e}")
    return first + fine


@dataclass
class RevenueCurve:
    """Expected-revenue curve over screening levels with its maximiser."""

    grid: np.ndarray
    er: np.ndarray
    alpha_star: float
    r_star: float
    n_bidders: int
    nu: float

    def to_rows(self):
        return list(zip(self.grid.tolist(), self.er.tolist()))


def optimal_reserve(value_fn, n_bidders, nu=1.0, grid=None, nodes=64):
    """Grid argmax of the expected revenue; ties go to the smaller level."""
    grid = np.round(np.linspace(0.0, 1.0, 101), 10) if grid is None \
        else np.asarray(grid, dtype=float)
    er = np.array([expected_revenue(value_fn, a, n_bidders, nu, nodes=nodes)
                   for a in grid])
    k = int(np.argmax(er))  # argmax returns the first maximiser
    value_at = _value_callable(value_fn)
    r_star = float(np.asarray(value_at(np.array([grid[k]])))[0])
    return {"alpha_star": float(grid[k]), "r_star": r_star,
            "curve": RevenueCurve(grid=grid, er=er, alpha_star=float(grid[k]),
                                  r_star=r_star, n_bidders=int(n_bidders),
                                  nu=float(nu))}


# ----------------------------------------------------------------------
# quantile-level integrals on the fit grid

def _range_weights(grid, alpha_range):
    lo, hi = alpha_range
    mask = (grid >= lo - 1e-12) & (grid <= hi + 1e-12)
    sub = grid[mask]
    if sub.size < 2:
        raise InputError("alpha range leaves fewer than two grid points")
    w = np.empty_like(sub)
    w[1:-1] = 0.5 * (sub[2:] - sub[:-2])
    w[0] = 0.5 * (sub[1] - sub[0])
    w[-1] = 0.5 * (sub[-1] - sub[-2])
    return mask, w


def _markup_term(fit, x_mat, mask):
    """alpha B'(alpha | x) / (I-1) on the masked grid, shape (G_sub, n_x)."""
    rows = np.column_stack([fit.design_row(x) for x in x_mat])
    beta1 = fit.beta1[mask]
    return fit.grid[mask, None] * (beta1 @ rows) / (fit.n_bidders - 1)


def crra_fp(fit_low, fit_high, x_sample, alpha_range=(0.0, 0.8)):
    """Risk aversion from two first-price samples with different entry.

    Ratio of the integrated cross-product of the bid gap and markup gap to
    the integrated squared markup gap; exact for curves built to satisfy the
    defining identity.
    """
    if fit_low.n_bidders == fit_high.n_bidders:
        raise InputError("risk-aversion identification needs two distinct "
                         "bidder counts")
    if fit_low.grid.shape != fit_high.grid.shape or \
            not np.allclose(fit_low.grid, fit_high.grid):
        raise InputError("fits must share the same quantile grid")
    x_mat = np.atleast_2d(np.asarray(x_sample, dtype=float))
    mask, w = _range_weights(fit_low.grid, alpha_range)
    rows = np.column_stack([fit_low.design_row(x) for x in x_mat])
    bid_gap = (fit_high.beta0[mask] - fit_low.beta0[mask]) @ rows
    markup_gap = _markup_term(fit_low, x_mat, mask) \
        - _markup_term(fit_high, x_mat, mask)
    theta_n = float(np.mean(w @ (bid_gap * markup_gap)))
    theta_d = float(np.mean(w @ (markup_gap ** 2)))
    if theta_d < 1e-12:
        raise NumericalError("risk-aversion denominator degenerate")
    return theta_n / theta_d


def crra_asc(v_asc_fn, fp_fit, x_sample, alpha_range=(0.0, 0.8)):
    """Risk aversion combining ascending values with first-price bids."""
    x_mat = np.atleast_2d(np.asarray(x_sample, dtype=float))
    mask, w = _range_weights(fp_fit.grid, alpha_range)
    grid = fp_fit.grid[mask]
    rows = np.column_stack([fp_fit.design_row(x) for x in x_mat])
    bid = fp_fit.beta0[mask] @ rows
    markup = _markup_term(fp_fit, x_mat, mask)
    v_asc = np.column_stack([np.asarray(v_asc_fn(grid, x), dtype=float)
                             for x in x_mat])
    theta_n = float(np.mean(w @ ((v_asc - bid) * markup)))
    theta_d = float(np.mean(w @ (markup ** 2)))
    if theta_d < 1e-12:
        raise NumericalError("risk-aversion denominator degenerate")
    return theta_n / theta_d


def ascending_value_fn(asc_fit):
    """Value function (alphas, x) -> V_asc from an ascending-level fit."""

    def fn(alphas, x=()):
        return asc_fit.bid(alphas, x)

    return fn


def theta_plugin(integrand, fits, x=None, x_sample=None, alpha_range=(0.0, 1.0)):
    """Generic integral functional of fitted bid quantiles.

    integrand(alpha, x, b0, b1) receives dicts {I: value} of the fitted bid
    quantile and its derivative. With `x` the conditional theta(x) is
    returned; with `x_sample` the unconditional sample-mean version.
    """
    if not isinstance(fits, dict):
        fits = {fits.n_bidders: fits}
    any_fit = next(iter(fits.values()))
    for f in fits.values():
        if not np.allclose(f.grid, any_fit.grid):
            raise InputError("fits must share the same quantile grid")
    mask, w = _range_weights(any_fit.grid, alpha_range)
    grid = any_fit.grid[mask]

    def theta_at(xv):
        rows = {i: f.design_row(xv) for i, f in fits.items()}
        b0 = {i: f.beta0[mask] @ rows[i] for i, f in fits.items()}
        b1 = {i: f.beta1[mask] @ rows[i] for i, f in fits.items()}
        vals = np.empty(grid.size)
        for k, alpha in enumerate(grid):
            try:
                vals[k] = integrand(alpha, xv,
                                    {i: b0[i][k] for i in fits},
                                    {i: b1[i][k] for i in fits})
            except Exception as exc:
                raise NumericalError(
                    f"integrand evaluation failed at alpha = {alpha}: {exc}"
                ) from exc
        return float(w @ vals)

    if x is not None:
        return theta_at(np.atleast_1d(np.asarray(x, dtype=float)))
    if x_sample is None:
        raise InputError("provide either x or x_sample")
    x_mat = np.atleast_2d(np.asarray(x_sample, dtype=float))
    return float(np.mean([theta_at(xv) for xv in x_mat]))
