"""Quantile-regression value models and the value<->bid quantile mappings.

A private-value model is V(alpha | x, I) = x1' gamma(alpha). The induced
first-price equilibrium bid quantile function is

    B(alpha | x, I) = (I-1) alpha^{-(I-1)} int_0^alpha a^{I-2} V(a | x) da,

computed here in the substituted form (I-1) int_0^1 u^{I-2} V(alpha u | x) du,
which is smooth and stable down to alpha = 0. The inverse map is
V = B + alpha B'(alpha) / (I-1), with a CRRA generalisation.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import qmc

from .basis import gauss_legendre
from .errors import InputError, QuadratureError, DataSchemaError


class DiagnosticWarning(UserWarning):
    """Non-fatal numerical diagnostics (e.g. negative bid-quantile slope)."""


# ----------------------------------------------------------------------
# coefficient functions

class GammaFn:
    """One slope function gamma_j: [0,1] -> R, with optional derivative."""

    def __init__(self, fn, deriv=None, smoothness=2):
        self.fn = fn
        self._deriv = deriv
        self.smoothness = smoothness

    def __call__(self, alpha):
        return np.asarray(self.fn(np.asarray(alpha, dtype=float)), dtype=float)

    @property
    def has_deriv(self):
        return self._deriv is not None

    def deriv(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        if self._deriv is not None:
            return np.asarray(self._deriv(alpha), dtype=float)
        # central difference, clipped to [0, 1]
        eps = 1e-6
        up = np.minimum(alpha + eps, 1.0)
        dn = np.maximum(alpha - eps, 0.0)
        return (self(up) - self(dn)) / (up - dn)


def constant_gamma(c):
    c = float(c)
    return GammaFn(lambda a: np.full_like(np.asarray(a, dtype=float), c),
                   deriv=lambda a: np.zeros_like(np.asarray(a, dtype=float)))


def tabulated_gamma(alphas, values):
    """Monotone-cubic interpolated coefficient function on a grid."""
    alphas = np.asarray(alphas, dtype=float)
    values = np.asarray(values, dtype=float)
    if alphas.ndim != 1 or alphas.size < 2 or alphas.size != values.size:
        raise InputError("tabulated gamma needs matching 1-d alpha and value arrays")
    if np.any(np.diff(alphas) <= 0):
        raise InputError("tabulated gamma grid must be strictly increasing")
    if alphas[0] > 0.0 or alphas[-1] < 1.0:
        raise InputError("tabulated gamma grid must cover [0, 1]")
    if not np.all(np.isfinite(values)):
        raise InputError("tabulated gamma values must be finite")
    interp = PchipInterpolator(alphas, values)
    return GammaFn(interp, deriv=interp.derivative())


# ----------------------------------------------------------------------
# quantile specification

def _support_lattice(support, n_points=8):
    """Deterministic covariate lattice used by the monotonicity check."""
    support = np.asarray(support, dtype=float)
    d = support.shape[0]
    if d == 0:
        return np.zeros((1, 0))
    if d == 1:
        pts = np.linspace(0.0, 1.0, n_points)[:, None]
    else:
        sampler = qmc.Sobol(d=d, scramble=False)
        pts = sampler.random_base2(int(math.ceil(math.log2(n_points))))[:n_points]
    return support[:, 0] + pts * (support[:, 1] - support[:, 0])


@dataclass
class QuantileSpec:
    """Private-value conditional quantile model V(alpha|x) = x1' gamma(alpha)."""

    gammas: list
    name: str = ""
    support: np.ndarray = None  # (D, 2) covariate support box
    check_monotone: bool = True

    def __post_init__(self):
        if not self.gammas:
            raise InputError("need at least the intercept coefficient gamma_0")
        self.gammas = list(self.gammas)
        if self.support is None:
            self.support = np.tile([0.0, 1.0], (self.d, 1))
        self.support = np.asarray(self.support, dtype=float).reshape(self.d, 2)
        if self.check_monotone:
            self._validate_monotone()

    @property
    def d(self):
        """Covariate dimension D (gamma has D+1 entries)."""
        return len(self.gammas) - 1

    def _validate_monotone(self, n_alpha=501):
        grid = np.linspace(0.0, 1.0, n_alpha)
        gam = self.gamma_matrix(grid)               # (n_alpha, D+1)
        if not np.all(np.isfinite(gam)):
            raise InputError("gamma functions must be finite on [0, 1]")
        for x in _support_lattice(self.support):
            v = gam @ np.concatenate(([1.0], x))
            if np.any(np.diff(v) <= 0):
                raise InputError(
                    f"spec {self.name or '<anonymous>'}: V(alpha|x) is not strictly "
                    f"increasing in alpha at x={x}")

    def gamma_matrix(self, alphas):
        alphas = np.asarray(alphas, dtype=float)
        return np.column_stack([g(alphas) for g in self.gammas])

    def gamma_deriv_matrix(self, alphas):
        alphas = np.asarray(alphas, dtype=float)
        return np.column_stack([g.deriv(alphas) for g in self.gammas])

    def x1(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float)) if self.d else np.zeros(0)
        if x.shape[-1] != self.d:
            raise InputError(f"covariate dimension mismatch: expected {self.d}, "
                             f"got {x.shape[-1]}")
        return np.concatenate(([1.0], x))

    def value(self, alphas, x):
        """V(alpha | x); vectorised over alphas."""
        alphas = np.asarray(alphas, dtype=float)
        if np.any((alphas < 0.0) | (alphas > 1.0)):
            raise InputError("alpha must lie in [0, 1]")
        return self.gamma_matrix(alphas) @ self.x1(x)

    def value_deriv(self, alphas, x):
        return self.gamma_deriv_matrix(np.asarray(alphas, dtype=float)) @ self.x1(x)


# ----------------------------------------------------------------------
# operations

def value_quantile(spec, alpha, x=()):
    """V(alpha | x) = x1' gamma(alpha)."""
    out = spec.value(alpha, x)
    return float(out[0]) if np.ndim(alpha) == 0 else out


def _check_bidders(n_bidders):
    if int(n_bidders) != n_bidders or n_bidders < 2:
        raise InputError("bidder count I must be an integer >= 2")
    return int(n_bidders)


def _power_weighted_integral(value_at, alphas, exponent, nodes=64, rtol=1e-7):
    """e int_0^1 u^{e-1} f(alpha u) du for each alpha, with e = exponent.

    Fixed-order Gauss-Legendre with a doubled-order error estimate; raises
    QuadratureError if the two disagree beyond `rtol` (absolute floor 1e-12).
    The default threshold leaves headroom for value functions that are
    themselves computed by quadrature.
    """
    alphas = np.asarray(alphas, dtype=float)
    flat = np.atleast_1d(alphas).ravel()

    def eval_order(m):
        u, w = gauss_legendre(0.0, 1.0, m)
        pts = np.clip(flat[:, None] * u[None, :], 0.0, 1.0)
        vals = value_at(pts.ravel()).reshape(pts.shape)
        return exponent * vals @ (w * u ** (exponent - 1.0))

    coarse = eval_order(nodes)
    fine = eval_order(2 * nodes)
    err = np.max(np.abs(fine - coarse))
    scale = max(1.0, float(np.max(np.abs(fine))))
    if err > rtol * scale + 1e-12:
        raise QuadratureError(
            f"bid-quantile quadrature failed to converge: error estimate {err:.3e}")
    return fine.reshape(np.shape(alphas)) if np.ndim(alphas) else float(fine[0])


def bid_quantile_from_value(spec, alpha, x=(), n_bidders=2, nodes=64):
    """Equilibrium bid quantile B(alpha | x, I) for risk-neutral bidders."""
    I = _check_bidders(n_bidders)
    x1 = spec.x1(x)
    return _power_weighted_integral(
        lambda a: spec.gamma_matrix(a) @ x1, alpha, float(I - 1), nodes=nodes)


def bid_quantile_deriv(spec, alpha, x=(), n_bidders=2, nodes=64):
    """dB/dalpha = (I-1) int_0^1 u^{I-1} V'(alpha u | x) du."""
    I = _check_bidders(n_bidders)
    x1 = spec.x1(x)
    e = float(I - 1)
    alphas = np.asarray(alpha, dtype=float)
    flat = np.atleast_1d(alphas).ravel()
    u, w = gauss_legendre(0.0, 1.0, nodes)
    pts = np.clip(flat[:, None] * u[None, :], 0.0, 1.0)
    vals = (spec.gamma_deriv_matrix(pts.ravel()) @ x1).reshape(pts.shape)
    out = e * vals @ (w * u ** e)
    return out.reshape(np.shape(alphas)) if np.ndim(alphas) else float(out[0])


def bid_quantile_deriv_fd(spec, alpha, x=(), n_bidders=2, eps=1e-6, nodes=64):
    """Finite-difference dB/dalpha: central inside, second-order sided at 0, 1."""
    alphas = np.atleast_1d(np.asarray(alpha, dtype=float))

    def b(a):
        return bid_quantile_from_value(spec, a, x, n_bidders, nodes=nodes)

    out = np.empty_like(alphas)
    interior = (alphas >= eps) & (alphas <= 1.0 - eps)
    if np.any(interior):
        ai = alphas[interior]
        out[interior] = (b(ai + eps) - b(ai - eps)) / (2.0 * eps)
    lo = alphas < eps
    if np.any(lo):
        al = alphas[lo]
        out[lo] = (-3.0 * b(al) + 4.0 * b(al + eps) - b(al + 2.0 * eps)) \
            / (2.0 * eps)
    hi = alphas > 1.0 - eps
    if np.any(hi):
        ah = alphas[hi]
        out[hi] = (3.0 * b(ah) - 4.0 * b(ah - eps) + b(ah - 2.0 * eps)) \
            / (2.0 * eps)
    return float(out[0]) if np.ndim(alpha) == 0 else out


def bid_quantile_crra(spec, alpha, x=(), n_bidders=2, crra=1.0, nodes=64):
    """Bid quantile for CRRA utility t^nu: exponent (I-1)/nu in the weighting."""
    I = _check_bidders(n_bidders)
    nu = crra.nu if isinstance(crra, CrraParams) else float(crra)
    if not 0.0 < nu <= 1.0:
        raise InputError("CRRA exponent nu must lie in (0, 1]")
    x1 = spec.x1(x)
    return _power_weighted_integral(
        lambda a: spec.gamma_matrix(a) @ x1, alpha, float(I - 1) / nu, nodes=nodes)


def value_from_bid_quantile(b, b1, alpha, n_bidders, nu=1.0):
    """V = b + nu * alpha * b1 / (I-1); warns when the slope b1 is <= 0."""
    I = _check_bidders(n_bidders)
    if np.any(np.asarray(b1) <= 0.0):
        warnings.warn("bid quantile derivative <= 0; inverted value is suspect",
                      DiagnosticWarning, stacklevel=2)
    return b + nu * np.asarray(alpha) * np.asarray(b1) / (I - 1)


def trig_quantile(alpha):
    """T(alpha) = ((pi+1) alpha + cos(pi alpha)) / 2."""
    alpha = np.asarray(alpha, dtype=float)
    out = 0.5 * ((np.pi + 1.0) * alpha + np.cos(np.pi * alpha))
    return float(out) if out.ndim == 0 else out


def _trig_deriv(alpha):
    alpha = np.asarray(alpha, dtype=float)
    return 0.5 * ((np.pi + 1.0) - np.pi * np.sin(np.pi * alpha))


@dataclass(frozen=True)
class CrraParams:
    """Relative risk aversion exponent; nu = 1 is risk neutrality."""

    nu: float

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise InputError("CRRA exponent nu must lie in (0, 1]")


# ----------------------------------------------------------------------
# named specs

def uniform_spec():
    return QuantileSpec([GammaFn(lambda a: np.asarray(a, dtype=float),
                                 deriv=lambda a: np.ones_like(np.asarray(a, dtype=float)))],
                        name="uniform")


def trig_spec():
    return QuantileSpec([GammaFn(trig_quantile, deriv=_trig_deriv)], name="trig")


def sim62_spec():
    """Intercept plus three-covariate design of the Monte Carlo experiments."""
    g0 = GammaFn(lambda a: 1.0 + 0.5 * np.exp(5.0 * (np.asarray(a, dtype=float) - 1.0)),
                 deriv=lambda a: 2.5 * np.exp(5.0 * (np.asarray(a, dtype=float) - 1.0)))
    g1 = constant_gamma(1.0)
    g2 = GammaFn(lambda a: 0.5 * (1.0 - np.exp(-5.0 * np.asarray(a, dtype=float))),
                 deriv=lambda a: 2.5 * np.exp(-5.0 * np.asarray(a, dtype=float)))
    g3 = GammaFn(
        lambda a: 0.8 + 0.15 * ((2.0 * np.pi + 1.0) * np.asarray(a, dtype=float)
                                + np.cos(2.0 * np.pi * np.asarray(a, dtype=float))),
        deriv=lambda a: 0.15 * ((2.0 * np.pi + 1.0)
                                - 2.0 * np.pi * np.sin(2.0 * np.pi * np.asarray(a, dtype=float))))
    return QuantileSpec([g0, g1, g2, g3], name="sim62")


def trig_additive_spec():
    """D = 1 additive design V(alpha | x) = T(alpha) + x * alpha."""
    g0 = GammaFn(trig_quantile, deriv=_trig_deriv)
    g1 = GammaFn(lambda a: np.asarray(a, dtype=float),
                 deriv=lambda a: np.ones_like(np.asarray(a, dtype=float)))
    return QuantileSpec([g0, g1], name="trig_additive")


def homogenized_d1_spec(slope=1.0):
    """D = 1 location-shift design V(alpha | x) = T(alpha) + slope * x."""
    g0 = GammaFn(trig_quantile, deriv=_trig_deriv)
    return QuantileSpec([g0, constant_gamma(slope)], name="homogenized_d1")


SPEC_REGISTRY = {
    "uniform": uniform_spec,
    "trig": trig_spec,
    "sim62": sim62_spec,
    "trig_additive": trig_additive_spec,
    "homogenized_d1": homogenized_d1_spec,
}


def get_spec(name):
    try:
        factory = SPEC_REGISTRY[name]
    except KeyError:
        raise InputError(
            f"unknown spec {name!r}; available: {sorted(SPEC_REGISTRY)}") from None
    return factory()


def spec_from_csv(paths, name="tabulated"):
    """Build a tabulated spec from per-coefficient two-column (alpha, gamma) CSVs."""
    gammas = []
    for path in paths:
        alphas, values = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for i, row in enumerate(reader):
                if i == 0 and not _is_number(row[0]):
                    continue  # header line
                if len(row) < 2:
                    raise DataSchemaError(f"{path}: expected two columns", row=i + 1)
                try:
                    alphas.append(float(row[0]))
                    values.append(float(row[1]))
                except ValueError:
                    raise DataSchemaError(f"{path}: non-numeric entry", row=i + 1)
        gammas.append(tabulated_gamma(alphas, values))
    return QuantileSpec(gammas, name=name)


def _is_number(token):
    try:
        float(token)
        return True
    except ValueError:
        return False


# ----------------------------------------------------------------------
# auction data containers

@dataclass
class AuctionRecord:
    """One auction: covariates, bidder count and observed bids.

    `values`/`signals` are a simulation-only side channel holding the latent
    private values; they never enter estimation and are only written out
    under an explicit oracle flag.
    """

    auction_id: int
    n_bidders: int
    x: np.ndarray
    bids: np.ndarray = None
    winning_bid: float = None
    values: np.ndarray = None
    signals: np.ndarray = None

    def __post_init__(self):
        self.n_bidders = _check_bidders(self.n_bidders)
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if self.bids is not None:
            self.bids = np.asarray(self.bids, dtype=float)
            if self.bids.size != self.n_bidders:
                raise InputError(
                    f"auction {self.auction_id}: {self.bids.size} bids for "
                    f"{self.n_bidders} bidders")
            if not np.all(np.isfinite(self.bids)):
                raise InputError(f"auction {self.auction_id}: non-finite bid")
        if self.winning_bid is not None and not np.isfinite(self.winning_bid):
            raise InputError(f"auction {self.auction_id}: non-finite winning bid")


FIRST_PRICE = "first-price"
ASCENDING = "ascending"


@dataclass
class AuctionSample:
    """A sample of auctions of a single format."""

    records: list
    format: str = FIRST_PRICE

    def __post_init__(self):
        if not self.records:
            raise InputError("auction sample must be nonempty")
        if self.format not in (FIRST_PRICE, ASCENDING):
            raise InputError(f"unknown auction format {self.format!r}")
        d = self.records[0].x.size
        for rec in self.records:
            if rec.x.size != d:
                raise InputError("inconsistent covariate dimension across auctions")
            if self.format == FIRST_PRICE and rec.bids is None:
                raise InputError(f"auction {rec.auction_id}: first-price record "
                                 "without bids")
            if self.format == ASCENDING and rec.winning_bid is None:
                raise InputError(f"auction {rec.auction_id}: ascending record "
                                 "without winning bid")

    @property
    def n_auctions(self):
        return len(self.records)

    @property
    def d(self):
        return self.records[0].x.size

    def bidder_counts(self):
        return sorted({rec.n_bidders for rec in self.records})

    def subset(self, n_bidders):
        recs = [r for r in self.records if r.n_bidders == n_bidders]
        if not recs:
            raise InputError(f"no auctions with I = {n_bidders}")
        return AuctionSample(recs, format=self.format)

    def covariates(self, n_bidders=None):
        recs = (self.records if n_bidders is None
                else [r for r in self.records if r.n_bidders == n_bidders])
        return np.array([r.x for r in recs], dtype=float).reshape(len(recs), self.d)

    def design_long(self, n_bidders):
        """Per-bid covariate matrix and bid vector for auctions with I bidders."""
        recs = [r for r in self.records if r.n_bidders == n_bidders]
        if not recs:
            raise InputError(f"no auctions with I = {n_bidders}")
        if self.format == FIRST_PRICE:
            xs = np.repeat(np.array([r.x for r in recs]).reshape(len(recs), self.d),
                           [r.n_bidders for r in recs], axis=0)
            y = np.concatenate([r.bids for r in recs])
        else:
            xs = np.array([r.x for r in recs]).reshape(len(recs), self.d)
            y = np.array([r.winning_bid for r in recs], dtype=float)
        return xs, y
