"""Synthetic auction samples by quantile transformation of uniform signals.

Each auction draws covariates, a bidder count and iid uniform signals from a
counter-based substream keyed by (seed, auction id), so generation is
byte-identical in any order or degree of parallelism. First-price bids are
the equilibrium bid quantile evaluated at the signals; ascending auctions
record the second-highest valuation as the winning bid.
"""

from dataclasses import dataclass, field

import numpy as np

from .basis import gauss_legendre
from .errors import InputError
from .model import (ASCENDING, FIRST_PRICE, AuctionRecord, AuctionSample,
                    GammaFn, QuantileSpec)
from .rng import substream


def uniform_covariates(rng, d):
    return rng.random(d)


COVARIATE_LAWS = {"uniform": uniform_covariates}


@dataclass
class SimConfig:
    """Simulation settings; identical configs yield identical samples."""

    n_auctions: int
    bidder_count_law: object = 2  # fixed I or {I: probability}
    covariate_law: str = "uniform"
    seed: int = 0
    format: str = FIRST_PRICE

    def __post_init__(self):
        if self.n_auctions < 1:
            raise InputError("need at least one auction")
        if self.covariate_law not in COVARIATE_LAWS:
            raise InputError(f"unknown covariate law {self.covariate_law!r}; "
                             f"available: {sorted(COVARIATE_LAWS)}")
        if isinstance(self.bidder_count_law, dict):
            probs = np.array(list(self.bidder_count_law.values()), dtype=float)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise InputError("bidder count probabilities must sum to one")
            if any(int(i) < 2 for i in self.bidder_count_law):
                raise InputError("bidder counts must be >= 2")
        elif int(self.bidder_count_law) < 2:
            raise InputError("bidder count must be >= 2")
        if self.format not in (FIRST_PRICE, ASCENDING):
            raise InputError(f"unknown auction format {self.format!r}")

    def to_dict(self):
        return {"n_auctions": self.n_auctions,
                "bidder_count_law": self.bidder_count_law,
                "covariate_law": self.covariate_law,
                "seed": self.seed, "format": self.format}


def _draw_bidder_count(cfg, rng):
    law = cfg.bidder_count_law
    if isinstance(law, dict):
        counts = sorted(int(i) for i in law)
        probs = np.array([law[i] for i in counts], dtype=float)
        return int(rng.choice(counts, p=probs))
    return int(law)


def _draw_auctions(spec_d, cfg):
    """Per-auction covariates, bidder counts and uniform signals."""
    sampler = COVARIATE_LAWS[cfg.covariate_law]
    draws = []
    for ell in range(cfg.n_auctions):
        rng = substream(cfg.seed, ell)
        x = sampler(rng, spec_d)
        n_bidders = _draw_bidder_count(cfg, rng)
        signals = rng.random(n_bidders)
        draws.append((ell, x, n_bidders, signals))
    return draws


def bid_coef_at(spec, alphas, n_bidders, nodes=64):
    """Bid quantile-regression coefficients beta(alpha) at many levels.

    beta_j(alpha) = (I-1) int_0^1 u^{I-2} gamma_j(alpha u) du; evaluating the
    coefficient path once lets a whole sample of bids be computed as row-wise
    products x1' beta(A_i).
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    u, w = gauss_legendre(0.0, 1.0, nodes)
    e = float(n_bidders - 1)
    pts = np.clip(alphas[:, None] * u[None, :], 0.0, 1.0)
    gam = spec.gamma_matrix(pts.ravel()).reshape(alphas.size, nodes, spec.d + 1)
    return np.einsum("amj,m->aj", gam, e * w * u ** (e - 1.0))


def bid_coef_deriv_at(spec, alphas, n_bidders, nodes=64):
    """d beta / d alpha = (I-1) int_0^1 u^{I-1} gamma_j'(alpha u) du."""
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    u, w = gauss_legendre(0.0, 1.0, nodes)
    e = float(n_bidders - 1)
    pts = np.clip(alphas[:, None] * u[None, :], 0.0, 1.0)
    gd = spec.gamma_deriv_matrix(pts.ravel()).reshape(alphas.size, nodes,
                                                      spec.d + 1)
    return np.einsum("amj,m->aj", gd, e * w * u ** e)


def crra_rationalized_spec(spec, n_bidders, nu, name=None):
    """Quantile spec of the private values rationalising risk-neutral bids.

    V_nu(alpha | x) = B(alpha | x, I) + nu alpha B'(alpha | x, I) has slope
    functions beta_j(alpha) + nu alpha beta_j'(alpha) / (I-1); bidders with
    CRRA exponent nu facing these values bid exactly the base spec's
    risk-neutral equilibrium bids.
    """
    if not 0.0 < nu <= 1.0:
        raise InputError("CRRA exponent nu must lie in (0, 1]")

    def make_gamma(j):
        def fn(alphas):
            alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
            beta = bid_coef_at(spec, alphas, n_bidders)[:, j]
            beta1 = bid_coef_deriv_at(spec, alphas, n_bidders)[:, j]
            return beta + nu * alphas * beta1 / (n_bidders - 1)

        return GammaFn(fn)

    return QuantileSpec([make_gamma(j) for j in range(spec.d + 1)],
                        name=name or f"{spec.name}_crra{nu}",
                        support=spec.support)


def simulate_first_price(spec, cfg):
    """First-price sample: B_il = B(A_il | X_l, I_l) by quantile transform.

    Latent values V_il = V(A_il | X_l) ride along in the records' oracle side
    channel for validation; they never feed estimation.
    """
    draws = _draw_auctions(spec.d, cfg)
    all_signals = np.concatenate([sig for _, _, _, sig in draws])
    counts = sorted({i for _, _, i, _ in draws})
    beta_by_count = {i: bid_coef_at(spec, all_signals, i) for i in counts}
    values_flat = spec.gamma_matrix(all_signals)  # (n, D+1) gamma rows

    records = []
    pos = 0
    for ell, x, n_bidders, signals in draws:
        x1 = np.concatenate(([1.0], x))
        sl = slice(pos, pos + n_bidders)
        pos += n_bidders
        bids = beta_by_count[n_bidders][sl] @ x1
        values = values_flat[sl] @ x1
        records.append(AuctionRecord(auction_id=ell, n_bidders=n_bidders, x=x,
                                     bids=bids, values=values, signals=signals))
    return AuctionSample(records, format=FIRST_PRICE)


def simulate_ascending(spec, cfg):
    """Ascending sample: the winning bid is the second-highest valuation."""
    draws = _draw_auctions(spec.d, cfg)
    records = []
    for ell, x, n_bidders, signals in draws:
        x1 = np.concatenate(([1.0], x))
        order = np.sort(signals)
        second = order[-2]
        values = spec.gamma_matrix(signals) @ x1
        winning = float(spec.gamma_matrix(np.array([second]))[0] @ x1)
        records.append(AuctionRecord(auction_id=ell, n_bidders=n_bidders, x=x,
                                     winning_bid=winning, values=values,
                                     signals=signals))
    return AuctionSample(records, format=ASCENDING)


def simulate_elliptical_rc(gamma, sigma, radial_quantile, cfg, nodes=64):
    """Elliptical random-coefficient sample.

    Values are V_i = x1'gamma + ||sigma^(1/2) x1|| v(A_i) with v the radial
    quantile function; bids follow by the equilibrium map applied to the
    per-auction one-dimensional value quantile.
    """
    gamma = np.asarray(gamma, dtype=float)
    d = gamma.size - 1
    sigma = np.asarray(sigma, dtype=float).reshape(d + 1, d + 1)
    eigvals = np.linalg.eigvalsh(sigma)
    if eigvals.min() < -1e-10:
        raise InputError("sigma must be positive semidefinite")
    root = _psd_sqrt(sigma)

    draws = _draw_auctions(d, cfg)
    u, w = gauss_legendre(0.0, 1.0, nodes)
    records = []
    for ell, x, n_bidders, signals in draws:
        x1 = np.concatenate(([1.0], x))
        scale = float(np.linalg.norm(root @ x1))
        e = float(n_bidders - 1)
        pts = np.clip(signals[:, None] * u[None, :], 0.0, 1.0)
        b_radial = np.asarray(radial_quantile(pts.ravel())).reshape(
            n_bidders, nodes) @ (e * w * u ** (e - 1.0))
        v_radial = np.asarray(radial_quantile(signals))
        bids = x1 @ gamma + scale * b_radial
        values = x1 @ gamma + scale * v_radial
        records.append(AuctionRecord(auction_id=ell, n_bidders=n_bidders, x=x,
                                     bids=bids, values=values, signals=signals))
    return AuctionSample(records, format=FIRST_PRICE)


def _psd_sqrt(sigma):
    vals, vecs = np.linalg.eigh(sigma)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T
