"""Augmented quantile regression: objective, fits and two-step variants.

The augmented estimator minimises, per quantile-grid point alpha and bidder
count I, the kernel-averaged check loss

    (1/(L I)) sum_l 1(I_l = I) sum_i int rho_{alpha+ht}(B_il - P(X_l, ht)'b) K(t) dt

discretised by Gauss-Legendre quadrature on the truncated window. The
discretised problem is an asymmetric weighted L1 fit solved exactly as a
linear program by the interior-point kernel in `_ipsolve`.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import basis as basis_mod
from ._ipsolve import solve_check_lp_grid, solve_check_lp
from .basis import get_kernel, poly_matrix, quad_grid
from .errors import (DegenerateQuantileError, InputError, SolverError)
from .model import FIRST_PRICE, AuctionSample

DEFAULT_GRID = np.round(np.linspace(0.0, 1.0, 101), 10)


# ----------------------------------------------------------------------
# design bases

class AffineBasis:
    """Plain quantile-regression design x -> [1, x']."""

    kind = "affine"

    def __init__(self, d):
        self.d = int(d)
        self.dim = self.d + 1

    def evaluate(self, x_mat):
        x_mat = np.atleast_2d(np.asarray(x_mat, dtype=float))
        n = x_mat.shape[0]
        x_mat = x_mat.reshape(n, self.d)
        return np.column_stack([np.ones(n), x_mat])

    def evaluate_one(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float)) if self.d else np.zeros(0)
        if x.size != self.d:
            raise InputError(f"covariate dimension mismatch: expected {self.d}, "
                             f"got {x.size}")
        return np.concatenate(([1.0], x))

    def describe(self):
        return {"kind": self.kind, "d": self.d}


def basis_from_dict(desc):
    if desc["kind"] == "affine":
        return AffineBasis(desc["d"])
    if desc["kind"] in ("regressogram", "bspline"):
        from .sieve import sieve_basis_from_dict

        return sieve_basis_from_dict(desc)
    raise InputError(f"unknown design basis kind {desc['kind']!r}")


# ----------------------------------------------------------------------
# configuration and fit container

@dataclass
class AqrConfig:
    """Estimation settings for the augmented quantile regression."""

    h: float
    s: int = 1
    alpha_grid: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    kernel: str = "epanechnikov"
    quad_m: int = 32
    tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.h < 1.0:
            raise InputError("bandwidth h must lie in (0, 1)")
        if self.s < 0:
            raise InputError("smoothness order s must be >= 0")
        self.alpha_grid = np.asarray(self.alpha_grid, dtype=float)
        if self.alpha_grid.ndim != 1 or self.alpha_grid.size < 2:
            raise InputError("alpha grid must be a 1-d array with >= 2 points")
        if np.any(np.diff(self.alpha_grid) <= 0):
            raise InputError("alpha grid must be strictly increasing")
        if self.alpha_grid[0] < 0.0 or self.alpha_grid[-1] > 1.0:
            raise InputError("alpha grid must lie within [0, 1]")
        get_kernel(self.kernel)

    def to_dict(self):
        return {"h": self.h, "s": self.s, "alpha_grid": self.alpha_grid.tolist(),
                "kernel": self.kernel, "quad_m": self.quad_m, "tol": self.tol,
                "max_iter": self.max_iter}


@dataclass
class AqrFit:
    """Stacked local-polynomial coefficient paths b(alpha | I).

    coef has shape (grid size, (s+2) * basis.dim) with block layout
    [beta_0', beta_1', ..., beta_{s+1}'].
    """

    grid: np.ndarray
    coef: np.ndarray
    h: float
    s: int
    kernel: str
    n_bidders: int
    basis: object
    diagnostics: dict
    n_auctions: int = 0
    levels: np.ndarray = None  # fitted levels when != grid (ascending use)

    @property
    def q(self):
        return self.basis.dim

    def block(self, j):
        """Coefficient path of the j-th derivative block, shape (G, q)."""
        if not 0 <= j <= self.s + 1:
            raise InputError(f"block index {j} outside 0..{self.s + 1}")
        return self.coef[:, j * self.q:(j + 1) * self.q]

    @property
    def beta0(self):
        return self.block(0)

    @property
    def beta1(self):
        return self.block(1)

    def coef_at(self, alphas):
        """Linear interpolation of the full coefficient path."""
        alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
        out = np.empty((alphas.size, self.coef.shape[1]))
        for j in range(self.coef.shape[1]):
            out[:, j] = np.interp(alphas, self.grid, self.coef[:, j])
        return out

    def _block_at(self, alphas, j):
        c = self.coef_at(alphas)
        return c[:, j * self.q:(j + 1) * self.q]

    def design_row(self, x):
        return self.basis.evaluate_one(x)

    def bid(self, alphas, x=()):
        """Fitted bid quantile x1' beta_0(alpha)."""
        out = self._block_at(alphas, 0) @ self.design_row(x)
        return float(out[0]) if np.ndim(alphas) == 0 else out

    def bid_deriv(self, alphas, x=()):
        """Fitted bid quantile derivative x1' beta_1(alpha)."""
        out = self._block_at(alphas, 1) @ self.design_row(x)
        return float(out[0]) if np.ndim(alphas) == 0 else out

    def value(self, alphas, x=(), nu=1.0):
        """Private-value quantile x1'(beta_0 + nu alpha beta_1 / (I-1))."""
        alphas = np.asarray(alphas, dtype=float)
        row = self.design_row(x)
        flat = np.atleast_1d(alphas)
        out = (self._block_at(flat, 0) @ row
               + nu * flat * (self._block_at(flat, 1) @ row) / (self.n_bidders - 1))
        return float(out[0]) if alphas.ndim == 0 else out

    def gamma_path(self):
        """Private-value slope path beta_0 + alpha beta_1 / (I-1) on the grid."""
        return self.beta0 + self.grid[:, None] * self.beta1 / (self.n_bidders - 1)

    def to_dict(self):
        return {
            "grid": self.grid.tolist(),
            "coef": self.coef.tolist(),
            "h": self.h, "s": self.s, "kernel": self.kernel,
            "n_bidders": self.n_bidders,
            "basis": self.basis.describe(),
            "diagnostics": {k: np.asarray(v).tolist()
                            for k, v in self.diagnostics.items()},
            "n_auctions": self.n_auctions,
            "levels": None if self.levels is None else self.levels.tolist(),
        }

    def to_json(self, path=None, **extra):
        payload = self.to_dict()
        payload.update(extra)
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d):
        return cls(grid=np.asarray(d["grid"], dtype=float),
                   coef=np.asarray(d["coef"], dtype=float),
                   h=d["h"], s=d["s"], kernel=d["kernel"],
                   n_bidders=d["n_bidders"],
                   basis=basis_from_dict(d["basis"]),
                   diagnostics={k: np.asarray(v)
                                for k, v in d["diagnostics"].items()},
                   n_auctions=d.get("n_auctions", 0),
                   levels=(None if d.get("levels") is None
                           else np.asarray(d["levels"], dtype=float)))

    @classmethod
    def from_json(cls, text_or_path):
        text = text_or_path
        if "\n" not in text and text.strip().endswith(".json"):
            with open(text_or_path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------
# design assembly

def _design_arrays(sample, n_bidders, design_basis):
    xs, y = sample.design_long(n_bidders)
    phi = design_basis.evaluate(xs)
    return phi, y


def _require_enough_auctions(sample, n_bidders, needed):
    count = sum(1 for rec in sample.records if rec.n_bidders == n_bidders)
    if count < needed:
        raise InputError(
            f"estimation with I = {n_bidders} needs at least {needed} auctions, "
            f"found {count}")
    return count


def _grid_problem(levels, cfg):
    """Quadrature node layout (pi, kappa, tau) for each target level."""
    ker = get_kernel(cfg.kernel)
    G = levels.size
    M = cfg.quad_m
    r = cfg.s + 2
    pi_g = np.empty((G, M, r))
    ka_g = np.empty((G, M))
    ta_g = np.empty((G, M))
    for gi, alpha in enumerate(levels):
        grid = quad_grid(alpha, cfg.h, ker, M)
        pi_g[gi] = poly_matrix(cfg.h * grid.nodes, cfg.s)
        ka_g[gi] = ker.pdf(grid.nodes) * grid.weights
        ta_g[gi] = alpha + cfg.h * grid.nodes
    # Gauss-Legendre nodes are interior, so tau never touches 0 or 1; clip
    # guards against roundoff at the window ends.
    np.clip(ta_g, 1e-12, 1.0 - 1e-12, out=ta_g)
    return pi_g, ka_g, ta_g


def _fit_levels(phi, y, levels, cfg, backend=None):
    pi_g, ka_g, ta_g = _grid_problem(levels, cfg)
    betas, info = solve_check_lp_grid(phi, y, pi_g, ka_g, ta_g,
                                      tol=cfg.tol, max_iter=cfg.max_iter,
                                      backend=backend)
    return betas, info


def aqr_fit(sample, n_bidders, cfg, design_basis=None, levels=None, backend=None):
    """Augmented quantile-regression fit for auctions with I = n_bidders.

    `levels` optionally remaps each grid point alpha to a different fitted
    quantile level (used for ascending-auction winning bids); the returned
    fit is indexed by the grid while `fit.levels` records the actual levels.
    """
    if design_basis is None:
        design_basis = AffineBasis(sample.d)
    _require_enough_auctions(sample, n_bidders, sample.d + 2)
    phi, y = _design_arrays(sample, n_bidders, design_basis)
    grid = cfg.alpha_grid
    fit_levels = grid if levels is None else np.asarray(levels, dtype=float)
    if fit_levels.size != grid.size:
        raise InputError("levels must match the alpha grid point-for-point")
    betas, info = _fit_levels(phi, y, fit_levels, cfg, backend=backend)
    diagnostics = {"converged": info["converged"], "gap": info["gap"],
                   "iters": info["iters"]}
    if not np.all(info["converged"]):
        bad = grid[~info["converged"]]
        diagnostics["flagged_alphas"] = bad
    return AqrFit(grid=grid.copy(), coef=betas, h=cfg.h, s=cfg.s,
                  kernel=cfg.kernel, n_bidders=n_bidders, basis=design_basis,
                  diagnostics=diagnostics, n_auctions=sample.n_auctions,
                  levels=None if levels is None else fit_levels)


def second_highest_level(alpha, n_bidders):
    """Rank cdf of the second-highest of I uniforms: I a^{I-1} - (I-1) a^I."""
    a = np.asarray(alpha, dtype=float)
    I = n_bidders
    return I * a ** (I - 1) - (I - 1) * a ** I


def ascending_value_fit(sample, n_bidders, cfg, backend=None):
    """Private-value quantile-regression fit from ascending winning bids.

    The winning bid is the second-highest valuation, so its quantile at level
    I a^{I-1} - (I-1) a^I equals V(a | x). Fitting the winning-bid AQR at the
    transformed levels gives gamma_asc(alpha) directly in the beta_0 block
    (no markup correction for ascending data).
    """
    if sample.format != "ascending":
        raise InputError("ascending_value_fit needs an ascending-format sample")
    levels = second_highest_level(cfg.alpha_grid, n_bidders)
    return aqr_fit(sample, n_bidders, cfg, levels=levels, backend=backend)


# ----------------------------------------------------------------------
# objective evaluation (diagnostics, tests)

def check_loss(resid, tau):
    resid = np.asarray(resid, dtype=float)
    return resid * (tau - (resid <= 0.0))


def aqr_objective(b, alpha, n_bidders, sample, cfg, design_basis=None):
    """Quadrature-discretised objective value at coefficient vector b."""
    if design_basis is None:
        design_basis = AffineBasis(sample.d)
    phi, y = _design_arrays(sample, n_bidders, design_basis)
    b = np.asarray(b, dtype=float)
    r = cfg.s + 2
    q = design_basis.dim
    if b.size != r * q:
        raise InputError(f"coefficient vector must have length {r * q}")
    ker = get_kernel(cfg.kernel)
    grid = quad_grid(alpha, cfg.h, ker, cfg.quad_m)
    pi = poly_matrix(cfg.h * grid.nodes, cfg.s)          # (M, r)
    kw = ker.pdf(grid.nodes) * grid.weights              # (M,)
    tau = np.clip(alpha + cfg.h * grid.nodes, 0.0, 1.0)
    pred = (phi @ b.reshape(r, q).T) @ pi.T              # (nb, M)
    resid = y[:, None] - pred
    losses = check_loss(resid, tau[None, :])
    total_l = sample.n_auctions
    return float(np.sum(losses @ kw) / (total_l * n_bidders))


def objective_slice(fit, sample, alpha, offsets, cfg, direction=None):
    """Objective values along b_hat + t * direction (default all-ones)."""
    p = fit.coef.shape[1]
    direction = np.ones(p) if direction is None else np.asarray(direction, float)
    b_hat = fit.coef_at(alpha)[0]
    return np.array([aqr_objective(b_hat + t * direction, alpha, fit.n_bidders,
                                   sample, cfg, design_basis=fit.basis)
                     for t in np.asarray(offsets, dtype=float)])


# ----------------------------------------------------------------------
# standard quantile regression

def standard_qr(sample, n_bidders, alpha, tol=1e-8):
    """Classical check-loss quantile regression at a single level.

    Degenerates at extreme levels: when fewer than dim-many observations can
    sit on the sparse side of the fitted plane the optimal face is flat and
    the solution is not well defined, which is reported as an error. This is
    the documented contrast with the augmented estimator.
    """
    if not 0.0 < alpha < 1.0:
        raise DegenerateQuantileError(
            f"standard quantile regression is undefined at alpha = {alpha}")
    d = sample.d
    _require_enough_auctions(sample, n_bidders, d + 2)
    design_basis = AffineBasis(d)
    phi, y = _design_arrays(sample, n_bidders, design_basis)
    nb = y.size
    p = design_basis.dim
    if nb * min(alpha, 1.0 - alpha) < p:
        raise DegenerateQuantileError(
            f"standard quantile regression degenerate at alpha = {alpha}: "
            f"n * min(alpha, 1-alpha) = {nb * min(alpha, 1 - alpha):.3g} < {p} "
            "coefficients")
    beta, info = solve_check_lp(phi, y, [[1.0]], [1.0], [alpha], tol=tol)
    if not info["converged"]:
        raise SolverError(
            f"standard quantile regression failed to converge at alpha = "
            f"{alpha} (gap {info['gap']:.3e})")
    return beta


# ----------------------------------------------------------------------
# homogenized-bid two-step

@dataclass
class HomogenizedFit:
    """OLS covariate slopes plus a covariate-free AQR on homogenized bids."""

    gamma1: np.ndarray
    resid_fit: AqrFit
    n_bidders: int

    def value(self, alphas, x=(), nu=1.0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return float(x @ self.gamma1) + self.resid_fit.value(alphas, (), nu=nu) \
            if np.ndim(alphas) == 0 else \
            x @ self.gamma1 + self.resid_fit.value(alphas, (), nu=nu)


def homogenized_two_step(sample, n_bidders, cfg, backend=None):
    """OLS homogenization followed by covariate-free AQR on the residual bids."""
    d = sample.d
    if d == 0:
        fit = aqr_fit(sample, n_bidders, cfg, backend=backend)
        return HomogenizedFit(gamma1=np.zeros(0), resid_fit=fit,
                              n_bidders=n_bidders)
    _require_enough_auctions(sample, n_bidders, d + 2)
    xs, y = sample.design_long(n_bidders)
    x1 = np.column_stack([np.ones(len(y)), xs])
    gram = x1.T @ x1
    if np.linalg.matrix_rank(gram) < x1.shape[1]:
        raise InputError("singular design matrix in the homogenizing regression")
    coefs = np.linalg.solve(gram, x1.T @ y)
    gamma1 = coefs[1:]
    homogenized = y - xs @ gamma1  # intercept stays in the homogenized bids
    resid_records = []
    idx = 0
    from .model import AuctionRecord

    for rec in sample.records:
        if rec.n_bidders != n_bidders:
            continue
        bids = homogenized[idx:idx + rec.n_bidders]
        idx += rec.n_bidders
        resid_records.append(AuctionRecord(auction_id=rec.auction_id,
                                           n_bidders=rec.n_bidders,
                                           x=np.zeros(0), bids=bids))
    resid_sample = AuctionSample(resid_records, format=FIRST_PRICE)
    resid_fit = aqr_fit(resid_sample, n_bidders, cfg, backend=backend)
    return HomogenizedFit(gamma1=gamma1, resid_fit=resid_fit,
                          n_bidders=n_bidders)


# ----------------------------------------------------------------------
# elliptical random-coefficient two-step

@dataclass
class EllipticalFit:
    """Location vector, scale function and radial-quantile AQR fit."""

    gamma: np.ndarray
    chol: np.ndarray  # sigma = chol chol'
    b_fit: AqrFit
    n_bidders: int
    scale_floor_hit: bool = False

    def sigma_norm(self, x):
        x1 = np.concatenate(([1.0], np.atleast_1d(np.asarray(x, dtype=float))))
        return float(np.linalg.norm(self.chol.T @ x1))

    def radial_quantile(self, alphas):
        """Estimated v(alpha) = b(alpha) + alpha b'(alpha) / (I-1)."""
        return self.b_fit.value(alphas, ())

    def value(self, alphas, x=()):
        x1 = np.concatenate(([1.0], np.atleast_1d(np.asarray(x, dtype=float))))
        return float(x1 @ self.gamma) + self.sigma_norm(x) * \
            self.radial_quantile(alphas)


def _smoothed_median_loss(theta, x1, y, d, eps):
    gamma = theta[:d + 1]
    tril = np.zeros((d + 1, d + 1))
    tril[np.tril_indices(d + 1)] = theta[d + 1:]
    scale = np.sqrt(np.sum((x1 @ tril) ** 2, axis=1) + 1e-300)
    resid = y - x1 @ gamma - scale
    return float(np.mean(np.sqrt(resid * resid + eps * eps)))


def elliptical_rc_fit(sample, n_bidders, cfg, backend=None):
    """Two-step fit of the elliptical random-coefficient bid model.

    Step 1 fits the conditional bid median x1'gamma + ||sigma^(1/2) x1|| by
    smoothed least-absolute-deviations (the scale normalisation b(1/2) = 1 is
    built into the parameterisation). Step 2 runs a covariate-free AQR on the
    standardised bids to recover the radial quantile function.

    With no covariates the location/scale split is not identified from the
    median alone; the convention gamma = 0 (pure scale model) is used.
    """
    d = sample.d
    _require_enough_auctions(sample, n_bidders, d + 2)
    xs, y = sample.design_long(n_bidders)
    x1 = np.column_stack([np.ones(len(y)), xs])

    if d == 0:
        gamma = np.zeros(1)
        med = float(np.median(y))
        if med <= 0:
            raise InputError("pure-scale elliptical model needs a positive "
                             "median bid")
        chol = np.array([[med]])
    else:
        from scipy.optimize import minimize

        coefs = np.linalg.lstsq(x1, y, rcond=None)[0]
        resid_scale = max(np.std(y - x1 @ coefs), 1e-3)
        theta0 = np.concatenate([coefs, np.zeros((d + 1) * (d + 2) // 2)])
        theta0[0] -= resid_scale  # move part of the intercept into the scale
        diag_idx = d + 1 + np.cumsum(np.arange(1, d + 2)) - 1
        theta0[diag_idx] = resid_scale / np.sqrt(d + 1)
        theta = theta0
        for eps in (0.1 * resid_scale, 0.01 * resid_scale, 1e-3 * resid_scale):
            res = minimize(_smoothed_median_loss, theta,
                           args=(x1, y, d, eps), method="L-BFGS-B",
                           options={"maxiter": 500})
            theta = res.x
        gamma = theta[:d + 1]
        chol = np.zeros((d + 1, d + 1))
        chol[np.tril_indices(d + 1)] = theta[d + 1:]

    scale = np.sqrt(np.sum((x1 @ chol) ** 2, axis=1))
    floor_hit = bool(np.any(scale < 1e-8))
    if floor_hit:
        scale = np.maximum(scale, 1e-8)
    standardized = (y - x1 @ gamma) / scale

    from .model import AuctionRecord

    records = []
    idx = 0
    for rec in sample.records:
        if rec.n_bidders != n_bidders:
            continue
        bids = standardized[idx:idx + rec.n_bidders]
        idx += rec.n_bidders
        records.append(AuctionRecord(auction_id=rec.auction_id,
                                     n_bidders=rec.n_bidders, x=np.zeros(0),
                                     bids=bids))
    b_fit = aqr_fit(AuctionSample(records, format=FIRST_PRICE), n_bidders, cfg,
                    backend=backend)
    return EllipticalFit(gamma=gamma, chol=chol, b_fit=b_fit,
                         n_bidders=n_bidders, scale_floor_hit=floor_hit)
