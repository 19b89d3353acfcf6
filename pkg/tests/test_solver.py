import numpy as np
import pytest
from scipy.optimize import linprog

from auctionqr._ipsolve import HAS_NUMBA, solve_check_lp, solve_check_lp_grid
from auctionqr.errors import DegenerateQuantileError, InputError
from auctionqr.model import AuctionRecord, AuctionSample, get_spec
from auctionqr.simulate import SimConfig, simulate_first_price
from auctionqr.solver import (AffineBasis, AqrConfig, AqrFit, aqr_fit,
                              aqr_objective, check_loss, homogenized_two_step,
                              objective_slice, standard_qr)

RNG = np.random.default_rng(42)


def linprog_check_loss(phi, y, pi, kappa, tau):
    """Independent LP oracle for the weighted multi-level check objective."""
    phi = np.atleast_2d(phi)
    pi = np.atleast_2d(pi)
    nb, M = phi.shape[0], pi.shape[0]
    p = pi.shape[1] * phi.shape[1]
    design = np.vstack([np.kron(pi[m], phi) for m in range(M)])
    y_rep = np.tile(y, M)
    w = np.repeat(np.asarray(kappa) / np.sum(kappa), nb)
    t = np.repeat(tau, nb)
    n = nb * M
    cost = np.concatenate([np.zeros(p), w * t, w * (1 - t)])
    a_eq = np.hstack([design, np.eye(n), -np.eye(n)])
    res = linprog(cost, A_eq=a_eq, b_eq=y_rep,
                  bounds=[(None, None)] * p + [(0, None)] * (2 * n),
                  method="highs")
    assert res.status == 0
    return res.x[:p], res.fun


def objective_value(beta, phi, y, pi, kappa, tau):
    phi = np.atleast_2d(phi)
    pi = np.atleast_2d(pi)
    r, q = pi.shape[1], phi.shape[1]
    pred = (phi @ beta.reshape(r, q).T) @ pi.T
    resid = y[:, None] - pred
    w = np.asarray(kappa) / np.sum(kappa)
    return float(np.sum(check_loss(resid, np.asarray(tau)[None, :]) @ w))


class TestInteriorPoint:
    def test_sample_quantile(self):
        y = RNG.normal(size=150)
        for tau in (0.05, 0.3, 0.5, 0.8, 0.95):
            beta, info = solve_check_lp(np.ones((150, 1)), y, [[1.0]], [1.0],
                                        [tau])
            assert info["converged"]
            # objective optimality against the order-statistic solution
            ours = objective_value(beta, np.ones((150, 1)), y, [[1.0]], [1.0],
                                   [tau])
            ref = objective_value(np.array([np.quantile(y, tau)]),
                                  np.ones((150, 1)), y, [[1.0]], [1.0], [tau])
            assert ours <= ref + 1e-9

    @pytest.mark.parametrize("trial", range(5))
    def test_matches_linprog(self, trial):
        rng = np.random.default_rng(trial)
        nb, d, M, r = 30, 2, 3, 2
        phi = np.column_stack([np.ones(nb), rng.uniform(size=(nb, d))])
        y = phi @ rng.normal(size=d + 1) + rng.normal(size=nb)
        pi = np.column_stack([np.ones(M), rng.normal(size=M)])
        kappa = rng.uniform(0.2, 1.0, size=M)
        tau = rng.uniform(0.15, 0.85, size=M)
        beta, info = solve_check_lp(phi, y, pi, kappa, tau)
        ref_beta, ref_obj = linprog_check_loss(phi, y, pi, kappa, tau)
        assert info["converged"]
        ours = objective_value(beta, phi, y, pi, kappa, tau)
        assert ours == pytest.approx(ref_obj, abs=1e-8)

    @pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")
    def test_backends_agree(self):
        rng = np.random.default_rng(5)
        nb = 80
        phi = np.column_stack([np.ones(nb), rng.uniform(size=nb)])
        y = phi @ [1.0, 2.0] + rng.normal(size=nb)
        pi = np.array([[1.0, -0.2], [1.0, 0.0], [1.0, 0.2]])
        kappa = np.array([0.3, 0.5, 0.3])
        tau = np.array([0.4, 0.5, 0.6])
        b_nb, _ = solve_check_lp(phi, y, pi, kappa, tau, backend="numba")
        b_np, _ = solve_check_lp(phi, y, pi, kappa, tau, backend="numpy")
        obj_nb = objective_value(b_nb, phi, y, pi, kappa, tau)
        obj_np = objective_value(b_np, phi, y, pi, kappa, tau)
        assert obj_nb == pytest.approx(obj_np, abs=1e-9)
        assert np.max(np.abs(b_nb - b_np)) < 1e-5

    def test_statsmodels_quantreg_oracle(self):
        sm = pytest.importorskip("statsmodels.api")
        rng = np.random.default_rng(11)
        n, d = 400, 2
        x = rng.uniform(size=(n, d))
        y = 1.0 + x @ [2.0, -1.0] + rng.standard_t(5, size=n)
        phi = np.column_stack([np.ones(n), x])
        for tau in (0.25, 0.5, 0.75):
            beta, info = solve_check_lp(phi, y, [[1.0]], [1.0], [tau])
            ref = sm.QuantReg(y, phi).fit(q=tau, max_iter=5000)
            assert info["converged"]
            assert np.max(np.abs(beta - ref.params)) < 5e-4

    def test_input_validation(self):
        with pytest.raises(ValueError):
            solve_check_lp(np.ones((5, 1)), np.zeros(4), [[1.0]], [1.0], [0.5])
        with pytest.raises(ValueError):
            solve_check_lp(np.ones((5, 1)), np.zeros(5), [[1.0]], [1.0], [0.0])
        with pytest.raises(ValueError):
            solve_check_lp(np.ones((5, 1)), np.zeros(5), [[1.0]], [-1.0], [0.5])


def uniform_sample(L=300, n_bidders=2, seed=0):
    spec = get_spec("uniform")
    cfg = SimConfig(n_auctions=L, bidder_count_law=n_bidders, seed=seed)
    return simulate_first_price(spec, cfg)


class TestAqrObjective:
    def setup_method(self):
        self.sample = uniform_sample(L=40, seed=3)
        self.cfg = AqrConfig(h=0.3, quad_m=16)

    def test_zero_residual(self):
        # all bids equal 1 and b = [1, 0, 0]: residuals vanish at every node
        recs = [AuctionRecord(auction_id=i, n_bidders=2, x=np.zeros(0),
                              bids=[1.0, 1.0]) for i in range(5)]
        sample = AuctionSample(recs)
        for alpha in (0.0, 0.3, 1.0):
            val = aqr_objective(np.array([1.0, 0.0, 0.0]), alpha, 2, sample,
                                self.cfg)
            assert val == pytest.approx(0.0, abs=1e-14)

    def test_median_symmetry(self):
        # at alpha = 0.5 with h -> the check function is |q|/2-symmetric:
        # negating residuals (reflecting bids around the plane) keeps the value
        recs = [AuctionRecord(auction_id=i, n_bidders=2, x=np.zeros(0),
                              bids=[1.0 + d, 1.0 - d])
                for i, d in enumerate(np.linspace(0.1, 0.5, 5))]
        sample = AuctionSample(recs)
        b = np.array([1.0, 0.0, 0.0])
        v1 = aqr_objective(b, 0.5, 2, sample, self.cfg)
        flipped = [AuctionRecord(auction_id=r.auction_id, n_bidders=2,
                                 x=np.zeros(0), bids=2.0 - r.bids)
                   for r in recs]
        v2 = aqr_objective(b, 0.5, 2, AuctionSample(flipped), self.cfg)
        assert v1 == pytest.approx(v2, abs=1e-12)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            b1 = rng.normal(size=3)
            b2 = rng.normal(size=3)
            alpha = rng.uniform()
            f = lambda b: aqr_objective(b, alpha, 2, self.sample, self.cfg)
            assert f(0.5 * (b1 + b2)) <= 0.5 * (f(b1) + f(b2)) + 1e-12

    def test_wrong_length(self):
        with pytest.raises(InputError):
            aqr_objective(np.zeros(5), 0.5, 2, self.sample, self.cfg)


class TestAqrFit:
    def test_zero_noise_recovery(self):
        # bids exactly on a local polynomial in the quantile level:
        # B(alpha) = 0.2 + 0.5 alpha for every bidder -> interior recovery
        rng = np.random.default_rng(1)
        recs = []
        for i in range(200):
            a = rng.random(2)
            recs.append(AuctionRecord(auction_id=i, n_bidders=2, x=np.zeros(0),
                                      bids=0.2 + 0.5 * a))
        sample = AuctionSample(recs)
        cfg = AqrConfig(h=0.3, alpha_grid=np.linspace(0.2, 0.8, 7), quad_m=16)
        fit = aqr_fit(sample, 2, cfg)
        assert np.all(fit.diagnostics["converged"])
        # beta0(alpha) tracks the population quantile 0.2 + 0.5 alpha closely
        truth = 0.2 + 0.5 * fit.grid
        assert np.max(np.abs(fit.beta0[:, 0] - truth)) < 0.02

    def test_uniform_mc_oracle(self):
        sample = uniform_sample(L=5000, seed=7)
        cfg = AqrConfig(h=0.3, alpha_grid=np.array([0.4, 0.5, 0.6]))
        fit = aqr_fit(sample, 2, cfg)
        i = 1
        assert fit.beta0[i, 0] == pytest.approx(0.25, abs=0.01)
        assert fit.beta1[i, 0] == pytest.approx(0.5, abs=0.05)
        assert fit.value(0.5) == pytest.approx(0.5, abs=0.02)

    def test_scale_shift_equivariance(self):
        sample = uniform_sample(L=120, seed=9)
        cfg = AqrConfig(h=0.35, alpha_grid=np.linspace(0, 1, 11), quad_m=16)
        fit = aqr_fit(sample, 2, cfg)

        def transformed(scale, shift):
            recs = [AuctionRecord(auction_id=r.auction_id, n_bidders=2,
                                  x=r.x, bids=scale * r.bids + shift)
                    for r in sample.records]
            return aqr_fit(AuctionSample(recs), 2, cfg)

        fit_scaled = transformed(2.5, 0.0)
        assert np.max(np.abs(fit_scaled.coef - 2.5 * fit.coef)) < 2e-4
        fit_shifted = transformed(1.0, 0.7)
        expected = fit.coef.copy()
        expected[:, 0] += 0.7
        assert np.max(np.abs(fit_shifted.coef - expected)) < 2e-4

    def test_grid_order_independence(self):
        sample = uniform_sample(L=80, seed=11)
        grid = np.linspace(0, 1, 9)
        cfg = AqrConfig(h=0.4, alpha_grid=grid, quad_m=16)
        fit = aqr_fit(sample, 2, cfg)
        # fitting single points one at a time gives the same coefficients
        for k in (0, 4, 8):
            cfg1 = AqrConfig(h=0.4, alpha_grid=np.array([grid[k] - 1e-9,
                                                         grid[k]])
                             if grid[k] > 0 else np.array([0.0, 1e-9]),
                             quad_m=16)
            single = aqr_fit(sample, 2, cfg1)
            row = 1 if grid[k] > 0 else 0
            assert np.max(np.abs(single.coef[row] - fit.coef[k])) < 1e-6

    def test_defined_at_endpoints_and_nonflat(self):
        sample = uniform_sample(L=100, seed=13)
        cfg = AqrConfig(h=0.3, alpha_grid=np.array([0.0, 1.0]), quad_m=16)
        fit = aqr_fit(sample, 2, cfg)
        assert np.all(np.isfinite(fit.coef))
        assert np.all(fit.diagnostics["converged"])
        offs = np.array([-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2])
        vals = objective_slice(fit, sample, 1.0, offs, cfg)
        center = 3
        assert np.all(np.diff(vals[center:]) > 0)
        assert np.all(np.diff(vals[:center + 1]) < 0)

    def test_quadrature_consistency_objective(self):
        # doubling the node count leaves the attained objective essentially
        # unchanged: the discretisation is consistent at the objective level
        sample = uniform_sample(L=100, seed=17)
        grid = np.linspace(0, 1, 11)
        cfg32 = AqrConfig(h=0.3, alpha_grid=grid, quad_m=32)
        cfg64 = AqrConfig(h=0.3, alpha_grid=grid, quad_m=64)
        f32 = aqr_fit(sample, 2, cfg32)
        f64 = aqr_fit(sample, 2, cfg64)
        for k, alpha in enumerate(grid):
            v32 = aqr_objective(f32.coef[k], alpha, 2, sample, cfg64)
            v64 = aqr_objective(f64.coef[k], alpha, 2, sample, cfg64)
            # the coarse-grid minimiser is near-optimal for the fine objective
            assert v32 <= v64 + 2e-6

    @pytest.mark.xfail(
        reason="the minimiser of the discretised check objective is an LP "
               "vertex; doubling quadrature nodes perturbs the weights and "
               "can move the vertex by far more than 1e-4 at L = 100",
        strict=False)
    def test_quadrature_consistency_coefficients_strict(self):
        spec = get_spec("sim62")
        sample = simulate_first_price(
            spec, SimConfig(n_auctions=100, bidder_count_law=2, seed=17))
        grid = np.linspace(0, 1, 11)
        f32 = aqr_fit(sample, 2, AqrConfig(h=0.3, alpha_grid=grid, quad_m=32))
        f64 = aqr_fit(sample, 2, AqrConfig(h=0.3, alpha_grid=grid, quad_m=64))
        q = f32.q
        assert np.max(np.abs(f32.coef[:, :2 * q] - f64.coef[:, :2 * q])) < 1e-4

    def test_requires_enough_auctions(self):
        spec = get_spec("sim62")
        cfg = SimConfig(n_auctions=3, bidder_count_law=2, seed=0)
        sample = simulate_first_price(spec, cfg)
        with pytest.raises(InputError):
            aqr_fit(sample, 2, AqrConfig(h=0.3))

    def test_json_round_trip(self):
        sample = uniform_sample(L=60, seed=19)
        cfg = AqrConfig(h=0.4, alpha_grid=np.linspace(0, 1, 5), quad_m=16)
        fit = aqr_fit(sample, 2, cfg)
        clone = AqrFit.from_json(fit.to_json())
        assert np.allclose(clone.coef, fit.coef)
        assert clone.n_bidders == fit.n_bidders
        assert clone.basis.dim == fit.basis.dim
        assert clone.value(0.5) == pytest.approx(fit.value(0.5))


class TestStandardQr:
    def test_d0_sample_quantile(self):
        sample = uniform_sample(L=200, seed=21)
        _, y = sample.design_long(2)
        for alpha in (0.25, 0.5, 0.75):
            beta = standard_qr(sample, 2, alpha)
            ref = np.quantile(y, alpha)
            loss = lambda b: np.sum(check_loss(y - b, alpha))
            assert loss(beta[0]) <= loss(ref) + 1e-9

    def test_median_regression_recovers_slope(self):
        rng = np.random.default_rng(23)
        recs = []
        for i in range(400):
            x = rng.uniform(size=1)
            bids = 1.0 + 2.0 * x[0] + rng.laplace(scale=0.1, size=2)
            recs.append(AuctionRecord(auction_id=i, n_bidders=2, x=x,
                                      bids=bids))
        sample = AuctionSample(recs)
        beta = standard_qr(sample, 2, 0.5)
        assert beta[0] == pytest.approx(1.0, abs=0.05)
        assert beta[1] == pytest.approx(2.0, abs=0.08)

    def test_extreme_level_degenerate(self):
        sample = uniform_sample(L=20, seed=25)
        with pytest.raises(DegenerateQuantileError):
            standard_qr(sample, 2, 0.999)
        with pytest.raises(DegenerateQuantileError):
            standard_qr(sample, 2, 1.0)


class TestHomogenized:
    def test_recovers_location_shift(self):
        spec = get_spec("homogenized_d1")
        cfg = SimConfig(n_auctions=1500, bidder_count_law=2, seed=27)
        sample = simulate_first_price(spec, cfg)
        hfit = homogenized_two_step(sample, 2, AqrConfig(
            h=0.3, alpha_grid=np.linspace(0, 1, 21), quad_m=16))
        assert hfit.gamma1[0] == pytest.approx(1.0, abs=0.05)
        from auctionqr.model import trig_quantile

        for alpha in (0.3, 0.5, 0.7):
            truth = trig_quantile(alpha) + 0.4
            assert hfit.value(alpha, [0.4]) == pytest.approx(truth, abs=0.06)

    def test_d0_equals_plain_aqr(self):
        sample = uniform_sample(L=100, seed=29)
        cfg = AqrConfig(h=0.4, alpha_grid=np.linspace(0, 1, 5), quad_m=16)
        hfit = homogenized_two_step(sample, 2, cfg)
        fit = aqr_fit(sample, 2, cfg)
        assert np.max(np.abs(hfit.resid_fit.coef - fit.coef)) < 1e-8

    def test_shift_invariance_of_slopes(self):
        spec = get_spec("homogenized_d1")
        cfg_sim = SimConfig(n_auctions=200, bidder_count_law=2, seed=31)
        sample = simulate_first_price(spec, cfg_sim)
        cfg = AqrConfig(h=0.4, alpha_grid=np.linspace(0, 1, 5), quad_m=16)
        h1 = homogenized_two_step(sample, 2, cfg)
        shifted = AuctionSample(
            [AuctionRecord(auction_id=r.auction_id, n_bidders=r.n_bidders,
                           x=r.x, bids=r.bids + 5.0)
             for r in sample.records])
        h2 = homogenized_two_step(shifted, 2, cfg)
        assert np.max(np.abs(h1.gamma1 - h2.gamma1)) < 1e-10
        # only the intercept path of the reconstruction moves
        diff = h2.resid_fit.beta0[:, 0] - h1.resid_fit.beta0[:, 0]
        assert np.max(np.abs(diff - 5.0)) < 1e-5
