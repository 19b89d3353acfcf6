import numpy as np
import pytest

from auctionqr.errors import InputError, NumericalError
from auctionqr.model import get_spec, trig_quantile
from auctionqr.recover import (ValueCurve, aqr_pdf, cdf_indicator,
                               cdf_smoothed, gpv_identity, gpv_pseudo_values,
                               pdf_smoothed, private_value, rearrange,
                               rule_of_thumb_bandwidth, value_curve)
from auctionqr.simulate import SimConfig, simulate_first_price
from auctionqr.solver import AqrConfig, aqr_fit


@pytest.fixture(scope="module")
def uniform_fit():
    spec = get_spec("uniform")
    sample = simulate_first_price(
        spec, SimConfig(n_auctions=5000, bidder_count_law=2, seed=101))
    cfg = AqrConfig(h=0.3, alpha_grid=np.linspace(0, 1, 101), quad_m=16)
    return aqr_fit(sample, 2, cfg)


@pytest.fixture(scope="module")
def trig_fit():
    spec = get_spec("trig")
    sample = simulate_first_price(
        spec, SimConfig(n_auctions=4000, bidder_count_law=2, seed=103))
    cfg = AqrConfig(h=0.3, alpha_grid=np.linspace(0, 1, 101), quad_m=16)
    return aqr_fit(sample, 2, cfg)


class TestPrivateValue:
    def test_uniform_mc_oracle(self, uniform_fit):
        assert private_value(uniform_fit, 0.5) == pytest.approx(0.5, abs=0.02)

    def test_alpha_zero_equals_bid(self, uniform_fit):
        assert private_value(uniform_fit, 0.0) == pytest.approx(
            uniform_fit.bid(0.0), abs=1e-12)

    def test_nu_scales_markup_linearly(self, uniform_fit):
        b = uniform_fit.bid(0.6)
        full = private_value(uniform_fit, 0.6, nu=1.0)
        half = private_value(uniform_fit, 0.6, nu=0.5)
        assert half - b == pytest.approx(0.5 * (full - b), abs=1e-12)

    def test_off_grid_interpolation(self, uniform_fit):
        v = private_value(uniform_fit, 0.505)
        lo = private_value(uniform_fit, 0.50)
        hi = private_value(uniform_fit, 0.51)
        assert min(lo, hi) - 1e-12 <= v <= max(lo, hi) + 1e-12


class TestRearrange:
    def test_sorts_values(self):
        curve = ValueCurve(grid=np.array([0.0, 0.5, 1.0]),
                           values=np.array([3.0, 1.0, 2.0]))
        out = rearrange(curve)
        assert np.array_equal(out.values, [1.0, 2.0, 3.0])
        assert np.array_equal(out.grid, curve.grid)
        assert out.monotone

    def test_monotone_input_unchanged(self):
        curve = ValueCurve(grid=np.linspace(0, 1, 5),
                           values=np.array([0.0, 0.1, 0.4, 0.5, 0.9]))
        assert np.array_equal(rearrange(curve).values, curve.values)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        curve = ValueCurve(grid=np.linspace(0, 1, 20),
                           values=rng.normal(size=20))
        once = rearrange(curve)
        twice = rearrange(once)
        assert np.array_equal(once.values, twice.values)


def identity_curve(n=101):
    g = np.linspace(0, 1, n)
    return ValueCurve(grid=g, values=g.copy(), provenance={"n_obs": 200})


class TestCdf:
    def test_identity_curve(self):
        curve = identity_curve()
        assert cdf_indicator(curve, 0.5) == pytest.approx(0.5, abs=0.011)
        assert cdf_indicator(curve, -1.0) == 0.0
        assert cdf_indicator(curve, 2.0) == 1.0

    def test_uniform_fit_mc(self, uniform_fit):
        curve = value_curve(uniform_fit)
        assert cdf_indicator(curve, 0.3) == pytest.approx(0.3, abs=0.03)

    def test_monotone_in_v(self):
        curve = identity_curve()
        vs = np.linspace(-0.1, 1.1, 25)
        out = cdf_indicator(curve, vs)
        assert np.all(np.diff(out) >= 0)

    def test_generalized_inverse_of_rearranged(self):
        rng = np.random.default_rng(3)
        g = np.linspace(0, 1, 201)
        curve = rearrange(ValueCurve(grid=g, values=rng.normal(size=201)))
        for k in (20, 100, 180):
            got = cdf_indicator(curve, curve.values[k])
            assert got == pytest.approx(g[k], abs=0.011)

    def test_smoothed_symmetric_exact_half(self):
        curve = identity_curve()
        assert cdf_smoothed(curve, 0.5, eta=0.1) == pytest.approx(0.5,
                                                                  abs=1e-12)

    def test_eta_must_be_positive(self):
        with pytest.raises(InputError):
            cdf_smoothed(identity_curve(), 0.5, eta=0.0)


class TestPdf:
    def test_identity_curve_density_one(self):
        curve = identity_curve(1001)
        for v in (0.3, 0.5, 0.7):
            assert pdf_smoothed(curve, v, eta=0.05) == pytest.approx(1.0,
                                                                     abs=0.02)

    def test_oversmoothing_flattens(self):
        curve = ValueCurve(grid=np.linspace(0, 1, 501),
                           values=trig_quantile(np.linspace(0, 1, 501)))
        vs = np.linspace(0.6, 1.5, 40)
        small = pdf_smoothed(curve, vs, eta=0.05)
        large = pdf_smoothed(curve, vs, eta=0.6)
        assert large.max() - large.min() < small.max() - small.min()

    @pytest.mark.parametrize("eta", [0.02, 0.05, 0.2])
    def test_integrates_to_one(self, eta):
        curve = ValueCurve(grid=np.linspace(0, 1, 501),
                           values=trig_quantile(np.linspace(0, 1, 501)))
        vs = np.linspace(curve.values.min() - 3 * eta,
                         curve.values.max() + 3 * eta, 512)
        dens = pdf_smoothed(curve, vs, eta)
        total = np.trapezoid(dens, vs)
        assert total == pytest.approx(1.0, abs=0.02)


class TestAqrPdf:
    def test_matches_true_density_shape(self, trig_fit):
        curve = value_curve(trig_fit)
        # true pdf at v = T(alpha) is 1 / T'(alpha)
        alphas = np.linspace(0.15, 0.85, 15)
        vs = trig_quantile(alphas)
        tderiv = 0.5 * ((np.pi + 1) - np.pi * np.sin(np.pi * alphas))
        truth = 1.0 / tderiv
        got = aqr_pdf(curve, vs)
        # the rule-of-thumb bandwidth smooths the peak; allow kernel bias
        assert np.max(np.abs(got - truth)) < 0.35
        assert np.corrcoef(got, truth)[0, 1] > 0.9

    def test_constant_curve_rejected(self):
        curve = ValueCurve(grid=np.linspace(0, 1, 11),
                           values=np.full(11, 2.0),
                           provenance={"n_obs": 100})
        with pytest.raises(NumericalError):
            aqr_pdf(curve, 2.0)

    def test_missing_sample_size_rejected(self):
        curve = identity_curve()
        curve.provenance.pop("n_obs")
        with pytest.raises(InputError):
            rule_of_thumb_bandwidth(curve)

    def test_normalization(self, trig_fit):
        curve = value_curve(trig_fit)
        h_a = rule_of_thumb_bandwidth(curve)
        vs = np.linspace(curve.values.min() - 3 * h_a,
                         curve.values.max() + 3 * h_a, 512)
        dens = aqr_pdf(curve, vs)
        assert np.trapezoid(dens, vs) == pytest.approx(1.0, abs=0.02)


class TestGpv:
    def test_identity_exact_for_uniform(self):
        # true G(b) = 2b and g(b) = 2 on [0, 1/2]: V = 2B exactly
        bids = np.array([0.1, 0.2, 0.4])
        got = gpv_identity(bids, 2 * bids, np.full(3, 2.0), 2)
        assert np.allclose(got, 2 * bids)

    def test_empirical_cdf_boundary(self):
        spec = get_spec("uniform")
        sample = simulate_first_price(
            spec, SimConfig(n_auctions=200, bidder_count_law=2, seed=7))
        res = gpv_pseudo_values(sample, 2, gbar_bandwidth=0.1)
        _, y = sample.design_long(2)
        k = np.argmax(y)
        # at the sample maximum the empirical cdf equals one, so the markup
        # is 1 / ((I-1) g-hat)
        from auctionqr.recover import _triweight_kde

        ghat = _triweight_kde(y, y[k:k + 1], 0.1)[0]
        assert res.pseudo_values[k] == pytest.approx(y[k] + 1.0 / ghat)

    def test_recovers_uniform_values(self):
        spec = get_spec("uniform")
        sample = simulate_first_price(
            spec, SimConfig(n_auctions=3000, bidder_count_law=2, seed=9))
        res = gpv_pseudo_values(sample, 2)
        values = np.concatenate([r.values for r in sample.records])
        err = res.pseudo_values[res.kept] - values[res.kept]
        inner = np.abs(res.pseudo_values[res.kept] - 0.5) < 0.35
        assert np.sqrt(np.mean(err[inner] ** 2)) < 0.06

    def test_dispersion_grows_past_density_peak(self):
        spec = get_spec("trig")
        sample = simulate_first_price(
            spec, SimConfig(n_auctions=3000, bidder_count_law=2, seed=11))
        res = gpv_pseudo_values(sample, 2)
        values = np.concatenate([r.values for r in sample.records])
        err = (res.pseudo_values - values)[res.kept]
        v = values[res.kept]
        lo, hi = np.quantile(v, [1 / 3, 2 / 3])
        var_low = np.var(err[v <= lo])
        var_high = np.var(err[v >= hi])
        assert var_high > var_low

    def test_homogenizes_covariates(self):
        spec = get_spec("homogenized_d1")
        sample = simulate_first_price(
            spec, SimConfig(n_auctions=2000, bidder_count_law=2, seed=13))
        res = gpv_pseudo_values(sample, 2)
        assert res.gamma1[0] == pytest.approx(1.0, abs=0.05)
        values = np.concatenate([r.values for r in sample.records])
        err = res.pseudo_values[res.kept] - values[res.kept]
        assert np.sqrt(np.mean(np.clip(err, -1, 1) ** 2)) < 0.2
