import numpy as np
import pytest
from scipy import integrate, stats

from dtmaps.distributions import ConstantFamily, Gaussian, Kumaraswamy, SinhArcsinh, norm_cdf, norm_ppf
from dtmaps.pit import IdentityMap, KumaraswamyMap
from dtmaps.recalibrate import (
    RecalibratedDistribution,
    ot_map,
    recalibrated_cdf,
    recalibrated_means,
    recalibrated_pdf,
    recalibrated_quantile,
    threshold_prob_error,
)


class ShiftMap:
    """Exact PIT map of N(0,1) forecasts when the truth is N(1,1)."""

    def cdf(self, p):
        return norm_cdf(norm_ppf(np.clip(p, 1e-300, 1 - 1e-16)) - 1.0)

    def pdf(self, p):
        s = norm_ppf(p)
        return stats.norm.pdf(s - 1.0) / stats.norm.pdf(s)


STD = Gaussian(0.0, 1.0)


def test_identity_map_leaves_distribution_unchanged():
    rd = RecalibratedDistribution(STD, IdentityMap(), x=np.zeros(1))
    ys = np.linspace(-5, 5, 41)
    assert np.array_equal(rd.cdf(ys), STD.cdf(ys))
    assert np.allclose(rd.pdf(ys), STD.pdf(ys), rtol=1e-14)
    assert np.allclose(rd.ot_map(ys), ys, atol=1e-12)


def test_composition_matches_oracle():
    k = Kumaraswamy(2.0, 3.0)
    rd = RecalibratedDistribution(STD, k)
    ys = np.linspace(-4, 4, 33)
    p = stats.norm.cdf(ys)
    oracle = 1 - (1 - p ** 2) ** 3
    assert np.max(np.abs(rd.cdf(ys) - oracle)) < 1e-10


def test_pdf_is_derivative_of_cdf():
    rd = RecalibratedDistribution(SinhArcsinh(0.5, 1.3, 0.4, 0.8), Kumaraswamy(0.7, 1.8))
    ys = rd.quantile(np.linspace(0.05, 0.95, 19))
    h = 1e-6
    fd = (rd.cdf(ys + h) - rd.cdf(ys - h)) / (2 * h)
    assert np.allclose(rd.pdf(ys), fd, rtol=1e-5)


@pytest.mark.parametrize("ab", [(2.0, 3.0), (0.5, 0.5), (1.0, 4.0)])
def test_density_integrates_to_one(ab):
    rd = RecalibratedDistribution(STD, Kumaraswamy(*ab))
    total = sum(integrate.quad(lambda t: float(rd.pdf(t)), a, b, limit=400)[0]
                for a, b in [(-np.inf, -3), (-3, 0), (0, 3), (3, np.inf)])
    assert total == pytest.approx(1.0, abs=1e-6)


def test_quantile_roundtrip():
    rd = RecalibratedDistribution(Gaussian(2.0, 0.5), Kumaraswamy(3.0, 0.6))
    tau = np.array([1e-4, 0.01, 0.3, 0.5, 0.9, 0.9999])
    assert np.max(np.abs(rd.cdf(rd.quantile(tau)) - tau)) < 1e-12


def test_identity_quantile_matches_normal_value():
    rd = RecalibratedDistribution(STD, IdentityMap(), x=np.zeros(1))
    assert abs(recalibrated_quantile(rd, 0.975) - 1.96) < 1e-2
    assert recalibrated_quantile(rd, 0.975) == pytest.approx(stats.norm.ppf(0.975), abs=1e-12)


def test_quantile_rejects_endpoints():
    rd = RecalibratedDistribution(STD, Kumaraswamy(1.0, 1.0))
    for t in (0.0, 1.0):
        with pytest.raises(ValueError):
            rd.quantile(t)


def test_location_shift_transport_is_translation():
    rd = RecalibratedDistribution(STD, ShiftMap())
    ys = np.linspace(-3, 3, 13)
    assert np.allclose(ot_map(rd, ys), ys + 1.0, atol=1e-8)


def test_transport_is_monotone():
    rd = RecalibratedDistribution(SinhArcsinh(0.0, 1.0, 0.3, 1.4), Kumaraswamy(0.4, 2.5))
    ys = np.linspace(-6, 6, 301)
    assert np.all(np.diff(rd.ot_map(ys)) >= 0)


def test_pushforward_matches_recalibrated_law():
    rd = RecalibratedDistribution(STD, Kumaraswamy(2.0, 3.0))
    rng = np.random.default_rng(0)
    y = rd.ot_map(rng.standard_normal(20000))
    assert stats.kstest(y, rd.cdf).statistic < 0.02
    s = rd.sample(rng, 20000)
    assert stats.kstest(s, rd.cdf).statistic < 0.02


def test_threshold_identity_holds():
    rd = RecalibratedDistribution(STD, Kumaraswamy(1.5, 0.8))
    truth = Gaussian(1.0, 1.0)
    t = np.linspace(-3, 3, 25)
    lhs, rhs = threshold_prob_error(rd, ShiftMap().cdf, t, truth=truth)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_wrappers_and_finite_check():
    rd = RecalibratedDistribution(STD, Kumaraswamy(2.0, 2.0))
    assert recalibrated_cdf(rd, 0.3) == rd.cdf(0.3)
    assert recalibrated_pdf(rd, 0.3) == rd.pdf(0.3)
    with pytest.raises(ValueError):
        recalibrated_cdf(rd, np.nan)


def test_grid_means_match_quadrature():
    fam = ConstantFamily(Gaussian(0.5, 2.0))
    model = KumaraswamyMap(2.0, 3.0)
    X = np.zeros((2, 1))
    m = recalibrated_means(model, fam, X)
    rd = RecalibratedDistribution(fam.dist, Kumaraswamy(2.0, 3.0))
    ref = integrate.quad(lambda t: t * float(rd.pdf(t)), -np.inf, np.inf, limit=400)[0]
    assert np.allclose(m, ref, atol=1e-4)
    assert np.allclose(recalibrated_means(None, fam, X), 0.5, atol=1e-6)


# --- maps with heavy endpoint mass ----------------------------------------


HEAVY = Kumaraswamy(0.008, 0.048)


def test_heavy_endpoint_map_keeps_its_tail_mass():
    # about a tenth of the mass sits where Phi(y) rounds to 1
    rd = RecalibratedDistribution(Gaussian(0.0, 1.0), HEAVY)
    assert rd.sf(9.0) > 0.05
    assert rd.cdf(9.0) + rd.sf(9.0) == pytest.approx(1.0, abs=1e-15)
    edges = [-np.inf, -8.0, 0.0, 8.0, np.inf]
    mass = sum(integrate.quad(lambda t: float(rd.pdf(t)), a, b, limit=400)[0] for a, b in zip(edges[:-1], edges[1:]))
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_heavy_density_is_finite_past_underflow():
    rd = RecalibratedDistribution(Gaussian(0.0, 1.0), HEAVY)
    d = rd.pdf(np.array([-60.0, -39.0, 39.0, 60.0, 1e6]))
    assert np.all(np.isfinite(d)) and np.all(d >= 0)


def test_heavy_map_mean_matches_quadrature():
    # a=0.05 keeps the mass below Phi's underflow point negligible
    k = Kumaraswamy(0.05, 0.1)
    fam = ConstantFamily(Gaussian(0.0, 1.0))
    rd = RecalibratedDistribution(Gaussian(0.0, 1.0), k)
    edges = [-np.inf, -8.0, 0.0, 8.0, np.inf]
    mean = sum(integrate.quad(lambda t: t * float(rd.pdf(t)), a, b, limit=400)[0] for a, b in zip(edges[:-1], edges[1:]))
    assert recalibrated_means(KumaraswamyMap(k.a, k.b), fam, np.zeros((1, 2)))[0] == pytest.approx(mean, abs=2e-5)
