import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dtmaps.distributions import ConstantFamily, Gaussian
from dtmaps.pit import (
    BaseEvaluationError,
    CalibrationSet,
    DiagnosticCurve,
    IdentityMap,
    KumaraswamyMap,
    NotFittedError,
    PitModel,
    PitSample,
    compute_pit,
    diagnostic_curve,
    lds,
    lds_many,
)
from dtmaps.synthetic import SAS_TRUTH, SasDesign, gen_sas_dataset

STD = ConstantFamily(Gaussian(0.0, 1.0))


def test_pit_of_median_is_half():
    calib = CalibrationSet(np.zeros((1, 2)), [0.0])
    assert compute_pit(STD, calib).z[0] == 0.5


def test_pit_matches_erf_value():
    calib = CalibrationSet(np.zeros((1, 1)), [1.96])
    assert abs(compute_pit(STD, calib).z[0] - 0.9750) < 1e-4


def test_pit_values_in_unit_interval():
    rng = np.random.default_rng(0)
    calib = CalibrationSet(rng.normal(size=(200, 3)), 50 * rng.standard_cauchy(200))
    z = compute_pit(STD, calib).z
    assert np.all((z >= 0) & (z <= 1))


def test_pit_failure_names_row():
    class Broken:
        def cdf(self, y, X):
            out = np.asarray(y) * 0 + 0.5
            if np.any(np.asarray(y) > 10):
                raise ArithmeticError("boom")
            return out

    calib = CalibrationSet(np.zeros((4, 1)), [0.0, 1.0, 11.0, 2.0])
    with pytest.raises(BaseEvaluationError) as err:
        compute_pit(Broken(), calib)
    assert err.value.row == 2


def test_calibration_set_validation():
    with pytest.raises(ValueError):
        CalibrationSet(np.zeros((2, 2)), [1.0])
    with pytest.raises(ValueError):
        CalibrationSet(np.array([[np.nan]]), [1.0])
    cs = CalibrationSet(np.zeros((3, 2)), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        cs.features[0, 0] = 1.0


def test_pit_sample_range_checked():
    with pytest.raises(ValueError):
        PitSample([0.2, 1.2])


def test_pit_uniform_when_base_is_truth():
    calib = gen_sas_dataset(SasDesign(5000, 11))
    z = compute_pit(SAS_TRUTH, calib).z
    assert stats.kstest(z, "uniform").statistic < 1.36 / np.sqrt(5000)


def test_identity_curve():
    curve = diagnostic_curve(IdentityMap(), np.zeros(2), grid_size=3)
    assert np.array_equal(curve.values, [0.0, 0.5, 1.0])
    assert lds(curve) == 0.0


def test_kumaraswamy_curve_is_alpha_squared():
    curve = diagnostic_curve(KumaraswamyMap(2.0, 1.0), np.zeros(1))
    assert curve.alphas.size == 101
    assert np.allclose(curve.values, curve.alphas ** 2, atol=1e-15)


def test_lds_hand_value():
    a = np.array([0.25, 0.5, 0.75])
    expected = (0.1875 ** 2 + 0.25 ** 2 + 0.1875 ** 2) / 3
    assert lds(DiagnosticCurve(a, a ** 2)) == pytest.approx(expected, abs=1e-12)
    assert abs(expected - 0.04427) < 1e-5


def test_lds_rejects_empty_grid():
    with pytest.raises(ValueError):
        lds(DiagnosticCurve(np.array([]), np.array([])))


def test_diagnostic_grid_size_checked():
    with pytest.raises(ValueError):
        diagnostic_curve(IdentityMap(), np.zeros(1), grid_size=1)


def test_unfitted_model_rejected():
    class Unfitted(PitModel):
        fitted = False

        def _cdf_rows(self, alpha, X):
            return alpha

    with pytest.raises(NotFittedError):
        diagnostic_curve(Unfitted(), np.zeros(1))


@given(st.lists(st.floats(0, 1), min_size=2, max_size=30), st.randoms())
def test_lds_permutation_invariant_and_nonnegative(values, rnd):
    a = np.linspace(0, 1, len(values))
    v = np.sort(np.array(values))
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    c1 = lds(DiagnosticCurve(a, v))
    c2 = lds(DiagnosticCurve(a[perm], v[perm]))
    assert c1 >= 0
    assert c1 == pytest.approx(c2, rel=1e-12, abs=1e-300)


def test_lds_positive_when_one_point_moves():
    a = np.linspace(0, 1, 11)
    v = a.copy()
    v[4] += 1e-6
    assert lds(DiagnosticCurve(a, v)) > 0


def test_lds_many_matches_single():
    m = KumaraswamyMap(0.7, 1.9)
    X = np.zeros((3, 2))
    assert np.allclose(lds_many(m, X), lds(diagnostic_curve(m, X[0])))


@pytest.mark.parametrize(
    "a,b,label",
    [(1.0, 1.0, "calibrated"), (0.5, 1.0, "positive bias"), (2.0, 1.0, "negative bias"),
     (2.0, 2.0, "overdispersion"), (0.5, 0.5, "underdispersion")],
)
def test_failure_mode_labels(a, b, label):
    curve = diagnostic_curve(KumaraswamyMap(a, b), np.zeros(1))
    assert curve.failure_mode() == label


def test_curve_csv(tmp_path):
    path = tmp_path / "c.csv"
    diagnostic_curve(IdentityMap(), np.zeros(1), 3).to_csv(path)
    assert path.read_text().splitlines() == ["alpha,g_hat", "0.0,0.0", "0.5,0.5", "1.0,1.0"]


def test_model_cdf_rejects_alpha_outside_unit_interval():
    with pytest.raises(ValueError):
        IdentityMap().cdf(1.5, np.zeros(2))
