"""Tests for network validation, simulation and predictor-filter truth."""

import warnings

import numpy as np
import pytest
from scipy.signal import BadCoefficients

from src.exceptions import InvalidDataError, InvalidNetworkError, UnknownCaseError
from src.models import NetworkModel, NoiseModel, Poly, RationalTF
from src.services import polynomial as poly
from src.services.network import (
    DataRecord,
    builtin_case,
    dummy_variance,
    simulate,
    simulate_noise,
    truth_predictor_filters,
    validate,
)


def _tf(num, den=(1.0,)):
    return RationalTF.from_coeffs(num, den)


def test_builtin_cases_are_valid(case1, case2):
    assert validate(case1).valid
    assert validate(case2).valid
    assert case1.module(3, 1).den.coeffs == (1.0, 1.0, 0.6)
    assert case2.module(3, 1).den.coeffs == (1.0, 1.7, 1.073)
    assert case2.noise_of(3).variance == 0.1
    assert case1.inputs_of(3) == [1, 2, 4]


def test_unknown_case():
    with pytest.raises(UnknownCaseError):
        builtin_case("case3")


def test_diagonal_module_is_a_violation():
    net = NetworkModel(L=2, modules={(1, 1): _tf([0, 0.5])})

    report = validate(net)

    assert any("diagonal module present" in v for v in report.violations)


def test_not_strictly_proper_module_is_a_violation():
    net = NetworkModel(L=2, modules={(2, 1): _tf([0.3, 0.5])})

    report = validate(net)

    assert report.violations == ["module G_21 not strictly proper"]


def test_non_monic_noise_model_is_a_violation():
    net = NetworkModel(L=1, noise={1: NoiseModel(H=_tf([2.0, 0.1]), variance=1.0)})

    assert validate(net).violations == ["noise model H_1 not monic"]


def test_unstable_loop_is_a_violation():
    net = NetworkModel(L=2, modules={(1, 2): _tf([0, 1.2]), (2, 1): _tf([0, 1.2])})

    report = validate(net)

    assert not report.valid
    assert "closed loop unstable" in report.violations[0]
    assert report.spectral_radius == pytest.approx(1.2)


def test_simulate_rejects_invalid_network():
    net = NetworkModel(L=2, modules={(1, 2): _tf([0, 1.2]), (2, 1): _tf([0, 1.2])})

    with pytest.raises(InvalidNetworkError):
        simulate(net, 10, seed=0)


def test_simulate_white_noise_without_modules():
    net = NetworkModel(L=2, noise={1: NoiseModel(variance=0.3), 2: NoiseModel(variance=0.7)})

    data = simulate(net, 10000, seed=1)

    np.testing.assert_allclose(np.var(data.w, axis=0), [0.3, 0.7], rtol=0.1)
    assert not np.any(data.r)


def test_simulate_is_deterministic(case1):
    a = simulate(case1, 300, seed=5)
    b = simulate(case1, 300, seed=5)
    c = simulate(case1, 300, seed=6)

    np.testing.assert_array_equal(a.w, b.w)
    np.testing.assert_array_equal(a.r, b.r)
    assert not np.array_equal(a.w, c.w)


def test_state_space_form_has_no_coefficient_warnings(case1, case2):
    with warnings.catch_warnings():
        warnings.simplefilter("error", BadCoefficients)
        for net in (case1, case2):
            assert validate(net).valid
            simulate(net, 50, seed=1)


def test_simulate_case1_shapes_and_references(case1):
    data = simulate(case1, 500, seed=2)

    assert data.w.shape == (500, 4)
    assert np.all(np.isfinite(data.w))
    assert np.any(data.reference(2)) and np.any(data.reference(4))
    assert not np.any(data.reference(1)) and not np.any(data.reference(3))
    np.testing.assert_array_equal(data.output(3), data.node(3))


def test_simulate_without_excitation_is_zero(case1):
    quiet = case1
    for j in range(1, 5):
        quiet = quiet.with_noise_variance(j, 0.0)

    data = simulate(quiet, 100, seed=0, r_spec="none")

    assert not np.any(data.w)


def test_simulate_explicit_references():
    net = NetworkModel(L=2, modules={(2, 1): _tf([0, 1.0])}, references=(1,))
    r1 = np.arange(5, dtype=float)

    data = simulate(net, 5, seed=0, r_spec={1: r1}, warmup=0)

    np.testing.assert_array_equal(data.node(1), r1)
    np.testing.assert_array_equal(data.node(2), [0, 0, 1, 2, 3])


def test_explicit_reference_length_checked():
    net = NetworkModel(L=1, references=(1,))

    with pytest.raises(InvalidDataError):
        simulate(net, 5, seed=0, r_spec={1: np.zeros(4)})


def test_data_record_rejects_non_finite():
    w = np.zeros((3, 2))
    w[1, 1] = np.nan

    with pytest.raises(InvalidDataError):
        DataRecord(w=w, r=np.zeros((3, 2)))


def test_dummy_variance_case1_equals_noise_variance(case1):
    assert dummy_variance(case1, 3) == pytest.approx(0.5)


def test_dummy_variance_case2_ratio(case2):
    ratio = dummy_variance(case2, 3) / case2.noise_of(3).variance

    assert ratio == pytest.approx(1.4752, abs=3e-3)


def test_truth_filters_stable_case_match_inverse_noise_model(case1):
    filters = truth_predictor_filters(case1, 3, 1)
    H = case1.noise_of(3).H

    for k in (2, 4):
        G = case1.module(3, k)
        expected = RationalTF(
            num=poly.multiply(H.den, G.num), den=poly.multiply(H.num, G.den)
        )
        np.testing.assert_allclose(
            poly.impulse_response(filters.Mjk[k], 100),
            poly.impulse_response(expected, 100),
            atol=1e-9,
        )
    assert filters.allpass_gain == 1.0
    assert filters.B_ji.coeffs == (0.0, 1.0, 0.05)
    assert filters.Fbar_ji.coeffs == (0.0, 1.0, 0.6)


def test_truth_filters_unstable_case_are_stable(case2):
    filters = truth_predictor_filters(case2, 3, 1)

    assert poly.is_stable(filters.Mj.den)
    assert all(poly.is_stable(tf.den) for tf in filters.Mjk.values())
    assert filters.allpass_gain < 1.0


def test_truth_filters_vanish_without_noise_dynamics():
    net = NetworkModel(
        L=2, modules={(2, 1): _tf([0, 1.0])}, noise={2: NoiseModel(variance=1.0)}, references=(1,)
    )

    filters = truth_predictor_filters(net, 2, 1)

    assert not np.any(filters.Mj.num.array)
    assert filters.Mjk == {}


def _rewritten_residual(net, data, j, i):
    """(1 - M_j)(F_i z_j - B_i w_i) - sum_k M_jk w_k."""
    filters = truth_predictor_filters(net, j, i)
    G = net.module(j, i)
    zeta = poly.filter_signal(RationalTF(num=G.den, den=Poly.one()), data.output(j))
    zeta -= poly.filter_signal(RationalTF(num=G.num, den=Poly.one()), data.node(i))
    one_minus = RationalTF(num=poly.subtract(filters.Mj.den, filters.Mj.num), den=filters.Mj.den)
    eps = poly.filter_signal(one_minus, zeta)
    for k, tf in filters.Mjk.items():
        eps -= poly.filter_signal(tf, data.node(k))
    return eps, filters


@pytest.mark.parametrize("case", ["case1", "case2"])
def test_rewritten_node_equation_leaves_white_dummy_noise(case):
    net = builtin_case(case)
    data = simulate(net, 5000, seed=4)

    eps, filters = _rewritten_residual(net, data, 3, 1)

    tail = eps[200:]
    assert np.var(tail) == pytest.approx(filters.dummy_variance, rel=0.15)
    lag1 = np.corrcoef(tail[1:], tail[:-1])[0, 1]
    assert abs(lag1) < 0.1


def test_innovations_reproduce_the_noise_model(case1):
    e, v = simulate_noise(case1, 300, seed=9, warmup=0)

    expected = poly.filter_signal(case1.noise_of(3).H, e[:, 2])

    np.testing.assert_allclose(v[:, 2], expected)
    np.testing.assert_array_equal(v[:, 3], e[:, 3])
