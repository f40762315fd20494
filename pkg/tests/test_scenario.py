import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isac_covert.scenario import (
    ArrayGeometry,
    ClutterDopplerMode,
    ClutterDopplerModel,
    DopplerGrid,
    NoiseModel,
    Scatterer,
    ScattererKind,
    Scenario,
    build_A,
    dbm_to_linear,
    doppler_vector,
    shift_matrix,
    steer_rx,
    steer_tx,
    wrap_doppler,
)

angles = st.floats(-math.pi / 2, math.pi / 2, allow_nan=False)


@pytest.mark.parametrize(
    "angle, n, expected",
    [
        (0.0, 4, 0.5 * np.ones(4)),
        (math.pi / 2, 2, np.array([1, -1]) / math.sqrt(2)),
        (math.pi / 6, 2, np.array([1, -1j]) / math.sqrt(2)),
    ],
)
def test_steer_tx_examples(angle, n, expected):
    np.testing.assert_allclose(steer_tx(angle, n), expected, atol=1e-15)


@pytest.mark.parametrize(
    "angle, n, expected",
    [
        (0.0, 8, np.ones(8) / math.sqrt(8)),
        (math.pi / 2, 4, 0.5 * np.array([1, -1, 1, -1])),
        (-math.pi / 2, 2, np.array([1, -1]) / math.sqrt(2)),
    ],
)
def test_steer_rx_examples(angle, n, expected):
    np.testing.assert_allclose(steer_rx(angle, n), expected, atol=1e-15)


@given(angles, st.integers(1, 16))
def test_steering_vectors_have_unit_norm(theta, n):
    assert np.linalg.norm(steer_tx(theta, n)) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(steer_rx(theta, n)) == pytest.approx(1.0, abs=1e-12)


def test_doppler_vector_examples():
    np.testing.assert_allclose(doppler_vector(0.0, 5), np.ones(5))
    np.testing.assert_allclose(doppler_vector(0.25, 4), [1, 1j, -1, -1j], atol=1e-15)
    np.testing.assert_allclose(doppler_vector(0.5, 2), [1, -1], atol=1e-15)


@given(st.floats(-0.5, 0.5), st.integers(1, 32))
def test_doppler_vector_unit_modulus(f, n):
    np.testing.assert_allclose(np.abs(doppler_vector(f, n)), 1.0, atol=1e-12)


def test_shift_matrix_zero_delay_is_identity():
    g = ArrayGeometry(3, 2, 5)
    np.testing.assert_array_equal(shift_matrix(0, g), np.eye(15))


def test_shift_matrix_index_rule_small_case():
    J = shift_matrix(1, ArrayGeometry(2, 1, 2))
    ones = {(int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(J))}
    assert ones == {(3, 1), (4, 2)}


def _brute_force_shift(delay, nt, N):
    n = nt * N
    J = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i - j == nt * delay:
                J[i, j] = 1.0
    return J


@pytest.mark.parametrize("nt, N", [(1, 4), (2, 3), (3, 5)])
@pytest.mark.parametrize("delay", [-2, -1, 0, 1, 2])
def test_shift_matrix_matches_enumeration(nt, N, delay):
    g = ArrayGeometry(nt, 1, N)
    J = shift_matrix(delay, g)
    np.testing.assert_array_equal(J, _brute_force_shift(delay, nt, N))
    assert J.sum() == nt * (N - abs(delay))
    np.testing.assert_array_equal(shift_matrix(-delay, g), J.T)


@given(st.integers(1, 3), st.integers(1, 8), st.data())
def test_shift_partial_isometry(nt, N, data):
    r = data.draw(st.integers(-(N - 1), N - 1))
    g = ArrayGeometry(nt, 1, N)
    J = shift_matrix(r, g)
    np.testing.assert_array_equal(J @ shift_matrix(-r, g) @ J, J)


def test_shift_matrix_rejects_full_delay():
    with pytest.raises(ValueError):
        shift_matrix(4, ArrayGeometry(1, 1, 4))


def test_build_A_scalar_identity():
    g = ArrayGeometry(1, 1, 6)
    np.testing.assert_allclose(build_A(Scatterer(0.0, 0, 0.0), 0.0, g), np.eye(6))


def test_build_A_unit_delay_ignores_last_slot():
    g = ArrayGeometry(2, 3, 4)
    A = build_A(Scatterer(0.3, 1, 0.0), 0.1, g)
    gen = np.random.default_rng(0)
    s = gen.standard_normal(8) + 1j * gen.standard_normal(8)
    s2 = s.copy()
    s2[-2:] = 7.0  # slot N
    np.testing.assert_allclose(A @ s, A @ s2)


def test_build_A_matches_explicit_kronecker():
    # independent evaluation: entries written out from the steering/Doppler formulas
    g = ArrayGeometry(2, 2, 2)
    A = build_A(Scatterer(math.pi / 2, 0, 0.0), 0.25, g)
    ar = np.array([1, -1]) / math.sqrt(2)
    at = np.array([1, -1]) / math.sqrt(2)
    spatial = np.outer(ar, at)
    expected = np.zeros((4, 4), dtype=complex)
    expected[:2, :2] = spatial
    expected[2:, 2:] = 1j * spatial
    np.testing.assert_allclose(A, expected, atol=1e-15)
    # frozen values
    np.testing.assert_allclose(A[0], [0.5, -0.5, 0, 0], atol=1e-15)
    np.testing.assert_allclose(A[3], [0, 0, -0.5j, 0.5j], atol=1e-15)


@given(angles, st.integers(-3, 3), st.floats(-0.5, 0.49), st.integers(0, 2**32 - 1))
def test_build_A_is_contraction(theta, r, f, seed):
    g = ArrayGeometry(3, 2, 4)
    gen = np.random.default_rng(seed)
    s = gen.standard_normal(12) + 1j * gen.standard_normal(12)
    A = build_A(Scatterer(theta, r, 0.0), f, g)
    assert np.linalg.norm(A @ s) <= np.linalg.norm(s) * (1 + 1e-12)


def test_build_A_static_is_block_diagonal():
    g = ArrayGeometry(2, 3, 4)
    theta = 0.4
    A = build_A(Scatterer(theta, 0, 0.0), 0.0, g)
    block = np.outer(steer_rx(theta, 3), steer_tx(theta, 2))
    np.testing.assert_allclose(A, np.kron(np.eye(4), block), atol=1e-15)


def test_geometry_validation():
    with pytest.raises(ValueError):
        ArrayGeometry(0, 1, 1)
    with pytest.raises(ValueError):
        ArrayGeometry(1, 1, 10**6)


def test_scenario_rejects_delay_without_overlap():
    g = ArrayGeometry(1, 1, 3)
    with pytest.raises(ValueError):
        Scenario(g, Scatterer(0, 0, 0, ScattererKind.TARGET), (Scatterer(0, 3, 0),),
                 DopplerGrid((0.0,)), NoiseModel(0, 0))


def test_doppler_grid_validation():
    with pytest.raises(ValueError):
        DopplerGrid(())
    with pytest.raises(ValueError):
        DopplerGrid((0.1, 0.0))
    with pytest.raises(ValueError):
        DopplerGrid((0.5,))
    assert DopplerGrid.uniform(4).values == (-0.5, -0.25, 0.0, 0.25)


def test_affine_clutter_doppler_wraps():
    model = ClutterDopplerModel(ClutterDopplerMode.AFFINE, ((2.0, 0.3),))
    assert model.frequency(0, 0.2) == pytest.approx(wrap_doppler(0.7))
    assert -0.5 <= model.frequency(0, 0.2) < 0.5
    assert ClutterDopplerModel().frequency(0, 0.3) == 0.0


def test_dbm_conversion():
    assert dbm_to_linear(0.0) == 1.0
    assert dbm_to_linear(-90.0) == pytest.approx(1e-9)
    assert Scatterer(0, 0, 15.0).power == pytest.approx(10**1.5)
