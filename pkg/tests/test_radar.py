import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import eigh

from isac_covert import radar, rng
from isac_covert.scenario import (
    ArrayGeometry,
    DopplerGrid,
    NoiseModel,
    Scatterer,
    ScattererKind,
    Scenario,
)

from conftest import desk_scenario, random_waveform


def _oracle_A(theta, delay, f, nt, nr, N):
    """Space-time response written entry by entry from the slot model."""
    A = np.zeros((nr * N, nt * N), dtype=complex)
    for n in range(N):
        src = n - delay
        if not 0 <= src < N:
            continue
        for i in range(nr):
            for j in range(nt):
                A[n * nr + i, src * nt + j] = (
                    np.exp(2j * np.pi * n * f)
                    * np.exp(-1j * np.pi * (i + j) * np.sin(theta))
                    / np.sqrt(nt * nr)
                )
    return A


def _oracle_scnr(s, w, f0, sc):
    g = sc.geometry
    dims = (g.num_tx, g.num_rx, g.num_slots)
    A0 = _oracle_A(sc.target.angle, sc.target.delay, f0, *dims)
    psi = np.zeros((g.rx_dim, g.rx_dim), dtype=complex)
    for k, c in enumerate(sc.clutters):
        e = _oracle_A(c.angle, c.delay, sc.clutter_doppler_at(k, f0), *dims) @ s
        psi += (c.power / sc.noise.radar_noise) * np.outer(e, e.conj())
    num = abs(np.vdot(w, A0 @ s)) ** 2 * sc.target.power
    den = sc.noise.radar_noise * np.vdot(w, (psi + np.eye(g.rx_dim)) @ w).real
    return num / den


def _small(seed, nt=2, nr=2, N=4, K=2, f0=None):
    gen = rng.stream(seed, 77)
    clutter = tuple(
        Scatterer(gen.uniform(-1.5, 1.5), int(gen.integers(-N + 1, N)), gen.uniform(0, 20))
        for _ in range(K)
    )
    f0 = gen.uniform(-0.5, 0.5) if f0 is None else f0
    sc = Scenario(
        ArrayGeometry(nt, nr, N),
        Scatterer(gen.uniform(-1.5, 1.5), 0, gen.uniform(0, 20), ScattererKind.TARGET),
        clutter,
        DopplerGrid((f0,)),
        NoiseModel(gen.uniform(-10, 0), 0.0),
    )
    return sc, f0, random_waveform(gen, nt * N), gen


def test_clutter_covariance_trivial_cases():
    sc, f0, s, _ = _small(0, K=0)
    assert not np.any(radar.clutter_covariance(s, f0, sc))
    sc1 = Scenario(sc.geometry, sc.target, (Scatterer(0.2, 1, 0.0),), sc.doppler_grid,
                   NoiseModel(0.0, 0.0))
    psi = radar.clutter_covariance(s, f0, sc1)
    e = sc1.clutter_matrices(f0)[0] @ s
    assert np.linalg.matrix_rank(psi, tol=1e-9) == 1
    assert np.trace(psi).real == pytest.approx(np.vdot(e, e).real, rel=1e-12)


def test_clutter_covariance_trace_reference_scenario():
    sc = desk_scenario(geometry=(8, 8, 32))
    s = random_waveform(rng.stream(5), 256)
    psi = radar.clutter_covariance(s, 0.0, sc)
    expect = sum(q * np.linalg.norm(A @ s) ** 2
                 for q, A in zip(sc.clutter_to_noise, sc.clutter_matrices(0.0)))
    assert abs(np.trace(psi).real - expect) <= 1e-10 * expect


@given(st.integers(0, 2**32 - 1))
def test_clutter_covariance_psd(seed):
    sc, f0, s, _ = _small(seed, K=3)
    psi = radar.clutter_covariance(s, f0, sc)
    np.testing.assert_allclose(psi, psi.conj().T, atol=1e-12 * np.abs(psi).max())
    assert np.linalg.eigvalsh(psi).min() >= -1e-10 * max(1.0, np.abs(psi).max())


def test_scnr_zero_for_orthogonal_filter():
    sc, f0, s, gen = _small(1)
    b = sc.target_matrix(f0) @ s
    w = random_waveform(gen, len(b))
    w -= np.vdot(b, w) / np.vdot(b, b) * b
    assert radar.scnr(s, w, f0, sc) == pytest.approx(0.0, abs=1e-20)


def test_scnr_matched_clutter_free():
    g = ArrayGeometry(1, 1, 8)
    sc = Scenario(g, Scatterer(0, 0, 3.0, ScattererKind.TARGET), (), DopplerGrid((0.0,)),
                  NoiseModel(-7.0, 0.0))
    s = random_waveform(rng.stream(2), 8)
    assert radar.scnr(s, s, 0.0, sc) == pytest.approx(
        10 ** 1.0 * np.vdot(s, s).real, rel=1e-12)


def test_scnr_rejects_zero_filter():
    sc, f0, s, _ = _small(3)
    with pytest.raises(ValueError):
        radar.scnr(s, np.zeros(sc.geometry.rx_dim), f0, sc)


@pytest.mark.parametrize("seed", range(3))
def test_scnr_matches_independent_evaluator(seed):
    sc = desk_scenario(grid=(0.1,), geometry=(4, 4, 8))
    gen = rng.stream(seed, 9)
    s = random_waveform(gen, sc.geometry.tx_dim)
    w = random_waveform(gen, sc.geometry.rx_dim)
    assert radar.scnr(s, w, 0.1, sc) == pytest.approx(_oracle_scnr(s, w, 0.1, sc), rel=1e-10)


def test_optimal_filter_clutter_free_is_matched():
    sc, f0, s, _ = _small(4, K=0)
    b = sc.target_matrix(f0) @ s
    np.testing.assert_allclose(radar.optimal_filter(s, f0, sc), b / np.vdot(b, b).real,
                               rtol=1e-12, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_optimal_filter_distortionless(seed):
    sc, f0, s, _ = _small(seed)
    w = radar.optimal_filter(s, f0, sc)
    assert abs(np.vdot(w, sc.target_matrix(f0) @ s) - 1.0) <= 1e-12


@pytest.mark.parametrize("seed", range(10))
def test_optimal_filter_matches_generalized_eigenvalue(seed):
    sc, f0, s, _ = _small(seed)
    b = sc.target_matrix(f0) @ s
    R = radar.clutter_covariance(s, f0, sc) + np.eye(sc.geometry.rx_dim)
    lam = eigh(sc.target_snr * np.outer(b, b.conj()), R, eigvals_only=True)[-1]
    val = radar.scnr(s, radar.optimal_filter(s, f0, sc), f0, sc)
    assert abs(val - lam) <= 1e-8 * lam


def test_optimal_filter_rejects_unobservable_target():
    sc, f0, _, _ = _small(5)
    with pytest.raises(ValueError):
        radar.optimal_filter(np.zeros(sc.geometry.tx_dim), f0, sc)


@given(st.integers(0, 2**32 - 1))
def test_optimal_filter_beats_random_filters(seed):
    sc, f0, s, gen = _small(seed, nt=2, nr=2, N=3, K=2)
    best = radar.scnr(s, radar.optimal_filter(s, f0, sc), f0, sc)
    W = random_waveform(gen, (200, sc.geometry.rx_dim))
    assert all(radar.scnr(s, w, f0, sc) <= best * (1 + 1e-10) for w in W)


@given(st.integers(0, 2**32 - 1), st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_scnr_scale_invariant(seed, c):
    sc, f0, s, gen = _small(seed)
    w = random_waveform(gen, sc.geometry.rx_dim)
    assert radar.scnr(s, c * w, f0, sc) == pytest.approx(radar.scnr(s, w, f0, sc), rel=1e-9)


def test_q_matrix_clutter_free():
    sc, f0, s, _ = _small(6, K=0)
    A0 = sc.target_matrix(f0)
    np.testing.assert_allclose(radar.q_matrix(s, f0, sc), A0.conj().T @ A0, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_q_matrix_hermitian_and_consistent(seed):
    sc, f0, s, _ = _small(seed, K=3)
    Q = radar.q_matrix(s, f0, sc)
    assert np.linalg.norm(Q - Q.conj().T) <= 1e-12
    lhs = sc.target_snr * np.vdot(s, Q @ s).real
    rhs = radar.scnr(s, radar.optimal_filter(s, f0, sc), f0, sc)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_q_matrix_high_clutter_power_keeps_precision():
    # q_k ~ 3e10 here; compare against a 50-digit evaluation of b^H (Psi + I)^{-1} b
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 50
    sc = desk_scenario(geometry=(2, 2, 4))
    s = random_waveform(rng.stream(11), 8)
    Q = radar.q_matrix(s, 0.0, sc)
    b = sc.target_matrix(0.0) @ s
    R = mp.eye(8)
    for q, A in zip(sc.clutter_to_noise, sc.clutter_matrices(0.0)):
        e = mp.matrix([mp.mpc(z.real, z.imag) for z in A @ s])
        R += mp.mpf(q) * e * e.H
    bm = mp.matrix([mp.mpc(z.real, z.imag) for z in b])
    exact = float(mp.re((bm.H * mp.lu_solve(R, bm))[0]))
    assert np.vdot(s, Q @ s).real == pytest.approx(exact, rel=1e-6)


def test_worst_case_scnr_min_and_tie_break():
    sc = desk_scenario(grid=(-0.1, 0.0, 0.1), geometry=(2, 2, 4))
    s = random_waveform(rng.stream(12), 8)
    bank = radar.filter_bank(s, sc)
    prof = radar.scnr_profile(s, bank, sc)
    worst, arg = radar.worst_case_scnr(s, bank, sc)
    assert worst == prof.min()
    assert arg == sc.doppler_grid.values[int(np.argmin(prof))]
    single = desk_scenario(grid=(0.0,), geometry=(2, 2, 4))
    val, f = radar.worst_case_scnr(s, radar.filter_bank(s, single), single)
    assert f == 0.0 and val == pytest.approx(radar.scnr(s, bank[0.0], 0.0, sc))


def test_worst_case_scnr_hand_set_filters():
    # hand-set filters that give 3 dB and 5 dB
    sc = desk_scenario(grid=(0.0, 0.2), geometry=(1, 1, 4))
    sc = Scenario(sc.geometry, sc.target, (), sc.doppler_grid, NoiseModel(15.0, 0.0))
    s = np.ones(4, dtype=complex)
    bank = {}
    for f0, db in ((0.0, 5.0), (0.2, 3.0)):
        b = sc.target_matrix(f0) @ s
        # scnr of w = b + c u with u orthogonal to b is 4 * 4/(4 + |c|^2 * 4) (unit target SNR)
        u = np.array([1, -1, 1, -1]) * np.conj(b) / np.abs(b)
        u = u - np.vdot(b, u) / np.vdot(b, b) * b
        target = 10 ** (db / 10)
        c = math.sqrt(max(np.vdot(b, b).real / target - 1.0, 0.0) * np.vdot(b, b).real
                      / np.vdot(u, u).real)
        bank[f0] = b + c * u
    fb = radar.FilterBank(bank)
    worst, arg = radar.worst_case_scnr(s, fb, sc)
    assert radar.to_db(worst) == pytest.approx(3.0, abs=1e-9)
    assert arg == 0.2


def test_echo_clutter_free_matched_value():
    g = ArrayGeometry(1, 1, 8)
    sc = Scenario(g, Scatterer(0, 0, 0.0, ScattererKind.TARGET), (), DopplerGrid((0.0,)),
                  NoiseModel(0.0, 0.0))
    s = np.ones(8, dtype=complex)
    est = radar.synthesize_echo(s, 0.0, sc, 100_000, 3)
    assert abs(est.scnr - 8.0) <= 3 * est.std_error


def test_echo_noiseless_sentinel():
    g = ArrayGeometry(1, 1, 4)
    sc = Scenario(g, Scatterer(0, 0, 0.0, ScattererKind.TARGET), (), DopplerGrid((0.0,)),
                  NoiseModel(-400.0, 0.0))
    est = radar.synthesize_echo(np.ones(4, dtype=complex), 0.0, sc, 1000, 3)
    assert est.scnr == radar.SCNR_CAP


def test_echo_matches_analytic_desk_scale():
    sc = desk_scenario(grid=(0.05,))
    s = random_waveform(rng.stream(13), 64)
    w = radar.optimal_filter(s, 0.05, sc)
    est = radar.synthesize_echo(s, 0.05, sc, 100_000, 21, w=w)
    assert abs(est.scnr - radar.scnr(s, w, 0.05, sc)) <= 3 * est.std_error


def test_echo_is_schedule_independent():
    sc = desk_scenario(geometry=(2, 2, 4))
    s = random_waveform(rng.stream(14), 8)
    a = radar.synthesize_echo(s, 0.0, sc, 5000, 8, chunk=1000)
    b = radar.synthesize_echo(s, 0.0, sc, 5000, 8, chunk=1000)
    assert a == b
