"""Sensing quantities: clutter covariance, SCNR, optimal receive filters."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import rng as _rng
from .scenario import Scenario, steer_rx, steer_tx

log = logging.getLogger(__name__)

# returned by the echo oracle when the interference power vanishes
SCNR_CAP = 1e30


def to_db(x):
    return 10.0 * np.log10(x)


def check_waveform(s: np.ndarray, scenario: Scenario) -> np.ndarray:
    s = np.asarray(s, dtype=complex)
    if s.shape != (scenario.geometry.tx_dim,):
        raise ValueError(f"waveform must have shape ({scenario.geometry.tx_dim},), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("waveform has non-finite entries")
    return s


def clutter_echoes(s: np.ndarray, f0: float, scenario: Scenario) -> np.ndarray:
    """Columns A_k(f0) s, one per clutter."""
    mats = scenario.clutter_matrices(f0)
    if not mats:
        return np.zeros((scenario.geometry.rx_dim, 0), dtype=complex)
    return np.column_stack([A @ s for A in mats])


def clutter_covariance(s, f0: float, scenario: Scenario) -> np.ndarray:
    s = check_waveform(s, scenario)
    C = clutter_echoes(s, f0, scenario)
    psi = (C * scenario.clutter_to_noise) @ C.conj().T
    return 0.5 * (psi + psi.conj().T)


def interference_solver(s, f0: float, scenario: Scenario) -> Callable[[np.ndarray], np.ndarray]:
    """Return a function applying (Psi(s, f0) + I)^{-1}.

    Psi is rank <= K, so the inverse is applied through the Woodbury identity
    with a Cholesky factor of the K x K matrix diag(1/q) + C^H C. This keeps
    full precision when q_k is huge, where a dense Cholesky of Psi + I would
    lose most of its digits.
    """
    C = clutter_echoes(s, f0, scenario)
    q = scenario.clutter_to_noise
    keep = (q > 0) & (np.linalg.norm(C, axis=0) > 0)
    C, q = C[:, keep], q[keep]
    if C.shape[1] == 0:
        return lambda B: np.array(B, dtype=complex, copy=True)
    cap = np.diag(1.0 / q) + C.conj().T @ C
    cap = 0.5 * (cap + cap.conj().T)
    try:
        factor = cho_factor(cap, lower=True)
    except LinAlgError:
        log.warning("capacitance matrix not positive definite, using dense factorization")
        full = cho_factor(np.eye(C.shape[0]) + (C * q) @ C.conj().T, lower=True)
        return lambda B: cho_solve(full, B)

    def apply(B):
        return B - C @ cho_solve(factor, C.conj().T @ B)

    return apply


def scnr(s, w, f0: float, scenario: Scenario) -> float:
    """Output SCNR (linear) of filter ``w`` for waveform ``s`` at Doppler ``f0``."""
    s = check_waveform(s, scenario)
    w = np.asarray(w, dtype=complex)
    wnorm2 = float(np.vdot(w, w).real)
    if wnorm2 == 0.0:
        raise ValueError("receive filter must be nonzero")
    signal = abs(np.vdot(w, scenario.target_matrix(f0) @ s)) ** 2 * scenario.target.power
    C = clutter_echoes(s, f0, scenario)
    clutter = float(np.sum(scenario.clutter_to_noise * np.abs(w.conj() @ C) ** 2))
    return float(signal / (scenario.noise.radar_noise * (clutter + wnorm2)))


def optimal_filter(s, f0: float, scenario: Scenario) -> np.ndarray:
    """Distortionless filter (Psi + I)^{-1} A0 s / (s^H A0^H (Psi + I)^{-1} A0 s)."""
    s = check_waveform(s, scenario)
    b = scenario.target_matrix(f0) @ s
    if not np.any(b):
        raise ValueError("target response A0 s is zero; target unobservable")
    y = interference_solver(s, f0, scenario)(b)
    return y / np.vdot(b, y).real


def q_matrix(s, f0: float, scenario: Scenario) -> np.ndarray:
    """A0^H (Psi + I)^{-1} A0, Hermitian-symmetrized."""
    s = check_waveform(s, scenario)
    A0 = scenario.target_matrix(f0)
    Q = A0.conj().T @ interference_solver(s, f0, scenario)(A0)
    return 0.5 * (Q + Q.conj().T)


@dataclass(frozen=True)
class FilterBank:
    filters: Mapping[float, np.ndarray]

    def __getitem__(self, f0: float) -> np.ndarray:
        return self.filters[f0]

    def __len__(self):
        return len(self.filters)

    @property
    def grid(self) -> tuple[float, ...]:
        return tuple(sorted(self.filters))


def filter_bank(s, scenario: Scenario) -> FilterBank:
    return FilterBank({f0: optimal_filter(s, f0, scenario) for f0 in scenario.doppler_grid})


def worst_case_scnr(s, bank: FilterBank, scenario: Scenario) -> tuple[float, float]:
    """Minimum SCNR over the Doppler grid and its argmin (smallest f0 on ties)."""
    missing = [f for f in scenario.doppler_grid if f not in bank.filters]
    if missing:
        raise ValueError(f"filter bank lacks Doppler points {missing}")
    best, arg = np.inf, None
    for f0 in scenario.doppler_grid:
        value = scnr(s, bank[f0], f0, scenario)
        if value < best:
            best, arg = value, f0
    return best, arg


def scnr_profile(s, bank: FilterBank, scenario: Scenario) -> np.ndarray:
    return np.array([scnr(s, bank[f0], f0, scenario) for f0 in scenario.doppler_grid])


@dataclass(frozen=True)
class EchoEstimate:
    scnr: float
    std_error: float
    draws: int


def _delayed_slots(S: np.ndarray, delay: int) -> np.ndarray:
    """Rows s(n - delay), zero where the index leaves the frame."""
    out = np.zeros_like(S)
    N = S.shape[0]
    if delay >= 0:
        out[delay:] = S[: N - delay]
    else:
        out[: N + delay] = S[-delay:]
    return out


def _slot_echo(S, angle, delay, f, num_rx, num_tx):
    # x(n) = a_r(theta) a_t(theta)^T s(n - r) exp(j 2 pi n f), n = 1..N
    N = S.shape[0]
    gains = _delayed_slots(S, delay) @ steer_tx(angle, num_tx)
    phase = np.exp(2j * np.pi * np.arange(1, N + 1) * f)
    return np.outer(gains * phase, steer_rx(angle, num_rx)).reshape(-1)


def synthesize_echo(
    s,
    f0: float,
    scenario: Scenario,
    draws: int,
    rng_seed: int,
    w=None,
    chunk: int = 4096,
) -> EchoEstimate:
    """Monte-Carlo SCNR: synthesize slot-wise echoes, filter, take the power ratio.

    The echo is built directly from the per-slot model (random target and
    clutter amplitudes plus receiver noise), not from the stacked A matrices,
    so it independently checks the analytic SCNR.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    s = check_waveform(s, scenario)
    g = scenario.geometry
    if w is None:
        w = optimal_filter(s, f0, scenario)
    w = np.asarray(w, dtype=complex)
    S = s.reshape(g.num_slots, g.num_tx)
    tgt = scenario.target
    t_vec = _slot_echo(S, tgt.angle, tgt.delay, f0, g.num_rx, g.num_tx)
    c_vecs = np.array(
        [
            _slot_echo(S, c.angle, c.delay, scenario.clutter_doppler_at(k, f0), g.num_rx, g.num_tx)
            for k, c in enumerate(scenario.clutters)
        ]
    ).reshape(len(scenario.clutters), g.rx_dim)
    c_pow = np.array([c.power for c in scenario.clutters])
    sigma_v2 = scenario.noise.radar_noise

    sums = np.zeros(5)  # T, I, T^2, I^2, T*I
    for idx, count in _rng.chunks(draws, chunk):
        gen = _rng.stream(rng_seed, idx)
        a0 = _rng.complex_normal(gen, count, tgt.power)
        ak = _rng.complex_normal(gen, (count, len(c_pow))) * np.sqrt(c_pow)
        v = _rng.complex_normal(gen, (count, g.rx_dim), sigma_v2)
        x_target = a0[:, None] * t_vec[None, :]
        x = x_target + ak @ c_vecs + v
        y = x @ w.conj()
        y_t = x_target @ w.conj()
        T = np.abs(y_t) ** 2
        I = np.abs(y - y_t) ** 2
        sums += [T.sum(), I.sum(), (T * T).sum(), (I * I).sum(), (T * I).sum()]

    n = float(draws)
    mt, mi = sums[0] / n, sums[1] / n
    if mi <= 0.0 or mt / mi >= SCNR_CAP:
        return EchoEstimate(SCNR_CAP, 0.0, draws)
    vt = sums[2] / n - mt**2
    vi = sums[3] / n - mi**2
    cov = sums[4] / n - mt * mi
    ratio = mt / mi
    rel_var = (vt / mt**2 + vi / mi**2 - 2 * cov / (mt * mi)) / n if mt > 0 else 0.0
    return EchoEstimate(float(ratio), float(ratio * np.sqrt(max(rel_var, 0.0))), draws)
