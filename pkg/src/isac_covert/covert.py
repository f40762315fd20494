"""Warden-side detection theory and its Monte-Carlo oracles.

Willie observes ``y = H s_r + n_w`` (hypothesis H1, codeword drawn uniformly)
or ``y = n_w`` (H0), with ``(H s)_n = h^T s(n)`` and ``n_w ~ CN(0, sigma_w^2 I)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import rng as _rng
from .scenario import ArrayGeometry, dbm_to_linear

MAX_CODEBOOK = 4096
MIN_KL_SAMPLES = 10_000
AUDIT_SCHEMA = "isac-covert-audit/1"
_CHUNK = 2048


@dataclass(frozen=True)
class WardenChannel:
    h: np.ndarray
    noise: float  # sigma_w^2, linear

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.h, dtype=complex))
        object.__setattr__(self, "h", h)
        if not np.all(np.isfinite(h)):
            raise ValueError("warden channel must be finite")
        if not (self.noise > 0 and math.isfinite(self.noise)):
            raise ValueError("warden noise power must be positive")

    @classmethod
    def rayleigh(cls, num_tx: int, path_gain_db: float, noise_dbm: float, seed: int, key=0):
        """Quasi-static Rayleigh draw ``h ~ CN(0, g I)`` with ``g = 10^(path_gain_db/10)``."""
        gen = _rng.stream(seed, 0x57A4D, key)
        h = _rng.complex_normal(gen, num_tx, 10.0 ** (path_gain_db / 10.0))
        return cls(h, dbm_to_linear(noise_dbm))


@dataclass(frozen=True)
class Codebook:
    """Equiprobable waveforms ``s_r`` (rows)."""

    waveforms: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.waveforms, dtype=complex)
        if W.ndim == 1:
            W = W[None, :]
        if W.ndim != 2 or W.shape[0] == 0:
            raise ValueError("codebook must hold at least one waveform")
        object.__setattr__(self, "waveforms", W)

    def __len__(self):
        return self.waveforms.shape[0]

    @classmethod
    def from_list(cls, waveforms: Sequence[np.ndarray]) -> "Codebook":
        lengths = {len(w) for w in waveforms}
        if len(lengths) > 1:
            raise ValueError("codebook waveforms must have equal length")
        return cls(np.array(waveforms, dtype=complex))

    @classmethod
    def qpsk(cls, length: int) -> "Codebook":
        """All 4^length QPSK frames (enumerable only for length <= 6)."""
        if 4**length > MAX_CODEBOOK:
            raise ValueError(f"4^{length} codewords exceed the enumeration cap {MAX_CODEBOOK}")
        points = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
        return cls(np.array([points[list(k)] for k in product(range(4), repeat=length)]))


def lift_channel(h, geometry: ArrayGeometry):
    """Operator ``s -> H s`` with ``(H s)_n = h^T s(n)``, without forming H."""
    h = np.asarray(h, dtype=complex)
    if h.shape != (geometry.num_tx,):
        raise ValueError(f"channel must have {geometry.num_tx} entries")

    def apply(s):
        s = np.asarray(s, dtype=complex)
        return s.reshape(*s.shape[:-1], geometry.num_slots, geometry.num_tx) @ h

    return apply


def _means(codebook: Codebook, channel: WardenChannel) -> np.ndarray:
    W = codebook.waveforms
    nt = len(channel.h)
    if W.shape[1] % nt:
        raise ValueError("waveform length is not a multiple of the channel length")
    return W.reshape(W.shape[0], -1, nt) @ channel.h


def covert_lhs(s, channel: WardenChannel) -> float:
    """``||H s||^2 / sigma_w^2``; compare with ``2 eps^2``."""
    return float(np.sum(np.abs(_means(Codebook(s), channel)) ** 2) / channel.noise)


def kl_upper_bound(codebook: Codebook, channel: WardenChannel) -> float:
    """Log-sum bound: the average over codewords of ``||H s_r||^2 / sigma_w^2``."""
    mu = _means(codebook, channel)
    return float(np.mean(np.sum(np.abs(mu) ** 2, axis=1)) / channel.noise)


def deb_lower_bound(kl: float) -> float:
    """``1 - sqrt(kl / 2)``."""
    if kl < 0:
        raise ValueError("KL divergence must be nonnegative")
    return 1.0 - math.sqrt(kl / 2.0)


def pinsker_floor(kl: float) -> float:
    """Equal-prior minimum error bound ``1/2 - sqrt(kl / 8)``."""
    if kl < 0:
        raise ValueError("KL divergence must be nonnegative")
    return 0.5 - math.sqrt(kl / 8.0)


def _check_enumerable(codebook: Codebook):
    if len(codebook) > MAX_CODEBOOK:
        raise ValueError(f"codebook of {len(codebook)} entries exceeds the cap {MAX_CODEBOOK}")


def _llr(y: np.ndarray, mu: np.ndarray, noise: float) -> np.ndarray:
    """log f1(y) - log f0(y) for rows of ``y``, via log-sum-exp over codewords."""
    cross = (y @ mu.conj().T).real
    mu2 = np.sum(np.abs(mu) ** 2, axis=1)
    # (||y||^2 - ||y - mu_r||^2) / noise; the ||y||^2 terms cancel
    expo = (2.0 * cross - mu2[None, :]) / noise
    return logsumexp(expo, axis=1) - math.log(mu.shape[0])


def _draw(gen, mu, noise, count, under_h1: bool):
    y = _rng.complex_normal(gen, (count, mu.shape[1]), noise)
    if under_h1:
        y += mu[gen.integers(0, mu.shape[0], count)]
    return y


@dataclass(frozen=True)
class MCEstimate:
    value: float
    std_error: float
    samples: int


def kl_exact_mc(codebook: Codebook, channel: WardenChannel, samples: int, rng_seed: int) -> MCEstimate:
    """Monte-Carlo ``D(P1 || P0)`` from the mean log-likelihood ratio under P1."""
    _check_enumerable(codebook)
    if samples < MIN_KL_SAMPLES:
        raise ValueError(f"need at least {MIN_KL_SAMPLES} samples")
    mu = _means(codebook, channel)
    total = total2 = 0.0
    for idx, count in _rng.chunks(samples, _CHUNK):
        gen = _rng.stream(rng_seed, 0x4B1, idx)
        llr = _llr(_draw(gen, mu, channel.noise, count, True), mu, channel.noise)
        total += llr.sum()
        total2 += (llr * llr).sum()
    mean = total / samples
    var = max(total2 / samples - mean**2, 0.0)
    return MCEstimate(float(mean), float(math.sqrt(var / samples)), samples)


@dataclass(frozen=True)
class WillieResult:
    error: float
    std_error: float
    false_alarm: float
    missed_detection: float
    trials: int


def simulate_willie(
    codebook: Codebook, channel: WardenChannel, trials: int, rng_seed: int
) -> WillieResult:
    """Empirical error of the equal-prior likelihood-ratio test (decide H1 iff LLR > 0)."""
    _check_enumerable(codebook)
    if trials < 1:
        raise ValueError("trials must be positive")
    mu = _means(codebook, channel)
    fa = md = 0
    for idx, count in _rng.chunks(trials, _CHUNK):
        g0 = _rng.stream(rng_seed, 0x4B0, idx)
        g1 = _rng.stream(rng_seed, 0x4B2, idx)
        fa += int(np.sum(_llr(_draw(g0, mu, channel.noise, count, False), mu, channel.noise) > 0))
        md += int(np.sum(_llr(_draw(g1, mu, channel.noise, count, True), mu, channel.noise) <= 0))
    p_fa, p_md = fa / trials, md / trials
    se = 0.5 * math.sqrt((p_fa * (1 - p_fa) + p_md * (1 - p_md)) / trials)
    return WillieResult(0.5 * (p_fa + p_md), se, p_fa, p_md, trials)


@dataclass(frozen=True)
class CovertAuditRow:
    codebook_id: str
    kl_bound: float
    kl_mc: float
    kl_mc_se: float
    lrt_error: float
    pinsker_floor: float


def audit_codebook(
    codebook_id: str,
    codebook: Codebook,
    channel: WardenChannel,
    samples: int,
    trials: int,
    rng_seed: int,
) -> CovertAuditRow:
    kl = kl_exact_mc(codebook, channel, samples, rng_seed)
    willie = simulate_willie(codebook, channel, trials, rng_seed)
    return CovertAuditRow(
        codebook_id,
        kl_upper_bound(codebook, channel),
        kl.value,
        kl.std_error,
        willie.error,
        pinsker_floor(max(kl.value, 0.0)),
    )


def audit_csv(rows: Sequence[CovertAuditRow]) -> str:
    out = io.StringIO()
    out.write(f"# {AUDIT_SCHEMA}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["codebook_id", "kl_bound", "kl_mc", "kl_mc_se", "lrt_error", "pinsker_floor"])
    for r in rows:
        w.writerow(
            [r.codebook_id, repr(float(r.kl_bound)), repr(float(r.kl_mc)), repr(float(r.kl_mc_se)),
             repr(float(r.lrt_error)), repr(float(r.pinsker_floor))]
        )
    return out.getvalue()
