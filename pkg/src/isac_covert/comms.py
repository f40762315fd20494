"""QPSK symbols, phase-distortion audit and Monte-Carlo symbol error rate at Bob."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from . import rng as _rng

SER_SCHEMA = "isac-ser/1"
MIN_SER_TRIALS = 1000

# Gray order: index k <-> phase pi/4 + k pi/2
_GRAY_BITS = ((0, 0), (0, 1), (1, 1), (1, 0))
_INDEX_OF_BITS = {b: k for k, b in enumerate(_GRAY_BITS)}
CONSTELLATION = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))


def qpsk_map(bits) -> complex:
    """Map a bit pair to its Gray-coded unit QPSK point."""
    key = tuple(int(b) for b in bits)
    if key not in _INDEX_OF_BITS:
        raise ValueError(f"bits must be a pair from {{0, 1}}, got {bits!r}")
    return complex(CONSTELLATION[_INDEX_OF_BITS[key]])


def qpsk_index(y) -> np.ndarray:
    """Decision region index of each sample.

    Region k covers phases in ``(k pi/2, (k+1) pi/2]``; phase 0 (and y = 0)
    belong to region 0, so boundaries resolve toward the smaller index.
    """
    theta = np.mod(np.angle(np.asarray(y, dtype=complex)), 2 * np.pi)
    k = np.ceil(theta / (np.pi / 2)).astype(int) - 1
    return np.clip(k, 0, 3)


def qpsk_demap(y) -> tuple[int, int]:
    return _GRAY_BITS[int(qpsk_index(y))]


@dataclass(frozen=True)
class SymbolFrame:
    bits: np.ndarray  # shape (L, 2)
    symbols: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=int).reshape(-1, 2)
        syms = np.asarray(self.symbols, dtype=complex)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "symbols", syms)
        if len(bits) != len(syms):
            raise ValueError("one bit pair per symbol")
        if not np.allclose(syms, [qpsk_map(b) for b in bits], atol=1e-12):
            raise ValueError("symbols do not match their bits")

    def __len__(self):
        return len(self.symbols)

    @property
    def indices(self) -> np.ndarray:
        return np.array([_INDEX_OF_BITS[tuple(b)] for b in self.bits])

    @classmethod
    def from_bits(cls, bits) -> "SymbolFrame":
        bits = np.asarray(bits, dtype=int).reshape(-1, 2)
        return cls(bits, np.array([qpsk_map(b) for b in bits]))

    @classmethod
    def from_bitstring(cls, text: str) -> "SymbolFrame":
        clean = "".join(text.split())
        if len(clean) % 2 or set(clean) - {"0", "1"}:
            raise ValueError("bit string must hold an even number of 0/1 characters")
        return cls.from_bits([int(c) for c in clean])

    @classmethod
    def random(cls, length: int, seed: int, key: int = 0) -> "SymbolFrame":
        gen = _rng.stream(seed, 0xB175, key)
        return cls.from_bits(gen.integers(0, 2, (length, 2)))


def phase_error(s, d) -> tuple[np.ndarray, float]:
    """Per-element ``|wrap(arg s - arg d)|`` with wrap into (-pi, pi], and its maximum."""
    s = np.asarray(s, dtype=complex)
    d = np.asarray(d, dtype=complex)
    if s.shape != d.shape:
        raise ValueError("waveform and symbols differ in length")
    err = np.abs(np.angle(s * np.conj(d)))
    return err, float(err.max(initial=0.0))


@dataclass(frozen=True)
class SERResult:
    ser: float
    std_error: float
    errors: int
    trials: int


def simulate_ser(s, d, snr_db: float, trials: int, rng_seed: int, chunk: int = 512) -> SERResult:
    """SER of per-element detection of ``s + n`` against the symbols ``d``.

    Noise variance is ``mean|s|^2 / 10^(snr_db/10)``; ``snr_db = inf`` is noiseless.
    """
    s = np.asarray(s, dtype=complex)
    frame = d if isinstance(d, SymbolFrame) else None
    ref = qpsk_index(frame.symbols if frame else np.asarray(d, dtype=complex))
    if len(ref) != len(s):
        raise ValueError("waveform and symbols differ in length")
    if trials < MIN_SER_TRIALS:
        raise ValueError(f"need at least {MIN_SER_TRIALS} trials")
    variance = float(np.mean(np.abs(s) ** 2)) / 10.0 ** (snr_db / 10.0)
    errors = 0
    for idx, count in _rng.chunks(trials, chunk):
        gen = _rng.stream(rng_seed, 0x5E4, idx)
        noise = _rng.complex_normal(gen, (count, len(s)), variance) if variance > 0 else 0.0
        errors += int(np.count_nonzero(qpsk_index(s[None, :] + noise) != ref[None, :]))
    total = trials * len(s)
    p = errors / total
    return SERResult(p, math.sqrt(p * (1 - p) / total), errors, trials)


def qpsk_ser_closed_form(snr_db: float) -> float:
    """``1 - (1 - Q(sqrt(snr)))^2`` for unit QPSK at per-symbol SNR ``snr``."""
    p = norm.sf(math.sqrt(10.0 ** (snr_db / 10.0)))
    return 1.0 - (1.0 - p) ** 2


def ser_csv(rows: Sequence[tuple[float, float, float, SERResult]]) -> str:
    """Rows of ``(xi, eps, snr_db, result)``."""
    out = io.StringIO()
    out.write(f"# {SER_SCHEMA}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["xi", "eps", "snr_db", "ser", "se", "trials"])
    for xi, eps, snr, r in rows:
        w.writerow([repr(float(xi)), repr(float(eps)), repr(float(snr)), repr(float(r.ser)),
                    repr(float(r.std_error)), r.trials])
    return out.getvalue()
