"""Physical scenario and the structured matrices of the MIMO echo model.

The transmit waveform is stacked slot-major: element ``n * num_tx + t`` is the
sample of antenna ``t`` in slot ``n`` (both zero-based here).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

# dense N*N_T x N*N_T matrices are formed per Doppler point; keep them sane
MAX_STACKED_DIM = 4096


def dbm_to_linear(dbm: float) -> float:
    """Power in milliwatts."""
    return 10.0 ** (dbm / 10.0)


def wrap_doppler(f: float) -> float:
    """Wrap a normalized frequency into [-0.5, 0.5)."""
    return (f + 0.5) % 1.0 - 0.5


@dataclass(frozen=True)
class ArrayGeometry:
    num_tx: int
    num_rx: int
    num_slots: int

    def __post_init__(self):
        for name in ("num_tx", "num_rx", "num_slots"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.tx_dim > MAX_STACKED_DIM or self.rx_dim > MAX_STACKED_DIM:
            raise ValueError(
                f"stacked dimensions {self.tx_dim}/{self.rx_dim} exceed {MAX_STACKED_DIM}"
            )

    @property
    def tx_dim(self) -> int:
        return self.num_tx * self.num_slots

    @property
    def rx_dim(self) -> int:
        return self.num_rx * self.num_slots


class ScattererKind(enum.Enum):
    TARGET = "target"
    CLUTTER = "clutter"


@dataclass(frozen=True)
class Scatterer:
    angle: float  # radians
    delay: int  # slots, signed
    power_dbm: float
    kind: ScattererKind = ScattererKind.CLUTTER

    def __post_init__(self):
        if not (-math.pi / 2 - 1e-12 <= self.angle <= math.pi / 2 + 1e-12):
            raise ValueError(f"angle {self.angle} outside [-pi/2, pi/2]")
        if int(self.delay) != self.delay:
            raise ValueError(f"delay must be an integer, got {self.delay!r}")
        if not math.isfinite(self.power_dbm):
            raise ValueError("power_dbm must be finite")

    @property
    def power(self) -> float:
        return dbm_to_linear(self.power_dbm)


@dataclass(frozen=True)
class DopplerGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("Doppler grid must be nonempty")
        if any(not (-0.5 <= v < 0.5) for v in vals):
            raise ValueError("Doppler grid values must lie in [-0.5, 0.5)")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("Doppler grid must be strictly increasing")

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    @classmethod
    def uniform(cls, count: int, start: float = -0.5, stop: float = 0.5) -> "DopplerGrid":
        """``count`` points from ``start`` (inclusive) to ``stop`` (exclusive)."""
        return cls(tuple(np.linspace(start, stop, count, endpoint=False)))


class ClutterDopplerMode(enum.Enum):
    STATIC = "static"
    AFFINE = "affine"


@dataclass(frozen=True)
class ClutterDopplerModel:
    """Clutter Doppler as a function of the hypothesised target Doppler.

    ``STATIC`` pins every clutter at ``offset`` (zero by default); ``AFFINE``
    uses ``rho * f0 + offset``. ``coefficients`` holds one ``(rho, offset)``
    pair per clutter; missing entries mean ``(0, 0)``.
    """

    mode: ClutterDopplerMode = ClutterDopplerMode.STATIC
    coefficients: tuple[tuple[float, float], ...] = ()

    def frequency(self, k: int, f0: float) -> float:
        rho, offset = self.coefficients[k] if k < len(self.coefficients) else (0.0, 0.0)
        if self.mode is ClutterDopplerMode.STATIC:
            return wrap_doppler(offset)
        return wrap_doppler(rho * f0 + offset)


@dataclass(frozen=True)
class NoiseModel:
    radar_noise_dbm: float
    warden_noise_dbm: float

    def __post_init__(self):
        if not (math.isfinite(self.radar_noise_dbm) and math.isfinite(self.warden_noise_dbm)):
            raise ValueError("noise powers must be finite")

    @property
    def radar_noise(self) -> float:
        return dbm_to_linear(self.radar_noise_dbm)

    @property
    def warden_noise(self) -> float:
        return dbm_to_linear(self.warden_noise_dbm)


def steer_tx(angle: float, num_tx: int) -> np.ndarray:
    m = np.arange(num_tx)
    return np.exp(-1j * np.pi * m * np.sin(angle)) / np.sqrt(num_tx)


def steer_rx(angle: float, num_rx: int) -> np.ndarray:
    m = np.arange(num_rx)
    return np.exp(-1j * np.pi * m * np.sin(angle)) / np.sqrt(num_rx)


def doppler_vector(f: float, num_slots: int) -> np.ndarray:
    return np.exp(2j * np.pi * f * np.arange(num_slots))


def shift_matrix(delay: int, geometry: ArrayGeometry) -> np.ndarray:
    """0/1 matrix with ones where ``i - j == num_tx * delay``."""
    if abs(delay) >= geometry.num_slots:
        raise ValueError(
            f"|delay| = {abs(delay)} must be < num_slots = {geometry.num_slots}"
        )
    return np.eye(geometry.tx_dim, k=-geometry.num_tx * delay)


def build_A(scatterer: Scatterer, doppler: float, geometry: ArrayGeometry) -> np.ndarray:
    """Space-time response ``(Diag(p(f)) kron a_r a_t^T) J_r``."""
    spatial = np.outer(
        steer_rx(scatterer.angle, geometry.num_rx),
        steer_tx(scatterer.angle, geometry.num_tx),
    )
    J = shift_matrix(scatterer.delay, geometry)
    return np.kron(np.diag(doppler_vector(doppler, geometry.num_slots)), spatial) @ J


@dataclass(frozen=True)
class Scenario:
    geometry: ArrayGeometry
    target: Scatterer
    clutters: tuple[Scatterer, ...]
    doppler_grid: DopplerGrid
    noise: NoiseModel
    clutter_doppler: ClutterDopplerModel = field(default_factory=ClutterDopplerModel)

    def __post_init__(self):
        object.__setattr__(self, "clutters", tuple(self.clutters))
        N = self.geometry.num_slots
        for sc in (self.target, *self.clutters):
            if abs(sc.delay) >= N:
                raise ValueError(
                    f"scatterer delay {sc.delay} leaves no overlap with {N} slots"
                )

    @property
    def num_clutters(self) -> int:
        return len(self.clutters)

    @property
    def target_snr(self) -> float:
        """sigma_0^2 / sigma_v^2 (linear)."""
        return self.target.power / self.noise.radar_noise

    @property
    def clutter_to_noise(self) -> np.ndarray:
        """q_k = sigma_k^2 / sigma_v^2 (linear)."""
        return np.array([c.power for c in self.clutters]) / self.noise.radar_noise

    def clutter_doppler_at(self, k: int, f0: float) -> float:
        return self.clutter_doppler.frequency(k, f0)

    def target_matrix(self, f0: float) -> np.ndarray:
        return build_A(self.target, f0, self.geometry)

    def clutter_matrices(self, f0: float) -> list[np.ndarray]:
        return [
            build_A(c, self.clutter_doppler_at(k, f0), self.geometry)
            for k, c in enumerate(self.clutters)
        ]

    def with_grid(self, grid: DopplerGrid) -> "Scenario":
        return Scenario(
            self.geometry, self.target, self.clutters, grid, self.noise, self.clutter_doppler
        )
