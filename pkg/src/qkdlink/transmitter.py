"""Transmitter side: symbol choice and intensity-pattern encoding.

The protocol uses three states (two time-bin basis states carrying key bits
and one superposition state for monitoring) and two mean photon numbers
(signal plus one decoy).  Symbol choice is driven by a counter-addressable
deterministic stream so that any slot's symbol can be regenerated on demand
during sifting without storing the full record.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ParameterError


class Basis(IntEnum):
    Z = 0
    X = 1


class Intensity(IntEnum):
    SIGNAL = 0
    DECOY = 1


@dataclass(frozen=True, slots=True)
class EmissionConfig:
    """Mean photon numbers and per-slot choice probabilities."""

    mu_signal: float = 0.50
    mu_decoy: float = 0.26
    p_z: float = 0.80
    p_signal: float = 0.50

    def __post_init__(self) -> None:
        if not 0.0 < self.mu_decoy < self.mu_signal:
            raise ParameterError(
                f"need 0 < mu_decoy < mu_signal, got {self.mu_decoy} / {self.mu_signal}"
            )
        for name in ("p_z", "p_signal"):
            p = getattr(self, name)
            if not 0.0 < p < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {p}")

    def mu_of(self, intensity: int) -> float:
        return self.mu_signal if intensity == Intensity.SIGNAL else self.mu_decoy

    @property
    def mean_mu(self) -> float:
        """Average emitted mean photon number per slot."""
        return self.p_signal * self.mu_signal + (1.0 - self.p_signal) * self.mu_decoy

    def amplitude_levels(self) -> tuple[float, ...]:
        """Distinct nonzero per-bin intensity levels across the alphabet."""
        levels = {
            self.mu_signal,
            self.mu_signal / 2.0,
            self.mu_decoy,
            self.mu_decoy / 2.0,
        }
        return tuple(sorted(levels))


@dataclass(frozen=True, slots=True)
class StateSymbol:
    """One emitted symbol; ``bit`` is meaningful only in the Z basis."""

    basis: Basis
    bit: int
    intensity: Intensity

    def __post_init__(self) -> None:
        if self.bit not in (0, 1):
            raise ParameterError(f"bit must be 0 or 1, got {self.bit}")


@dataclass(frozen=True, slots=True)
class AmplitudePattern:
    """Mean photon number loaded into each bin, plus the early/late phase."""

    mu_early: float
    mu_late: float
    relative_phase: float = 0.0

    def __post_init__(self) -> None:
        if self.mu_early < 0.0 or self.mu_late < 0.0:
            raise ParameterError(
                f"bin intensities must be non-negative, got ({self.mu_early}, {self.mu_late})"
            )

    @property
    def mu_total(self) -> float:
        return self.mu_early + self.mu_late


def encode(symbol: StateSymbol, config: EmissionConfig, phase_rad: float = 0.0) -> AmplitudePattern:
    """Map a symbol to its two-bin intensity pattern.

    Z bits occupy a single bin at full intensity; the monitoring state
    splits the same intensity evenly across both bins with ``phase_rad``
    between them.
    """
    mu = config.mu_of(symbol.intensity)
    if symbol.basis == Basis.Z:
        if symbol.bit == 0:
            return AmplitudePattern(mu, 0.0)
        return AmplitudePattern(0.0, mu)
    return AmplitudePattern(mu / 2.0, mu / 2.0, phase_rad)


# splitmix64 constants; the three draw kinds use separate stream offsets.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM_BASIS = np.uint64(0xA076_1D64_78BD_642F)
_STREAM_INTENSITY = np.uint64(0xE703_7ED1_A0B4_28DB)
_STREAM_BIT = np.uint64(0x8EBC_6AF0_9C88_C6E3)
_U53 = float(1 << 53)


def _mix64(x: np.ndarray) -> np.ndarray:
    z = (x + _GOLDEN).astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _uniforms(seed: np.uint64, stream: np.uint64, indices: np.ndarray) -> np.ndarray:
    h = _mix64(indices.astype(np.uint64) ^ _mix64(np.uint64(seed) + stream))
    return (h >> np.uint64(11)).astype(np.float64) / _U53


class SymbolStream:
    """Deterministic per-slot symbol source addressable by slot index."""

    def __init__(self, seed: int, config: EmissionConfig):
        self.seed = np.uint64(seed & 0xFFFF_FFFF_FFFF_FFFF)
        self.config = config
        self._cursor = 0

    def fields_at(self, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized lookup: (basis, bit, intensity) uint8 arrays."""
        idx = np.atleast_1d(np.asarray(indices, dtype=np.uint64))
        with np.errstate(over="ignore"):
            basis = (
                _uniforms(self.seed, _STREAM_BASIS, idx) >= self.config.p_z
            ).astype(np.uint8)
            intensity = (
                _uniforms(self.seed, _STREAM_INTENSITY, idx) >= self.config.p_signal
            ).astype(np.uint8)
            bit = (_uniforms(self.seed, _STREAM_BIT, idx) >= 0.5).astype(np.uint8)
        # The monitoring state carries no key bit.
        bit[basis == Basis.X] = 0
        return basis, bit, intensity

    def mu_at(self, indices) -> np.ndarray:
        """Vectorized total mean photon number per slot."""
        _, _, intensity = self.fields_at(indices)
        return np.where(
            intensity == Intensity.SIGNAL, self.config.mu_signal, self.config.mu_decoy
        )

    def symbol_at(self, index: int) -> StateSymbol:
        basis, bit, intensity = self.fields_at([index])
        return StateSymbol(Basis(int(basis[0])), int(bit[0]), Intensity(int(intensity[0])))

    def next(self) -> StateSymbol:
        symbol = self.symbol_at(self._cursor)
        self._cursor += 1
        return symbol


def draw_symbol(stream: SymbolStream, config: EmissionConfig) -> StateSymbol:
    """Draw the next symbol in sequence from the stream.

    ``config`` must be the one the stream was built with; it is accepted
    explicitly so call sites read naturally.
    """
    if config is not stream.config:
        raise ParameterError("stream was built with a different emission config")
    return stream.next()
