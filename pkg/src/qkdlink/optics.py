"""Pulse, fiber, and time-bin geometry models.

All temporal quantities are picoseconds, spectral widths nanometres,
distances kilometres.  Widths are FWHM of intensity unless a name says
otherwise; the Gaussian 1/e half-width used by the broadening formula is
``fwhm / (2 * sqrt(ln 2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

# Speed of light in nm/ps (= 299792458 m/s).
C_NM_PER_PS = 299_792.458

# FWHM of a Gaussian intensity profile over its 1/e half-width.
FWHM_OVER_E_HALF_WIDTH = 2.0 * math.sqrt(math.log(2.0))

# FWHM over the standard deviation of a Gaussian.
FWHM_OVER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Time-bandwidth product (FWHM * FWHM) of a transform-limited Gaussian pulse.
GAUSSIAN_TBP = 2.0 * math.log(2.0) / math.pi

# Relative slack applied when deciding whether a measured width pair is
# below the transform limit (absorbs rounded inputs like "0.441").
_TBP_TOLERANCE = 1e-3


def fwhm_to_sigma(fwhm: float) -> float:
    return fwhm / FWHM_OVER_SIGMA


def sigma_to_fwhm(sigma: float) -> float:
    return sigma * FWHM_OVER_SIGMA


def gvd_beta2(dispersion_ps_nm_km: float, wavelength_nm: float) -> float:
    """Group-velocity dispersion coefficient in ps^2/km.

    Parameters
    ----------
    dispersion_ps_nm_km:
        Fiber dispersion parameter D in ps/(nm km).  Positive D at telecom
        wavelengths gives negative beta2 (anomalous dispersion).
    wavelength_nm:
        Carrier wavelength in nm.
    """
    if wavelength_nm <= 0:
        raise ParameterError(f"wavelength must be positive, got {wavelength_nm}")
    return -dispersion_ps_nm_km * wavelength_nm**2 / (2.0 * math.pi * C_NM_PER_PS)


def transform_limited_spectral_fwhm_nm(temporal_fwhm_ps: float, wavelength_nm: float) -> float:
    """Spectral FWHM (nm) of a chirp-free Gaussian with the given duration."""
    if temporal_fwhm_ps <= 0:
        raise ParameterError(f"temporal width must be positive, got {temporal_fwhm_ps}")
    dnu_fwhm = GAUSSIAN_TBP / temporal_fwhm_ps  # 1/ps
    return wavelength_nm**2 * dnu_fwhm / C_NM_PER_PS


def chirp_from_widths(
    temporal_fwhm_ps: float,
    spectral_fwhm_nm: float,
    wavelength_nm: float,
) -> float:
    """Chirp magnitude |C| consistent with a measured width pair.

    The spectral and temporal 1/e half-widths of a linearly chirped Gaussian
    satisfy ``d_omega * t0 = sqrt(1 + C^2)``; both FWHM inputs are converted
    with the same Gaussian factor before inverting that relation.

    Raises
    ------
    ParameterError
        If the pair sits below the transform limit (no real chirp exists).
    """
    if temporal_fwhm_ps <= 0 or spectral_fwhm_nm <= 0:
        raise ParameterError("pulse widths must be positive")
    t0 = temporal_fwhm_ps / FWHM_OVER_E_HALF_WIDTH
    omega_fwhm = 2.0 * math.pi * C_NM_PER_PS * spectral_fwhm_nm / wavelength_nm**2
    omega_e = omega_fwhm / FWHM_OVER_E_HALF_WIDTH
    product = omega_e * t0
    if product < 1.0 - _TBP_TOLERANCE:
        raise ParameterError(
            "sub-Fourier pulse: width product "
            f"{product:.6f} is below the transform limit"
        )
    return math.sqrt(max(product**2 - 1.0, 0.0))


@dataclass(frozen=True, slots=True)
class PulseSpec:
    """Chirped-Gaussian source pulse described by its measured widths.

    ``chirp_sign`` may be +1, -1, or 0; zero means "pick the sign that
    maximizes broadening in the fiber at hand" (the pessimistic default when
    the sign of the laser chirp is not known).
    """

    temporal_fwhm_ps: float
    spectral_fwhm_nm: float
    wavelength_nm: float = 1550.12
    chirp_sign: int = 0

    def __post_init__(self) -> None:
        if self.temporal_fwhm_ps <= 0:
            raise ParameterError(f"temporal FWHM must be positive, got {self.temporal_fwhm_ps}")
        if self.spectral_fwhm_nm <= 0:
            raise ParameterError(f"spectral FWHM must be positive, got {self.spectral_fwhm_nm}")
        if self.chirp_sign not in (-1, 0, 1):
            raise ParameterError(f"chirp_sign must be -1, 0 or +1, got {self.chirp_sign}")
        # Validates against the transform limit as a side effect.
        chirp_from_widths(self.temporal_fwhm_ps, self.spectral_fwhm_nm, self.wavelength_nm)

    @property
    def t0_ps(self) -> float:
        """1/e intensity half-width."""
        return self.temporal_fwhm_ps / FWHM_OVER_E_HALF_WIDTH

    @property
    def chirp_magnitude(self) -> float:
        return chirp_from_widths(
            self.temporal_fwhm_ps, self.spectral_fwhm_nm, self.wavelength_nm
        )

    def signed_chirp(self, beta2_ps2_km: float) -> float:
        """Chirp with its sign resolved against the fiber's beta2."""
        if self.chirp_sign != 0:
            return self.chirp_sign * self.chirp_magnitude
        # Broadening is monotone and fastest when C * beta2 > 0.
        worst = 1.0 if beta2_ps2_km >= 0 else -1.0
        return worst * self.chirp_magnitude


@dataclass(frozen=True, slots=True)
class FiberSpec:
    """Span of standard single-mode fiber plus any lumped attenuation."""

    length_km: float
    total_loss_db: float
    dispersion_ps_nm_km: float = 17.0

    def __post_init__(self) -> None:
        if self.length_km < 0:
            raise ParameterError(f"fiber length must be >= 0, got {self.length_km}")
        if self.total_loss_db < 0:
            raise ParameterError(f"loss must be >= 0 dB, got {self.total_loss_db}")

    def beta2(self, wavelength_nm: float) -> float:
        return gvd_beta2(self.dispersion_ps_nm_km, wavelength_nm)


@dataclass(frozen=True, slots=True)
class TimeBinGrid:
    """Early/late bin layout of one qubit period."""

    bin_width_ps: float = 400.0
    bins_per_qubit: int = 2

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0:
            raise ParameterError(f"bin width must be positive, got {self.bin_width_ps}")
        if self.bins_per_qubit != 2:
            raise ParameterError("only the two-bin (early/late) layout is supported")

    @property
    def period_ps(self) -> float:
        return self.bin_width_ps * self.bins_per_qubit

    @property
    def qubit_rate_hz(self) -> float:
        return 1e12 / self.period_ps

    def bin_center_ps(self, bin_index: int) -> float:
        """Offset of a bin center from the start of the qubit period."""
        return (bin_index + 0.5) * self.bin_width_ps


def broadened_fwhm(pulse: PulseSpec, fiber: FiberSpec, z_km):
    """Temporal FWHM (ps) of the pulse after ``z_km`` of fiber.

    Accepts a scalar or array of distances.  Uses the chirped-Gaussian
    closed form ``t1 = t0 * sqrt((1 + C z / L_D)^2 + (z / L_D)^2)`` with the
    dispersion length ``L_D = t0^2 / |beta2|`` and the sign of the
    cross-term taken from ``C * beta2``.
    """
    z = np.asarray(z_km, dtype=float)
    if np.any(z < 0):
        raise ParameterError("propagation distance must be >= 0")
    beta2 = fiber.beta2(pulse.wavelength_nm)
    if beta2 == 0.0:
        out = np.broadcast_to(pulse.temporal_fwhm_ps, z.shape).copy()
        return float(out) if out.ndim == 0 else out
    t0 = pulse.t0_ps
    ld = t0**2 / abs(beta2)
    chirp = pulse.signed_chirp(beta2)
    cross = chirp * math.copysign(1.0, beta2)
    factor = np.sqrt((1.0 + cross * z / ld) ** 2 + (z / ld) ** 2)
    out = pulse.temporal_fwhm_ps * factor
    return float(out) if out.ndim == 0 else out


def broadened_sigma(pulse: PulseSpec, fiber: FiberSpec, z_km):
    """Standard deviation (ps) of the arrival-time envelope after ``z_km``."""
    return broadened_fwhm(pulse, fiber, z_km) / FWHM_OVER_SIGMA


def _normal_band_mass(sigma: float, lo: float, hi: float) -> float:
    """P(lo <= N(0, sigma^2) < hi) via the error function."""
    if sigma <= 0.0:
        return 0.0
    rt2 = math.sqrt(2.0)
    return 0.5 * (math.erf(hi / (sigma * rt2)) - math.erf(lo / (sigma * rt2)))


def bin_leakage_probability(width_fwhm_ps: float, grid: TimeBinGrid) -> tuple[float, float]:
    """Energy fractions a centered pulse spills into its neighbor bins.

    Returns ``(leak_intra_qubit, leak_inter_qubit)``: the mass landing in the
    other bin of the same qubit and the mass landing in the nearest bin of
    the adjacent qubit period.  Spill beyond nearest neighbors is ignored.
    Both values lie in [0, 0.5].
    """
    if width_fwhm_ps < 0:
        raise ParameterError(f"width must be >= 0, got {width_fwhm_ps}")
    if width_fwhm_ps == 0.0:
        return (0.0, 0.0)
    sigma = fwhm_to_sigma(width_fwhm_ps)
    half = grid.bin_width_ps / 2.0
    band = _normal_band_mass(sigma, half, 3.0 * half)
    # Symmetric pulse: one flank faces the partner bin, the other the
    # neighboring qubit period.
    return (band, band)


def visibility_error_floor(visibility: float) -> float:
    """Interferometric error floor (1 - V) / 2 at perfect phase."""
    if not 0.0 <= visibility <= 1.0:
        raise ParameterError(f"visibility must lie in [0, 1], got {visibility}")
    return (1.0 - visibility) / 2.0


def interference_click_probabilities(delta_phase_rad: float, visibility: float):
    """Split of a superposition-basis click between the two output ports.

    Returns ``(p_correct, p_error)`` with
    ``p_error = (1 - V cos(delta_phase)) / 2``.
    """
    if not 0.0 <= visibility <= 1.0:
        raise ParameterError(f"visibility must lie in [0, 1], got {visibility}")
    p_error = 0.5 * (1.0 - visibility * math.cos(delta_phase_rad))
    return (1.0 - p_error, p_error)
