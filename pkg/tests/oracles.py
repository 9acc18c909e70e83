"""Independent numerical oracles used by the test suite.

Everything here recomputes physics or algebra from first principles with a
different method than the package (FFT propagation instead of closed forms,
quadrature instead of erf, dense GF(2) algebra instead of packed tricks) so
the two routes can be compared.
"""

from __future__ import annotations

import math

import numpy as np

FWHM_TO_E_HALF = 2.0 * math.sqrt(math.log(2.0))
C_NM_PS = 299_792.458


def _fwhm_of_profile(x: np.ndarray, intensity: np.ndarray) -> float:
    """Full width at half maximum by linear interpolation of the crossings."""
    peak = intensity.max()
    half = peak / 2.0
    above = intensity >= half
    idx = np.flatnonzero(above)
    if idx.size < 2:
        raise ValueError("profile too narrow for the grid")
    i0, i1 = idx[0], idx[-1]

    def _cross(ia: int, ib: int) -> float:
        ya, yb = intensity[ia], intensity[ib]
        if yb == ya:
            return x[ia]
        frac = (half - ya) / (yb - ya)
        return x[ia] + frac * (x[ib] - x[ia])

    left = x[i0] if i0 == 0 else _cross(i0 - 1, i0)
    right = x[i1] if i1 == len(x) - 1 else _cross(i1, i1 - 1)
    return float(right - left)


def fft_propagated_fwhm(
    temporal_fwhm_ps: float,
    chirp: float,
    beta2_ps2_km: float,
    z_km: float,
    n_grid: int = 1 << 16,
) -> float:
    """Temporal FWHM after dispersion, via spectral-domain propagation.

    Builds the chirped-Gaussian field on a time grid, applies the quadratic
    spectral phase exp(i beta2 w^2 z / 2), and measures the output width
    directly from the intensity profile.
    """
    t0 = temporal_fwhm_ps / FWHM_TO_E_HALF
    # Generous window: wide enough for the broadened pulse, dense enough
    # for the chirp oscillations.
    ld = t0**2 / abs(beta2_ps2_km) if beta2_ps2_km else math.inf
    guess = t0 * (1.0 + (abs(chirp) + 1.0) * (z_km / ld if math.isfinite(ld) else 0.0))
    span = 40.0 * max(t0, guess)
    t = np.linspace(-span, span, n_grid, endpoint=False)
    field = np.exp(-(1.0 + 1j * chirp) * (t / t0) ** 2 / 2.0)

    spectrum = np.fft.fft(field)
    omega = 2.0 * np.pi * np.fft.fftfreq(n_grid, d=t[1] - t[0])
    spectrum *= np.exp(0.5j * beta2_ps2_km * omega**2 * z_km)
    out = np.fft.ifft(spectrum)
    return _fwhm_of_profile(t, np.abs(out) ** 2)


def fft_spectral_fwhm_nm(
    temporal_fwhm_ps: float, chirp: float, wavelength_nm: float, n_grid: int = 1 << 16
) -> float:
    """Spectral FWHM (nm) of a chirped Gaussian, measured from its FFT."""
    t0 = temporal_fwhm_ps / FWHM_TO_E_HALF
    span = 40.0 * t0
    t = np.linspace(-span, span, n_grid, endpoint=False)
    field = np.exp(-(1.0 + 1j * chirp) * (t / t0) ** 2 / 2.0)
    spectrum = np.fft.fftshift(np.fft.fft(field))
    omega = np.fft.fftshift(2.0 * np.pi * np.fft.fftfreq(n_grid, d=t[1] - t[0]))
    w_fwhm = _fwhm_of_profile(omega, np.abs(spectrum) ** 2)
    return w_fwhm * wavelength_nm**2 / (2.0 * math.pi * C_NM_PS)


def fit_chirp_to_widths(
    temporal_fwhm_ps: float,
    spectral_fwhm_nm: float,
    wavelength_nm: float,
    tol: float = 1e-10,
) -> float:
    """Chirp magnitude that reproduces a measured width pair, by bisection
    against the FFT-measured spectrum."""

    def spectral(chirp: float) -> float:
        return fft_spectral_fwhm_nm(temporal_fwhm_ps, chirp, wavelength_nm)

    lo, hi = 0.0, 1.0
    while spectral(hi) < spectral_fwhm_nm:
        hi *= 2.0
        if hi > 1e4:
            raise ValueError("no chirp reproduces this spectral width")
    if spectral(lo) > spectral_fwhm_nm:
        return 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if spectral(mid) < spectral_fwhm_nm:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gaussian_band_mass_quadrature(sigma: float, lo: float, hi: float) -> float:
    """P(lo <= N(0, sigma^2) < hi) by adaptive quadrature of the density."""
    from scipy.integrate import quad

    density = lambda x: math.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    value, _ = quad(density, lo, hi)
    return value


def gf2_matvec_dense(matrix_rows: list[list[int]], vector: list[int]) -> list[int]:
    """Bit-by-bit GF(2) matrix-vector product, no vectorization tricks."""
    out = []
    for row in matrix_rows:
        acc = 0
        for a, b in zip(row, vector, strict=True):
            acc ^= a & b
        out.append(acc)
    return out


def toeplitz_rows_from_seed(seed_bits: list[int], n_out: int, n_in: int) -> list[list[int]]:
    """Explicit Toeplitz rows: row i, column j reads seed bit (i - j + n_in - 1)."""
    assert len(seed_bits) == n_out + n_in - 1
    return [
        [seed_bits[i - j + n_in - 1] for j in range(n_in)] for i in range(n_out)
    ]
