import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qkdlink.errors import ParameterError
from qkdlink.optics import (
    FiberSpec,
    PulseSpec,
    TimeBinGrid,
    bin_leakage_probability,
    broadened_fwhm,
    chirp_from_widths,
    gvd_beta2,
    interference_click_probabilities,
    transform_limited_spectral_fwhm_nm,
    visibility_error_floor,
)

from oracles import (
    fft_propagated_fwhm,
    fit_chirp_to_widths,
    gaussian_band_mass_quadrature,
)

WAVELENGTH = 1550.12
SMF_DISPERSION = 17.0

CHIRPED_PRESET = PulseSpec(40.0, 0.170, WAVELENGTH)
TUNED_PRESET = PulseSpec(108.0, 0.094, WAVELENGTH)


def _fiber(length_km: float) -> FiberSpec:
    return FiberSpec(length_km=length_km, total_loss_db=0.0, dispersion_ps_nm_km=SMF_DISPERSION)


def _fourier_preset() -> PulseSpec:
    dl = transform_limited_spectral_fwhm_nm(40.0, WAVELENGTH)
    return PulseSpec(40.0, dl, WAVELENGTH)


def test_gvd_beta2_telecom_band():
    # Independent unit-conversion route: D in s/m^2 times -lambda^2 / (2 pi c),
    # using scipy's CODATA speed of light, converted back to ps^2/km.
    from scipy.constants import c as c_m_s

    d_si = SMF_DISPERSION * 1e-12 / (1e-9 * 1e3)  # s per m^2
    beta2_si = -d_si * (1550.0e-9) ** 2 / (2.0 * math.pi * c_m_s)  # s^2 / m
    expected = beta2_si * 1e24 * 1e3  # ps^2 / km
    got = gvd_beta2(SMF_DISPERSION, 1550.0)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(-21.7, abs=0.05)
    assert gvd_beta2(SMF_DISPERSION, 1310.0) == pytest.approx(-15.49, abs=0.05)


def test_chirp_zero_at_transform_limit():
    dl = transform_limited_spectral_fwhm_nm(40.0, WAVELENGTH)
    assert chirp_from_widths(40.0, dl, WAVELENGTH) == pytest.approx(0.0, abs=1e-3)


def test_chirp_rejects_sub_fourier_pair():
    dl = transform_limited_spectral_fwhm_nm(40.0, WAVELENGTH)
    with pytest.raises(ParameterError, match="sub-Fourier"):
        chirp_from_widths(40.0, 0.5 * dl, WAVELENGTH)


@pytest.mark.parametrize(
    "pulse",
    [CHIRPED_PRESET, TUNED_PRESET],
    ids=["chirped-0.170nm-40ps", "tuned-0.094nm-108ps"],
)
def test_chirp_matches_fft_fit(pulse):
    fitted = fit_chirp_to_widths(
        pulse.temporal_fwhm_ps, pulse.spectral_fwhm_nm, pulse.wavelength_nm, tol=1e-6
    )
    assert pulse.chirp_magnitude == pytest.approx(fitted, rel=0.02)


def test_fourier_limited_broadening_anchors():
    pulse = _fourier_preset()
    for z, expected in [(50.0, 85.0), (100.0, 150.0), (200.0, 300.0)]:
        assert broadened_fwhm(pulse, _fiber(z), z) == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize(
    "pulse",
    [_fourier_preset(), CHIRPED_PRESET, TUNED_PRESET],
    ids=["fourier", "chirped", "tuned"],
)
def test_broadening_against_fft_oracle(pulse):
    beta2 = gvd_beta2(SMF_DISPERSION, pulse.wavelength_nm)
    chirp = pulse.signed_chirp(beta2)
    for z in (0.0, 25.0, 105.0, 250.0):
        closed = broadened_fwhm(pulse, _fiber(z), z)
        if z == 0.0:
            assert closed == pytest.approx(pulse.temporal_fwhm_ps, rel=1e-9)
            continue
        oracle = fft_propagated_fwhm(pulse.temporal_fwhm_ps, chirp, beta2, z)
        assert closed == pytest.approx(oracle, rel=0.02)


def test_worst_case_sign_broadens_fastest():
    beta2 = gvd_beta2(SMF_DISPERSION, WAVELENGTH)
    worst = CHIRPED_PRESET  # sign picked automatically
    best = PulseSpec(40.0, 0.170, WAVELENGTH, chirp_sign=+1)  # fights beta2 < 0
    for z in (10.0, 50.0, 100.0):
        assert broadened_fwhm(worst, _fiber(z), z) > broadened_fwhm(best, _fiber(z), z)
    assert worst.signed_chirp(beta2) < 0  # aligned with anomalous dispersion


def test_tuned_preset_fits_bin_beyond_105_km():
    z = np.linspace(0.0, 105.0, 50)
    widths = broadened_fwhm(TUNED_PRESET, _fiber(105.0), z)
    assert np.all(widths < 400.0)
    assert broadened_fwhm(CHIRPED_PRESET, _fiber(105.0), 105.0) > widths[-1]


def test_broadening_monotone_in_distance():
    z = np.linspace(0.0, 250.0, 100)
    widths = broadened_fwhm(CHIRPED_PRESET, _fiber(250.0), z)
    assert np.all(np.diff(widths) > 0)


def test_bin_leakage_zero_width():
    assert bin_leakage_probability(0.0, TimeBinGrid()) == (0.0, 0.0)


def test_bin_leakage_against_quadrature():
    grid = TimeBinGrid()
    width = 400.0
    sigma = width / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    expected = gaussian_band_mass_quadrature(sigma, 200.0, 600.0)
    intra, inter = bin_leakage_probability(width, grid)
    assert intra == pytest.approx(expected, rel=1e-9)
    assert inter == pytest.approx(expected, rel=1e-9)


@given(st.floats(min_value=1e-3, max_value=5e4))
def test_bin_leakage_stays_in_half_open_range(width):
    intra, inter = bin_leakage_probability(width, TimeBinGrid())
    assert 0.0 <= intra <= 0.5
    assert 0.0 <= inter <= 0.5


def test_visibility_error_floor_value():
    assert visibility_error_floor(0.9973) == pytest.approx(0.00135, abs=1e-9)
    assert visibility_error_floor(1.0) == 0.0


def test_interference_probabilities_extremes():
    assert interference_click_probabilities(0.0, 1.0) == pytest.approx((1.0, 0.0))
    assert interference_click_probabilities(math.pi, 1.0) == pytest.approx((0.0, 1.0))


@given(
    st.floats(min_value=-10.0, max_value=10.0),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_interference_probabilities_sum_to_one(phase, visibility):
    p_ok, p_err = interference_click_probabilities(phase, visibility)
    assert p_ok + p_err == pytest.approx(1.0)
    assert 0.0 <= p_err <= 1.0


def test_pulse_spec_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        PulseSpec(-1.0, 0.1)
    with pytest.raises(ParameterError):
        PulseSpec(40.0, 0.001)  # far below the transform limit
    with pytest.raises(ParameterError):
        TimeBinGrid(bin_width_ps=-5.0)
    with pytest.raises(ParameterError):
        FiberSpec(length_km=-2.0, total_loss_db=0.0)


def test_grid_geometry():
    grid = TimeBinGrid()
    assert grid.period_ps == 800.0
    assert grid.qubit_rate_hz == pytest.approx(1.25e9)
    assert grid.bin_center_ps(0) == 200.0
    assert grid.bin_center_ps(1) == 600.0
