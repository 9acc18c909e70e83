"""Quantum channel and receiver: loss, timing spread, clicks, dark counts.

Two routes to the same physics live here on purpose: a photon-level Monte
Carlo (`propagate` for one symbol, `simulate_slots` for long runs) and the
closed-form `expected_rates` oracle the tests hold it against.

Timing model: every detected photon's arrival is the nominal bin center
plus one Gaussian draw whose variance combines the dispersion-broadened
envelope and detector jitter.  Arrivals are re-binned by absolute time, so
pulse spread turns into wrong-bin and wrong-period assignments.  Spill
beyond nearest-neighbor bins is not tracked by the closed forms; batch runs
wrap arrival times around the chunk to keep the statistics stationary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .optics import (
    FiberSpec,
    PulseSpec,
    TimeBinGrid,
    bin_leakage_probability,
    broadened_fwhm,
    broadened_sigma,
    fwhm_to_sigma,
    sigma_to_fwhm,
)
from .transmitter import (
    AmplitudePattern,
    Basis,
    EmissionConfig,
    Intensity,
    SymbolStream,
)


def channel_transmittance(total_loss_db: float) -> float:
    """Linear power transmittance of a loss expressed in dB."""
    if total_loss_db < 0:
        raise ParameterError(f"loss must be >= 0 dB, got {total_loss_db}")
    if math.isinf(total_loss_db):
        return 0.0
    return 10.0 ** (-total_loss_db / 10.0)


@dataclass(frozen=True, slots=True)
class DetectorSpec:
    """Single-photon detector operating point."""

    efficiency: float
    dark_cps: float
    dead_time_us: float
    jitter_sigma_ps: float = 64.0
    label: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.efficiency <= 1.0:
            raise ParameterError(f"efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dark_cps < 0:
            raise ParameterError(f"dark count rate must be >= 0, got {self.dark_cps}")
        if self.dead_time_us < 0:
            raise ParameterError(f"dead time must be >= 0, got {self.dead_time_us}")
        if self.jitter_sigma_ps < 0:
            raise ParameterError(f"jitter must be >= 0, got {self.jitter_sigma_ps}")

    @property
    def dead_time_ps(self) -> float:
        return self.dead_time_us * 1e6

    @property
    def dark_per_ps(self) -> float:
        return self.dark_cps * 1e-12


@dataclass(frozen=True, slots=True)
class ReceiverSpec:
    """Passive receiver: basis tap ratio, arm losses, interferometer quality."""

    p_x_bob: float
    loss_z_arm_db: float = 2.17
    loss_x_arm_db: float = 3.52
    visibility: float = 0.9973

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_x_bob <= 1.0:
            raise ParameterError(f"p_x_bob must lie in [0, 1], got {self.p_x_bob}")
        for name in ("loss_z_arm_db", "loss_x_arm_db"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0 dB")
        if not 0.0 <= self.visibility <= 1.0:
            raise ParameterError(f"visibility must lie in [0, 1], got {self.visibility}")


@dataclass(frozen=True, slots=True)
class DetectionEvent:
    """One accepted click.  ``error_port`` is meaningful for monitor clicks."""

    qubit_index: int
    bin: int
    detector: Basis
    time_offset_ps: float
    error_port: bool = False
    is_dark: bool = False


@dataclass(frozen=True)
class LinkModel:
    """Everything fixed about the optical link for one scenario."""

    pulse: PulseSpec
    fiber: FiberSpec
    receiver: ReceiverSpec
    detector_z: DetectorSpec
    detector_x: DetectorSpec
    emission: EmissionConfig
    grid: TimeBinGrid = field(default_factory=TimeBinGrid)
    bin_flip_prob: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.bin_flip_prob < 0.5:
            raise ParameterError(f"bin_flip_prob must lie in [0, 0.5), got {self.bin_flip_prob}")

    def alpha(self, detector: Basis) -> float:
        """Per-photon detection probability for one arm, channel included."""
        t_ch = channel_transmittance(self.fiber.total_loss_db)
        if detector == Basis.Z:
            arm = (1.0 - self.receiver.p_x_bob) * channel_transmittance(
                self.receiver.loss_z_arm_db
            )
            return t_ch * arm * self.detector_z.efficiency
        arm = self.receiver.p_x_bob * channel_transmittance(self.receiver.loss_x_arm_db)
        return t_ch * arm * self.detector_x.efficiency

    def arrival_sigma_ps(self, detector: Basis) -> float:
        """Total timing spread: broadened envelope plus detector jitter."""
        det = self.detector_z if detector == Basis.Z else self.detector_x
        sig_pulse = broadened_sigma(self.pulse, self.fiber, self.fiber.length_km)
        return math.hypot(sig_pulse, det.jitter_sigma_ps)

    def band_leak(self, detector: Basis) -> float:
        """One-sided nearest-neighbor leakage probability at this detector."""
        width = sigma_to_fwhm(self.arrival_sigma_ps(detector))
        intra, _ = bin_leakage_probability(width, self.grid)
        return intra

    def broadened_fwhm_ps(self) -> float:
        return broadened_fwhm(self.pulse, self.fiber, self.fiber.length_km)


def apply_dead_time(
    times_ps: np.ndarray, dead_time_ps: float, last_accept_ps: float = -math.inf
) -> tuple[np.ndarray, float]:
    """Non-paralyzable dead-time filter over an ascending time array.

    Returns the acceptance mask and the updated last-accepted timestamp so
    chunked callers can carry state across batch boundaries.
    """
    n = times_ps.size
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask, last_accept_ps
    if dead_time_ps <= 0.0:
        mask[:] = True
        return mask, float(times_ps[-1])
    idx = int(np.searchsorted(times_ps, last_accept_ps + dead_time_ps, side="left"))
    while idx < n:
        mask[idx] = True
        last_accept_ps = float(times_ps[idx])
        idx = int(np.searchsorted(times_ps, last_accept_ps + dead_time_ps, side="left"))
    return mask, last_accept_ps


@dataclass
class ChannelState:
    """Mutable carry-over between simulation chunks."""

    last_accept_z_ps: float = -math.inf
    last_accept_x_ps: float = -math.inf


@dataclass
class DetectionBatch:
    """Vectorized detection record for one chunk of slots.

    ``accepted`` marks events that survived the per-detector dead time;
    ``kept`` additionally enforces one detection per qubit slot (earliest
    wins, across both detectors).  Arrays are globally time-sorted.
    """

    slot_start: int
    n_slots: int
    slot: np.ndarray
    bin: np.ndarray
    detector: np.ndarray
    time_ps: np.ndarray
    offset_ps: np.ndarray
    error_port: np.ndarray
    is_dark: np.ndarray
    accepted: np.ndarray
    kept: np.ndarray

    def kept_arrays(self):
        k = self.kept
        return (
            self.slot[k],
            self.bin[k],
            self.detector[k],
            self.offset_ps[k],
            self.error_port[k],
            self.is_dark[k],
        )


def _draw_arm_photons(
    model: LinkModel,
    stream: SymbolStream,
    detector: Basis,
    slot_start: int,
    n_slots: int,
    rng: np.random.Generator,
    phase_fn,
):
    """Candidate detected photons for one arm over a chunk, torus-wrapped."""
    emission = model.emission
    grid = model.grid
    period = grid.period_ps
    alpha = model.alpha(detector)
    lam_max = emission.mu_signal * alpha
    span = n_slots * period

    count = rng.poisson(lam_max * n_slots) if lam_max > 0 else 0
    if count == 0:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.uint8), z, z.astype(bool)

    local = rng.integers(0, n_slots, size=count, dtype=np.int64)
    absolute = local + slot_start
    basis, bit, intensity = stream.fields_at(absolute)
    mu_tot = np.where(
        intensity == Intensity.SIGNAL, emission.mu_signal, emission.mu_decoy
    )
    keep = rng.random(count) < mu_tot / emission.mu_signal
    local, basis, bit = local[keep], basis[keep], bit[keep]
    n = local.size
    if n == 0:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.uint8), z, z.astype(bool)

    # Bin occupancy: Z symbols fill the bin matching their bit, the monitor
    # state splits evenly.
    p_early = np.where(basis == Basis.Z, 1.0 - bit, 0.5)
    src_bin = (rng.random(n) >= p_early).astype(np.uint8)

    sigma = model.arrival_sigma_ps(detector)
    dt = rng.normal(0.0, sigma, size=n) if sigma > 0 else np.zeros(n)
    arrival = (local * period + grid.bin_center_ps(src_bin.astype(np.int64)) + dt) % span

    new_local = np.floor_divide(arrival, period).astype(np.int64)
    offset = arrival - new_local * period
    new_bin = (offset >= grid.bin_width_ps).astype(np.uint8)

    if detector == Basis.Z and model.bin_flip_prob > 0.0:
        flips = rng.random(n) < model.bin_flip_prob
        new_bin = np.where(flips, 1 - new_bin, new_bin).astype(np.uint8)

    if detector == Basis.X:
        coherent = (new_local == local) & (basis == Basis.X)
        delta_phase = phase_fn(new_local + slot_start)
        p_err = 0.5 * (1.0 - model.receiver.visibility * np.cos(delta_phase))
        p = np.where(coherent, p_err, 0.5)
        error_port = rng.random(n) < p
    else:
        error_port = np.zeros(n, dtype=bool)

    return new_local, new_bin, arrival, error_port


def _draw_darks(
    model: LinkModel, detector: Basis, n_slots: int, rng: np.random.Generator
):
    det = model.detector_z if detector == Basis.Z else model.detector_x
    period = model.grid.period_ps
    span = n_slots * period
    count = rng.poisson(det.dark_per_ps * span) if det.dark_per_ps > 0 else 0
    if count == 0:
        z = np.zeros(0)
        return z.astype(np.int64), z.astype(np.uint8), z, z.astype(bool)
    arrival = rng.random(count) * span
    local = np.floor_divide(arrival, period).astype(np.int64)
    offset = arrival - local * period
    dark_bin = (offset >= model.grid.bin_width_ps).astype(np.uint8)
    if detector == Basis.X:
        error_port = rng.random(count) < 0.5
    else:
        error_port = np.zeros(count, dtype=bool)
    return local, dark_bin, arrival, error_port


def simulate_slots(
    model: LinkModel,
    stream: SymbolStream,
    slot_start: int,
    n_slots: int,
    rng: np.random.Generator,
    state: ChannelState | None = None,
    phase_fn=None,
) -> DetectionBatch:
    """Monte Carlo over ``n_slots`` consecutive qubit slots.

    ``phase_fn`` maps an array of absolute slot indices to the early/late
    phase mismatch seen by the interferometer (defaults to zero).
    """
    if n_slots <= 0:
        raise ParameterError(f"n_slots must be positive, got {n_slots}")
    if state is None:
        state = ChannelState()
    if phase_fn is None:
        phase_fn = lambda slots: np.zeros(np.shape(slots))
    period = model.grid.period_ps
    base_ps = slot_start * period

    parts = []  # (local, bin, arrival, err, detector_code, is_dark)
    for detector in (Basis.Z, Basis.X):
        ph = _draw_arm_photons(model, stream, detector, slot_start, n_slots, rng, phase_fn)
        parts.append(ph + (detector, False))
        dk = _draw_darks(model, detector, n_slots, rng)
        parts.append(dk + (detector, True))

    local = np.concatenate([p[0] for p in parts])
    bins = np.concatenate([p[1] for p in parts])
    arrival = np.concatenate([p[2] for p in parts])
    err = np.concatenate([p[3] for p in parts])
    det_code = np.concatenate(
        [np.full(p[0].size, int(p[4]), dtype=np.uint8) for p in parts]
    )
    dark = np.concatenate(
        [np.full(p[0].size, bool(p[5]), dtype=bool) for p in parts]
    )

    order = np.argsort(arrival, kind="stable")
    local, bins, arrival = local[order], bins[order], arrival[order]
    err, det_code, dark = err[order], det_code[order], dark[order]

    times = arrival + base_ps
    accepted = np.zeros(times.size, dtype=bool)
    for detector, attr in ((Basis.Z, "last_accept_z_ps"), (Basis.X, "last_accept_x_ps")):
        det = model.detector_z if detector == Basis.Z else model.detector_x
        sel = det_code == int(detector)
        mask, last = apply_dead_time(times[sel], det.dead_time_ps, getattr(state, attr))
        accepted[sel] = mask
        setattr(state, attr, last)

    # One detection per qubit slot: earliest accepted click wins.
    kept = np.zeros(times.size, dtype=bool)
    if accepted.any():
        idx = np.flatnonzero(accepted)
        first = idx[np.unique(local[idx], return_index=True)[1]]
        kept[first] = True

    offset = arrival - local * period
    return DetectionBatch(
        slot_start=slot_start,
        n_slots=n_slots,
        slot=local + slot_start,
        bin=bins,
        detector=det_code,
        time_ps=times,
        offset_ps=offset,
        error_port=err,
        is_dark=dark,
        accepted=accepted,
        kept=kept,
    )


def propagate(
    pattern: AmplitudePattern,
    model: LinkModel,
    rng: np.random.Generator,
    qubit_index: int = 0,
    delta_phase_rad: float = 0.0,
) -> list[DetectionEvent]:
    """Monte Carlo of a single emitted symbol, without dead time.

    Returns the raw clicks (possibly none, possibly several) sorted by
    arrival time.  Session-level processing applies dead time and the
    one-click-per-slot rule; isolated-symbol callers usually just need the
    counts.
    """
    grid = model.grid
    period = grid.period_ps
    events: list[tuple[float, DetectionEvent]] = []
    interfering = pattern.mu_early > 0 and pattern.mu_late > 0

    for detector in (Basis.Z, Basis.X):
        det = model.detector_z if detector == Basis.Z else model.detector_x
        alpha = model.alpha(detector)
        sigma = model.arrival_sigma_ps(detector)
        for src_bin, mu in ((0, pattern.mu_early), (1, pattern.mu_late)):
            n = rng.poisson(mu * alpha) if mu > 0 else 0
            for _ in range(n):
                t = grid.bin_center_ps(src_bin) + (rng.normal(0.0, sigma) if sigma else 0.0)
                slot_shift, offset = divmod(t, period)
                new_bin = int(offset >= grid.bin_width_ps)
                if detector == Basis.Z and model.bin_flip_prob > 0.0:
                    if rng.random() < model.bin_flip_prob:
                        new_bin = 1 - new_bin
                if detector == Basis.X:
                    if interfering and slot_shift == 0:
                        p_err = 0.5 * (
                            1.0 - model.receiver.visibility * math.cos(delta_phase_rad)
                        )
                    else:
                        p_err = 0.5
                    err = bool(rng.random() < p_err)
                else:
                    err = False
                events.append(
                    (
                        t,
                        DetectionEvent(
                            qubit_index=qubit_index + int(slot_shift),
                            bin=new_bin,
                            detector=detector,
                            time_offset_ps=float(offset),
                            error_port=err,
                        ),
                    )
                )
        # Dark counts within this qubit period.
        n_dark = rng.poisson(det.dark_per_ps * period) if det.dark_per_ps > 0 else 0
        for _ in range(n_dark):
            t = rng.random() * period
            events.append(
                (
                    t,
                    DetectionEvent(
                        qubit_index=qubit_index,
                        bin=int(t >= grid.bin_width_ps),
                        detector=detector,
                        time_offset_ps=float(t),
                        error_port=bool(detector == Basis.X and rng.random() < 0.5),
                        is_dark=True,
                    ),
                )
            )

    events.sort(key=lambda pair: pair[0])
    return [ev for _, ev in events]


# ---------------------------------------------------------------------------
# Closed-form expectations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class IntensityRates:
    """Per-slot expectations conditioned on one emitted intensity."""

    z_click_prob: float
    q_z: float
    x_click_prob: float
    q_x: float


@dataclass(frozen=True, slots=True)
class ExpectedRates:
    """Closed-form per-slot click and error expectations for a link."""

    per_intensity: dict[Intensity, IntensityRates]
    z_click_prob: float
    x_click_prob: float
    z_rate_cps: float
    x_rate_cps: float
    accepted_z_rate_cps: float
    accepted_x_rate_cps: float
    censor_z: float
    censor_x: float
    q_z: float
    q_x: float


def accepted_rate(rate_cps: float, dead_time_s: float) -> float:
    """Throughput of a non-paralyzable detector: R / (1 + R tau)."""
    return rate_cps / (1.0 + rate_cps * dead_time_s)


def expected_rates(model: LinkModel, delta_phase_rad: float = 0.0) -> ExpectedRates:
    """Analytic per-intensity click and error rates for the link.

    Ignores dead time in the per-slot probabilities and reports the
    R/(1+R tau) correction separately as aggregate accepted rates.  The
    derivation mirrors the Monte Carlo: Poisson bin occupancies thinned by
    nearest-neighbor leakage, stationary in-leak from neighboring symbols,
    uniform dark counts, earliest-click-wins within a qubit slot.
    """
    em = model.emission
    grid = model.grid
    alpha_z = model.alpha(Basis.Z)
    alpha_x = model.alpha(Basis.X)
    p_bz = model.band_leak(Basis.Z)
    p_bx = model.band_leak(Basis.X)
    d_bin = model.detector_z.dark_per_ps * grid.bin_width_ps
    d_slot_x = model.detector_x.dark_per_ps * grid.period_ps
    mu_bar = em.mean_mu
    f = model.bin_flip_prob
    p_phase = 0.5 * (1.0 - model.receiver.visibility * math.cos(delta_phase_rad))

    per: dict[Intensity, IntensityRates] = {}
    for intensity in (Intensity.SIGNAL, Intensity.DECOY):
        mu = em.mu_of(intensity)

        # Z detector, Z-basis sender: photon means in the correct and wrong
        # bin, including the stationary in-leak from neighbor symbols.
        a_ph = alpha_z * (mu * (1.0 - 2.0 * p_bz) + 0.5 * mu_bar * p_bz)
        b_ph = alpha_z * (mu * p_bz + 0.5 * mu_bar * p_bz)
        a = (1.0 - f) * a_ph + f * b_ph + d_bin
        b = (1.0 - f) * b_ph + f * a_ph + d_bin
        z_click = 1.0 - math.exp(-(a + b))
        # Early-bin clicks preempt late ones, so the two key bits see
        # asymmetric error channels; the bit average restores symmetry.
        err_bit0 = math.exp(-a) * (1.0 - math.exp(-b))   # wrong bin is late
        err_bit1 = 1.0 - math.exp(-b)                     # wrong bin is early
        q_z = 0.5 * (err_bit0 + err_bit1) / z_click if z_click > 0 else 0.0

        # Monitor detector, X sender: photons that stay inside their own
        # period interfere, strays and darks land on either port.
        a_coh = alpha_x * mu * (1.0 - p_bx)
        a_inc = alpha_x * mu_bar * p_bx
        total_x = a_coh + a_inc + d_slot_x
        x_click = 1.0 - math.exp(-total_x)
        q_x = (
            (a_coh * p_phase + 0.5 * (a_inc + d_slot_x)) / total_x
            if total_x > 0
            else 0.0
        )
        per[intensity] = IntensityRates(z_click, q_z, x_click, q_x)

    p_sig = em.p_signal
    weights = {Intensity.SIGNAL: p_sig, Intensity.DECOY: 1.0 - p_sig}
    z_click_prob = sum(weights[k] * per[k].z_click_prob for k in per)
    x_click_prob = sum(weights[k] * per[k].x_click_prob for k in per)
    q_z = (
        sum(weights[k] * per[k].z_click_prob * per[k].q_z for k in per) / z_click_prob
        if z_click_prob > 0
        else 0.0
    )
    q_x = (
        sum(weights[k] * per[k].x_click_prob * per[k].q_x for k in per) / x_click_prob
        if x_click_prob > 0
        else 0.0
    )

    slot_rate = grid.qubit_rate_hz
    z_rate = z_click_prob * slot_rate
    x_rate = x_click_prob * slot_rate
    acc_z = accepted_rate(z_rate, model.detector_z.dead_time_us * 1e-6)
    acc_x = accepted_rate(x_rate, model.detector_x.dead_time_us * 1e-6)
    return ExpectedRates(
        per_intensity=per,
        z_click_prob=z_click_prob,
        x_click_prob=x_click_prob,
        z_rate_cps=z_rate,
        x_rate_cps=x_rate,
        accepted_z_rate_cps=acc_z,
        accepted_x_rate_cps=acc_x,
        censor_z=acc_z / z_rate if z_rate > 0 else 1.0,
        censor_x=acc_x / x_rate if x_rate > 0 else 1.0,
        q_z=q_z,
        q_x=q_x,
    )
