"""Scenario runners: one-shot links, dispersion sweeps, stability traces.

``run_scenario`` is the full pipeline: a sifting session between the two
engines, reconciliation and verification over the same transport, the
decoy-state bounds, and privacy amplification, ending in a report (and,
when an output directory is given, CSV, key, transcript, and figure
artifacts).  Scenarios flagged ``mode = project`` skip the Monte Carlo
and evaluate the same accounting on analytic expectations, which is how
operating points far beyond desk-scale rates are assessed.
"""

from __future__ import annotations

import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .channel import expected_rates
from .distill import (
    CascadeResponder,
    DecoyBounds,
    MonitorStats,
    binary_entropy,
    cascade_reconcile,
    decoy_bounds,
    key_length,
    privacy_amplify,
    verify_keys,
)
from .errors import ConfigError
from .framing import MessageType, pack_key_ack, pack_pa_seed, unpack_key_ack, unpack_pa_seed
from .optics import (
    FiberSpec,
    PulseSpec,
    broadened_fwhm,
    transform_limited_spectral_fwhm_nm,
)
from .protocol import DriftProcess, StabilizerState, run_session
from .report import (
    DISPERSION_FIELDS,
    STABILITY_FIELDS,
    LinkReport,
    render_dispersion_figure,
    render_link_figure,
    render_stability_figure,
    render_table_figure,
    format_table,
    write_reports_csv,
    write_rows_csv,
)
from .scenario import ScenarioConfig
from .transmitter import Basis, Intensity
from .transport import FrameChannel, RecordingEndpoint, transport_pair

__all__ = [
    "run_scenario",
    "stability_run",
    "sweep_dispersion",
    "table_report",
]


def _seed_of(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _responder_pump(channel: FrameChannel, key_bits: np.ndarray):
    """Alice's half of distillation: answer the next request on her side.

    Every pump call corresponds to exactly one frame the initiator just
    sent, so a blocking read is safe on either transport kind.
    """
    responder = CascadeResponder(key_bits)

    def pump() -> None:
        msg_type, payload = channel.recv()
        reply = responder.handle(msg_type, payload)
        if reply is not None:
            channel.send(*reply)

    return responder, pump


def _distill_over_wire(scenario, chan_a, chan_b, block_a, block_b, stats):
    """Reconcile, verify, bound, and amplify across the live channels.

    Returns ``(bounds, secret_len, final_key, verified)``.  The transcript
    carries every parity, hash, seed, and acknowledgement involved.
    """
    params = scenario.session.distillation
    roots = np.random.SeedSequence(scenario.seed).spawn(6)
    cascade_seed, pa_seed, verify_seed = (_seed_of(r) for r in roots[3:6])

    _responder, pump = _responder_pump(chan_a, block_a.bits)
    corrected, leak = cascade_reconcile(
        block_a.bits, block_b.bits, stats.q_z, params,
        transport=(chan_b, pump), seed=cascade_seed,
    )
    verified = verify_keys(
        block_a.bits, corrected, transport=(chan_b, pump), seed=verify_seed
    )

    bounds = decoy_bounds(stats, scenario.session.emission, params, lambda_ec=leak)
    secret_len = key_length(bounds, params) if verified else 0

    # Alice announces the extractor seed and target length; both sides
    # compress, and Bob closes the session with an acknowledgement.
    chan_a.send(MessageType.PA_SEED, pack_pa_seed(pa_seed, secret_len, len(corrected)))
    msg_type, payload = chan_b.recv()
    if msg_type != MessageType.PA_SEED:
        raise ConfigError(f"expected the extractor seed, got {msg_type!r}")
    seed_rx, len_rx, _raw_rx = unpack_pa_seed(payload)
    final_a = privacy_amplify(block_a.bits, secret_len, pa_seed, stats.elapsed_time_s)
    final_b = privacy_amplify(corrected, len_rx, seed_rx)
    ok = int(np.array_equal(final_a.key, final_b.key))
    chan_b.send(MessageType.KEY_ACK, pack_key_ack(ok, len_rx))
    msg_type, payload = chan_a.recv()
    if msg_type != MessageType.KEY_ACK or unpack_key_ack(payload) != (ok, secret_len):
        raise ConfigError("amplification acknowledgement mismatch")
    return bounds, secret_len, final_a.key, verified and bool(ok)


def _base_report(scenario: ScenarioConfig) -> dict:
    session = scenario.session
    model = session.link_model()
    return dict(
        scenario=scenario.name,
        mode=scenario.mode,
        seed=scenario.seed,
        length_km=session.fiber.length_km,
        attenuation_db=session.fiber.total_loss_db,
        eta_z=session.detector_z.efficiency,
        tau_z_us=session.detector_z.dead_time_us,
        eta_x=session.detector_x.efficiency,
        tau_x_us=session.detector_x.dead_time_us,
        detector_label=session.detector_z.label,
        p_x_bob=session.receiver.p_x_bob,
        block_target_n=session.block_target_n,
        device_qz_floor=scenario.device_qz_floor,
        broadened_fwhm_ps=model.broadened_fwhm_ps(),
        bin_leak_prob=model.band_leak(Basis.Z),
    )


def _report_from(scenario, stats, bounds, secret_len, verified) -> LinkReport:
    elapsed = stats.elapsed_time_s
    report = LinkReport(
        **_base_report(scenario),
        n_z=stats.n_z,
        n_z_signal=stats.n_z_signal,
        n_z_decoy=stats.n_z_decoy,
        m_z=stats.m_z,
        n_x=stats.n_x,
        n_x_signal=stats.n_x_signal,
        n_x_decoy=stats.n_x_decoy,
        m_x=stats.m_x,
        q_z=stats.q_z,
        phi_z_raw=stats.q_x,
        phi_z_upper=bounds.phi_z_upper,
        s_z0=bounds.s_z0_lower,
        s_z1=bounds.s_z1_lower,
        lambda_ec=bounds.lambda_ec,
        secret_len=secret_len,
        verified=verified,
        elapsed_s=elapsed,
        sifted_rate=stats.n_z / elapsed if elapsed > 0 else 0.0,
        skr=secret_len / elapsed if elapsed > 0 else 0.0,
    )
    report.check()
    return report


def _simulate_scenario(scenario: ScenarioConfig):
    raw = transport_pair(scenario.transport)
    end_a, end_b = RecordingEndpoint(raw[0]), RecordingEndpoint(raw[1])
    block_a, block_b, stats = run_session(
        scenario.session, seed=scenario.seed, transport=(end_a, end_b)
    )
    if len(block_a) == 0:
        bounds = DecoyBounds(0.0, 0.0, 0.5, 0)
        report = _report_from(scenario, stats, bounds, 0, verified=False)
        key = np.zeros(0, dtype=np.uint8)
    else:
        chan_a, chan_b = FrameChannel(end_a), FrameChannel(end_b)
        bounds, secret_len, key, verified = _distill_over_wire(
            scenario, chan_a, chan_b, block_a, block_b, stats
        )
        report = _report_from(scenario, stats, bounds, secret_len, verified)
    return report, key, (bytes(end_a.sent), bytes(end_b.sent))


def _project_scenario(scenario: ScenarioConfig) -> LinkReport:
    """Analytic stand-in for a session: expected counts instead of sampled.

    The acquisition time is whatever the model says the configured block
    takes at these rates; reconciliation leakage is charged at the
    scenario's assumed efficiency off the expected error rate.
    """
    session = scenario.session
    em = session.emission
    rates = expected_rates(session.link_model())
    rate_hz = session.qubit_rate_hz

    kept_per_slot = 0.0
    counts: dict[Intensity, tuple[float, float]] = {}
    for intensity in (Intensity.SIGNAL, Intensity.DECOY):
        p_k = em.p_signal if intensity == Intensity.SIGNAL else 1.0 - em.p_signal
        per = rates.per_intensity[intensity]
        z_slot = em.p_z * p_k * per.z_click_prob * rates.censor_z
        x_slot = (1.0 - em.p_z) * p_k * per.x_click_prob * rates.censor_x
        counts[intensity] = (z_slot, x_slot)
        kept_per_slot += z_slot
    if kept_per_slot <= 0.0:
        raise ConfigError("the configured link never detects anything")
    elapsed = session.block_target_n / (rate_hz * kept_per_slot)

    def scaled(value: float) -> int:
        return int(round(value * rate_hz * elapsed))

    per_sig = rates.per_intensity[Intensity.SIGNAL]
    per_dec = rates.per_intensity[Intensity.DECOY]
    stats = MonitorStats(
        n_z_signal=scaled(counts[Intensity.SIGNAL][0]),
        n_z_decoy=scaled(counts[Intensity.DECOY][0]),
        m_z_signal=scaled(counts[Intensity.SIGNAL][0] * per_sig.q_z),
        m_z_decoy=scaled(counts[Intensity.DECOY][0] * per_dec.q_z),
        n_x_signal=scaled(counts[Intensity.SIGNAL][1]),
        n_x_decoy=scaled(counts[Intensity.DECOY][1]),
        m_x_signal=scaled(counts[Intensity.SIGNAL][1] * per_sig.q_x),
        m_x_decoy=scaled(counts[Intensity.DECOY][1] * per_dec.q_x),
        elapsed_qubit_slots=int(round(rate_hz * elapsed)),
        elapsed_time_s=elapsed,
    )
    lam = math.ceil(scenario.projection_f_ec * stats.n_z * binary_entropy(stats.q_z))
    bounds = decoy_bounds(stats, em, session.distillation, lambda_ec=lam)
    secret_len = key_length(bounds, session.distillation)
    return _report_from(scenario, stats, bounds, secret_len, verified=True)


def run_scenario(scenario: ScenarioConfig, outdir: str | Path | None = None) -> LinkReport:
    """Execute one scenario end to end; optionally write its artifacts."""
    if scenario.mode == "project":
        report = _project_scenario(scenario)
        key, transcripts = None, None
    else:
        report, key, transcripts = _simulate_scenario(scenario)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_reports_csv([report], outdir / "report.csv")
        render_link_figure(report, outdir / "link_report.png")
        if key is not None:
            hex_key = np.packbits(key).tobytes().hex()
            (outdir / "secret_key.hex").write_text(hex_key + "\n", encoding="utf-8")
        if transcripts is not None:
            (outdir / "transcript_a_to_b.bin").write_bytes(transcripts[0])
            (outdir / "transcript_b_to_a.bin").write_bytes(transcripts[1])
    return report


# ---------------------------------------------------------------------------
# Dispersion sweep
# ---------------------------------------------------------------------------


def sweep_dispersion(z_grid=None, outdir: str | Path | None = None) -> list[dict]:
    """Broadened width against distance for the three laser options.

    Columns: the unchirped reference at 40 ps, the chirped diode
    (0.170 nm at 40 ps), and the narrow tuned source (0.094 nm at
    108 ps), plus the 400 ps acceptance bin as a constant line.
    """
    z = np.arange(0.0, 221.0, 2.0) if z_grid is None else np.asarray(z_grid, dtype=float)
    fiber = FiberSpec(length_km=max(float(z.max()), 1.0), total_loss_db=0.0)
    wavelength = 1550.12
    presets = {
        "fourier_limited_ps": PulseSpec(
            40.0, transform_limited_spectral_fwhm_nm(40.0, wavelength), wavelength, 0
        ),
        "chirped_diode_ps": PulseSpec(40.0, 0.170, wavelength, -1),
        "narrow_tuned_ps": PulseSpec(108.0, 0.094, wavelength, -1),
    }
    curves = {name: broadened_fwhm(pulse, fiber, z) for name, pulse in presets.items()}
    rows = [
        {
            "z_km": float(zi),
            **{name: float(curves[name][i]) for name in presets},
            "reference_ps": 400.0,
        }
        for i, zi in enumerate(z)
    ]
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rows, DISPERSION_FIELDS, outdir / "dispersion.csv")
        render_dispersion_figure(rows, outdir / "dispersion.png")
    return rows


# ---------------------------------------------------------------------------
# Long-run stability
# ---------------------------------------------------------------------------


def stability_run(
    scenario: ScenarioConfig,
    duration_s: float = 48 * 3600.0,
    interval_s: float = 3600.0,
    stabilizer_on: bool = True,
    outdir: str | Path | None = None,
    warmup_n: int = 16000,
) -> list[dict]:
    """Sample the link once per interval while the phase drifts.

    One shared drift realization spans the whole run; the feedback
    controller's memory also persists, so each interval starts where the
    previous one left the loop.  In hardware the loop runs continuously,
    but here each hour is represented by a short sampled block, so with
    ``warmup_n > 0`` a throwaway acquisition of that many sifted bits is
    run first to let the controller re-acquire the phase accumulated
    since the previous sample.  Warm-up bits never enter the key or the
    statistics.  Returns one row per interval with the distilled
    outcome; an interval fails when it yields no key.
    """
    stab = scenario.session.stabilization
    if not stabilizer_on:
        session_cfg = replace(scenario.session, stabilization=replace(stab, enabled=False))
    elif not stab.enabled:
        raise ConfigError("stability run requested with the feedback loop disabled")
    else:
        session_cfg = scenario.session

    roots = np.random.SeedSequence([scenario.seed, 0x5D1F]).spawn(2)
    drift = DriftProcess(
        stab.random_walk_sigma, stab.diurnal_amplitude_rad, stab.diurnal_period_s,
        seed=_seed_of(roots[0]),
    )
    interval_seeds = roots[1].spawn(max(1, math.ceil(duration_s / interval_s)))
    state = StabilizerState()
    params = session_cfg.distillation
    rows: list[dict] = []
    for index, seq in enumerate(interval_seeds):
        t0 = index * interval_s
        t_measure = t0
        warm_seq, meas_seq = seq.spawn(2)
        if stabilizer_on and warmup_n > 0:
            _, _, warm_stats = run_session(
                replace(session_cfg, block_target_n=warmup_n),
                seed=_seed_of(warm_seq),
                drift=drift,
                time_origin_s=t0,
                stabilizer_state=state,
            )
            t_measure += warm_stats.elapsed_time_s
        block_a, block_b, stats = run_session(
            session_cfg,
            seed=_seed_of(meas_seq),
            drift=drift,
            time_origin_s=t_measure,
            stabilizer_state=state,
        )
        if len(block_a) == 0:
            bounds = DecoyBounds(0.0, 0.0, 0.5, 0)
            secret_len = 0
        else:
            _, leak = cascade_reconcile(
                block_a.bits, block_b.bits, stats.q_z, params, seed=_seed_of(seq) ^ 1
            )
            bounds = decoy_bounds(stats, session_cfg.emission, params, lambda_ec=leak)
            secret_len = key_length(bounds, params)
        elapsed = stats.elapsed_time_s
        rows.append(
            {
                "interval": index,
                "t_s": t0,
                "n_z": stats.n_z,
                "q_z": stats.q_z,
                "phi_z_raw": stats.q_x,
                "phi_z_upper": bounds.phi_z_upper,
                "secret_len": secret_len,
                "skr": secret_len / elapsed if elapsed > 0 else 0.0,
                "failed": int(secret_len == 0),
            }
        )
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        tag = "on" if stabilizer_on else "off"
        write_rows_csv(rows, STABILITY_FIELDS, outdir / f"stability_{tag}.csv")
        render_stability_figure(rows, outdir / f"stability_{tag}.png")
    return rows


# ---------------------------------------------------------------------------
# Scenario table
# ---------------------------------------------------------------------------


def table_report(reports, outdir: str | Path | None = None) -> str:
    """Format executed scenarios as a fixed-width table; optionally write
    the table, its CSV twin, and a rate chart."""
    text = format_table(reports)
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "table.txt").write_text(text, encoding="utf-8")
        write_reports_csv(reports, outdir / "table.csv")
        render_table_figure(list(reports), outdir / "table.png")
    return text
