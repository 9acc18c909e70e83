"""End-to-end harness flows: scenarios, sweeps, stability runs, the table."""

from dataclasses import replace

import numpy as np
import pytest

from qkdlink.errors import ConfigError
from qkdlink.harness import (
    run_scenario,
    stability_run,
    sweep_dispersion,
    table_report,
)
from qkdlink.report import (
    STABILITY_FIELDS,
    format_table,
    read_reports_csv,
    read_rows_csv,
)
from qkdlink.scenario import builtin_scenario


def small_bench(seed=None, **session_overrides):
    """Ideal bench scenario; blocks below ~20k lose to the epsilon terms."""
    sc = builtin_scenario("bench_ideal", seed=seed)
    session = replace(sc.session, **session_overrides)
    return replace(sc, session=session)


def test_simulated_scenario_report_is_consistent():
    report = run_scenario(small_bench())
    assert report.mode == "simulate"
    assert report.n_z == 20_000
    assert report.n_z == report.n_z_signal + report.n_z_decoy
    assert report.verified
    assert report.secret_len > 0
    assert report.skr <= report.sifted_rate
    # Lossless, noiseless, perfect visibility: no key errors at all.
    assert report.m_z == 0 and report.q_z == 0.0


def test_simulated_scenario_artifacts(tmp_path):
    report = run_scenario(small_bench(), outdir=tmp_path)
    parsed = read_reports_csv(tmp_path / "report.csv")
    assert parsed == [report]
    assert (tmp_path / "link_report.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    hex_key = (tmp_path / "secret_key.hex").read_text().strip()
    assert len(hex_key) == 2 * ((report.secret_len + 7) // 8)
    int(hex_key, 16)
    assert (tmp_path / "transcript_a_to_b.bin").stat().st_size > 0
    assert (tmp_path / "transcript_b_to_a.bin").stat().st_size > 0


def test_replay_is_byte_identical(tmp_path):
    first_dir = tmp_path / "first"
    second_dir = tmp_path / "second"
    first = run_scenario(small_bench(), outdir=first_dir)
    second = run_scenario(small_bench(), outdir=second_dir)
    assert first == second
    for name in ("report.csv", "secret_key.hex", "transcript_a_to_b.bin",
                 "transcript_b_to_a.bin"):
        assert (first_dir / name).read_bytes() == (second_dir / name).read_bytes()


def test_seed_changes_the_outcome(tmp_path):
    run_scenario(small_bench(), outdir=tmp_path / "a")
    run_scenario(small_bench(seed=1234), outdir=tmp_path / "b")
    key_a = (tmp_path / "a" / "secret_key.hex").read_text()
    key_b = (tmp_path / "b" / "secret_key.hex").read_text()
    assert key_a != key_b


def test_socket_transport_matches_loopback():
    over_socket = replace(small_bench(), transport="socket")
    assert run_scenario(over_socket) == run_scenario(small_bench())


def test_projection_mode(tmp_path):
    scenario = builtin_scenario("loss_budget_40db")
    report = run_scenario(scenario, outdir=tmp_path)
    assert report.mode == "project"
    assert report.secret_len > 0
    assert report.skr <= report.sifted_rate
    # Projection has no sampled key or transcripts to write.
    assert not (tmp_path / "secret_key.hex").exists()
    assert not (tmp_path / "transcript_a_to_b.bin").exists()
    assert (tmp_path / "report.csv").exists()


def test_projection_45db_yields_no_key():
    report = run_scenario(builtin_scenario("loss_budget_45db"))
    assert report.secret_len == 0 and report.skr == 0.0


def test_sweep_dispersion_curves(tmp_path):
    rows = sweep_dispersion(outdir=tmp_path)
    assert rows[0]["z_km"] == 0.0
    assert rows[-1]["z_km"] >= 220.0
    start = rows[0]
    assert start["fourier_limited_ps"] == pytest.approx(40.0)
    assert start["chirped_diode_ps"] == pytest.approx(40.0)
    assert start["narrow_tuned_ps"] == pytest.approx(108.0)
    assert all(row["reference_ps"] == 400.0 for row in rows)
    by_z = {row["z_km"]: row for row in rows}
    assert by_z[50.0]["fourier_limited_ps"] == pytest.approx(85.0, rel=0.05)
    assert by_z[100.0]["fourier_limited_ps"] == pytest.approx(150.0, rel=0.05)
    assert by_z[200.0]["fourier_limited_ps"] == pytest.approx(300.0, rel=0.05)
    for z, row in by_z.items():
        if z <= 105.0:
            assert row["narrow_tuned_ps"] < 400.0
    assert read_rows_csv(tmp_path / "dispersion.csv") == rows
    assert (tmp_path / "dispersion.png").exists()


def test_sweep_dispersion_custom_grid():
    rows = sweep_dispersion(np.array([0.0, 10.0]))
    assert [row["z_km"] for row in rows] == [0.0, 10.0]


def stability_scenario():
    sc = builtin_scenario("stability_bench")
    session = replace(sc.session, block_target_n=20_000)
    return replace(sc, session=session)


def test_stability_rows_shape(tmp_path):
    rows = stability_run(
        stability_scenario(), duration_s=2 * 3600.0, interval_s=3600.0, outdir=tmp_path
    )
    assert len(rows) == 2
    for index, row in enumerate(rows):
        assert sorted(row) == sorted(STABILITY_FIELDS)
        assert row["interval"] == index
        assert row["t_s"] == index * 3600.0
        assert row["failed"] in (0, 1)
    assert read_rows_csv(tmp_path / "stability_on.csv") == rows
    assert (tmp_path / "stability_on.png").exists()


def test_stability_off_uses_other_artifact_names(tmp_path):
    rows = stability_run(
        stability_scenario(), duration_s=3600.0, interval_s=3600.0,
        stabilizer_on=False, outdir=tmp_path,
    )
    assert len(rows) == 1
    assert (tmp_path / "stability_off.csv").exists()
    assert not (tmp_path / "stability_on.csv").exists()


def test_stability_requires_a_configured_loop():
    sc = stability_scenario()
    disabled = replace(
        sc, session=replace(sc.session, stabilization=replace(
            sc.session.stabilization, enabled=False))
    )
    with pytest.raises(ConfigError):
        stability_run(disabled, duration_s=3600.0, interval_s=3600.0)


def test_stability_without_drift_is_flat():
    sc = stability_scenario()
    still = replace(
        sc, session=replace(sc.session, stabilization=replace(
            sc.session.stabilization,
            random_walk_sigma=0.0, diurnal_amplitude_rad=0.0))
    )
    rows = stability_run(still, duration_s=3 * 3600.0, interval_s=3600.0)
    raws = [row["phi_z_raw"] for row in rows]
    # Nothing moves, so the monitored error stays at the dither floor and
    # the key-basis error at the device floor.
    assert max(raws) < 0.02
    assert max(raws) - min(raws) < 0.01
    qs = [row["q_z"] for row in rows]
    assert max(qs) - min(qs) < 0.01


def test_table_report_roundtrip(tmp_path):
    reports = [
        run_scenario(builtin_scenario("loss_budget_40db")),
        run_scenario(builtin_scenario("loss_budget_45db")),
    ]
    text = table_report(reports, outdir=tmp_path)
    assert text == format_table(reports)
    assert (tmp_path / "table.txt").read_text(encoding="utf-8") == text
    assert read_reports_csv(tmp_path / "table.csv") == reports
    assert (tmp_path / "table.png").exists()
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[1].split()[1] == "40.0" and lines[2].split()[1] == "45.0"


def test_table_report_empty(tmp_path):
    text = table_report([], outdir=tmp_path)
    assert len(text.splitlines()) == 1
    assert read_reports_csv(tmp_path / "table.csv") == []
