"""Command-line surface: verbs, flags, exit codes, artifact placement."""

import pytest

from qkdlink.cli import EXIT_CONFIG, EXIT_NO_KEY, EXIT_OK, build_parser, main


def test_run_verb_writes_artifacts(tmp_path, capsys):
    code = main(["run", "--preset", "bench_ideal", "--outdir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "bench_ideal" in out and "secret key" in out
    for name in ("report.csv", "link_report.png", "secret_key.hex"):
        assert (tmp_path / name).exists()


def test_run_verb_reports_missing_key_with_exit_2(tmp_path):
    config = tmp_path / "starved.ini"
    config.write_text(
        "[scenario]\npreset = bench_ideal\nname = starved\nseed = 3\n"
        "\n[session]\nblock_target_n = 4000\n",
        encoding="utf-8",
    )
    code = main(["run", "--config", str(config), "--outdir", str(tmp_path / "out")])
    assert code == EXIT_NO_KEY


def test_run_verb_seed_override(tmp_path, capsys):
    main(["run", "--preset", "bench_ideal", "--seed", "77",
          "--outdir", str(tmp_path)])
    assert "seed 77" in capsys.readouterr().out


def test_run_verb_socket_transport(tmp_path):
    code = main(["run", "--preset", "bench_ideal", "--transport", "socket",
                 "--outdir", str(tmp_path)])
    assert code == EXIT_OK


def test_missing_config_file_exits_4(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "absent.ini")])
    assert code == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_config_contents_exit_4(tmp_path):
    config = tmp_path / "bad.ini"
    config.write_text("[scenario]\nname = x\n", encoding="utf-8")
    assert main(["run", "--config", str(config)]) == EXIT_CONFIG


def test_run_without_scenario_exits_4(capsys):
    assert main(["run"]) == EXIT_CONFIG
    assert "either --config or --preset" in capsys.readouterr().err


def test_usage_errors_exit_4():
    with pytest.raises(SystemExit) as info:
        main(["run", "--preset", "not_a_preset"])
    assert info.value.code == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_CONFIG


def test_sweep_dispersion_verb(tmp_path, capsys):
    code = main(["sweep-dispersion", "--z-max", "120", "--z-step", "10",
                 "--outdir", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "dispersion.csv").exists()
    assert (tmp_path / "dispersion.png").exists()
    assert "13 grid points" in capsys.readouterr().out


def test_stability_verb(tmp_path, capsys):
    code = main(["stability", "--hours", "1", "--outdir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "loop on" in out and "loop off" in out
    assert (tmp_path / "stability_on.csv").exists()
    assert (tmp_path / "stability_off.csv").exists()


def test_table_verb(tmp_path, capsys):
    code = main(["table", "--preset", "loss_budget_40db",
                 "--preset", "loss_budget_45db", "--outdir", str(tmp_path)])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "SKR_bps" in out
    assert (tmp_path / "table.txt").exists()
    assert (tmp_path / "table.csv").exists()


def test_selftest_verb(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("ok") >= 4


def test_parser_lists_all_verbs():
    text = build_parser().format_help()
    for verb in ("run", "sweep-dispersion", "stability", "table", "selftest"):
        assert verb in text
