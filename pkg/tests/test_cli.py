import csv

import pytest

from kramers_lab import __version__, cli


@pytest.fixture
def out(tmp_path, monkeypatch):
    target = tmp_path / "out"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    return target


def _config(tmp_path, text):
    p = tmp_path / "exp.toml"
    p.write_text(text)
    return str(p)


def test_run_elliptic_succeeds(tmp_path, out, capsys):
    code = cli.main(["run", _config(tmp_path, 'experiment = "friction-elliptic"\n')])
    assert code == cli.EXIT_OK
    rows = list(csv.DictReader(open(out / "friction-elliptic" / "sweep.csv")))
    osc = [float(r["osc_V"]) for r in rows]
    assert len(rows) == 12 and all(b <= a + 1e-10 for a, b in zip(osc, osc[1:]))
    report = (out / "friction-elliptic" / "report.txt").read_text()
    assert "config_hash" in report and __version__ in report
    assert "exit code: 0" in capsys.readouterr().out


def test_sde_sweep_rows(tmp_path, out):
    text = 'experiment = "sk-sde"\nseed = 2024\n'
    assert cli.main(["run", _config(tmp_path, text)]) == cli.EXIT_OK
    rows = list(csv.DictReader(open(out / "sk-sde" / "sk-sde.csv")))
    est = [float(r["estimate"]) for r in rows]
    assert len(rows) == 3 and est == sorted(est, reverse=True)


def test_assertion_failure_exit_and_marker(tmp_path, out, capsys):
    text = 'experiment = "sk-sde"\nseed = 1\nnpaths = 200\nmu_schedule = [0.1, 0.05]\n'
    assert cli.main(["run", _config(tmp_path, text)]) == cli.EXIT_ASSERTION
    lines = (out / "sk-sde" / "sk-sde.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[-1].startswith("FAILED")
    assert "assertion failed" in capsys.readouterr().err


def test_numerical_failure_keeps_partial_csv(tmp_path, out, capsys):
    text = 'experiment = "friction-adjoint"\nmaxiter = 10\n'
    assert cli.main(["run", _config(tmp_path, text)]) == cli.EXIT_NUMERICAL
    lines = (out / "friction-adjoint" / "friction-adjoint.csv").read_text().splitlines()
    assert lines[0].startswith("epsilon,") and lines[-1].startswith("FAILED")
    assert "did not converge" in capsys.readouterr().err


def test_config_errors_exit_two(tmp_path, out, capsys):
    assert cli.main(["run", _config(tmp_path, 'experiment = "sk-pde"\ncatalog = "nope"\n')]) == cli.EXIT_CONFIG
    assert "key 'catalog'" in capsys.readouterr().err
    assert cli.main(["verify-all", "--catalog", "nope"]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG


def test_verify_all_constant_catalog(out):
    assert cli.main(["verify-all", "--catalog", "constant"]) == cli.EXIT_OK
    assert (out / "verify-all" / "report.txt").exists()


def test_print_defaults(capsys):
    assert cli.main(["print-defaults", "--experiment", "sk-pde"]) == cli.EXIT_OK
    text = capsys.readouterr().out
    assert "mu_schedule" in text and "sk-sde" not in text


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0 and __version__ in capsys.readouterr().out


def test_output_dir_from_config_without_env(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    target = tmp_path / "chosen"
    text = f'experiment = "friction-adjoint"\niterative = false\noutput_dir = "{target}"\n'
    assert cli.main(["run", _config(tmp_path, text)]) == cli.EXIT_OK
    assert (target / "friction-adjoint" / "friction-adjoint.csv").exists()


def test_verify_all_skips_checks_that_need_positive_friction(out):
    assert cli.main(["verify-all", "--catalog", "smooth-bump-friction"]) == cli.EXIT_OK
    report = (out / "verify-all" / "report.txt").read_text()
    assert "SKIP" in report and "0 failed" in report
