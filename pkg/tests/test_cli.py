import logging
import math
from pathlib import Path
from types import SimpleNamespace

import pytest

from isac_covert import experiments as ex
from isac_covert.cli import main
from isac_covert.sca import DesignStatus

from conftest import CONFIG_DIR

TOY = CONFIG_DIR / "toy.toml"


def _csv_rows(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# isac-")
    return lines[1], lines[2:]


def test_design_toy_writes_artifacts(tmp_path, capsys):
    assert main(["design", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    assert "Converged" in capsys.readouterr().out
    wf = (tmp_path / "waveform.txt").read_text().splitlines()
    assert wf[0] == f"# {ex.WAVEFORM_SCHEMA}" and len(wf) == 1 + 4
    header, rows = _csv_rows(tmp_path / "trace.csv")
    assert header == "iter,scnr_db,v,eta,status,ms"
    assert 1 <= len(rows) <= 5
    header, rows = _csv_rows(tmp_path / "filterbank.csv")
    assert header == "f0,index,re,im" and len(rows) == 8
    header, rows = _csv_rows(tmp_path / "audit.csv")
    assert header == "quantity,value,limit,pass"
    assert all(r.endswith("pass") for r in rows)
    assert {r.split(",")[0] for r in rows} >= {"energy_dev", "papr_max", "amp_min",
                                              "phase_max", "covert_lhs"}


def test_design_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(TOY.read_text().replace('covert_eps = "off"', 'covert_eps = "off"\namp_floor = 1.5'))
    assert main(["design", "--config", str(bad), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert f"{bad}:" in err and "amp_floor" in err
    assert main(["design", "--out", str(tmp_path)]) == 1
    assert main(["design", "--config", str(tmp_path / "missing.toml")]) == 1


def test_design_infeasible_exit_code(tmp_path):
    cfg = tmp_path / "zf.toml"
    cfg.write_text(TOY.read_text().replace('covert_eps = "off"', "covert_eps = 0.0"))
    assert main(["design", "--config", str(cfg), "--out", str(tmp_path)]) == ex.EXIT_INFEASIBLE


def test_exit_code_mapping():
    def fake(status, ok):
        return SimpleNamespace(status=status, audit=SimpleNamespace(ok=ok))

    assert ex._exit_code(fake(DesignStatus.CONVERGED, True)) == 0
    assert ex._exit_code(fake(DesignStatus.ITERATION_LIMIT, True)) == 2
    assert ex._exit_code(fake(DesignStatus.NUMERICAL_FAILURE, True)) == 2
    assert ex._exit_code(fake(DesignStatus.CONVERGED, False)) == 4


def test_sweep_two_by_two(tmp_path):
    assert main(["sweep", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    header, rows = _csv_rows(tmp_path / "sweep.csv")
    assert header.split(",")[:7] == ["xi", "eps", "scnr_db", "iters", "status", "warm_from",
                                     "nested_ok"]
    assert header.endswith("ser@10dB,ser@20dB")
    assert len(rows) == 4
    assert all(",true," in r for r in rows)


def test_sweep_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(TOY), "--out", str(a)]) == 0
    assert main(["sweep", "--config", str(TOY), "--out", str(b), "--jobs", "2"]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_doppler_singleton_matches_design(tmp_path):
    assert main(["design", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    assert main(["doppler", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    _, rows = _csv_rows(tmp_path / "doppler.csv")
    assert len(rows) == 1
    _, trace = _csv_rows(tmp_path / "trace.csv")
    assert float(rows[0].split(",")[1]) == pytest.approx(float(trace[-1].split(",")[1]),
                                                         abs=1e-9)


def test_ser_long_format(tmp_path):
    assert main(["ser", "--config", str(TOY), "--out", str(tmp_path)]) == 0
    header, rows = _csv_rows(tmp_path / "ser.csv")
    assert header == "xi,eps,snr_db,ser,se,trials"
    assert len(rows) == 2 * 2 * 2


def test_verify_passes_and_detects_fault(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path / "ok")]) == 0
    header, rows = _csv_rows(tmp_path / "ok" / "verify.csv")
    assert header == "check,value,threshold,pass"
    assert all(r.endswith(",pass") for r in rows)
    capsys.readouterr()
    code = main(["verify", "--out", str(tmp_path / "bad"), "--inject-fault", "negate_filter"])
    assert code == ex.EXIT_CHECK_FAILED
    assert "filter_optimality" in capsys.readouterr().err


def test_verify_verdicts_stable_across_seeds(tmp_path):
    verdicts = []
    for seed in (1, 2):
        main(["verify", "--seed", str(seed), "--out", str(tmp_path / str(seed))])
        _, rows = _csv_rows(tmp_path / str(seed) / "verify.csv")
        verdicts.append([(r.split(",")[0], r.split(",")[-1]) for r in rows])
    assert verdicts[0] == verdicts[1]


@pytest.mark.parametrize("command, files", [
    ("design", ["waveform.txt", "filterbank.csv", "trace.csv", "audit.csv"]),
    ("sweep", ["sweep.csv"]),
    ("doppler", ["doppler.csv"]),
    ("ser", ["ser.csv"]),
    ("verify", ["verify.csv"]),
])
def test_byte_identical_reruns(tmp_path, command, files):
    outs = []
    for run in ("a", "b"):
        argv = [command, "--out", str(tmp_path / run), "--seed", "5"]
        if command != "verify":
            argv += ["--config", str(TOY)]
        assert main(argv) == 0
        outs.append([(tmp_path / run / f).read_bytes() for f in files])
    assert outs[0] == outs[1]


def test_timing_flag_fills_ms(tmp_path):
    assert main(["design", "--config", str(TOY), "--out", str(tmp_path), "--timing"]) == 0
    _, rows = _csv_rows(tmp_path / "trace.csv")
    assert all(float(r.split(",")[-1]) >= 0 for r in rows)


def test_log_level_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("ISAC_LOG", "debug")
    root = logging.getLogger()
    old = root.handlers[:]
    root.handlers.clear()
    try:
        main(["design", "--config", str(TOY), "--out", str(tmp_path)])
        assert root.level == logging.DEBUG
    finally:
        root.handlers[:] = old
        root.setLevel(logging.WARNING)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    ex.write_atomic(tmp_path / "x.csv", "a\n")
    ex.write_atomic(tmp_path / "x.csv", "b\n")
    assert [p.name for p in tmp_path.iterdir()] == ["x.csv"]
    assert (tmp_path / "x.csv").read_text() == "b\n"


def test_invalid_jobs_and_seed(tmp_path):
    assert main(["design", "--config", str(TOY), "--jobs", "0"]) == 1
    assert main(["design", "--config", str(TOY), "--seed", str(2**64)]) == 1
