import subprocess
import sys

import pytest

from nvfluidics import scenario as S
from nvfluidics.cli import main


def test_list_examples(capsys):
    assert main(["list-examples"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split("\t")[0] for line in out] == S.list_examples()
    assert "t1\tt1" in out


def test_validate_ok_and_error(tmp_path, capsys):
    good = tmp_path / "good.toml"
    good.write_text(S.load_example("sensitivity").dumps())
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "sensitivity"\n[geometry]\nheight = -80.0\n')
    assert main(["validate", str(good)]) == 0
    assert "ok (sensitivity)" in capsys.readouterr().out
    assert main(["validate", str(good), str(bad)]) == 2
    err = capsys.readouterr().err
    assert f"{bad}: error: geometry.height: must be positive" in err


def test_validate_example_names(capsys):
    assert main(["validate", *S.list_examples()]) == 0


def test_run_with_seed_and_out_dir(tmp_path, capsys):
    assert main(["run", "rabi", "--seed", "5", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "fitted_frequency_hz" in out
    m = S.RunManifest.load(tmp_path / "manifest.toml")
    assert m.seed == 5 and m.config["seed"] == 5
    # same invocation, same bytes
    assert main(["run", "rabi", "--seed", "5", "--out-dir", str(tmp_path / "again")]) == 0
    assert S.RunManifest.load(tmp_path / "again" / "manifest.toml").digests == m.digests


def test_run_paper_scale_flag(tmp_path, monkeypatch):
    seen = {}

    def fake_run(cfg, out_dir, workers=None):
        seen["cfg"] = cfg
        raise RuntimeError("stop here")

    monkeypatch.setattr(S, "run", fake_run)
    assert main(["run", "sensitivity", "--paper-scale", "--out-dir", str(tmp_path)]) == 1
    assert seen["cfg"]["mc"]["n_averages"] == 10_000


def test_run_invalid_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('kind = "rabi"\n[sequence]\nn_points = -4\n')
    assert main(["run", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert "sequence.n_points:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert main(["run", "rabi", "--seed", "-1"]) == 2


def test_unknown_example_name(capsys):
    assert main(["run", "no-such-example"]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_usage_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nvfluidics", "run", "t1", "--out-dir", str(tmp_path)],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "manifest.toml").exists()
    proc = subprocess.run([sys.executable, "-m", "nvfluidics", "validate", str(tmp_path / "x.toml")],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 2 and "error" in proc.stderr
