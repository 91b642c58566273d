import json

import pytest

from diswaps.cli import atomic_write, build_parser, read_config, run


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("DISWAPS_OUT", str(tmp_path))
    return tmp_path


def test_price_lv_black76(out, capsys):
    assert run(["price", "--payoff", "lv", "--f0", "1", "--sigma", "0.2", "--tau", "1"]) == 0
    rep = json.loads((out / "price.json").read_text())
    assert rep["fair_value"] == pytest.approx(0.04, abs=1e-6)
    assert capsys.readouterr().out.count("\n") == 1


def test_price_from_chain_file(out):
    assert run(["chain-gen", "--f0", "100", "--strikes", "2048"]) == 0
    assert run(["price", "--payoff", "moment:2", "--state", str(out / "chain.csv")]) == 0
    rep = json.loads((out / "price.json").read_text())
    assert rep["fair_value"] == pytest.approx(0.04, abs=1e-5)


def test_price_model_straddle(out):
    assert run(["price", "--payoff", "straddle:100", "--state", "model"]) == 0
    rep = json.loads((out / "price.json").read_text())
    assert rep["fair_value"] == pytest.approx(-63.45, abs=0.01)


def test_verify_ap_fails_for_squared_returns(out, capsys):
    code = run(["verify-ap", "--payoff", "classic:SquaredLogReturn", "--partitions", "1,12",
                "--paths", "1000000", "--seed", "1"])
    assert code == 2
    text = capsys.readouterr().out
    assert "N12" in text and "FAIL" in text
    assert json.loads((out / "verify_ap.json").read_text())["passed"] is False


def test_verify_ap_passes_for_lv(out):
    assert run(["verify-ap", "--payoff", "lv", "--partitions", "1,12,irregular:3:20", "--paths", "5000",
                "--seed", "1"]) == 0


def test_residual_codes(out):
    assert run(["residual", "--payoff", "lv"]) == 0
    assert run(["residual", "--payoff", "classic:SquaredLogReturn"]) == 2
    assert run(["residual", "--payoff", "lv", "--points", "random:5:2", "--mode", "fd", "--h", "1e-3"]) == 0


def test_stochastic_commands_are_reproducible(out, tmp_path):
    cmds = [
        ["hedge", "--payoff", "moment:3", "--partition", "monthly", "--paths", "300"],
        ["delta", "--payoff", "classic:SquaredLogReturn", "--paths", "3000", "--fine-factor", "16"],
        ["premium", "--payoff", "lv", "--drift", "0.05", "--paths", "3000"],
        ["verify-ap", "--payoff", "lv", "--partitions", "1,12", "--paths", "3000"],
    ]
    for cmd in cmds:
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(cmd + ["--seed", "5", "--threads", "1", "--out", str(a)]) == 0
        assert run(cmd + ["--seed", "5", "--threads", "3", "--out", str(b)]) == 0
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_usage_errors(out, capsys):
    assert run(["price", "--bogus"]) == 1
    assert run(["hedge", "--payoff", "lv"]) == 1  # seed missing
    assert run(["price", "--payoff", "missing.json"]) == 1
    assert run(["price"]) == 1
    assert run([]) == 1
    assert run(["hedge", "--payoff", "classic:Tau", "--seed", "1"]) == 1
    assert run(["price", "--payoff", "classic:Nope"]) == 1
    err = capsys.readouterr().err
    assert "seed" in err and "payoff" in err


def test_config_file_overridden_by_flags(out, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# experiment\npayoff = lv\nsigma = 0.3\nf0 = 1\n")
    assert run(["price", "--config", str(cfg)]) == 0
    assert json.loads((out / "price.json").read_text())["fair_value"] == pytest.approx(0.09, abs=1e-5)
    assert run(["price", "--config", str(cfg), "--sigma", "0.2"]) == 0
    assert json.loads((out / "price.json").read_text())["fair_value"] == pytest.approx(0.04, abs=1e-5)
    cfg.write_text("colour = blue\n")
    assert run(["price", "--config", str(cfg)]) == 1
    assert read_config(str(tmp_path / "run.cfg")) == {"colour": "blue"}


def test_help_lists_flags(capsys):
    assert run(["hedge", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--payoff", "--seed", "--paths", "--threads", "--partition", "--config", "--out"):
        assert flag in text


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "x.json", "{}")
    assert [p.name for p in tmp_path.iterdir()] == ["x.json"]
    assert build_parser().prog == "diswaps"
