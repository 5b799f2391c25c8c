import json

import pytest

from ffnrep.cli import cli_main


def test_unknown_flag_is_usage_error(capsys):
    assert cli_main(["account", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_preset_is_usage_error():
    assert cli_main(["account"]) == 2


def test_invalid_config_value_is_usage_error():
    assert cli_main(["account", "--preset", "deit-tiny", "--theta", "1.5"]) == 2


def test_account_json_keys(capsys):
    assert cli_main(["account", "--preset", "deit-base", "--theta", "0.75", "--form", "infer"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert set(d) == {"per_component", "totals", "config_echo", "counting_mode", "tokens"}
    assert d["totals"]["params"] / 1e6 == pytest.approx(51.1, rel=0.01)


def test_account_csv_to_file(tmp_path):
    out = tmp_path / "a.csv"
    assert cli_main(["account", "--preset", "deit-tiny", "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == "component,params,macs"


def test_account_from_config_file(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"preset": "deit-tiny", "ffn_form": "vanilla-ln"}))
    assert cli_main(["account", "--config", str(p), "--format", "text"]) == 0
    assert "vanilla-ln" in capsys.readouterr().out


def test_init_reparam_verify_pipeline(tmp_path, capsys):
    m, r = str(tmp_path / "m.rpwt"), str(tmp_path / "m_rep.rpwt")
    assert cli_main(["init", "--preset", "deit-tiny", "--depth", "1", "--random-bn", "--out", m]) == 0
    assert cli_main(["reparam", "--in", m, "--out", r]) == 0
    capsys.readouterr()
    assert cli_main(["verify", "--in", m]) == 0
    assert json.loads(capsys.readouterr().out)["pass"]
    assert cli_main(["verify", "--in", r, "--against", m]) == 0
    assert json.loads(capsys.readouterr().out)["pass"]


def test_reparam_missing_file_is_failure(tmp_path):
    assert cli_main(["reparam", "--in", str(tmp_path / "none.rpwt"), "--out", str(tmp_path / "o.rpwt")]) == 1


def test_verify_negative_control_exit_code():
    assert cli_main(["verify", "--preset", "deit-tiny", "--depth", "1", "--probes", "2", "--corrupt"]) == 1


def test_profile_cli(capsys):
    rc = cli_main(["profile", "--preset", "deit-tiny", "--depth", "1", "--batch", "1", "--iters", "10", "--warmup", "1"])
    assert rc == 0
    d = json.loads(capsys.readouterr().out)
    for key in ("preset", "theta", "batch_size", "dtype", "warmup_iters", "measure_iters", "per_component_ms",
                "images_per_second_pre", "images_per_second_post", "speedup_percent", "environment_note"):
        assert key in d


def test_profile_zero_iters_is_usage_error():
    assert cli_main(["profile", "--preset", "deit-tiny", "--iters", "0"]) == 2


def test_train_toy_cli(tmp_path, capsys):
    rc = cli_main(["train-toy", "--steps", "2", "--save-model", str(tmp_path / "t.rpwt")])
    assert rc == 0
    d = json.loads(capsys.readouterr().out)
    assert len(d["loss_curve"]) == 2
    assert d["reparam_argmax_identical"]
    assert (tmp_path / "t.rpwt").exists()
