import json

import pytest

from moedrive import cli, reports
from moedrive.cli import EXIT_CONFIG, EXIT_DATA, EXIT_MODEL, EXIT_OK, EXIT_OUTPUT, main, tau_grid
from moedrive.model import DrivingModel


@pytest.fixture(scope="module")
def trained(small_dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(small_dataset_dir), "--out", str(out), "--epochs", "1"]) == EXIT_OK
    return out


def test_gen_data_counts_and_determinism(tmp_path):
    args = ["gen-data", "--scenarios", "Merging,TrafficSign", "--clips-per-scenario", "3,2", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert [c["scenario_id"] for c in man["clips"]] == [0, 0, 0, 4, 4]
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_gen_data_rejects_zero_clips(tmp_path):
    assert main(["gen-data", "--clips-per-scenario", "0", "--out", str(tmp_path / "z")]) == EXIT_CONFIG
    assert not (tmp_path / "z").exists()


def test_gen_data_rejects_unknown_scenario(tmp_path):
    assert main(["gen-data", "--scenarios", "Parking", "--out", str(tmp_path / "z")]) == EXIT_CONFIG


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--clips-per-scenario", "1", "--out", str(blocker / "sub" / "d")]) == EXIT_OUTPUT


def test_train_outputs(trained):
    for name in ("model.ckpt", "train_log.jsonl", "config.ini", "manifest.json"):
        assert (trained / name).exists()
    man = json.loads((trained / "manifest.json").read_text())
    assert man["command"] == "train" and man["checkpoint_hash"] and man["dataset_manifest_hash"]
    lines = (trained / "train_log.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["epoch"] == 0
    model = DrivingModel.load(trained / "model.ckpt")
    assert model.meta["tau"] == 0.5
    assert model.meta["loss_weights"]["speed"] == 0.05


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert not (tmp_path / "o").exists()


def test_train_bad_config(small_dataset_dir, tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nlr = -1\n")
    assert main(["train", "--config", str(cfg), "--data", str(small_dataset_dir), "--out", str(tmp_path / "o")]) \
        == EXIT_CONFIG


def test_eval_report(trained, small_dataset_dir, tmp_path):
    ckpt = str(trained / "model.ckpt")
    args = ["eval", "--checkpoint", ckpt, "--episodes-per-scenario", "1", "--data", str(small_dataset_dir)]
    assert main(args + ["--report", str(tmp_path / "r1")]) == EXIT_OK
    assert main(args + ["--report", str(tmp_path / "r2")]) == EXIT_OK
    man = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    for name in ("episodes.csv", "summary.csv", "abilities.csv", "router_accuracy.csv", "utilization.csv",
                 "traces.csv"):
        a = (tmp_path / "r1" / name).read_bytes()
        assert a == (tmp_path / "r2" / name).read_bytes()
        h, rows = reports.read_csv(tmp_path / "r1" / name)
        assert h == man["manifest_hash"]
    _, util = reports.read_csv(tmp_path / "r1" / "utilization.csv")
    assert [r["expert"] for r in util] == reports.EXPERT_NAMES
    assert sum(float(r["overall"]) for r in util) == pytest.approx(1.0)
    _, abil = reports.read_csv(tmp_path / "r1" / "abilities.csv")
    assert len(abil) == 5


def test_eval_untrained_model_is_well_formed(tmp_path):
    DrivingModel(seed=0).save(tmp_path / "zero.ckpt")
    assert main(["eval", "--checkpoint", str(tmp_path / "zero.ckpt"), "--episodes-per-scenario", "1",
                 "--report", str(tmp_path / "r")]) == EXIT_OK
    _, summary = reports.read_csv(tmp_path / "r" / "summary.csv")
    values = {r["metric"]: float(r["value"]) for r in summary}
    assert values["success_rate"] <= 20.0
    assert values["episodes"] == 5


def test_eval_bad_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--report", str(tmp_path / "r")]) == EXIT_MODEL
    assert main(["eval", "--checkpoint", str(tmp_path / "none"), "--report", str(tmp_path / "r")]) == EXIT_MODEL


def test_eval_dataset_hash_mismatch(trained, tmp_path):
    assert main(["gen-data", "--clips-per-scenario", "1", "--seed", "99", "--out", str(tmp_path / "other")]) \
        == EXIT_OK
    code = main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--episodes-per-scenario", "1",
                 "--data", str(tmp_path / "other"), "--report", str(tmp_path / "r")])
    assert code == EXIT_DATA
    assert not (tmp_path / "r").exists()


def test_partial_report_removed_on_failure(trained, tmp_path, monkeypatch):
    def boom(m):
        raise cli.OutputError("disk full")

    monkeypatch.setattr(reports, "trace_rows", boom)
    code = main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--episodes-per-scenario", "1",
                 "--report", str(tmp_path / "r")])
    assert code == EXIT_OUTPUT
    assert not (tmp_path / "r").exists()


def test_tau_grid():
    assert tau_grid(0.0, 1.0, 0.1) == [round(0.1 * i, 10) for i in range(11)]
    with pytest.raises(cli.ConfigError):
        tau_grid(0.5, 0.2, 0.1)


def test_sweep_tau_small(trained, tmp_path):
    assert main(["sweep-tau", "--checkpoint", str(trained / "model.ckpt"), "--step", "0.5",
                 "--episodes-per-scenario", "1", "--out", str(tmp_path / "s")]) == EXIT_OK
    h, rows = reports.read_csv(tmp_path / "s" / "sweep.csv")
    assert [float(r["tau"]) for r in rows] == [0.0, 0.5, 1.0]
    assert float(rows[0]["global_utilization"]) == 1.0
    svg = (tmp_path / "s" / "sweep.svg").read_text()
    assert svg.startswith("<svg") and f"manifest {h}" in svg


def test_ablate_small(small_dataset_dir, tmp_path):
    assert main(["ablate", "--data", str(small_dataset_dir), "--out", str(tmp_path / "a"), "--epochs", "1",
                 "--episodes-per-scenario", "1"]) == EXIT_OK
    _, rows = reports.read_csv(tmp_path / "a" / "ablation.csv")
    assert [r["variant"] for r in rows] == ["geminus", "scenario_moe", "vanilla_moe", "single_expert"]
    assert list(rows[0]) == ["variant", "driving_score", "success_rate", "ability_mean"]


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_parse_variants_keeps_table_order():
    assert cli.parse_variants("single_expert, geminus") == ["geminus", "single_expert"]
    with pytest.raises(cli.ConfigError):
        cli.parse_variants("geminus,mystery")
    with pytest.raises(cli.ConfigError):
        cli.parse_variants(" , ")
