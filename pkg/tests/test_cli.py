import csv
import json

import pytest

from cfgan import cli, nets


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return cli.main([str(a) for a in argv])


def fast_power(tmp_path, name="tp", *extra):
    return run("testpower", "--dims", "1,2", "--n", 40, "--trials", 3, "--permutations", 19,
               "--steps", 3, "--out-dir", tmp_path / name, *extra)


def test_testpower_writes_one_row_per_trial(tmp_path, capsys):
    assert fast_power(tmp_path) == 0
    trials = rows(tmp_path / "tp" / "trials.csv")
    assert len(trials) == 2 * 4 * 3
    summary = rows(tmp_path / "tp" / "summary.csv")
    assert len(summary) == 2 * 4 and "power" in summary[0]
    manifest = json.loads((tmp_path / "tp" / "manifest.json").read_text())
    assert manifest["command"] == "testpower" and manifest["config"]["trials"] == 3
    assert "power=" in capsys.readouterr().out


def test_null_reports_acceptance(tmp_path):
    assert run("null", "--dims", "1", "--n", 40, "--trials", 2, "--permutations", 19,
               "--statistics", "ecfd", "--out-dir", tmp_path) == 0
    summary = rows(tmp_path / "summary.csv")
    assert list(summary[0]) == ["dim", "statistic", "acceptance", "stderr"]


def test_zero_trials(tmp_path):
    assert run("testpower", "--dims", "1", "--trials", 0, "--out-dir", tmp_path) == 0
    assert rows(tmp_path / "trials.csv") == []


def test_bad_alpha_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("testpower", "--alpha", 1.5, "--out-dir", tmp_path)
    assert exc.value.code == 2
    assert "--alpha" in capsys.readouterr().err
    assert not (tmp_path / "manifest.json").exists()


def test_unknown_model_lists_valid_names(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("gan", "--model", "dcgan", "--out-dir", tmp_path)
    assert exc.value.code == 2
    err = capsys.readouterr().err
    assert "ocfgan_gp" in err and "mmdgan" in err


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"trails": 3}))
    with pytest.raises(SystemExit) as exc:
        run("testpower", "--config", cfg, "--out-dir", tmp_path / "o")
    assert exc.value.code == 2


def test_gan_outputs_and_resolved_defaults(tmp_path):
    out = tmp_path / "g"
    assert run("gan", "--model", "wgan", "--dataset", "d2", "--iters", 4, "--log-every", 2,
               "--n-eval", 200, "--out-dir", out) == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["clip"] == 0.1 and cfg["iters"] == 4 and cfg["family"] == "gaussian"
    metrics = rows(out / "metrics.csv")
    assert [int(r["iter"]) for r in metrics] == [0, 2, 4]
    critic = nets.load(out / "critic.bin")
    assert critic.sizes == (1, 11, 29, 11, 1)
    assert max(abs(critic.flat())) <= 0.1
    assert nets.load(out / "generator.bin").sizes == (1, 7, 13, 7, 1)


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"iters": 6, "log_every": 3, "n_eval": 100, "model": "cfgan"}))
    assert run("gan", "--config", cfg, "--iters", 3, "--out-dir", tmp_path / "g") == 0
    stored = json.loads((tmp_path / "g" / "manifest.json").read_text())["config"]
    assert stored["iters"] == 3 and stored["model"] == "cfgan" and stored["log_every"] == 3


def test_rerun_is_byte_identical_and_replay_matches(tmp_path):
    args = ("gan", "--iters", 5, "--log-every", 5, "--n-eval", 300, "--seed", 4)
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    assert run("replay", tmp_path / "a" / "manifest.json", "--out-dir", tmp_path / "c") == 0
    for name in ("metrics.csv", "generator.bin", "critic.bin"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_testpower_replay_via_config(tmp_path):
    assert fast_power(tmp_path, "a") == 0
    assert run("testpower", "--config", tmp_path / "a" / "manifest.json",
               "--out-dir", tmp_path / "b") == 0
    for name in ("trials.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_existing_manifest_needs_force(tmp_path):
    assert run("equiv", "--reps", 5, "--out-dir", tmp_path) == 0
    with pytest.raises(SystemExit) as exc:
        run("equiv", "--reps", 5, "--out-dir", tmp_path)
    assert exc.value.code == 2
    assert run("equiv", "--reps", 5, "--out-dir", tmp_path, "--force") == 0


def test_equiv_default_passes(tmp_path, capsys):
    assert run("equiv", "--out-dir", tmp_path, "--strict") == 0
    assert "PASS" in capsys.readouterr().out
    assert rows(tmp_path / "equiv.csv")[0]["pass"] == "1"


def test_equiv_single_rep_runs(tmp_path):
    assert run("equiv", "--reps", 1, "--out-dir", tmp_path) == 0
    assert len(rows(tmp_path / "equiv.csv")) == 1


def test_equiv_wrong_sigma_length(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("equiv", "--sigma", "1,2,3", "--dim", 2, "--out-dir", tmp_path)
    assert exc.value.code == 2


def test_bench_rows(tmp_path):
    assert run("bench", "--ns", "100,200,400", "--repeats", 1, "--out-dir", tmp_path) == 0
    bench = rows(tmp_path / "bench.csv")
    assert len(bench) == 3 * 2
    assert {r["estimator"] for r in bench} == {"ecfd", "mmd2"}
    assert all(float(r["seconds"]) >= 0 for r in bench)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_abort_exits_one(tmp_path, capsys):
    # an absurd learning rate makes the losses blow up
    code = run("gan", "--model", "wgan_gp", "--lr", 1e200, "--iters", 50, "--n-eval", 50,
               "--out-dir", tmp_path)
    assert code == 1
    assert "non-finite" in capsys.readouterr().err
