import csv
import json
from dataclasses import fields
from pathlib import Path

import pytest

from gprodom import cli
from gprodom.config import HELP, SECTIONS, ConfigError, RunConfig, describe_keys, load_config, resolve
from gprodom.trainer import ABLATION_ORDER

TINY = {
    "data": {"n_pairs": 48, "n_trajectories": 3, "n_train": 2, "n_test": 1, "n_runs": 1, "raw_traces": 100},
    "net": {"widths": [4, 6, 8, 10], "blocks": [1, 1, 1, 1], "compressed_channels": 8,
            "similarity_channels": 4, "head_widths": [8, 4]},
    "train": {"epochs": 1, "batch_size": 8},
    "sim": {"duration": 8.0},
}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    return root, cfg


def run_cli(capsys, *argv) -> tuple[int, str, str]:
    rc = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out.strip(), err


@pytest.fixture(scope="module")
def simulated(tiny):
    root, cfg = tiny
    rc = cli.main(["simulate", "--config", str(cfg), "--out", str(root / "out"), "--quiet"])
    assert rc == 0
    return next((root / "out").glob("simulate-*"))


# ------------------------------------------------------------------ config

def test_defaults_round_trip_and_digest():
    cfg = resolve({})
    assert cfg == RunConfig()
    assert resolve(json.loads(cfg.to_json())) == cfg
    assert resolve({}, seed=7).digest() != cfg.digest()


def test_every_unknown_key_is_reported():
    with pytest.raises(ConfigError) as exc:
        resolve({"nett": {}, "train": {"bogus": 1, "optimizer": {"lr": 0.1, "betas": 2}},
                 "fusion": {"wheel_std": -1.0}, "seed": -3})
    p = exc.value.problems
    assert "unknown section nett" in p
    assert "unknown key train.bogus" in p and "unknown key train.optimizer.betas" in p
    assert any(s.startswith("fusion:") and "wheel_std" in s for s in p)
    assert any("seed" in s for s in p)


def test_wrong_types_are_config_errors():
    with pytest.raises(ConfigError, match="data"):
        resolve({"data": {"n_pairs": "many"}})
    with pytest.raises(ConfigError, match="section scene must be a JSON object"):
        resolve({"scene": [1, 2]})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_help_documents_every_key(capsys):
    text = describe_keys()
    for name, cls in SECTIONS.items():
        assert set(HELP[name]) == {f.name for f in fields(cls)}
        for f in fields(cls):
            assert f"    {f.name} = " in text
    for command in cli.COMMANDS:
        with pytest.raises(SystemExit):
            cli.main([command, "--help"])
        out = capsys.readouterr().out
        assert "[train]" in out and "val_fraction" in out and "gpr_form" in out


# ------------------------------------------------------------------ commands

def test_simulate_layout(simulated):
    assert (simulated / "config.json").exists() and (simulated / "run.json").exists()
    assert (simulated / "dataset" / "pairs.bin").exists()
    assert sorted(p.name for p in (simulated / "runs").iterdir()) == ["sim_00"]
    meta = json.loads((simulated / "run.json").read_text())
    assert meta["seed"] == 42 and len(meta["dataset_sha256"]) == 64
    assert json.loads((simulated / "config.json").read_text())["data"]["n_pairs"] == 48


def test_simulate_train_eval_chain(simulated, tiny, capsys):
    root, cfg = tiny
    out = root / "chain"
    rc, train_dir, _ = run_cli(capsys, "train", "--config", cfg, "--out", out, "--quiet", "--dataset", simulated)
    assert rc == 0
    train_dir = Path(train_dir)
    for name in ("model.ckpt", "net.json", "model.json", "history.csv", "history.svg", "eval.csv", "metrics.json"):
        assert (train_dir / name).exists(), name
    rc, eval_dir, _ = run_cli(capsys, "eval", "--config", cfg, "--out", out, "--quiet", "--dataset", simulated,
                              "--checkpoint", train_dir)
    assert rc == 0
    # the reloaded checkpoint reproduces the training-time evaluation exactly
    assert (Path(eval_dir) / "eval.csv").read_bytes() == (train_dir / "eval.csv").read_bytes()
    rc, fuse_dir, _ = run_cli(capsys, "fuse", "--config", cfg, "--out", out, "--quiet", "--runs", simulated,
                              "--checkpoint", train_dir / "model.ckpt")
    assert rc == 0
    meta = json.loads((Path(fuse_dir) / "run.json").read_text())
    info = json.loads((train_dir / "model.json").read_text())
    assert meta["gpr_source"] == "network" and meta["gpr_std_m"] == info["validation_rmse_m"]


def test_ablate_has_four_table_rows(simulated, tiny, capsys):
    root, cfg = tiny
    rc, d, _ = run_cli(capsys, "ablate", "--config", cfg, "--out", root / "abl", "--quiet", "--dataset", simulated)
    assert rc == 0
    with (Path(d) / "ablation.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "network_configuration" and rows[0][-1] == "overall_rmse_cm"
    assert [r[0] for r in rows[1:]] == ["Feature Concatenation", "Similarity Only", "Difference Only",
                                        "Full"]
    assert len(rows) == 1 + len(ABLATION_ORDER)
    assert (Path(d) / "ablation.svg").exists()


def test_preprocess_and_plot(simulated, tiny, capsys):
    root, cfg = tiny
    rc, d, _ = run_cli(capsys, "preprocess", "--config", cfg, "--out", root / "pre", "--quiet",
                       "--input", simulated / "raw" / "traj_00.csv")
    assert rc == 0
    rows = list(csv.DictReader((Path(d) / "bscans.csv").open()))
    assert len(rows) >= 2 and all(int(r["traces"]) == 64 for r in rows)
    rc, p, _ = run_cli(capsys, "plot", "--out", root / "plot", "--quiet", "--input", Path(d) / "bscans.bin")
    assert rc == 0 and (Path(p) / "bscans.svg").read_text().startswith("<?xml")


def test_rerun_is_byte_identical(simulated, tiny, capsys):
    root, cfg = tiny
    dirs = []
    for k in range(2):
        rc, d, _ = run_cli(capsys, "fuse", "--config", cfg, "--out", root / f"det{k}", "--quiet", "--runs", simulated)
        assert rc == 0
        dirs.append(Path(d))
    for name in ("metrics.csv", "metrics.json", "trajectories/sim_00_fused.csv", "trajectories/sim_00.svg"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name


def test_outputs_stay_inside_the_run_directory(simulated, tiny, capsys):
    root, cfg = tiny
    out = root / "contained"
    rc, d, _ = run_cli(capsys, "fuse", "--config", cfg, "--out", out, "--quiet")
    assert rc == 0
    assert [p.name for p in out.iterdir()] == [Path(d).name]
    meta = json.loads((Path(d) / "run.json").read_text())
    assert all((Path(d) / o).exists() for o in meta["outputs"])


def test_errors_are_one_line_and_nonzero(tiny, capsys, monkeypatch):
    root, _ = tiny
    bad = root / "bad.json"
    bad.write_text(json.dumps({"train": {"epochs": 0, "foo": 1}, "extra": {}}))
    rc, _, err = run_cli(capsys, "train", "--config", bad, "--out", root / "err", "--quiet")
    assert rc == 2 and err.count("\n") == 1
    assert err.startswith("error: ConfigError:") and "train.foo" in err and "extra" in err and "epochs" in err
    rc, _, err = run_cli(capsys, "train", "--out", root / "err", "--quiet", "--dataset", root / "nope")
    assert rc == 2 and err.startswith("error: FileNotFoundError:")
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    rc, _, err = run_cli(capsys, "plot", "--out", root / "err", "--quiet")
    assert rc == 2 and cli.THREADS_ENV in err


def test_thread_cap_is_applied(tiny, capsys, monkeypatch):
    from threadpoolctl import threadpool_info
    root, cfg = tiny
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    rc, _, _ = run_cli(capsys, "fuse", "--config", cfg, "--out", root / "thr", "--quiet")
    assert rc == 0
    assert all(p["num_threads"] == 1 for p in threadpool_info())
