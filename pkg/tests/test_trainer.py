import math

import numpy as np
import pytest

from gprodom.autonn import load_module
from gprodom.datagen import MotionConfig, PairDataset, SceneConfig, generate_dataset
from gprodom.odomnet import NetConfig, OdomNet
from gprodom.preprocess import PreprocessConfig
from gprodom.trainer import (
    ABLATION_ORDER, History, TrainConfig, evaluate_relative, holdout_split, mean_predictor_rmse,
    run_ablation, train, write_ablation_csv, write_history_csv, write_reports_csv,
)

NET = NetConfig(height=32, width=32, widths=(4, 6, 8, 10), blocks=(1, 1, 1, 1), compressed_channels=8,
                similarity_channels=4, head_widths=(8, 6), dropout=0.1, spatial_kernel=3)


@pytest.fixture(scope="module")
def tiny():
    ds = generate_dataset(SceneConfig(track_length=4.0, rows=32), MotionConfig(0.0, 0.15),
                          PreprocessConfig(L=32), 40, 4, seed=3)
    return ds.subset(["traj_00", "traj_01", "traj_02"]), ds.subset(["traj_03"])


def test_config_validation():
    with pytest.raises(ValueError) as exc:
        TrainConfig(epochs=0, batch_size=0, variant="nope")
    msg = str(exc.value)
    assert "epochs" in msg and "batch_size" in msg and "variant" in msg
    cfg = TrainConfig(optimizer={"kind": "sgd", "lr": 0.1})
    assert cfg.optimizer.kind == "sgd"


def test_holdout_split_is_disjoint_and_seeded(tiny):
    train_set, _ = tiny
    a_tr, a_val = holdout_split(train_set, 0.2, 5)
    b_tr, b_val = holdout_split(train_set, 0.2, 5)
    assert len(a_tr) + len(a_val) == len(train_set)
    assert len(a_val) == round(0.2 * len(train_set))
    assert a_val.content_hash() == b_val.content_hash()
    assert holdout_split(train_set, 0.0, 5)[1] is None


def test_train_records_history_and_keeps_best(tiny, tmp_path):
    train_set, _ = tiny
    ckpt = tmp_path / "best.bin"
    seen = []
    model, hist = train(train_set, NET, TrainConfig(epochs=4, batch_size=8, checkpoint=str(ckpt)),
                        on_epoch=seen.append)
    assert [r["epoch"] for r in hist.epochs] == [1, 2, 3, 4] and seen == hist.epochs
    assert hist.epochs[hist.best_epoch - 1]["eval_rmse_m"] == hist.best_eval_rmse
    assert not model.training
    reloaded = load_module(ckpt, OdomNet(NET))
    _, val = holdout_split(train_set, 0.1, 42)
    np.testing.assert_array_equal(reloaded.predict(val.prev, val.cur), model.predict(val.prev, val.cur))


def test_training_is_deterministic(tiny):
    train_set, _ = tiny
    cfg = TrainConfig(epochs=2, batch_size=8)
    m1, h1 = train(train_set, NET, cfg)
    m2, h2 = train(train_set, NET, cfg)
    assert h1.epochs == h2.epochs
    for (k, a), (_, b) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert a.tobytes() == b.tobytes(), k


def test_early_stopping(tiny):
    train_set, _ = tiny
    _, hist = train(train_set, NET, TrainConfig(epochs=50, batch_size=8, patience=1,
                                                optimizer={"lr": 1e-6}))
    assert len(hist.epochs) < 50


def test_divergence_stops_and_keeps_finite_parameters(tiny):
    train_set, _ = tiny
    bad = PairDataset(train_set.prev.copy(), train_set.cur.copy(), train_set.labels.copy(),
                      train_set.trajectory_index, train_set.trajectory_names)
    bad.prev[:] = np.nan
    model, hist = train(bad, NET, TrainConfig(epochs=3, batch_size=8, val_fraction=0.0))
    assert hist.diverged and hist.epochs == []
    assert all(np.all(np.isfinite(v)) for v in model.state_dict().values())


def test_train_rejects_mismatched_extents(tiny):
    train_set, _ = tiny
    with pytest.raises(ValueError, match="do not match"):
        train(train_set, NetConfig(), TrainConfig(epochs=1))


def test_evaluate_with_injected_predictors(tiny):
    train_set, test_set = tiny
    perfect = evaluate_relative(None, test_set, predict=lambda p, c: test_set.labels.copy(), variant="oracle")
    assert perfect.overall == 0.0 and perfect.unit == "m"
    mean = train_set.labels.mean()
    const = evaluate_relative(None, test_set, predict=lambda p, c: np.full(len(p), mean))
    assert const.overall == pytest.approx(mean_predictor_rmse(train_set, test_set), rel=1e-14)


def test_pooled_rmse_is_count_weighted(tiny):
    train_set, test_set = tiny
    both = PairDataset(np.concatenate([train_set.prev, test_set.prev]),
                       np.concatenate([train_set.cur, test_set.cur]),
                       np.concatenate([train_set.labels, test_set.labels]),
                       np.concatenate([train_set.trajectory_index, test_set.trajectory_index]),
                       train_set.trajectory_names)
    rep = evaluate_relative(None, both, predict=lambda p, c: np.full(len(p), 0.1))
    pooled = math.sqrt(sum(rep.counts[k] * v ** 2 for k, v in rep.per_trajectory.items()) / rep.count)
    assert rep.overall == pytest.approx(pooled, rel=1e-13)
    assert sum(rep.counts.values()) == len(both)
    assert rep.rows()[-1]["rmse_cm"] == pytest.approx(100 * rep.overall)


def test_ablation_order_labels_and_csvs(tiny, tmp_path):
    train_set, test_set = tiny
    reports = run_ablation(train_set, test_set, NET, TrainConfig(epochs=1, batch_size=8))
    assert [r.variant for r in reports] == list(ABLATION_ORDER)
    assert [r.label for r in reports] == ["Feature Concatenation", "Similarity Only", "Difference Only",
                                          "Full"]
    write_ablation_csv(tmp_path / "a.csv", reports)
    write_ablation_csv(tmp_path / "b.csv", reports)
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    assert text.splitlines()[0] == "network_configuration,traj_03_rmse_cm,overall_rmse_cm"
    assert text.splitlines()[4].startswith("Full,")
    write_reports_csv(tmp_path / "r.csv", reports)
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 1 + 4 * 2
    hist = History(epochs=[{"epoch": 1, "train_loss_m": 0.5, "eval_rmse_m": float("nan"),
                            "best_eval_rmse_m": 0.5}])
    write_history_csv(tmp_path / "h.csv", hist)
    assert (tmp_path / "h.csv").read_text() == "epoch,train_loss_m,eval_rmse_m,best_eval_rmse_m\n1,0.5,nan,0.5\n"
