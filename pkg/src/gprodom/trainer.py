"""Mini-batch training, relative-distance evaluation and the four-way ablation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autonn import Optimizer, OptimizerConfig, backward, save_module
from .datagen import PairDataset
from .odomnet import VARIANT_LABELS, VARIANTS, NetConfig, OdomNet, rmse_loss

log = logging.getLogger(__name__)

ABLATION_ORDER = ("feature_concat", "similarity_only", "difference_only", "full")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 16
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 42
    eval_every: int = 1
    patience: int = 10
    val_fraction: float = 0.1
    checkpoint: str | None = None
    variant: str = "full"

    def __post_init__(self):
        if isinstance(self.optimizer, dict):
            object.__setattr__(self, "optimizer", OptimizerConfig(**self.optimizer))
        errors = []
        if self.epochs < 1:
            errors.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1 or self.patience < 1:
            errors.append("eval_every and patience must be >= 1")
        if not 0 <= self.val_fraction < 1:
            errors.append(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class EvalReport:
    variant: str
    per_trajectory: dict[str, float]
    overall: float
    count: int
    counts: dict[str, int] = field(default_factory=dict)
    unit: str = "m"

    @property
    def label(self) -> str:
        return VARIANT_LABELS.get(self.variant, self.variant)

    def rows(self) -> list[dict]:
        out = [{"variant": self.variant, "trajectory": k, "n": self.counts.get(k, 0),
                "rmse_m": v, "rmse_cm": 100.0 * v} for k, v in self.per_trajectory.items()]
        out.append({"variant": self.variant, "trajectory": "overall", "n": self.count,
                    "rmse_m": self.overall, "rmse_cm": 100.0 * self.overall})
        return out


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    diverged: bool = False
    best_epoch: int = 0
    seconds: float = 0.0

    @property
    def best_eval_rmse(self) -> float:
        return min((e["eval_rmse_m"] for e in self.epochs if not math.isnan(e["eval_rmse_m"])), default=math.nan)


def _rmse(pred: np.ndarray, label: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - label) ** 2)))


def holdout_split(ds: PairDataset, fraction: float, seed: int) -> tuple[PairDataset, PairDataset | None]:
    """Seeded random hold-out of training pairs for model selection."""
    if fraction <= 0 or len(ds) < 2:
        return ds, None
    perm = np.random.default_rng([seed, 7]).permutation(len(ds))
    n_val = max(1, int(round(fraction * len(ds))))
    return ds.take(np.sort(perm[n_val:])), ds.take(np.sort(perm[:n_val]))


def train(dataset: PairDataset, net_cfg: NetConfig, cfg: TrainConfig,
          val: PairDataset | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[OdomNet, History]:
    """Minimise batch RMSE with early stopping on a validation RMSE.

    Without an explicit ``val`` set a ``cfg.val_fraction`` slice of the
    training pairs is held out.  The returned model carries the best-on-val
    parameters.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    net_cfg = replace(net_cfg, variant=cfg.variant)
    if dataset.prev.shape[1:] != (net_cfg.height, net_cfg.width):
        raise ValueError(f"dataset B-scans {dataset.prev.shape[1:]} do not match network input "
                         f"{(net_cfg.height, net_cfg.width)}")
    if val is None:
        dataset, val = holdout_split(dataset, cfg.val_fraction, cfg.seed)
    model = OdomNet(net_cfg)
    model.set_label_scale(float(dataset.labels.mean()), float(dataset.labels.std()))
    opt = Optimizer(model.parameters(), cfg.optimizer)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    best_state = model.state_dict()
    best = math.inf
    stale = 0
    t_start = time.perf_counter()
    n = len(dataset)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        losses, weights = [], []
        diverged = False
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            if idx.size < 2:
                continue  # batch norm needs more than one sample
            opt.zero_grad()
            loss = rmse_loss(model(dataset.prev[idx], dataset.cur[idx], rng), dataset.labels[idx])
            if not math.isfinite(loss.item()):
                diverged = True
                break
            backward(loss)
            opt.step()
            losses.append(loss.item())
            weights.append(idx.size)
        if diverged:
            log.warning("loss diverged in epoch %d; restoring last good parameters", epoch)
            hist.diverged = True
            break
        train_loss = float(np.sqrt(np.average(np.square(losses), weights=weights)))
        eval_rmse = math.nan
        if val is not None and epoch % cfg.eval_every == 0:
            eval_rmse = _rmse(model.predict(val.prev, val.cur), val.labels)
            if not math.isfinite(eval_rmse):
                hist.diverged = True
                break
        score = eval_rmse if val is not None else train_loss
        if not math.isnan(score) and score < best:
            best, stale = score, 0
            best_state = model.state_dict()
            hist.best_epoch = epoch
            if cfg.checkpoint:
                save_module(cfg.checkpoint, model)
        elif not math.isnan(score):
            stale += 1
        row = {"epoch": epoch, "train_loss_m": train_loss, "eval_rmse_m": eval_rmse, "best_eval_rmse_m": best}
        hist.epochs.append(row)
        if on_epoch is not None:
            on_epoch(row)
        log.info("epoch %d train %.5f eval %.5f best %.5f", epoch, train_loss, eval_rmse, best)
        if stale >= cfg.patience:
            break
    model.load_state_dict(best_state)
    model.eval()
    hist.seconds = time.perf_counter() - t_start
    return model, hist


def evaluate_relative(model: OdomNet | None, test: PairDataset,
                      predict: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                      variant: str | None = None) -> EvalReport:
    """Per-trajectory and pooled RMSE of predicted inter-frame distances (meters).

    The pooled value is computed over the union of all test pairs.  ``predict``
    replaces the model (useful for oracle or baseline predictors).
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    if predict is None:
        if model is None:
            raise ValueError("need a model or a predict function")
        preds = model.predict(test.prev, test.cur)
    else:
        preds = np.asarray(predict(test.prev, test.cur), dtype=np.float64)
    err2 = (preds - test.labels) ** 2
    per, counts = {}, {}
    for name in test.present_trajectories():
        mask = test.trajectory_index == test.trajectory_names.index(name)
        per[name] = float(np.sqrt(err2[mask].mean()))
        counts[name] = int(mask.sum())
    v = variant or (model.variant if model is not None else "custom")
    return EvalReport(v, per, float(np.sqrt(err2.mean())), int(err2.size), counts)


def mean_predictor_rmse(train_set: PairDataset, test: PairDataset) -> float:
    """RMSE on ``test`` of the constant predictor equal to the mean training label."""
    return _rmse(np.full(len(test), train_set.labels.mean()), test.labels)


def run_ablation(train_set: PairDataset, test: PairDataset, net_cfg: NetConfig, cfg: TrainConfig,
                 variants: Sequence[str] = ABLATION_ORDER,
                 on_variant: Callable[[str, OdomNet, History, EvalReport], None] | None = None
                 ) -> list[EvalReport]:
    """Train and evaluate each variant with identical seeds, split and pair order."""
    reports = []
    for v in variants:
        model, hist = train(train_set, net_cfg, replace(cfg, variant=v, checkpoint=None))
        rep = evaluate_relative(model, test)
        if on_variant is not None:
            on_variant(v, model, hist, rep)
        reports.append(rep)
    return reports


# ------------------------------------------------------------------ CSV output

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_history_csv(path: str | Path, hist: History) -> None:
    keys = ["epoch", "train_loss_m", "eval_rmse_m", "best_eval_rmse_m"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for row in hist.epochs:
            w.writerow([_fmt(row[k]) for k in keys])


def write_reports_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    keys = ["variant", "trajectory", "n", "rmse_m", "rmse_cm"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for rep in reports:
            for row in rep.rows():
                w.writerow([_fmt(row[k]) for k in keys])


def write_ablation_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    """Table-I shaped: one row per variant, one RMSE (cm) column per test trajectory plus overall."""
    trajs = sorted({t for r in reports for t in r.per_trajectory})
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["network_configuration"] + [f"{t}_rmse_cm" for t in trajs] + ["overall_rmse_cm"])
        for r in reports:
            w.writerow([r.label] + [_fmt(100.0 * r.per_trajectory[t]) if t in r.per_trajectory else ""
                                    for t in trajs] + [_fmt(100.0 * r.overall)])
