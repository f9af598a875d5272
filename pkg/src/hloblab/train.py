"""Training loop with early stopping, evaluation metrics, and report emission.

The stopper halts at the smallest epoch e > patience such that the best
validation loss seen through epoch e - patience exceeds the best through
epoch e by less than the improvement delta. With a constant validation loss
and the default patience of 15, training therefore stops after epoch 16.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import EmptyDataset, IoFailure, LengthMismatch, MissingClass
from .infonet import SimplicialComplex, assemble_head_inputs, head_column_indices
from .model import HlobModel, predict_proba
from .preprocess import LabeledWindow, balanced_sample, label_to_class, sequential_batches

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_delta: float = 0.003
    patience: int = 15
    lr: float = 6e-5
    beta1: float = 0.90
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.01
    horizon: int = 10
    balanced_cap: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass
class EvalReport:
    f1_macro: float
    mcc: float
    p_t: float
    tt: int
    confusion: np.ndarray  # (3, 3), rows = truth, cols = prediction
    loss_history: list[float] = field(default_factory=list)
    ticker: str = ""
    year: str = ""
    horizon: int = 0


def _batch_inputs(windows: list[LabeledWindow], complex_: SimplicialComplex):
    """Stack windows and gather the three head tensors plus class ids."""
    feats = np.stack([w.features for w in windows])
    idx = head_column_indices(complex_)
    inputs = tuple(feats[:, :, i] for i in idx)
    class_ids = np.array([label_to_class(w.label) for w in windows])
    return inputs, class_ids


def _epoch_should_stop(best_history: list[float], patience: int,
                       delta: float) -> bool:
    e = len(best_history)
    if e <= patience:
        return False
    return best_history[e - patience - 1] - best_history[-1] < delta


def validation_loss(model: HlobModel, windows: list[LabeledWindow],
                    complex_: SimplicialComplex, batch_size: int) -> float:
    total, count = 0.0, 0
    for batch in sequential_batches(windows, batch_size):
        inputs, class_ids = _batch_inputs(batch, complex_)
        logits = model.forward(inputs, train=False)
        loss = engine.softmax_cross_entropy(logits, class_ids)
        total += float(loss.data) * len(batch)
        count += len(batch)
    return total / count


def train(model: HlobModel, train_windows_by_day: dict[str, list[LabeledWindow]],
          val_windows: list[LabeledWindow], complex_: SimplicialComplex,
          config: TrainConfig) -> tuple[dict, dict]:
    """Train with per-day balanced sampling and validation-loss early stopping.

    Returns (best parameter state, history). The state maps parameter names
    to (data, m, v) arrays from the best-validation-loss epoch.
    """
    if not train_windows_by_day or not val_windows:
        raise EmptyDataset("need nonempty training and validation sets")

    optimizer = engine.AdamW(model.parameters(), lr=config.lr,
                             beta1=config.beta1, beta2=config.beta2,
                             eps=config.eps, weight_decay=config.weight_decay)
    history = {"train_loss": [], "val_loss": [], "stopped_epoch": None}
    best_loss = np.inf
    best_state = _capture_state(model)
    best_history: list[float] = []

    for epoch in range(1, config.max_epochs + 1):
        epoch_rng = np.random.default_rng((config.seed, epoch))
        pool: list[LabeledWindow] = []
        for day in sorted(train_windows_by_day):
            windows = train_windows_by_day[day]
            try:
                picked = balanced_sample(windows, cap=config.balanced_cap,
                                         rng_seed=int(epoch_rng.integers(2**32)))
            except MissingClass as exc:
                log.warning("skipping day %s: %s", day, exc)
                continue
            pool.extend(windows[i] for i in picked)
        if not pool:
            raise EmptyDataset("no training day has all three classes")
        epoch_rng.shuffle(pool)

        running, seen = 0.0, 0
        for batch in sequential_batches(pool, config.batch_size):
            inputs, class_ids = _batch_inputs(batch, complex_)
            logits = model.forward(inputs, train=True, rng=epoch_rng)
            loss = engine.softmax_cross_entropy(logits, class_ids)
            loss.backward()
            optimizer.step()
            running += float(loss.data) * len(batch)
            seen += len(batch)
        history["train_loss"].append(running / seen)

        val = validation_loss(model, val_windows, complex_, config.batch_size)
        history["val_loss"].append(val)
        if val < best_loss:
            best_loss = val
            best_state = _capture_state(model)
        best_history.append(best_loss)
        log.info("epoch %d: train %.5f val %.5f best %.5f",
                 epoch, history["train_loss"][-1], val, best_loss)

        if _epoch_should_stop(best_history, config.patience,
                              config.early_stop_delta):
            history["stopped_epoch"] = epoch
            break

    _restore_state(model, best_state)
    return best_state, history


def _capture_state(model: HlobModel) -> dict:
    return {p.name: (p.data.copy(), p.m.copy(), p.v.copy())
            for p in model.parameters()}


def _restore_state(model: HlobModel, state: dict) -> None:
    for p in model.parameters():
        data, m, v = state[p.name]
        p.data = data.copy()
        p.m = m.copy()
        p.v = v.copy()


def evaluate(model: HlobModel, test_windows: list[LabeledWindow],
             complex_: SimplicialComplex, batch_size: int = 32,
             ticker: str = "", year: str = "", horizon: int = 0) -> EvalReport:
    """Sequential evaluation: confusion matrix, F1, MCC, and round-trip stats."""
    if not test_windows:
        raise EmptyDataset("no test windows")
    predictions: list[int] = []
    labels: list[int] = []
    losses: list[float] = []
    for batch in sequential_batches(test_windows, batch_size):
        inputs, class_ids = _batch_inputs(batch, complex_)
        logits = model.forward(inputs, train=False)
        losses.append(float(engine.softmax_cross_entropy(logits, class_ids).data))
        probs = predict_proba(logits)
        predictions.extend(int(c) - 1 for c in probs.argmax(axis=1))
        labels.extend(w.label for w in batch)

    confusion = confusion_matrix(labels, predictions)
    p_t, tt = round_trip_stats(predictions, labels)
    return EvalReport(
        f1_macro=f1_macro(confusion),
        mcc=mcc_multiclass(confusion),
        p_t=p_t,
        tt=tt,
        confusion=confusion,
        loss_history=losses,
        ticker=ticker,
        year=year,
        horizon=horizon,
    )


def confusion_matrix(labels, predictions) -> np.ndarray:
    """3x3 counts with rows = true class, cols = predicted class (ids 0..2)."""
    if len(labels) != len(predictions):
        raise LengthMismatch(f"{len(labels)} labels vs {len(predictions)} predictions")
    out = np.zeros((3, 3), np.int64)
    for lab, pred in zip(labels, predictions):
        out[label_to_class(lab), label_to_class(pred)] += 1
    return out


def f1_macro(confusion: np.ndarray) -> float:
    """Macro-averaged F1 over the three classes; empty classes score 0."""
    scores = []
    for k in range(confusion.shape[0]):
        tp = confusion[k, k]
        fp = confusion[:, k].sum() - tp
        fn = confusion[k, :].sum() - tp
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(scores))


def mcc_multiclass(confusion: np.ndarray) -> float:
    """Gorodkin multiclass Matthews correlation; degenerate margins give 0."""
    c = confusion.astype(np.float64)
    s = c.sum()
    trace = np.trace(c)
    t = c.sum(axis=1)  # truth counts
    p = c.sum(axis=0)  # prediction counts
    num = trace * s - float(t @ p)
    denom = np.sqrt(s * s - float(p @ p)) * np.sqrt(s * s - float(t @ t))
    return num / denom if denom > 0 else 0.0


def round_trip_stats(predictions, labels) -> tuple[float, int]:
    """Round-trip count and correctness under the opener/closer scan.

    A round trip opens at a non-stable prediction and closes at the next
    opposite-sign prediction; the closing prediction immediately opens the
    next round trip (position reversal), so each prediction acts at most once
    as an opener and at most once as a closer. A round trip is correct when
    both its opening and closing predictions match their labels. With no
    completed round trips, p_T is defined as 0.
    """
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    open_idx = None
    tt = 0
    correct = 0
    for i, pred in enumerate(predictions):
        if pred == 0:
            continue
        if open_idx is None:
            open_idx = i
        elif pred == -predictions[open_idx]:
            tt += 1
            if (predictions[open_idx] == labels[open_idx]
                    and pred == labels[i]):
                correct += 1
            open_idx = i
    return (correct / tt if tt else 0.0), tt


def emit_report(reports: list[EvalReport], out_dir, config_digest: str = "",
                seed: int = 0) -> list[str]:
    """Write per-horizon metrics CSVs, quadrant CSVs, and a run manifest.

    Quadrant thresholds are the 25th percentile of TT and the 75th percentile
    of p_T across the included runs (linear interpolation).
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        horizons = sorted({r.horizon for r in reports})
        for h in horizons:
            rows = [r for r in reports if r.horizon == h]

            path = out_dir / f"metrics_h{h}.csv"
            lines = ["ticker,year,f1,mcc,p_t,tt"]
            for r in rows:
                lines.append(f"{r.ticker},{r.year},{r.f1_macro!r},{r.mcc!r},"
                             f"{r.p_t!r},{r.tt}")
            # per-ticker average over years
            tickers = sorted({r.ticker for r in rows})
            for ticker in tickers:
                sub = [r for r in rows if r.ticker == ticker]
                lines.append(
                    f"{ticker},avg,{float(np.mean([r.f1_macro for r in sub]))!r},"
                    f"{float(np.mean([r.mcc for r in sub]))!r},"
                    f"{float(np.mean([r.p_t for r in sub]))!r},"
                    f"{float(np.mean([r.tt for r in sub]))!r}")
            path.write_text("\n".join(lines) + "\n")
            written.append(str(path))

            qpath = out_dir / f"quadrants_h{h}.csv"
            tt_thr = float(np.percentile([r.tt for r in rows], 25))
            pt_thr = float(np.percentile([r.p_t for r in rows], 75))
            qlines = ["kind,ticker,year,tt,p_t"]
            for r in rows:
                qlines.append(f"point,{r.ticker},{r.year},{r.tt},{r.p_t!r}")
            qlines.append(f"threshold_tt_p25,,,{tt_thr!r},")
            qlines.append(f"threshold_pt_p75,,,,{pt_thr!r}")
            qpath.write_text("\n".join(qlines) + "\n")
            written.append(str(qpath))

        manifest = out_dir / "run_manifest.json"
        manifest.write_text(json.dumps(
            {"config_digest": config_digest, "seed": seed,
             "n_reports": len(reports), "horizons": horizons,
             "wall_clock": time.strftime("%Y-%m-%dT%H:%M:%S")},
            sort_keys=True) + "\n")
        written.append(str(manifest))
        return written
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
