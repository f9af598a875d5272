"""Stage implementations behind the CLI: each stage reads and writes files.

Intermediate artifacts (cleaned days, MI matrices, simplices, checkpoints,
reports) are plain files so every stage can be inspected and re-run. Every
artifact records the run config digest for tamper detection.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import engine, infonet, lob, preprocess, train as train_mod
from .config import RunConfig
from .errors import ConfigError, DigestMismatch
from .infonet import SimplicialComplex
from .model import HlobConfig, HlobModel, load_checkpoint, save_checkpoint
from .preprocess import HISTORY_DAYS, LabeledWindow
from .train import EvalReport, TrainConfig

log = logging.getLogger(__name__)


def meta_from_config(cfg: RunConfig) -> lob.StockMeta:
    return lob.StockMeta(
        ticker=cfg.get_str("ticker"),
        tick_size=cfg.get_float("tick_size"),
        lot_size=cfg.get_int("lot_size"),
    )


def day_paths(directory, ticker: str, day: str) -> tuple[Path, Path]:
    directory = Path(directory)
    return (
        directory / f"{ticker}_{day}_message_10.csv",
        directory / f"{ticker}_{day}_orderbook_10.csv",
    )


def _write_day(directory, series: lob.LobSeries) -> None:
    msg_path, ob_path = day_paths(directory, series.meta.ticker, series.day)
    ob_rows, msg_rows = lob.serialize_lobster_pair(series)
    ob_path.write_text("\n".join(ob_rows) + "\n" if ob_rows else "")
    msg_path.write_text("\n".join(msg_rows) + "\n" if msg_rows else "")


def _read_day(directory, meta: lob.StockMeta, day: str) -> lob.LobSeries:
    msg_path, ob_path = day_paths(directory, meta.ticker, day)
    if not msg_path.exists() or not ob_path.exists():
        raise ConfigError("days", f"missing files for day {day} in {directory}")
    return lob.parse_lobster_pair(
        ob_path.read_text().splitlines(),
        msg_path.read_text().splitlines(),
        meta,
        day=day,
    )


def run_synth(cfg: RunConfig) -> list[str]:
    """Generate a synthetic LOBSTER pair for every configured day."""
    meta = meta_from_config(cfg)
    days = cfg.get_days("days")
    if not days:
        raise ConfigError("days", "no days configured")
    data_dir = Path(cfg.get_str("data_dir"))
    data_dir.mkdir(parents=True, exist_ok=True)
    base_seed = cfg.get_int("seed")
    for i, day in enumerate(days):
        series = lob.synthesize_lob(
            seed=base_seed * 100_003 + i,
            n_events=cfg.get_int("synth.n_events"),
            regime=cfg.get_str("synth.regime"),
            meta=meta,
            day=day,
        )
        _write_day(data_dir, series)
    return days


def run_ingest(cfg: RunConfig) -> list[str]:
    """Parse and clean every configured day into out_dir/cleaned."""
    meta = meta_from_config(cfg)
    clean_dir = Path(cfg.get_str("out_dir")) / "cleaned"
    clean_dir.mkdir(parents=True, exist_ok=True)
    days = cfg.get_days("days")
    for day in days:
        raw = _read_day(cfg.get_str("data_dir"), meta, day)
        cleaned = lob.clean_session(raw, cfg.get_float("trim_start_s"),
                                    cfg.get_float("trim_end_s"))
        cleaned.validate()
        _write_day(clean_dir, cleaned)
    return days


def _clean_day(cfg: RunConfig, day: str) -> lob.LobSeries:
    return _read_day(Path(cfg.get_str("out_dir")) / "cleaned",
                     meta_from_config(cfg), day)


def _check_digest(stored: str, cfg: RunConfig, artifact: str) -> None:
    if stored and stored != cfg.digest():
        raise DigestMismatch(f"{artifact} was produced under a different config")


def run_mi(cfg: RunConfig) -> Path:
    """Bootstrap daily MI matrices over the training days and average them."""
    out_dir = Path(cfg.get_str("out_dir"))
    train_days = cfg.get_days("split.train")
    if not train_days:
        raise ConfigError("split.train", "no training days configured")
    n_bins = cfg.get_int("n_bins")
    n_bootstrap = cfg.get_int("bootstrap")
    seed = cfg.get_int("seed")
    daily = []
    for i, day in enumerate(sorted(train_days)):
        binned = infonet.bin_volumes(_clean_day(cfg, day), n_bins)
        daily.append(infonet.daily_mi_matrix(binned, n_bootstrap,
                                             rng_seed=seed * 99_991 + i))
    avg = infonet.average_mi(daily)
    json_path = out_dir / "mi_avg.json"
    json_path.write_text(infonet.mi_matrix_to_json(avg, cfg.digest()) + "\n")
    (out_dir / "mi_avg.csv").write_text(infonet.mi_matrix_to_csv(avg))
    return json_path


def run_tmfg(cfg: RunConfig) -> Path:
    """Build the TMFG from the averaged MI matrix and emit its simplices."""
    out_dir = Path(cfg.get_str("out_dir"))
    matrix, stored = infonet.mi_matrix_from_json((out_dir / "mi_avg.json").read_text())
    _check_digest(stored, cfg, "mi_avg.json")
    graph = infonet.build_tmfg(matrix)
    complex_ = infonet.extract_simplices(graph)
    score = infonet.graph_score(matrix, graph)
    path = out_dir / "simplices.json"
    obj = json.loads(infonet.simplices_to_json(complex_, cfg.digest()))
    obj["retained_weight"] = score
    path.write_text(json.dumps(obj, sort_keys=True) + "\n")
    return path


def load_simplices(cfg: RunConfig) -> SimplicialComplex:
    out_dir = Path(cfg.get_str("out_dir"))
    complex_, stored = infonet.simplices_from_json(
        (out_dir / "simplices.json").read_text())
    _check_digest(stored, cfg, "simplices.json")
    return complex_


def windows_for_day(cfg: RunConfig, day: str) -> list[LabeledWindow]:
    """Normalize one day with trailing 5-day stats and window it with labels."""
    days = cfg.get_days("days")
    if day not in days:
        raise ConfigError("days", f"day {day} not in configured day list")
    pos = days.index(day)
    if pos < HISTORY_DAYS:
        raise ConfigError("days", f"day {day} lacks {HISTORY_DAYS} prior days")
    prior = [_clean_day(cfg, d) for d in days[pos - HISTORY_DAYS: pos]]
    stats = preprocess.compute_norm_stats(prior)
    series = _clean_day(cfg, day)
    normalized = preprocess.normalize_day(series, stats)
    labels = preprocess.label_series(
        lob.mid_price_series(series),
        cfg.get_int("horizon"),
        series.meta.tick_units,
    )
    return preprocess.build_windows(normalized, labels, day,
                                    cfg.get_int("window_len"))


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.get_int("train.batch_size"),
        max_epochs=cfg.get_int("train.max_epochs"),
        early_stop_delta=cfg.get_float("train.early_stop_delta"),
        patience=cfg.get_int("train.patience"),
        lr=cfg.get_float("train.lr"),
        beta1=cfg.get_float("train.beta1"),
        beta2=cfg.get_float("train.beta2"),
        eps=cfg.get_float("train.eps"),
        weight_decay=cfg.get_float("train.weight_decay"),
        horizon=cfg.get_int("horizon"),
        balanced_cap=cfg.get_int("train.balanced_cap"),
        seed=cfg.get_int("seed"),
    )


def run_train(cfg: RunConfig) -> Path:
    out_dir = Path(cfg.get_str("out_dir"))
    complex_ = load_simplices(cfg)
    train_days = cfg.get_days("split.train")
    val_days = cfg.get_days("split.validation")
    train_by_day = {d: windows_for_day(cfg, d) for d in train_days}
    val_windows = [w for d in val_days for w in windows_for_day(cfg, d)]

    model = HlobModel(HlobConfig(window_len=cfg.get_int("window_len")),
                      seed=cfg.get_int("seed"))
    _, history = train_mod.train(model, train_by_day, val_windows, complex_,
                                 train_config(cfg))
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(model, ckpt_path, extra={"run_config_digest": cfg.digest()})
    (out_dir / "history.json").write_text(
        json.dumps(history, sort_keys=True) + "\n")
    return ckpt_path


def run_eval(cfg: RunConfig) -> Path:
    out_dir = Path(cfg.get_str("out_dir"))
    complex_ = load_simplices(cfg)
    model, header = load_checkpoint(
        out_dir / "model.ckpt",
        expected_config=HlobConfig(window_len=cfg.get_int("window_len")))
    _check_digest(header["extra"].get("run_config_digest", ""), cfg, "model.ckpt")

    test_windows = [w for d in cfg.get_days("split.test")
                    for w in windows_for_day(cfg, d)]
    report = train_mod.evaluate(
        model, test_windows, complex_,
        batch_size=cfg.get_int("train.batch_size"),
        ticker=cfg.get_str("ticker"), year=cfg.get_str("year"),
        horizon=cfg.get_int("horizon"))
    path = out_dir / "eval_report.json"
    path.write_text(json.dumps({
        "ticker": report.ticker,
        "year": report.year,
        "horizon": report.horizon,
        "f1_macro": report.f1_macro,
        "mcc": report.mcc,
        "p_t": report.p_t,
        "tt": report.tt,
        "confusion": report.confusion.tolist(),
        "p_t_definition": "opener-closer-scan-v1",
        "config_digest": cfg.digest(),
    }, sort_keys=True) + "\n")
    return path


def run_report(cfg: RunConfig) -> list[str]:
    out_dir = Path(cfg.get_str("out_dir"))
    reports = []
    for path in sorted(out_dir.glob("eval_report*.json")):
        obj = json.loads(path.read_text())
        _check_digest(obj.get("config_digest", ""), cfg, path.name)
        reports.append(EvalReport(
            f1_macro=obj["f1_macro"], mcc=obj["mcc"], p_t=obj["p_t"],
            tt=obj["tt"], confusion=np.array(obj["confusion"]),
            ticker=obj["ticker"], year=obj["year"], horizon=obj["horizon"]))
    if not reports:
        raise ConfigError("out_dir", "no eval_report*.json files to aggregate")
    return train_mod.emit_report(reports, out_dir / "reports",
                                 config_digest=cfg.digest(),
                                 seed=cfg.get_int("seed"))


def describe_model(cfg: RunConfig) -> list[tuple[str, int]]:
    model = HlobModel(HlobConfig(window_len=cfg.get_int("window_len")),
                      seed=cfg.get_int("seed"))
    return model.param_count_table()


def gradcheck_suite(seed: int = 0) -> dict[str, float]:
    """Central finite-difference checks for every layer plus the full loss.

    Runs in float64; returns max relative error per check.
    """
    rng = np.random.default_rng(seed)
    results: dict[str, float] = {}

    x = engine.Tensor(rng.normal(size=(1, 2, 5, 6)))
    w = engine.Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
    b = engine.Tensor(rng.normal(size=3), requires_grad=True)

    results["conv2d"] = engine.grad_check(
        lambda t: _sum_sq(engine.conv2d(t, w, b, stride=(1, 2),
                                        padding=((1, 0), (0, 0)))), x)

    y = engine.Tensor(rng.normal(size=(3, 4)))
    results["leaky_relu"] = engine.grad_check(
        lambda t: _sum_sq(engine.leaky_relu(t, 0.01)), y)

    lstm_params = engine.LstmParams("gc", 2, 2, rng, dtype=np.float64)
    seq = engine.Tensor(rng.normal(size=(1, 3, 2)))
    results["lstm"] = engine.grad_check(
        lambda t: _sum_sq(engine.lstm(t, lstm_params)[0]), seq)

    dw = engine.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    db = engine.Tensor(rng.normal(size=3), requires_grad=True)
    z = engine.Tensor(rng.normal(size=(2, 4)))
    results["dense"] = engine.grad_check(
        lambda t: _sum_sq(engine.dense(t, dw, db)), z)

    logits = engine.Tensor(rng.normal(size=(4, 3)))
    labels = np.array([0, 2, 1, 1])
    results["softmax_cross_entropy"] = engine.grad_check(
        lambda t: engine.softmax_cross_entropy(t, labels), logits)

    results["hlob_loss"] = hlob_loss_grad_check(seed=seed)
    return results


def _sum_sq(t: engine.Tensor) -> engine.Tensor:
    flat = engine.reshape(t, (1, -1))
    return engine.matmul(flat, engine.transpose(flat))


def hlob_loss_grad_check(seed: int = 0, n_coords: int = 24) -> float:
    """FD-check the full composed loss through a float64 model input."""
    rng = np.random.default_rng(seed)
    config = HlobConfig()
    model = HlobModel(config, seed=seed, dtype=np.float64)
    inputs = [rng.normal(size=(2, config.window_len, w_)).astype(np.float64)
              for w_ in config.head_widths]
    labels = np.array([0, 2])
    x = engine.Tensor(inputs[0])

    def loss_fn(t):
        n, tt, w_ = t.data.shape
        head = model.heads[0]
        h0 = head.forward(engine.reshape(t, (n, 1, tt, w_)), config, False, None)
        others = []
        for hd, a in zip(model.heads[1:], inputs[1:]):
            a = np.asarray(a)
            hx = engine.Tensor(a.reshape(a.shape[0], 1, a.shape[1], a.shape[2]))
            others.append(hd.forward(hx, config, False, None))
        seq = engine.concat([h0] + others, axis=2)
        _, h_final, _ = engine.lstm(seq, model.lstm)
        logits = engine.dense(h_final, model.out_w.tensor, model.out_b.tensor)
        return engine.softmax_cross_entropy(logits, labels)

    # probe the most sensitive input coordinates: elsewhere the gradient is
    # below finite-difference resolution, not wrong
    x.requires_grad = True
    loss_fn(x).backward()
    coords = np.argsort(np.abs(x.grad).reshape(-1))[-n_coords:]
    return engine.grad_check(loss_fn, x, h=1e-3, coords=coords)
