"""``satcast`` command line: synth, train, finetune, forecast, events, eval, calibrate.

Settings come from built-in defaults, then an optional ``key = value``
config file, then the NOWCAST_SEED environment variable (seed only), then
command-line flags. Later sources win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments
from .dataset import (
    N_INPUT,
    FrameCorruptionError,
    FrameDataError,
    FrameFormatError,
    TrainingWindow,
    gen_layered,
    gen_synthetic,
    load_frames,
    make_windows,
    save_frames,
)
from .events import detect_events, export_events_csv
from .forecast import (
    OFFSETS,
    CascadeModel,
    CheckpointError,
    TrainConfig,
    cascade_predict,
    fine_tune,
    load_cascade,
    save_cascade,
    train_cascade,
)
from .grid import FrameSequence, GridError, Unit, stack_to_volume
from .neural import Arch, ParamFormatError
from .plots import line_plot
from .preprocess import PreprocessConfig, denormalize_bt, normalize_bt, preprocess_sequence
from .rainfall import (
    CalibrationError,
    RegionOfInterest,
    TransformCoeffs,
    bt_to_rain,
    calibrate_transform,
    cumulative_rain,
    parse_roi,
    roi_average,
    to_threshold_cdf,
    upsample_bilinear,
    write_cdf_csv,
)
from .verify import bias, contingency, pod_far_f1, rmse, ssim

log = logging.getLogger("satcast")

SEED_ENV = "NOWCAST_SEED"
RAIN_THRESHOLDS = (0.5, 1.0)


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    cell_kind: str = "convgru"
    preprocess: PreprocessConfig = PreprocessConfig()
    train: TrainConfig = TrainConfig()
    transform: TransformCoeffs = TransformCoeffs()
    data_dir: Path = Path("data")
    checkpoint_dir: Path = Path("checkpoint")
    output_dir: Path = Path("out")
    rois: list[RegionOfInterest] = field(default_factory=list)
    jobs: int = min(4, os.cpu_count() or 1)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


# key -> (section, field, parser); section None means a top-level field
_KEYS = {
    "seed": (None, "seed", int),
    "cell_kind": (None, "cell_kind", str),
    "jobs": (None, "jobs", int),
    "data_dir": (None, "data_dir", Path),
    "checkpoint_dir": (None, "checkpoint_dir", Path),
    "output_dir": (None, "output_dir", Path),
    "norm_divisor": ("preprocess", "norm_divisor", float),
    "pad_to": ("preprocess", "pad_to", int),
    "mask_fill": ("preprocess", "mask_fill", float),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "lr": ("train", "lr", float),
    "alpha": ("transform", "alpha", float),
    "beta": ("transform", "beta", float),
}
_ARCH_KEYS = ("enc", "hidden", "dec")


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; ``roi`` may repeat."""
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        if key not in _KEYS and key not in _ARCH_KEYS and key != "roi":
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = f"{out[key]};{value}" if key == "roi" and key in out else value
    return out


def apply_settings(cfg: PipelineConfig, settings: dict[str, str]) -> PipelineConfig:
    sections = {"preprocess": {}, "train": {}, "transform": {}}
    top = {}
    arch = dataclasses.asdict(cfg.train.arch)
    for key, raw in settings.items():
        try:
            if key == "roi":
                top["rois"] = [parse_roi(r.strip()) for r in raw.split(";") if r.strip()]
            elif key in _ARCH_KEYS:
                arch[key] = _ints(raw)
            else:
                section, name, conv = _KEYS[key]
                (sections[section] if section else top)[name] = conv(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from None
    sections["train"]["arch"] = Arch(**{k: tuple(v) for k, v in arch.items()})
    return dataclasses.replace(
        cfg,
        preprocess=dataclasses.replace(cfg.preprocess, **sections["preprocess"]),
        train=dataclasses.replace(cfg.train, **sections["train"]),
        transform=dataclasses.replace(cfg.transform, **sections["transform"]),
        **top,
    )


# flag dest -> config key
_FLAG_KEYS = {
    "seed": "seed", "cell": "cell_kind", "jobs": "jobs", "epochs": "epochs",
    "batch_size": "batch_size", "lr": "lr", "pad_to": "pad_to", "alpha": "alpha",
    "beta": "beta",
}


def resolve_config(args: argparse.Namespace, environ=os.environ) -> PipelineConfig:
    settings: dict[str, str] = {}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    if environ.get(SEED_ENV):
        settings["seed"] = environ[SEED_ENV]
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            settings[key] = str(v)
    if getattr(args, "roi", None):
        settings["roi"] = ";".join(args.roi)
    cfg = apply_settings(PipelineConfig(), settings)
    return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=cfg.seed))


# -- helpers ----------------------------------------------------------------


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _load_windows(paths, pre: PreprocessConfig, max_windows=None) -> dict[int, list[TrainingWindow]]:
    out = {k: [] for k in OFFSETS}
    for path in paths:
        seq = load_frames(path)
        if seq.unit is not Unit.KELVIN:
            raise GridError(f"{path}: training data must be kelvin")
        for k in OFFSETS:
            for w in make_windows(seq, k):
                out[k].append(
                    TrainingWindow(preprocess_sequence(w.input, pre),
                                   preprocess_sequence(w.target, pre, target=True), k, w.start)
                )
    for k in OFFSETS:
        if max_windows:
            out[k] = out[k][:max_windows]
        if not out[k]:
            raise ValueError(f"no training windows for offset {k}; sequences are too short")
    return out


def _write_losses(losses: dict[int, list[float]], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("offset", "epoch", "loss"))
        for k in sorted(losses):
            for e, v in enumerate(losses[k], start=1):
                w.writerow((k, e, f"{v:.9g}"))


# -- commands ---------------------------------------------------------------


def cmd_synth(args, cfg: PipelineConfig) -> None:
    if args.regime == "cells":
        seq = gen_synthetic(cfg.seed, args.frames, args.rows, args.cols)
    else:
        region = experiments.REGION_A if args.regime == "a" else experiments.REGION_B
        seq = gen_layered(cfg.seed, args.frames, args.rows, args.cols, region)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.name
    save_frames(seq, path)
    arr = seq.to_array()
    print(f"wrote {path}: {len(seq)} frames {args.rows}x{args.cols} K, "
          f"min {arr.min():.1f} max {arr.max():.1f}")


def cmd_train(args, cfg: PipelineConfig) -> None:
    windows = _load_windows(args.data, cfg.preprocess, args.max_windows)
    cascade, losses = train_cascade(windows, cfg.train, cfg.cell_kind, cfg.jobs)
    out = Path(args.out or cfg.checkpoint_dir)
    save_cascade(cascade, out, cfg.preprocess)
    _write_losses(losses, out / "loss.csv")
    print(f"trained {cfg.cell_kind} cascade on {len(windows[1])} windows/offset -> {out}")


def cmd_finetune(args, cfg: PipelineConfig) -> None:
    base, pre = load_cascade(args.checkpoint)
    windows = _load_windows(args.data, pre, args.max_windows)
    tcfg = dataclasses.replace(cfg.train, arch=base.arch)
    models, losses = dict(base.models), {}
    for k in args.offsets:
        res = fine_tune(base.models[k], windows[k], dataclasses.replace(tcfg, seed=cfg.seed + k))
        models[k], losses[k] = res.params, res.epoch_loss
    out = Path(args.out)
    save_cascade(CascadeModel(models, base.cell_kind), out, pre)
    _write_losses(losses, out / "loss.csv")
    print(f"fine-tuned offsets {list(args.offsets)} -> {out}")


def _forecast_bt(args, cfg: PipelineConfig, obs: FrameSequence):
    """16 kelvin frames at the observed size, plus the normalized frames."""
    rows, cols = obs.shape
    if args.baseline == "persistence":
        kelvin = [obs[-1]] * 16
        norm = [normalize_bt(f) for f in kelvin]
        return kelvin, norm, PreprocessConfig()
    cascade, pre = load_cascade(args.checkpoint)
    if rows != cols:
        raise GridError("cascade forecasts need square frames")
    inputs = preprocess_sequence(obs, pre)
    norm = list(cascade_predict(cascade, inputs, crop_to=rows, jobs=cfg.jobs))
    kelvin = [denormalize_bt(f, pre) for f in norm]
    return kelvin, norm, pre


def cmd_forecast(args, cfg: PipelineConfig) -> None:
    seq = load_frames(args.input)
    if seq.unit is not Unit.KELVIN:
        raise GridError("forecast input must be kelvin")
    start = len(seq) - N_INPUT if args.start is None else args.start
    if not 0 <= start <= len(seq) - N_INPUT:
        raise GridError(f"need {N_INPUT} frames from index {start}, file has {len(seq)}")
    obs = seq[start : start + N_INPUT]
    kelvin, norm, _ = _forecast_bt(args, cfg, obs)

    # upsample the temperature field, then apply the nonlinear transform
    rain = [bt_to_rain(upsample_bilinear(f, expect=None), cfg.transform) for f in kelvin]
    total = cumulative_rain(rain)
    rois = cfg.rois or [RegionOfInterest(0, 0, total.rows, total.cols, "domain")]
    cdfs = [(r.name, to_threshold_cdf(roi_average(total, r))) for r in rois]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_frames(FrameSequence(tuple(norm)), out / "forecast_bt.w4cf")
    save_frames(FrameSequence(tuple(rain)), out / "rain.w4cf")
    save_frames(FrameSequence((total,)), out / "cumulative.w4cf")
    write_cdf_csv(cdfs, out / "cdf.csv")
    print(f"forecast -> {out}: rain {rain[0].shape}, domain mean "
          f"{float(np.mean(total.data)):.3f} mm over 4 h")


def cmd_events(args, cfg: PipelineConfig) -> None:
    seq = load_frames(args.rain)
    if seq.unit is not Unit.MM_PER_H:
        raise GridError("event detection needs a rain-rate (mm/h) volume")
    events = detect_events(stack_to_volume(seq), args.threshold, args.top)
    export_events_csv(events, args.sequence_id, args.out, seq.step_minutes)
    print(f"{len(events)} events -> {args.out}")


def _metric_rows(name: str, pred: FrameSequence, truth: FrameSequence):
    rows = []
    rain = truth.unit in (Unit.MM_PER_H, Unit.MM)
    for i, (p, t) in enumerate(zip(pred, truth), start=1):
        lead = i * truth.step_minutes
        rows.append((name, "rmse", lead, rmse(p, t)))
        rows.append((name, "bias", lead, bias(p, t)))
        if min(t.shape) >= 11:
            rows.append((name, "ssim", lead, ssim(p, t)))
        if rain:
            for thr in RAIN_THRESHOLDS:
                scores = pod_far_f1(contingency(p, t, thr))
                for metric, v in zip(("pod", "far", "f1"), scores):
                    rows.append((name, f"{metric}@{thr}mm", lead, np.nan if v is None else v))
    return rows


def _eval_files(args, out: Path) -> None:
    truth = load_frames(args.truth)
    rows = []
    for spec in args.pred:
        name, _, path = spec.rpartition("=")
        pred = load_frames(path)
        if len(pred) != len(truth) or pred.shape != truth.shape:
            raise GridError(f"{path}: {len(pred)}x{pred.shape} does not match truth "
                            f"{len(truth)}x{truth.shape}")
        if pred.unit != truth.unit:
            raise GridError(f"{path}: unit {pred.unit.name} differs from truth {truth.unit.name}")
        rows += _metric_rows(name or Path(path).stem, pred, truth)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "metric", "lead_time", "value"))
        for model, metric, lead, v in rows:
            w.writerow((model, metric, lead, f"{v:.6f}"))
    for metric in ("rmse", "ssim"):
        series = {m: [v for mm, k, _, v in rows if mm == m and k == metric]
                  for m in dict.fromkeys(r[0] for r in rows)}
        if any(series.values()):
            line_plot(series, out / f"{metric}_by_lead")
    print(f"metrics for {len(args.pred)} model(s) -> {out / 'metrics.csv'}")


def _eval_experiment(args, cfg: PipelineConfig, out: Path) -> None:
    ecfg = experiments.ExperimentConfig(
        size=args.size, n_train=args.windows, n_test=args.test_windows, train=cfg.train,
        jobs=cfg.jobs,
    )
    if args.experiment == "comparison":
        report, _ = experiments.run_comparison(cfg.seed, ecfg)
        (out / "comparison.csv").write_text(report.to_csv())
        line_plot(report.rmse, out / "rmse_by_lead")
        line_plot(report.ssim, out / "ssim_by_lead")
        for model in report.rmse:
            hours = " ".join(f"{v:.3f}" for v in report.hour_rmse(model))
            print(f"{model:12s} hourly RMSE (K): {hours}")
    else:
        report = experiments.run_transfer(cfg.seed, ecfg)
        (out / "transfer.csv").write_text(report.to_csv())
        print(f"region B RMSE {report.rmse_b_before:.3f} K -> {report.rmse_b_after:.3f} K")


def cmd_eval(args, cfg: PipelineConfig) -> None:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiment:
        _eval_experiment(args, cfg, out)
    else:
        if not args.pred or not args.truth:
            raise ValueError("eval needs --pred and --truth, or --experiment")
        _eval_files(args, out)


def cmd_calibrate(args, cfg: PipelineConfig) -> None:
    with open(args.samples, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) < 2:
            raise ValueError("samples CSV needs two columns: bt_k, rain_mm_h")
        samples = [(float(r[0]), float(r[1])) for r in reader if r]
    c = calibrate_transform(samples)
    line = f"alpha = {c.alpha:.9g}\nbeta = {c.beta:.9g}\n"
    if args.out:
        Path(args.out).write_text(line)
    print(line, end="")


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=_positive, help="worker cap for the four cascade models")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--data", nargs="+", required=True, help="kelvin frame files")
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=_positive)
    training.add_argument("--lr", type=float)
    training.add_argument("--max-windows", type=_positive, help="cap on windows per offset")

    p = argparse.ArgumentParser(prog="satcast", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic kelvin sequence")
    s.add_argument("--frames", type=_positive, required=True)
    s.add_argument("--rows", type=_positive, default=252)
    s.add_argument("--cols", type=_positive, default=252)
    s.add_argument("--regime", choices=("cells", "a", "b"), default="cells")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--name", default="frames.w4cf")

    t = sub.add_parser("train", parents=[common, training], help="train the four-model cascade")
    t.add_argument("--cell", choices=("convgru", "convlstm"))
    t.add_argument("--pad-to", type=_positive)
    t.add_argument("--out", help="checkpoint directory")

    f = sub.add_parser("finetune", parents=[common, training], help="adapt a cascade to new data")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--offsets", type=_ints, default=OFFSETS)
    f.add_argument("--out", required=True)

    fc = sub.add_parser("forecast", parents=[common], help="BT forecast, rainfall and CDFs")
    fc.add_argument("--input", required=True, help="kelvin frame file (last 4 frames used)")
    fc.add_argument("--start", type=int, help="index of the first input frame")
    fc.add_argument("--checkpoint")
    fc.add_argument("--baseline", choices=("model", "persistence"), default="model")
    fc.add_argument("--roi", action="append", help="name:row0,col0,row1,col1 (repeatable)")
    fc.add_argument("--alpha", type=float)
    fc.add_argument("--beta", type=float)
    fc.add_argument("--out", required=True)

    e = sub.add_parser("events", parents=[common], help="extreme-rain events to CSV")
    e.add_argument("--rain", required=True, help="rain-rate frame file")
    e.add_argument("--threshold", type=float, default=2.0)
    e.add_argument("--top", type=int, default=5)
    e.add_argument("--sequence-id", default="seq0")
    e.add_argument("--out", required=True, help="CSV path")

    v = sub.add_parser("eval", parents=[common], help="metrics, lead-time plots, experiments")
    v.add_argument("--pred", action="append", help="[name=]frame file (repeatable)")
    v.add_argument("--truth")
    v.add_argument("--experiment", choices=("comparison", "transfer"))
    v.add_argument("--size", type=_positive, default=16)
    v.add_argument("--windows", type=_positive, default=200)
    v.add_argument("--test-windows", type=_positive, default=300)
    v.add_argument("--epochs", type=int)
    v.add_argument("--out")

    c = sub.add_parser("calibrate", parents=[common], help="fit alpha, beta from samples")
    c.add_argument("--samples", required=True, help="CSV with bt_k, rain_mm_h columns")
    c.add_argument("--out")
    return p


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "forecast": cmd_forecast,
    "events": cmd_events,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
}

_EXPECTED = (
    OSError, ValueError, GridError, CheckpointError, ParamFormatError, FrameFormatError,
    FrameCorruptionError, FrameDataError, CalibrationError, ConfigError, KeyError,
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "forecast" and args.baseline == "model" and not args.checkpoint:
            args.checkpoint = str(cfg.checkpoint_dir)
        COMMANDS[args.command](args, cfg)
    except _EXPECTED as e:
        print(f"satcast {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
