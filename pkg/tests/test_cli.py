import argparse
import csv
import json

import numpy as np
import pytest

from satcast.cli import ConfigError, main, read_config_file, resolve_config
from satcast.dataset import load_frames, save_frames
from satcast.grid import FrameSequence, Unit
from satcast.plots import read_ppm, render_lines

MINI = "enc = 2,3\nhidden = 4,4\ndec = 3,2\nepochs = 1\nbatch_size = 6\npad_to = 16\n"


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "mini.cfg").write_text("# small network for tests\n" + MINI)
    assert main(["synth", "--seed", "4", "--frames", "36", "--rows", "16", "--cols", "16",
                 "--out", str(tmp_path / "data")]) == 0
    return tmp_path


def _train(root, *extra):
    return main(["train", "--config", str(root / "mini.cfg"), "--data",
                 str(root / "data" / "frames.w4cf"), "--max-windows", "6", *extra])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_config_file_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3  # trailing comment\n\n# full line\nroi = a:0,0,2,2\nroi = b:1,1,3,3\n")
    assert read_config_file(p) == {"seed": "3", "roi": "a:0,0,2,2;b:1,1,3,3"}
    p.write_text("bogus = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(p)
    p.write_text("seed\n")
    with pytest.raises(ConfigError):
        read_config_file(p)


def test_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("seed = 3\nepochs = 4\nhidden = 8,8\n")
    ns = argparse.Namespace(config=str(p), seed=None, epochs=None)
    assert resolve_config(ns, {}).seed == 3
    cfg = resolve_config(ns, {"NOWCAST_SEED": "11"})
    assert cfg.seed == 11 and cfg.train.seed == 11 and cfg.train.epochs == 4
    assert cfg.train.arch.hidden == (8, 8)
    ns.seed, ns.epochs = 5, 2
    cfg = resolve_config(ns, {"NOWCAST_SEED": "11"})
    assert cfg.seed == 5 and cfg.train.epochs == 2


def test_synth_deterministic(tmp_path, capsys):
    args = ["synth", "--seed", "7", "--frames", "8", "--rows", "20", "--cols", "24"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "frames.w4cf").read_bytes()
    assert a == (tmp_path / "b" / "frames.w4cf").read_bytes()
    seq = load_frames(tmp_path / "a" / "frames.w4cf")
    assert len(seq) == 8 and seq.shape == (20, 24) and seq.unit is Unit.KELVIN
    assert "8 frames" in capsys.readouterr().out


def test_synth_zero_frames_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["synth", "--frames", "0", "--out", str(tmp_path)])
    assert e.value.code == 2


def test_train_artifacts(workdir):
    assert _train(workdir, "--out", str(workdir / "ck")) == 0
    names = {p.name for p in (workdir / "ck").iterdir()}
    assert names == {f"offset_{k}.w4cp" for k in (1, 2, 3, 4)} | {"manifest.json", "loss.csv"}
    assert json.loads((workdir / "ck" / "manifest.json").read_text())["cell_kind"] == "convgru"
    assert len(_rows(workdir / "ck" / "loss.csv")) == 4
    assert _train(workdir, "--cell", "convlstm", "--out", str(workdir / "lstm")) == 0
    assert json.loads((workdir / "lstm" / "manifest.json").read_text())["cell_kind"] == "convlstm"


def test_train_missing_data(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.w4cf"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_forecast_outputs(workdir):
    _train(workdir, "--out", str(workdir / "ck"))
    cfg = str(workdir / "mini.cfg")
    args = ["forecast", "--config", cfg, "--checkpoint", str(workdir / "ck"),
            "--input", str(workdir / "data" / "frames.w4cf"), "--roi", "c:0,0,48,48"]
    assert main(args + ["--out", str(workdir / "fc")]) == 0
    bt = load_frames(workdir / "fc" / "forecast_bt.w4cf")
    rain = load_frames(workdir / "fc" / "rain.w4cf")
    total = load_frames(workdir / "fc" / "cumulative.w4cf")
    assert (len(bt), bt.shape, bt.unit) == (16, (16, 16), Unit.NORMALIZED)
    assert (len(rain), rain.shape, rain.unit) == (16, (96, 96), Unit.MM_PER_H)
    assert (len(total), total.shape, total.unit) == (1, (96, 96), Unit.MM)
    np.testing.assert_allclose(total[0].data, rain.to_array().sum(axis=0) * 0.25, rtol=1e-5)
    assert {r["roi_id"] for r in _rows(workdir / "fc" / "cdf.csv")} == {"c"}
    assert main(args + ["--out", str(workdir / "fc2")]) == 0
    for name in ("forecast_bt.w4cf", "rain.w4cf", "cumulative.w4cf", "cdf.csv"):
        assert (workdir / "fc" / name).read_bytes() == (workdir / "fc2" / name).read_bytes()


def test_forecast_persistence_baseline(workdir):
    assert main(["forecast", "--baseline", "persistence", "--input",
                 str(workdir / "data" / "frames.w4cf"), "--out", str(workdir / "p")]) == 0
    rain = load_frames(workdir / "p" / "rain.w4cf").to_array()
    assert all(np.array_equal(rain[0], r) for r in rain)
    last = load_frames(workdir / "data" / "frames.w4cf")[-1]
    bt = load_frames(workdir / "p" / "forecast_bt.w4cf")
    np.testing.assert_allclose(bt[15].data, last.data / 300.0, rtol=1e-6)


def test_forecast_manifest_mismatch(workdir, capsys):
    _train(workdir, "--out", str(workdir / "ck"))
    m = json.loads((workdir / "ck" / "manifest.json").read_text())
    m["arch"]["hidden"] = [8, 8]
    (workdir / "ck" / "manifest.json").write_text(json.dumps(m))
    code = main(["forecast", "--checkpoint", str(workdir / "ck"), "--input",
                 str(workdir / "data" / "frames.w4cf"), "--out", str(workdir / "fc")])
    assert code == 1 and "manifest" in capsys.readouterr().err


def test_finetune(workdir):
    _train(workdir, "--out", str(workdir / "ck"))
    assert main(["finetune", "--config", str(workdir / "mini.cfg"), "--checkpoint",
                 str(workdir / "ck"), "--data", str(workdir / "data" / "frames.w4cf"),
                 "--offsets", "1", "--max-windows", "4", "--out", str(workdir / "ft")]) == 0
    assert (workdir / "ft" / "offset_2.w4cp").read_bytes() == (workdir / "ck" / "offset_2.w4cp").read_bytes()
    assert (workdir / "ft" / "offset_1.w4cp").read_bytes() != (workdir / "ck" / "offset_1.w4cp").read_bytes()


def _rain_file(path, vol):
    save_frames(FrameSequence.from_array(vol.astype(np.float32), Unit.MM_PER_H), path)


def test_events_command(tmp_path):
    _rain_file(tmp_path / "dry.w4cf", np.zeros((16, 8, 8)))
    assert main(["events", "--rain", str(tmp_path / "dry.w4cf"), "--out", str(tmp_path / "d.csv")]) == 0
    assert len((tmp_path / "d.csv").read_text().splitlines()) == 1
    blob = np.zeros((16, 8, 8))
    blob[3:6, 2:4, 2:4] = 9.0
    _rain_file(tmp_path / "one.w4cf", blob)
    main(["events", "--rain", str(tmp_path / "one.w4cf"), "--out", str(tmp_path / "o.csv")])
    (row,) = _rows(tmp_path / "o.csv")
    assert row["duration_min"] == "45" and row["footprint_px"] == "4"
    many = np.zeros((16, 8, 8))
    many[::2, ::2, ::2] = np.arange(128).reshape(8, 4, 4) % 7 + 3
    _rain_file(tmp_path / "many.w4cf", many)
    main(["events", "--rain", str(tmp_path / "many.w4cf"), "--top", "3", "--out", str(tmp_path / "m.csv")])
    assert len(_rows(tmp_path / "m.csv")) == 3


def test_events_needs_rain_units(workdir):
    assert main(["events", "--rain", str(workdir / "data" / "frames.w4cf"),
                 "--out", str(workdir / "x.csv")]) == 1


def test_eval_identity_and_scores(tmp_path):
    rng = np.random.default_rng(0)
    vol = rng.random((16, 12, 12)) * 3
    _rain_file(tmp_path / "t.w4cf", vol)
    assert main(["eval", "--pred", f"same={tmp_path / 't.w4cf'}", "--truth", str(tmp_path / "t.w4cf"),
                 "--out", str(tmp_path / "ev")]) == 0
    rows = _rows(tmp_path / "ev" / "metrics.csv")
    assert all(float(r["value"]) == 0 for r in rows if r["metric"] == "rmse")
    assert all(float(r["value"]) == 1 for r in rows if r["metric"] == "ssim")
    metrics = {r["metric"] for r in rows}
    assert {"pod@0.5mm", "far@1.0mm", "f1@0.5mm"} <= metrics
    assert {r["lead_time"] for r in rows} == {str(15 * i) for i in range(1, 17)}
    img = read_ppm(tmp_path / "ev" / "rmse_by_lead.ppm")
    assert img.shape == (320, 480, 3)
    assert len(_rows(tmp_path / "ev" / "rmse_by_lead.csv")) == 16


def test_eval_misaligned(tmp_path):
    _rain_file(tmp_path / "t.w4cf", np.zeros((16, 12, 12)))
    _rain_file(tmp_path / "p.w4cf", np.zeros((15, 12, 12)))
    assert main(["eval", "--pred", str(tmp_path / "p.w4cf"), "--truth", str(tmp_path / "t.w4cf"),
                 "--out", str(tmp_path / "ev")]) == 1


def test_eval_experiment_small(tmp_path):
    cfg = tmp_path / "m.cfg"
    cfg.write_text(MINI)
    assert main(["eval", "--config", str(cfg), "--experiment", "comparison", "--size", "12",
                 "--windows", "6", "--test-windows", "4", "--out", str(tmp_path / "ex")]) == 0
    rows = _rows(tmp_path / "ex" / "comparison.csv")
    assert {r["model"] for r in rows} == {"convgru", "convlstm", "persistence"}
    assert (tmp_path / "ex" / "rmse_by_lead.ppm").exists()
    assert main(["eval", "--config", str(cfg), "--experiment", "transfer", "--size", "12",
                 "--windows", "6", "--test-windows", "4", "--out", str(tmp_path / "ex")]) == 0
    assert len(_rows(tmp_path / "ex" / "transfer.csv")) == 4


def test_calibrate(tmp_path, capsys):
    t = np.linspace(200, 295, 30)
    with open(tmp_path / "s.csv", "w") as fh:
        fh.write("bt_k,rain_mm_h\n")
        for a, b in zip(t, 0.02 * (300 - t) ** 1.4):
            fh.write(f"{float(a)!r},{float(b)!r}\n")
    assert main(["calibrate", "--samples", str(tmp_path / "s.csv"), "--out", str(tmp_path / "c.cfg")]) == 0
    settings = read_config_file(tmp_path / "c.cfg")
    assert float(settings["alpha"]) == pytest.approx(0.02) and float(settings["beta"]) == pytest.approx(1.4)
    (tmp_path / "bad.csv").write_text("bt_k,rain_mm_h\n250,1\n250,2\n")
    assert main(["calibrate", "--samples", str(tmp_path / "bad.csv")]) == 1


def test_render_lines_draws_series():
    img = render_lines({"a": [1, 2, 3], "b": [3, 2, 1]}, width=60, height=40, margin=4)
    colors = {tuple(c) for c in img.reshape(-1, 3)}
    assert (31, 119, 180) in colors and (214, 39, 40) in colors
    assert render_lines({}).min() == 255
