"""End-to-end command-line runs on small synthetic data."""

import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from gazescrnn import cli, pipeline
from gazescrnn import config as config_mod
from gazescrnn.events import EventStream, write_events
from gazescrnn.gaze import GazeTrack, read_gaze_csv, write_gaze_csv

TOY = Path(__file__).resolve().parent.parent / "configs" / "toy.json"


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    return list(csv.reader(io.StringIO(Path(path).read_text())))


def test_simulate_fixation_rows_and_repeatability(tmp_path, capsys):
    args = ["--config", TOY, "--set", 'simulator.tasks=["fixation"]', "--set", "simulator.duration_us=1000000"]
    assert run("simulate", *args, "--out", tmp_path / "a") == 0
    assert run("simulate", *args, "--out", tmp_path / "b") == 0
    track = read_gaze_csv((tmp_path / "a" / "gaze_0_fixation.csv").read_bytes())
    assert len(track) == 101
    assert np.all(track.angles == track.angles[0])
    for name in ("events_0_fixation.csv", "gaze_0_fixation.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "fixation" in capsys.readouterr().out


def test_simulate_binary_format(tmp_path):
    assert run("simulate", "--config", TOY, "--format", "binary", "--out", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.glob("events_*")) == ["events_0_smooth_pursuit.bin",
                                                                  "events_1_random_saccade.bin"]


def _write_recording(tmp_path, n_events=1000):
    t = np.arange(n_events, dtype=np.int64) * 100
    rng = np.random.default_rng(0)
    s = EventStream(64, 48, t, rng.integers(0, 64, n_events), rng.integers(0, 48, n_events),
                    rng.integers(0, 2, n_events))
    ev = tmp_path / "rec.csv"
    ev.write_bytes(write_events(s, "csv"))
    gt = np.arange(0, int(t[-1]) + 10_001, 10_000)
    tr = GazeTrack(gt, np.zeros((len(gt), 3)), np.stack([np.sin(gt / 1e5), np.zeros(len(gt))], 1))
    gz = tmp_path / "rec_gaze.csv"
    gz.write_bytes(write_gaze_csv(tr))
    return ev, gz


def test_frame_count_and_mask_report(tmp_path):
    ev, gz = _write_recording(tmp_path)
    out = tmp_path / "out"
    code = run("frame", "--config", TOY, "--set", "framing.value=300", "--set",
               "references.mask_threshold_us=20000", "--events", ev, "--gaze", gz, "--out", out)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["frames"] == 3 and report["masked_fraction"] == 0.0 and report["included_percent"] == 100.0
    rows = read_csv(out / "targets_0_rec.csv")
    assert len(rows) == 4 and rows[1][-1] == "0"
    echo = json.loads((out / "config.json").read_text())
    assert echo["model"]["input_shape"] == [2, 24, 32]


def test_train_eval_predict(tmp_path):
    out = tmp_path / "run"
    assert run("train", "--config", TOY, "--set", "training.epochs=1", "--out", out) == 0
    assert (out / "checkpoint.gsc").stat().st_size > 0
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["epoch", "split", "loss", "mae_deg", "mpe_mm", "mfr", "frames_counted"]
    assert sum(r[1] == "validation" for r in rows[1:]) == 1
    ck = out / "checkpoint.gsc"
    assert run("eval", "--config", TOY, "--checkpoint", ck, "--out", tmp_path / "ev") == 0
    ev_rows = read_csv(tmp_path / "ev" / "eval_metrics.csv")
    assert ev_rows[1][1] == "test" and float(ev_rows[1][3]) >= 0
    assert run("predict", "--config", TOY, "--checkpoint", ck, "--split", "validation",
               "--out", tmp_path / "pr") == 0
    pred = read_csv(tmp_path / "pr" / "predictions.csv")
    assert pred[0][0] == "t_us" and len(pred) > 1


def test_oracle_stub_scores_zero():
    cfg = config_mod.load(TOY.read_text())
    data = pipeline.prepare_data(cfg)
    m = pipeline.metrics_from_rows(pipeline.oracle_rows(data.split.test))
    assert m.mae == pytest.approx(0.0, abs=1e-5) and m.mpe == 0.0


def test_grid_two_by_two(tmp_path):
    out = tmp_path / "grid"
    code = run("grid", "--config", TOY, "--set", "training.epochs=1", "--set", "training.max_updates=2",
               "--axis", "T=1,8", "--axis", "fptt=true,false", "--out", out)
    assert code == 0
    rows = read_csv(out / "grid.csv")
    assert tuple(rows[0]) == pipeline.GRID_HEADER
    assert len(rows) == 5
    assert {(r[2], r[3]) for r in rows[1:]} == {("yes", "1"), ("yes", "8"), ("no", "1"), ("no", "8")}


def test_exit_codes(tmp_path):
    assert run("train", "--set", "framing.method=bogus", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--config", bad, "--out", tmp_path) == 2
    assert run("eval", "--config", TOY, "--checkpoint", tmp_path / "missing.gsc", "--out", tmp_path) == 3
    assert run("frame", "--config", TOY, "--events", tmp_path / "nope.csv", "--gaze", tmp_path / "nope_gaze.csv",
               "--out", tmp_path) == 3
    (tmp_path / "trunc.gsc").write_bytes(b"GSC1\x01")
    assert run("eval", "--config", TOY, "--checkpoint", tmp_path / "trunc.gsc", "--out", tmp_path) == 3


def test_checkpoint_config_mismatch(tmp_path):
    out = tmp_path / "run"
    assert run("train", "--config", TOY, "--set", "training.epochs=1", "--set", "training.max_updates=1",
               "--out", out) == 0
    code = run("eval", "--config", TOY, "--set", "model.hidden=[8]", "--checkpoint", out / "checkpoint.gsc",
               "--out", tmp_path / "ev")
    assert code == 2


def test_global_flags_after_subcommand(tmp_path):
    assert run("simulate", "--config", TOY, "--seed", 3, "--out", tmp_path) == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 3
    assert run("--seed", 4, "--out", tmp_path, "simulate", "--config", TOY) == 0
    assert json.loads((tmp_path / "config.json").read_text())["seed"] == 4


def test_checkpoint_accepted_under_other_seed(tmp_path):
    out = tmp_path / "run"
    assert run("train", "--config", TOY, "--seed", 3, "--set", "training.epochs=1", "--set",
               "training.max_updates=1", "--out", out) == 0
    assert run("eval", "--config", TOY, "--checkpoint", out / "checkpoint.gsc", "--out", tmp_path / "ev") == 0
