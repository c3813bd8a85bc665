"""Command-line entry point: ``gazescrnn {simulate,frame,train,eval,predict,grid}``.

Every command takes the same global flags (``--config``, ``--set``,
``--seed``, ``--out``) and writes the fully-defaulted effective config as
``config.json`` next to its outputs. Exit codes: 0 success, 2 config error,
3 data error, 4 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from . import events as ev
from . import framing
from . import gaze
from . import model as gm
from . import pipeline
from . import training
from .errors import CheckpointError, ConfigError, DataError, NumericError

logger = logging.getLogger("gazescrnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _common(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="JSON run config")
    parser.add_argument("--set", metavar="K=V", action="append", dest="set_sub" if suppress else "set",
                        default=argparse.SUPPRESS if suppress else [],
                        help="override one config value, e.g. training.T=8 (repeatable)")
    parser.add_argument("--seed", type=int, default=default, help="master seed")
    parser.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS if suppress else "out",
                        help="output directory (default: out)")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    p = argparse.ArgumentParser(prog="gazescrnn", description="Event-based gaze tracking with spiking networks.")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common, suppress=True)

    s = sub.add_parser("simulate", parents=[common], help="write synthetic event and gaze files")
    s.add_argument("--format", choices=("csv", "binary"), default=None, help="event file format")

    f = sub.add_parser("frame", parents=[common], help="frame, downscale and align a recording")
    f.add_argument("--events", nargs="+", help="event files (overrides io.events)")
    f.add_argument("--gaze", nargs="+", help="gaze CSV files (overrides io.gaze)")

    sub.add_parser("train", parents=[common], help="train and keep the best-validation checkpoint")

    for name, text in (("eval", "metrics of a checkpoint on a split"),
                       ("predict", "per-frame predictions of a checkpoint")):
        e = sub.add_parser(name, parents=[common], help=text)
        e.add_argument("--checkpoint", required=True, metavar="PATH")
        e.add_argument("--split", choices=("train", "validation", "test"), default="test")

    g = sub.add_parser("grid", parents=[common], help="ablation grid over config axes")
    g.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2",
                   help="axis values; names: neuron, framing, T, fptt, mask_threshold, full_size "
                        "or a dotted config key (repeatable)")
    return p


def _load_config(args):
    text = Path(args.config).read_text() if args.config else None
    overrides = list(args.set) + list(getattr(args, "set_sub", []))
    return config_mod.load(text, overrides, args.seed)


def _write(out, name, data):
    path = out / name
    if isinstance(data, str):
        data = data.encode()
    path.write_bytes(data)
    return path


def _echo(out, cfg):
    _write(out, "config.json", cfg.to_json())


def cmd_simulate(cfg, out, args):
    fmt = args.format or cfg["io"]["event_format"] or "csv"
    ext = "bin" if fmt == "binary" else "csv"
    for rec in pipeline.simulate(cfg):
        _write(out, f"events_{rec.name}.{ext}", ev.write_events(rec.stream, fmt))
        _write(out, f"gaze_{rec.name}.csv", gaze.write_gaze_csv(rec.track))
        dur = int(rec.stream.t[-1] - rec.stream.t[0]) if len(rec.stream) else 0
        print(f"{rec.name}: {len(rec.stream)} events over {dur} us, {len(rec.track)} gaze samples")
    _echo(out, cfg)


def cmd_frame(cfg, out, args):
    if args.events or args.gaze:
        cfg = cfg.with_overrides([f"io.events={json.dumps(args.events or [])}",
                                  f"io.gaze={json.dumps(args.gaze or [])}"])
    recordings = pipeline.load_recordings(cfg)
    frames, masked = 0, 0
    for rec in recordings:
        seq, targets = pipeline.frame_recording(pipeline.resolve(cfg, rec.stream.geometry), rec)
        _write(out, f"frames_{rec.name}.frsq", framing.write_frame_cache(seq))
        _write(out, f"targets_{rec.name}.csv", _targets_csv(targets))
        frames += len(seq)
        masked += int(targets.mask.sum())
        print(f"{rec.name}: {len(seq)} frames, masked fraction {targets.mask.mean() if len(seq) else 0.0:.6f}")
    included = 100.0 * (1 - masked / frames) if frames else 0.0
    report = {"frames": frames, "masked": masked,
              "masked_fraction": masked / frames if frames else 0.0,
              "included_percent": round(included, 4)}
    _write(out, "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"total: {frames} frames, included {included:.2f}%")
    cfg = pipeline.resolve(cfg, recordings[0].stream.geometry) if recordings else cfg
    _echo(out, cfg)


def _targets_csv(targets):
    lines = ["t_ref_us,origin_x,origin_y,origin_z,phi,psi,gap_us,masked"]
    arr = targets.as_array()
    for i in range(len(targets)):
        vals = ",".join(repr(float(v)) for v in arr[i])
        lines.append(f"{int(targets.t_ref[i])},{vals},{repr(float(targets.gap[i]))},{int(targets.mask[i])}")
    return "\n".join(lines) + "\n"


def cmd_train(cfg, out, args):
    data = pipeline.prepare_data(cfg)
    cfg = data.config
    res = pipeline.train_run(cfg, data)
    _write(out, "checkpoint.gsc", gm.save(res.model, pipeline.checkpoint_meta(cfg, res.train)))
    history = list(res.train.history)
    if res.test is not None:
        split = "test" if data.split.test else "validation"
        history.append((res.train.best_epoch or len(res.train.history), split, res.test))
    _write(out, "metrics.csv", training.write_metrics_csv(history))
    _echo(out, cfg)
    print(f"trained {res.train.updates} updates; best epoch {res.train.best_epoch}")
    if res.test is not None:
        print(f"held-out MAE {res.test.mae:.4f} deg, MPE {res.test.mpe:.4f} mm, MFR {res.test.mfr:.5f}")


def _checkpoint_and_split(cfg, args):
    try:
        net, _ = gm.load(Path(args.checkpoint).read_bytes())
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from exc
    data = pipeline.prepare_data(cfg)
    pipeline.check_compatible(data.config, net)
    return net, data, getattr(data.split, args.split)


def cmd_eval(cfg, out, args):
    net, data, chunks = _checkpoint_and_split(cfg, args)
    m = pipeline.evaluate_split(net, chunks)
    _write(out, "eval_metrics.csv", training.write_metrics_csv([(0, args.split, m)]))
    _echo(out, data.config)
    print(f"{args.split}: MAE {m.mae:.4f} deg, MPE {m.mpe:.4f} mm, MFR {m.mfr:.5f}, frames {m.frames_counted}")


def cmd_predict(cfg, out, args):
    net, data, chunks = _checkpoint_and_split(cfg, args)
    if not chunks:
        raise DataError(f"the {args.split} split is empty")
    rows = training.predict(net, chunks)
    _write(out, "predictions.csv", training.write_predictions_csv(rows))
    _echo(out, data.config)
    print(f"{len(rows)} predictions written")


def parse_axes(items):
    axes = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"axis {item!r} is not of the form NAME=V1,V2")
        name, values = item.split("=", 1)
        axes[name.strip()] = [config_mod.parse_value(v) for v in values.split(",")]
    if not axes:
        raise ConfigError("grid needs at least one --axis")
    return axes


def cmd_grid(cfg, out, args):
    axes = parse_axes(args.axis)
    rows = pipeline.experiment_grid(cfg, axes, on_row=lambda combo, row: print(combo, "->", row[-3:]))
    _write(out, "grid.csv", pipeline.write_grid_csv(rows))
    _write(out, "grid_axes.json", json.dumps(axes, indent=2, sort_keys=True) + "\n")
    _echo(out, cfg)


COMMANDS = {"simulate": cmd_simulate, "frame": cmd_frame, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "grid": cmd_grid}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
