"""End-to-end plumbing: sources -> frames -> aligned chunks -> splits -> training runs.

These functions sit between the CLI and the library modules. They take a
:class:`~gazescrnn.config.RunConfig` and return plain objects so they are
easy to call from tests and notebooks as well.
"""

import copy
import csv
import io
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import events as ev
from . import framing
from . import gaze
from . import model as gm
from . import training
from .config import RunConfig
from .errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass
class Recording:
    """One event stream with its gaze reference track."""

    name: str
    stream: ev.EventStream
    track: gaze.GazeTrack


@dataclass
class PreparedData:
    """Framed, aligned and split data plus bookkeeping for reports."""

    config: RunConfig
    split: framing.DatasetSplit
    n_frames: int
    n_masked: int
    geometry: tuple

    @property
    def included_fraction(self):
        return 1.0 - self.n_masked / self.n_frames if self.n_frames else 0.0

    def all_chunks(self):
        return self.split.train + self.split.validation + self.split.test


# ----------------------------------------------------------------------------
# sources
# ----------------------------------------------------------------------------


def simulate(cfg):
    """Simulate one recording per configured task."""
    return [Recording(f"{i}_{sc.task}", *ev.simulate_eye(sc)) for i, sc in enumerate(cfg.sim_configs())]


def _as_list(v):
    return [] if v is None else ([v] if isinstance(v, str) else list(v))


def read_recordings(cfg):
    """Read the event/gaze file pairs named in ``io``."""
    ev_paths, gz_paths = _as_list(cfg["io"]["events"]), _as_list(cfg["io"]["gaze"])
    if len(ev_paths) != len(gz_paths):
        raise ConfigError("io.events and io.gaze must list the same number of files")
    sim = cfg["simulator"]
    out = []
    for i, (ep, gp) in enumerate(zip(ev_paths, gz_paths)):
        fmt = cfg["io"]["event_format"] or ev.format_for_path(ep)
        stream = ev.read_events(Path(ep).read_bytes(), fmt, geometry=(sim["width"], sim["height"]))
        track = gaze.read_gaze_csv(Path(gp).read_bytes())
        out.append(Recording(f"{i}_{Path(ep).stem}", stream, track))
    return out


def load_recordings(cfg):
    """Files from ``io`` when given, otherwise the simulator."""
    if cfg["io"]["events"] or cfg["io"]["gaze"]:
        return read_recordings(cfg)
    return simulate(cfg)


# ----------------------------------------------------------------------------
# framing and alignment
# ----------------------------------------------------------------------------


def effective_downscale(cfg):
    """Full-size input mode feeds undownscaled frames; the network pools instead."""
    return 1 if cfg["model"]["full_size_input"] else int(cfg["framing"]["downscale"])


def resolve(cfg, geometry):
    """Return ``cfg`` with the model input shape derived from the frame geometry.

    The resolved document is what gets echoed next to outputs.
    """
    doc = copy.deepcopy(cfg.doc)
    w, h = geometry
    d = effective_downscale(cfg)
    doc["framing"]["downscale"] = d
    doc["model"]["input_shape"] = [2, h // d, w // d]
    return RunConfig(doc).validate()


def make_frames(cfg, stream):
    fr = cfg["framing"]
    if fr["method"] == "count":
        seq = framing.frame_by_count(stream, fr["value"])
    else:
        seq = framing.frame_by_window(stream, fr["value"])
    seq = framing.downscale(seq, effective_downscale(cfg))
    if fr["binarize"]:
        seq = framing.binarize(seq)
    return seq


def frame_recording(cfg, rec):
    """Frames and aligned targets for one recording."""
    seq = make_frames(cfg, rec.stream)
    if len(seq) == 0:
        raise DataError(f"recording {rec.name} produced no frames")
    targets = gaze.align_targets(seq, rec.track, cfg["references"]["mask_threshold_us"])
    return seq, targets


def prepare_data(cfg, recordings=None):
    """Frame, align, chunk and split. Chunks never span two recordings."""
    recordings = load_recordings(cfg) if recordings is None else recordings
    if not recordings:
        raise DataError("no recordings")
    geometries = {r.stream.geometry for r in recordings}
    if len(geometries) != 1:
        raise DataError(f"recordings have different sensor geometries {sorted(geometries)}")
    geometry = geometries.pop()
    cfg = resolve(cfg, geometry)
    chunks, n_frames, n_masked = [], 0, 0
    for rec in recordings:
        seq = make_frames(cfg, rec.stream)
        if len(seq) == 0:
            logger.warning("recording %s yields no frames; skipped", rec.name)
            continue
        targets = gaze.align_targets(seq, rec.track, cfg["references"]["mask_threshold_us"])
        n_frames += len(seq)
        n_masked += int(targets.mask.sum())
        chunks.extend(framing.chunk(seq, targets, cfg["framing"]["chunk_len"]))
    if not chunks:
        if n_frames == 0:
            raise DataError("no recording yields any frames")
        raise DataError(f"{n_frames} frames yield no complete chunk of {cfg['framing']['chunk_len']}")
    split = framing.split_chunks(chunks, tuple(cfg["framing"]["ratios"]), cfg.seed)
    logger.info("%d frames, %d chunks (%d/%d/%d), %.2f%% included", n_frames, len(chunks),
                len(split.train), len(split.validation), len(split.test),
                100.0 * (1 - n_masked / n_frames))
    return PreparedData(cfg, split, n_frames, n_masked, geometry)


# ----------------------------------------------------------------------------
# training and evaluation
# ----------------------------------------------------------------------------


@dataclass
class RunResult:
    model: gm.GazeSCRNN
    train: training.TrainResult
    data: PreparedData
    test: training.Metrics = None


def train_run(cfg, data=None):
    """Train on the train split; keep the parameters with the best validation MAE."""
    data = prepare_data(cfg) if data is None else data
    cfg = data.config
    if not data.split.train:
        raise DataError("the train split is empty")
    net = gm.build(cfg.model_config())
    training.fit_standardization(net, data.split.train)
    res = training.train(net, data.split.train, cfg.train_config(), validation=data.split.validation or None)
    if res.best_state is not None:
        net.load_state_dict(res.best_state)
    held_out = data.split.test or data.split.validation
    test = training.evaluate(net, held_out) if held_out else None
    return RunResult(net, res, data, test)


def checkpoint_meta(cfg, result=None):
    meta = {"config": cfg.doc}
    if result is not None:
        meta["best_epoch"] = result.best_epoch
        meta["updates"] = result.updates
    return meta


def check_compatible(cfg, net):
    """Raise :class:`ConfigError` if ``net`` was not built from ``cfg``'s model section."""
    want = cfg.model_config().to_dict()
    have = net.config.to_dict()
    # the init seed does not shape the network, so it may differ
    diff = sorted(k for k in want if k != "seed" and want[k] != have.get(k))
    if diff:
        raise ConfigError(f"checkpoint does not match the config in model fields {diff}")


def evaluate_split(net, chunks, batch_size=1):
    if not chunks:
        raise DataError("nothing to evaluate: the requested split is empty")
    return training.evaluate(net, chunks, batch_size=batch_size)


# ----------------------------------------------------------------------------
# ablation grid
# ----------------------------------------------------------------------------

GRID_HEADER = ("Neuron", "Framing", "FPTT", "T", "Threshold", "Full-size", "Included",
               "MAE", "MPE", "MFR")


def _axis_overrides(name, value):
    """Translate one grid axis value into config overrides."""
    if name == "neuron":
        return {"model.neuron": value}
    if name == "T":
        return {"training.T": int(value)}
    if name == "fptt":
        on = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
        return {"training.method": "fptt" if on else "tbptt"}
    if name == "mask_threshold":
        return {"references.mask_threshold_us": value}
    if name == "full_size":
        return {"model.full_size_input": bool(value)}
    if name == "framing":
        if isinstance(value, int):
            return {"framing.method": "count", "framing.value": value}
        method, _, amount = str(value).partition(":")
        if method not in ("count", "window") or not amount.isdigit():
            raise ConfigError(f"framing axis values look like 'count:300' or 'window:10000', got {value!r}")
        return {"framing.method": method, "framing.value": int(amount)}
    if "." in name:
        return {name: value}
    raise ConfigError(f"unknown grid axis {name!r}")


def _apply(cfg, overrides):
    doc = copy.deepcopy(cfg.doc)
    for key, value in overrides.items():
        section, _, field = key.partition(".")
        if section not in doc or not isinstance(doc[section], dict) or field not in doc[section]:
            raise ConfigError(f"unknown config key {key!r}")
        doc[section][field] = value
    return RunConfig(doc).validate()


def grid_configs(cfg, axes):
    """Cartesian product of ``axes`` (name -> list of values) applied to ``cfg``."""
    names = list(axes)
    for name in names:
        if not isinstance(axes[name], (list, tuple)) or not axes[name]:
            raise ConfigError(f"grid axis {name!r} needs a non-empty list of values")
    for combo in itertools.product(*(axes[n] for n in names)):
        overrides = {}
        for name, value in zip(names, combo):
            overrides.update(_axis_overrides(name, value))
        yield dict(zip(names, combo)), _apply(cfg, overrides)


def _framing_label(cfg):
    fr = cfg["framing"]
    if fr["method"] == "count":
        return f"{fr['value']} events"
    v = fr["value"]
    return f"{v // 1000}ms" if v % 1000 == 0 else f"{v}us"


def _threshold_label(thr):
    if thr is None:
        return "N/A"
    return f"{thr / 1000:g}ms"


def grid_row(cfg, data, metrics):
    return [cfg["model"]["neuron"].upper(), _framing_label(cfg),
            "yes" if cfg["training"]["method"] != "tbptt" else "no", cfg["training"]["T"],
            _threshold_label(cfg["references"]["mask_threshold_us"]),
            "yes" if cfg["model"]["full_size_input"] else "no",
            f"{100.0 * data.included_fraction:.2f}%", repr(float(metrics.mae)),
            repr(float(metrics.mpe)), repr(float(metrics.mfr))]


def experiment_grid(cfg, axes, recordings=None, on_row=None):
    """Train and evaluate every axis combination; returns the table rows.

    Each row reports the held-out metrics of the best-validation model.
    Recordings are loaded once and shared across combinations.
    """
    recordings = load_recordings(cfg) if recordings is None else recordings
    rows = []
    for combo, run_cfg in grid_configs(cfg, axes):
        logger.info("grid point %s", combo)
        data = prepare_data(run_cfg, recordings)
        res = train_run(data.config, data)
        if res.test is None:
            raise DataError("grid runs need a validation or test split to report on")
        row = grid_row(data.config, data, res.test)
        rows.append(row)
        if on_row is not None:
            on_row(combo, row)
    return rows


def write_grid_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_HEADER)
    w.writerows(rows)
    return buf.getvalue()


def alignment_report(data):
    """Counts behind the ``Included`` column."""
    return {"frames": data.n_frames, "masked": data.n_masked,
            "masked_fraction": data.n_masked / data.n_frames if data.n_frames else 0.0,
            "included_percent": round(100.0 * data.included_fraction, 4),
            "chunks": {"train": len(data.split.train), "validation": len(data.split.validation),
                       "test": len(data.split.test)}}


def oracle_rows(chunks):
    """Prediction rows that copy the targets; metrics over them are exactly 0."""
    rows = []
    for _, tg in chunks:
        arr = tg.as_array()
        for i in range(len(tg)):
            rows.append({"t_us": int(tg.t_ref[i]), "pred": arr[i], "true": arr[i], "masked": bool(tg.mask[i])})
    return rows


def metrics_from_rows(rows):
    pred = np.array([r["pred"] for r in rows], dtype=np.float64)
    truth = np.array([r["true"] for r in rows], dtype=np.float64)
    mask = np.array([r["masked"] for r in rows], dtype=bool)
    return training.metrics_from_predictions(pred[:, 3:5], pred[:, 0:3], truth, mask)
