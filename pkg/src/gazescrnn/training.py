"""Loss, truncated BPTT / FPTT training loops and evaluation metrics."""

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .errors import ConfigError, DataError, NumericError
from .gaze import angle_error, pupil_error

logger = logging.getLogger(__name__)

METHODS = ("tbptt", "fptt", "fptt_tbptt")
METRICS_HEADER = ("epoch", "split", "loss", "mae_deg", "mpe_mm", "mfr", "frames_counted")


@dataclass(frozen=True)
class LossConfig:
    lambda_pupil: float = 0.1
    lambda_angle: float = 1.0

    def validate(self):
        if self.lambda_pupil < 0 or self.lambda_angle < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lambda_pupil == 0 and self.lambda_angle == 0:
            raise ConfigError("loss weights cannot both be 0")
        return self


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    ``method`` picks truncated BPTT (``tbptt``) or FPTT. FPTT updates once per
    window of ``T`` frames; ``T=1`` is per-frame FPTT and larger ``T`` the
    hybrid with in-window backpropagation (``fptt_tbptt`` names the same
    loop). ``max_updates`` stops training early after that many optimiser
    steps.
    """

    method: str = "fptt"
    T: int = 8
    alpha: float = 0.1
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 1
    batch_size: int = 1
    seed: int = 0
    grad_clip: float = None
    max_updates: int = None
    fptt_average: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.method != "tbptt" and not self.alpha > 0:
            raise ConfigError("alpha must be > 0 for FPTT")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1 and lr > 0")
        self.loss.validate()
        return self

    @property
    def fptt(self):
        return self.method != "tbptt"


@dataclass
class Metrics:
    mae: float
    mpe: float
    mfr: float
    loss: float
    frames_counted: int

    def row(self, epoch, split):
        return [epoch, split, _fmt(self.loss), _fmt(self.mae), _fmt(self.mpe), _fmt(self.mfr),
                self.frames_counted]


def _fmt(v):
    return "nan" if v is None or not math.isfinite(v) else repr(float(v))


# ----------------------------------------------------------------------------
# data preparation
# ----------------------------------------------------------------------------


@dataclass
class PreparedChunk:
    """Numeric arrays for one chunk.

    ``targets`` are in model units (standardised origin, radians);
    ``truth`` in mm and degrees.
    """

    frames: np.ndarray
    targets: np.ndarray
    truth: np.ndarray
    mask: np.ndarray
    t_ref: np.ndarray

    def __len__(self):
        return len(self.frames)


def fit_standardization(model, chunks):
    """Set the model's origin mean/std from the unmasked targets of ``chunks``."""
    rows = [tg.origin[~tg.mask] for _, tg in chunks]
    origin = np.concatenate(rows) if rows else np.zeros((0, 3))
    if len(origin) == 0:
        raise DataError("no unmasked targets to standardise on")
    std = origin.std(axis=0)
    model.origin_mean = origin.mean(axis=0)
    model.origin_std = np.where(std > 1e-6, std, 1.0)


def prepare(model, chunks):
    """Convert ``(FrameSequence, AlignedTargets)`` chunks to :class:`PreparedChunk`."""
    out = []
    for item in chunks:
        if isinstance(item, PreparedChunk):
            out.append(item)
            continue
        seq, tg = item
        truth = tg.as_array()
        targets = np.concatenate([model.standardize_origin(tg.origin), np.radians(tg.angles)], axis=1)
        out.append(PreparedChunk(np.asarray(seq.data, dtype=model.dtype), targets, truth,
                                 np.asarray(tg.mask, dtype=bool), np.asarray(tg.t_ref)))
    return out


def _batches(chunks, batch_size, order):
    """Stack equal-length chunks into ``(L, B, ...)`` arrays following ``order``."""
    for i in range(0, len(order), batch_size):
        group = [chunks[j] for j in order[i:i + batch_size]]
        length = min(len(c) for c in group)
        yield (np.stack([c.frames[:length] for c in group], axis=1),
               np.stack([c.targets[:length] for c in group], axis=1),
               np.stack([c.truth[:length] for c in group], axis=1),
               np.stack([c.mask[:length] for c in group], axis=1))


# ----------------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------------


def per_sample_loss(pred, target, cfg):
    """Loss per batch row for ``pred`` (Tensor ``(B, 5)``) against ``target`` ``(B, 5)``.

    Both in model units: standardised origin and angles in radians.
    """
    target = np.asarray(target, dtype=pred.dtype)
    parts = []
    if cfg.lambda_pupil:
        d = pred[:, 0:3] - Tensor(target[:, 0:3])
        parts.append(ag.mean(ag.square(d), axis=1) * (cfg.lambda_pupil))
    if cfg.lambda_angle:
        phi, psi = pred[:, 3], pred[:, 4]
        phi_t, psi_t = target[:, 3], target[:, 4]
        # cosine of the angle between two unit gaze vectors given in spherical form
        cos_g = (ag.cos(psi) * np.cos(psi_t) * ag.cos(phi - Tensor(phi_t))
                 + ag.sin(psi) * np.sin(psi_t))
        parts.append((1.0 - cos_g) * cfg.lambda_angle)
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out


def compute_loss(pred, target, cfg=LossConfig(), mask=None):
    """Mean loss over unmasked rows. Accepts single 5-vectors or ``(B, 5)`` batches."""
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(pred, dtype=np.float64))
    target = np.asarray(target, dtype=np.float64)
    if pred.ndim == 1:
        pred = ag.reshape(pred, (1, -1))
        target = target.reshape(1, -1)
    keep = np.ones(pred.shape[0], bool) if mask is None else ~np.asarray(mask, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise DataError("all targets are masked")
    losses = per_sample_loss(pred, target, cfg)
    return ag.sum(losses * keep.astype(pred.dtype)) * (1.0 / n)


# ----------------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------------


class SGD:
    """SGD with heavy-ball momentum: ``v = mu * v + g``, ``p -= lr * v``."""

    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p.data -= p.data.dtype.type(self.lr) * v


def _clip(grads, max_norm):
    if max_norm is None:
        return grads
    norm = math.sqrt(float(sum(np.sum(g.astype(np.float64) ** 2) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [g * g.dtype.type(scale) for g in grads]
    return grads


def step_seed(seed, epoch, batch, t):
    """Dropout seed for one forward step; independent of the windowing."""
    return int(np.random.SeedSequence([seed, epoch, batch, t]).generate_state(1)[0])


@dataclass
class _Accumulator:
    """Running sums for MAE/MPE/MFR/loss over a pass."""

    angle: float = 0.0
    pupil: float = 0.0
    counted: int = 0
    loss: float = 0.0
    loss_n: int = 0
    rate: float = 0.0
    rate_n: int = 0

    def add_step(self, model, output, truth, keep, stats):
        for count, total in stats:
            self.rate += count / total
            self.rate_n += 1
        if keep.any():
            origin, angles = model.decode(output)
            self.angle += float(np.sum(angle_error(angles[keep], truth[keep, 3:5])))
            self.pupil += float(np.sum(pupil_error(origin[keep], truth[keep, 0:3])))
            self.counted += int(keep.sum())

    def metrics(self):
        n = self.counted
        return Metrics(self.angle / n if n else float("nan"), self.pupil / n if n else float("nan"),
                       self.rate / self.rate_n if self.rate_n else 0.0,
                       self.loss / self.loss_n if self.loss_n else float("nan"), n)


def window_gradients(model, frames, targets, mask, T, loss_cfg, seed=0, epoch=0, batch=0,
                     training=True, on_window=None):
    """Run a batch through the model in non-overlapping windows of ``T`` frames.

    Yields ``(loss, grads, tape_peak, n_counted)`` per window, where ``grads``
    is None for fully masked windows. State is carried across windows and
    detached at each boundary. ``on_window(step_outputs)`` sees each window's
    per-step outputs before the tape is released.
    """
    params = model.parameters()
    length, bsz = frames.shape[:2]
    state = model.zero_state(bsz)
    for w0 in range(0, length, T):
        tape = Tape()
        outputs = []
        total = None
        counted = 0
        with tape:
            for t in range(w0, min(w0 + T, length)):
                out = model.forward_step(Tensor(frames[t]), state, training=training,
                                         dropout_seed=step_seed(seed, epoch, batch, t))
                state = out.state
                outputs.append((t, out))
                keep = ~mask[t]
                if keep.any():
                    per = per_sample_loss(out.output, targets[t], loss_cfg)
                    term = ag.sum(per * keep.astype(model.dtype))
                    total = term if total is None else total + term
                    counted += int(keep.sum())
            loss = total * (1.0 / counted) if counted else None
        grads = tape.backward(loss, params) if counted else None
        if on_window is not None:
            on_window(outputs)
        peak = tape.peak
        tape.clear()
        state = state.detach()
        yield (None if loss is None else float(loss.data)), grads, peak, counted


def bptt_gradients(model, frames, targets, mask, loss_cfg, seed=0, epoch=0, batch=0, training=True):
    """Full backpropagation through the whole sequence with one tape; returns ``(loss, grads)``."""
    params = model.parameters()
    state = model.zero_state(frames.shape[1])
    tape = Tape()
    terms, counted = [], 0
    with tape:
        for t in range(frames.shape[0]):
            out = model.forward_step(Tensor(frames[t]), state, training=training,
                                     dropout_seed=step_seed(seed, epoch, batch, t))
            state = out.state
            keep = ~mask[t]
            if keep.any():
                terms.append(ag.sum(per_sample_loss(out.output, targets[t], loss_cfg)
                                    * keep.astype(model.dtype)))
                counted += int(keep.sum())
        if not counted:
            raise DataError("all frames are masked")
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        loss = total * (1.0 / counted)
    return float(loss.data), tape.backward(loss, params)


@dataclass
class TrainResult:
    model: object
    history: list
    updates: int
    peak_tape_nodes: int
    best_epoch: int = None
    best_state: dict = None


def train(model, train_chunks, cfg, validation=None, on_epoch=None):
    """Train ``model`` in place. Returns :class:`TrainResult`.

    ``train_chunks`` are ``(FrameSequence, AlignedTargets)`` pairs or
    :class:`PreparedChunk`. Origin standardisation is fitted on them unless
    ``model.origin_std`` was already set away from the identity. History rows
    are ``(epoch, split, Metrics)``; the best validation MAE snapshot is kept
    in ``best_state``.
    """
    cfg = cfg.validate()
    if train_chunks and not isinstance(train_chunks[0], PreparedChunk):
        if np.all(model.origin_std == 1.0) and np.all(model.origin_mean == 0.0):
            fit_standardization(model, train_chunks)
    data = prepare(model, train_chunks)
    val = prepare(model, validation) if validation else None
    if not any((~c.mask).any() for c in data):
        raise DataError("no unmasked frames in the training data")

    params = model.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum)
    avg = [p.data.copy() for p in params] if cfg.fptt else None
    rng = np.random.default_rng(cfg.seed)
    history, updates, peak = [], 0, 0
    best_mae, best_epoch, best_state = math.inf, None, None

    for epoch in range(1, cfg.epochs + 1):
        acc = _Accumulator()
        order = rng.permutation(len(data))
        for bi, (frames, targets, truth, mask) in enumerate(_batches(data, cfg.batch_size, order)):
            def observe(outputs, truth=truth, mask=mask):
                for t, out in outputs:
                    acc.add_step(model, out.output, truth[t], ~mask[t], out.spike_stats)

            for loss, grads, tape_peak, counted in window_gradients(
                    model, frames, targets, mask, cfg.T, cfg.loss, cfg.seed, epoch, bi,
                    on_window=observe):
                peak = max(peak, tape_peak)
                if grads is None:
                    continue
                if not math.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, update {updates}")
                acc.loss += loss
                acc.loss_n += 1
                _apply_update(params, opt, grads, avg, cfg)
                updates += 1
                if cfg.max_updates is not None and updates >= cfg.max_updates:
                    break
            if cfg.max_updates is not None and updates >= cfg.max_updates:
                break
        for p in params:
            if not np.all(np.isfinite(p.data)):
                raise NumericError(f"non-finite parameter {p.name} after epoch {epoch}")
        history.append((epoch, "train", acc.metrics()))
        if val:
            vm = evaluate(model, val, batch_size=cfg.batch_size)
            history.append((epoch, "validation", vm))
            if vm.mae < best_mae:
                best_mae, best_epoch = vm.mae, epoch
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
        logger.info("epoch %d: %s", epoch, history[-1][2])
        if on_epoch is not None:
            on_epoch(epoch, history)
        if cfg.max_updates is not None and updates >= cfg.max_updates:
            break
    return TrainResult(model, history, updates, peak, best_epoch, best_state)


def _apply_update(params, opt, grads, avg, cfg):
    if avg is None:
        opt.step(_clip(grads, cfg.grad_clip))
        return
    alpha = cfg.alpha
    reg = [g + p.dtype.type(alpha) * (p.data - a) for g, p, a in zip(grads, params, avg)]
    opt.step(_clip(reg, cfg.grad_clip))
    if cfg.fptt_average:
        for a, p, g in zip(avg, params, grads):
            a[...] = 0.5 * (a + p.data) - (1.0 / (2.0 * alpha)) * g


def train_tbptt(model, train_chunks, cfg, validation=None):
    if cfg.method != "tbptt":
        raise ConfigError("train_tbptt needs method='tbptt'")
    return train(model, train_chunks, cfg, validation)


def train_fptt(model, train_chunks, cfg, validation=None):
    if cfg.method == "tbptt":
        raise ConfigError("train_fptt needs method 'fptt' or 'fptt_tbptt'")
    return train(model, train_chunks, cfg, validation)


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------


def run_sequence(model, chunk, training=False):
    """Forward one prepared chunk from a fresh state without recording.

    Returns ``(outputs (L, 5), spike_stats per step)``.
    """
    state = model.zero_state(1)
    outs, stats = [], []
    for t in range(len(chunk)):
        o = model.forward_step(Tensor(chunk.frames[t][None]), state, training=training)
        state = o.state
        outs.append(o.output.data[0])
        stats.append(o.spike_stats)
    return np.array(outs), stats


def evaluate(model, chunks, batch_size=1, loss_cfg=LossConfig()):
    """MAE (deg), MPE (mm) over unmasked frames and MFR over all steps/layers.

    Every chunk starts from a fresh state; runs in eval mode.
    """
    data = prepare(model, chunks)
    if not data:
        raise DataError("no chunks to evaluate")
    acc = _Accumulator()
    for frames, targets, truth, mask in _batches(data, batch_size, np.arange(len(data))):
        state = model.zero_state(frames.shape[1])
        for t in range(frames.shape[0]):
            out = model.forward_step(Tensor(frames[t]), state, training=False)
            state = out.state
            keep = ~mask[t]
            acc.add_step(model, out.output, truth[t], keep, out.spike_stats)
            if keep.any():
                per = per_sample_loss(out.output, targets[t], loss_cfg).data
                acc.loss += float(np.sum(per[keep]))
                acc.loss_n += int(keep.sum())
    if acc.counted == 0:
        raise DataError("all frames are masked; nothing to evaluate")
    return acc.metrics()


def metrics_from_predictions(pred_angles, pred_origin, truth, mask, rates=()):
    """Metrics from decoded predictions; masked rows are excluded from MAE/MPE."""
    keep = ~np.asarray(mask, dtype=bool)
    truth = np.asarray(truth, dtype=np.float64)
    if not keep.any():
        raise DataError("all frames are masked")
    mae = float(np.mean(angle_error(np.asarray(pred_angles)[keep], truth[keep, 3:5])))
    mpe = float(np.mean(pupil_error(np.asarray(pred_origin)[keep], truth[keep, 0:3])))
    mfr = float(np.mean(rates)) if len(rates) else 0.0
    return Metrics(mae, mpe, mfr, float("nan"), int(keep.sum()))


def predict(model, chunks):
    """Per-frame decoded predictions: list of dict rows for the prediction CSV."""
    rows = []
    for c in prepare(model, chunks):
        outs, _ = run_sequence(model, c)
        origin, angles = model.decode(outs)
        for i in range(len(c)):
            rows.append({"t_us": int(c.t_ref[i]), "pred": np.concatenate([origin[i], angles[i]]),
                         "true": c.truth[i], "masked": bool(c.mask[i])})
    return rows


PREDICTION_HEADER = ("t_us", "pred_ox", "pred_oy", "pred_oz", "pred_phi", "pred_psi",
                     "true_ox", "true_oy", "true_oz", "true_phi", "true_psi", "masked")


def write_predictions_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREDICTION_HEADER)
    for r in rows:
        w.writerow([r["t_us"], *[repr(float(v)) for v in r["pred"]],
                    *[repr(float(v)) for v in r["true"]], int(r["masked"])])
    return buf.getvalue()


def write_metrics_csv(history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for epoch, split, m in history:
        w.writerow(m.row(epoch, split))
    return buf.getvalue()
