"""Run configuration: one JSON document with per-module sections.

Every section is materialised with its defaults on load so the effective
configuration can be echoed next to each output. Unknown keys are rejected.
A single top-level ``seed`` drives simulation, splitting, model init and
training.
"""

import copy
import dataclasses
import json
import logging

from .errors import ConfigError
from .events import EyeSimConfig, TASKS
from .model import ModelConfig
from .training import LossConfig, TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = ("simulator", "framing", "references", "model", "training", "io", "seed")

_SIM_EXCLUDE = ("task", "seed")


def _sim_defaults():
    d = {f.name: f.default for f in dataclasses.fields(EyeSimConfig) if f.name not in _SIM_EXCLUDE}
    d["origin_mm"] = list(d["origin_mm"])
    d["tasks"] = ["smooth_pursuit", "random_saccade"]
    return d


def _model_defaults():
    d = ModelConfig().to_dict()
    del d["seed"]
    return d


def _training_defaults():
    d = {f.name: f.default for f in dataclasses.fields(TrainConfig) if f.name not in ("seed", "loss")}
    d.update(dataclasses.asdict(LossConfig()))
    return d


def defaults():
    """The fully-defaulted configuration document."""
    return {
        "simulator": _sim_defaults(),
        "framing": {"method": "count", "value": 300, "downscale": 2, "binarize": False,
                    "chunk_len": 100, "ratios": [0.7, 0.15, 0.15]},
        "references": {"mask_threshold_us": None},
        "model": _model_defaults(),
        "training": _training_defaults(),
        "io": {"events": None, "gaze": None, "event_format": None},
        "seed": 0,
    }


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def parse_value(text):
    """Interpret an override value as JSON, falling back to a bare string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc, assignment):
    """Apply ``section.key=value`` to ``doc`` in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form section.key=value")
    dotted, raw = assignment.split("=", 1)
    parts = dotted.strip().split(".")
    node = {}
    cur = node
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = parse_value(raw)
    _merge(doc, node)
    return doc


def load(source=None, overrides=(), seed=None):
    """Build a validated :class:`RunConfig` from a JSON text/dict plus overrides."""
    doc = defaults()
    if source is not None:
        user = json.loads(source) if isinstance(source, (str, bytes)) else copy.deepcopy(source)
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        _merge(doc, user)
    for item in overrides:
        apply_override(doc, item)
    if seed is not None:
        doc["seed"] = int(seed)
    return RunConfig(doc).validate()


class RunConfig:
    """Validated, fully-defaulted run configuration."""

    def __init__(self, doc):
        self.doc = doc

    def __getitem__(self, key):
        return self.doc[key]

    @property
    def seed(self):
        return int(self.doc["seed"])

    def sim_configs(self):
        """One :class:`EyeSimConfig` per task; task ``i`` uses seed ``seed + i``."""
        sim = dict(self.doc["simulator"])
        tasks = sim.pop("tasks")
        sim["origin_mm"] = tuple(sim["origin_mm"])
        try:
            return [EyeSimConfig(task=task, seed=self.seed + i, **sim).validate()
                    for i, task in enumerate(tasks)]
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self):
        try:
            return ModelConfig.from_dict(dict(self.doc["model"], seed=self.seed)).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self):
        tr = dict(self.doc["training"])
        loss = LossConfig(tr.pop("lambda_pupil"), tr.pop("lambda_angle"))
        try:
            return TrainConfig(seed=self.seed, loss=loss, **tr).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self):
        sim = self.doc["simulator"]
        if not isinstance(sim["tasks"], list) or not sim["tasks"]:
            raise ConfigError("simulator.tasks must be a non-empty list")
        bad = [t for t in sim["tasks"] if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown simulator tasks {bad}; expected {TASKS}")
        fr = self.doc["framing"]
        if fr["method"] not in ("count", "window"):
            raise ConfigError(f"framing.method must be 'count' or 'window', got {fr['method']!r}")
        for key in ("value", "downscale", "chunk_len"):
            if not isinstance(fr[key], int) or isinstance(fr[key], bool) or fr[key] < 1:
                raise ConfigError(f"framing.{key} must be a positive integer")
        ratios = fr["ratios"]
        if (not isinstance(ratios, list) or len(ratios) != 3 or any(r < 0 for r in ratios)
                or abs(sum(ratios) - 1.0) > 1e-9):
            raise ConfigError("framing.ratios must be three non-negative numbers summing to 1")
        thr = self.doc["references"]["mask_threshold_us"]
        if thr is not None and (not isinstance(thr, (int, float)) or thr < 0):
            raise ConfigError("references.mask_threshold_us must be null or >= 0")
        fmt = self.doc["io"]["event_format"]
        if fmt not in (None, "csv", "binary"):
            raise ConfigError("io.event_format must be null, 'csv' or 'binary'")
        if not isinstance(self.doc["seed"], int) or isinstance(self.doc["seed"], bool):
            raise ConfigError("seed must be an integer")
        self.sim_configs()
        self.model_config()
        self.train_config()
        return self

    def to_json(self):
        """Canonical JSON echo of the effective configuration."""
        return json.dumps(self.doc, indent=2, sort_keys=True) + "\n"

    def with_overrides(self, overrides):
        doc = copy.deepcopy(self.doc)
        for item in overrides:
            apply_override(doc, item)
        return RunConfig(doc).validate()
