"""Config-driven experiment orchestration.

A declarative config names a head, a backbone, the optimizer settings,
one in-distribution spec, a list of OOD specs, the score kinds to
evaluate, and the seeds. Running it trains one model per seed, scores
the held-out validation split against every OOD set, and aggregates the
detection metrics across seeds into a versioned JSON report.

OOD data never touches training: it is generated only after fitting,
inside the evaluation step.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
import warnings
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import data as data_mod
from . import heads, metrics, scores
from .heads import DISTANCE_HEAD_KINDS, HEAD_KINDS
from .model import (
    MlpBackbone,
    SgdConfig,
    TrainingDiverged,
    TrainState,
    backbone_forward,
    fit,
    make_train_state,
)
from .numerics import ContractViolation, shannon_entropy_rows

REPORT_SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"EOODCKPT"
CHECKPOINT_VERSION = 1

# Seed stream ids: every per-seed random draw derives from
# default_rng([seed, stream]) so a config plus its seed list fully
# determines each artifact.
IN_DATA_STREAM = 21
SPLIT_BATCH_STREAM = 22
OOD_STREAM_BASE = 30


class CheckpointError(ValueError):
    """A checkpoint file could not be read back."""


class ReportSchemaError(ValueError):
    """A report dict does not satisfy the shipped schema."""


@dataclass
class ExperimentConfig:
    head: str
    backbone_widths: list
    in_distribution: dict
    ood: list = field(default_factory=list)
    score_kinds: list = field(default_factory=lambda: ["max_probability", "entropic"])
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    sgd: SgdConfig = field(default_factory=SgdConfig)
    entropic_scale: float = heads.DEFAULT_ENTROPIC_SCALE
    val_fraction: float = 0.2
    standardize_inputs: bool = True
    out_dir: str | None = None

    def __post_init__(self):
        if self.head not in HEAD_KINDS:
            raise ContractViolation(f"unknown head kind {self.head!r}")
        self.backbone_widths = [int(w) for w in self.backbone_widths]
        if len(self.backbone_widths) < 1 or any(w < 1 for w in self.backbone_widths):
            raise ContractViolation("backbone_widths must be a non-empty list of positive ints")
        self.score_kinds = [str(scores.ScoreKind(k).value) for k in self.score_kinds]
        if "min_distance" in self.score_kinds and self.head not in DISTANCE_HEAD_KINDS:
            raise ContractViolation(
                "the min_distance score requires a distance-based head (isomax or isomaxplus)")
        self.seeds = [int(s) for s in self.seeds]
        if len(self.seeds) < 1:
            raise ContractViolation("at least one seed is required")
        if self.score_kinds and not self.ood:
            raise ContractViolation("detection metrics need at least one OOD spec")
        if not (0 <= self.val_fraction < 1):
            raise ContractViolation("val_fraction must lie in [0, 1)")
        if self.entropic_scale <= 0:
            raise ContractViolation("entropic_scale must be positive")
        if (self.in_distribution.get("kind") == "blobs"
                and int(self.in_distribution.get("classes", 0)) < 2):
            raise ContractViolation("in-distribution spec needs at least 2 classes")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        sgd = d.pop("sgd", {})
        if isinstance(sgd, dict):
            sgd = SgdConfig(**sgd)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown config keys: {sorted(unknown)}")
        return cls(sgd=sgd, **d)

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "backbone_widths": list(self.backbone_widths),
            "in_distribution": dict(self.in_distribution),
            "ood": [dict(o) for o in self.ood],
            "score_kinds": list(self.score_kinds),
            "seeds": list(self.seeds),
            "sgd": {
                "learning_rate": self.sgd.learning_rate,
                "momentum": self.sgd.momentum,
                "weight_decay": self.sgd.weight_decay,
                "batch_size": self.sgd.batch_size,
                "epochs": self.sgd.epochs,
                "decay_epochs": list(self.sgd.decay_epochs),
                "decay_factor": self.sgd.decay_factor,
            },
            "entropic_scale": self.entropic_scale,
            "val_fraction": self.val_fraction,
            "standardize_inputs": self.standardize_inputs,
            "out_dir": self.out_dir,
        }

    def config_hash(self) -> bytes:
        """Digest of the experiment recipe.

        Seed list and output directory are excluded: the seed of a
        concrete run lives in its checkpoint, and neither field changes
        what gets trained or evaluated.
        """
        d = self.to_dict()
        d.pop("seeds")
        d.pop("out_dir")
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).digest()


def load_config(path) -> ExperimentConfig:
    """Read a JSON config file into a validated ExperimentConfig."""
    with open(path, "r", encoding="utf-8") as f:
        return ExperimentConfig.from_dict(json.load(f))


@dataclass
class Report:
    config: dict
    per_seed: list
    aggregate: dict
    warnings: list
    wall_time_seconds: float
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self, include_wall_time: bool = True) -> dict:
        d = {
            "schema_version": self.schema_version,
            "config": self.config,
            "per_seed": self.per_seed,
            "aggregate": self.aggregate,
            "warnings": list(self.warnings),
            "in_scores_from": "validation split (also used for accuracy)",
        }
        if include_wall_time:
            d["wall_time_seconds"] = self.wall_time_seconds
        return d

    def to_json(self, include_wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(include_wall_time), sort_keys=True, indent=2) + "\n"


def _ood_name(spec: dict, index: int) -> str:
    return str(spec.get("name", f"{spec.get('kind', 'ood')}_{index}"))


def _split_heldout(cfg: ExperimentConfig, ds: data_mod.Dataset):
    """Apply the held-out-class protocol when the in-spec asks for it.

    With train_classes = k, classes 0..k-1 stay in-distribution and the
    remaining rows become an unlabeled pool for OOD specs of kind
    'heldout'."""
    k = cfg.in_distribution.get("train_classes")
    if k is None:
        return ds, None
    k = int(k)
    if ds.targets is None:
        raise ContractViolation("held-out protocol needs a labeled dataset")
    if k < 2 or k >= ds.class_count:
        raise ContractViolation(
            f"train_classes must lie in [2, {ds.class_count}), got {k}")
    keep = ds.targets < k
    pool = data_mod.Dataset(ds.inputs[~keep], None, ds.provenance + " heldout classes")
    return ds.subset(np.flatnonzero(keep)), pool


@dataclass
class InputScaler:
    """Per-coordinate standardization fitted on the training split.

    Validation and OOD inputs are transformed with the same statistics;
    OOD data never influences them. Constant coordinates pass through
    unchanged (guarded denominator).
    """

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray) -> "InputScaler":
        std = inputs.std(axis=0)
        return cls(mean=inputs.mean(axis=0), scale=np.maximum(std, 1e-12))

    @classmethod
    def identity(cls, dim: int) -> "InputScaler":
        return cls(mean=np.zeros(dim), scale=np.ones(dim))

    def apply(self, ds: data_mod.Dataset) -> data_mod.Dataset:
        inputs = (ds.inputs - self.mean) / self.scale
        return data_mod.Dataset(inputs, ds.targets, ds.provenance)


def _seed_datasets(cfg: ExperimentConfig, seed: int):
    """In-distribution train stream, validation split, held-out pool, and
    the input scaler fitted on the training split."""
    full = data_mod.dataset_from_spec(cfg.in_distribution, [seed, IN_DATA_STREAM])
    in_ds, heldout = _split_heldout(cfg, full)
    if in_ds.class_count < 2:
        raise ContractViolation("in-distribution data needs at least 2 classes")
    if in_ds.inputs.shape[1] != cfg.backbone_widths[0]:
        raise ContractViolation(
            f"data dimension {in_ds.inputs.shape[1]} does not match backbone input "
            f"width {cfg.backbone_widths[0]}")
    train, val = data_mod.split_dataset(in_ds, cfg.val_fraction,
                                        (seed, SPLIT_BATCH_STREAM))
    if cfg.standardize_inputs:
        scaler = InputScaler.fit(train.inputs)
    else:
        scaler = InputScaler.identity(train.inputs.shape[1])
    stream = data_mod.BatchStream(scaler.apply(train), cfg.sgd.batch_size,
                                  (seed, SPLIT_BATCH_STREAM))
    return stream, scaler.apply(val), heldout, scaler


def _ood_dataset(cfg: ExperimentConfig, spec: dict, index: int, seed: int,
                 heldout: data_mod.Dataset | None,
                 scaler: InputScaler) -> data_mod.Dataset:
    if spec.get("kind") == "heldout":
        if heldout is None or len(heldout) == 0:
            raise ContractViolation(
                "an OOD spec of kind 'heldout' needs in_distribution.train_classes")
        return scaler.apply(heldout)
    return scaler.apply(
        data_mod.dataset_from_spec(spec, [seed, OOD_STREAM_BASE + index]))


def _evaluate_seed(cfg: ExperimentConfig, seed: int, state: TrainState,
                   val: data_mod.Dataset, heldout, scaler: InputScaler) -> dict:
    """Accuracy plus detection metrics and score diagnostics for one seed."""
    val_features = backbone_forward(state.backbone, val.inputs)
    predictions = heads.predict(state.head, val_features)
    accuracy = metrics.classification_accuracy(predictions, val.targets)
    in_probs = heads.inference_probabilities(state.head, val_features)
    in_entropy = shannon_entropy_rows(in_probs)
    if cfg.head in DISTANCE_HEAD_KINDS:
        d_in = heads.feature_prototype_distances(state.head, val_features).min(axis=1)

    ood_evaluations = []
    for i, spec in enumerate(cfg.ood):
        ood_ds = _ood_dataset(cfg, spec, i, seed, heldout, scaler)
        ood_features = backbone_forward(state.backbone, ood_ds.inputs)
        ood_probs = heads.inference_probabilities(state.head, ood_features)
        out_entropy = shannon_entropy_rows(ood_probs)
        diagnostics = {
            "mean_entropy_in": float(in_entropy.mean()),
            "mean_entropy_out": float(out_entropy.mean()),
        }
        if cfg.head in DISTANCE_HEAD_KINDS:
            d_out = heads.feature_prototype_distances(state.head, ood_features).min(axis=1)
            diagnostics["median_min_distance_in"] = float(np.median(d_in))
            diagnostics["median_min_distance_out"] = float(np.median(d_out))
        records = []
        for kind in cfg.score_kinds:
            in_scores = scores.compute_score(kind, state.head, val_features)
            out_scores = scores.compute_score(kind, state.head, ood_features)
            score_set = metrics.DetectionScoreSet(in_scores, out_scores)
            records.append({
                "score": kind,
                "auroc": metrics.auroc(score_set),
                "tnr_at_tpr95": metrics.tnr_at_tpr95(score_set),
                "dtacc": metrics.dtacc(score_set),
            })
        ood_evaluations.append({
            "ood": _ood_name(spec, i),
            "diagnostics": diagnostics,
            "metrics": records,
        })
    return {"seed": seed, "accuracy": accuracy, "ood_evaluations": ood_evaluations}


def train_single_seed(cfg: ExperimentConfig, seed: int):
    """Train one model; returns (state, trace, validation split, heldout
    pool, input scaler)."""
    stream, val, heldout, scaler = _seed_datasets(cfg, seed)
    state = make_train_state(cfg.backbone_widths, cfg.head,
                             stream.dataset.class_count, seed, cfg.entropic_scale)
    state.config_hash = cfg.config_hash()
    state, trace = fit(state, stream, cfg.sgd)
    return state, trace, val, heldout, scaler


def _mean_std(values) -> dict:
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return {"mean": float(values.mean()), "std": std}


def _aggregate(cfg: ExperimentConfig, per_seed: list) -> dict:
    if not per_seed:
        return {"accuracy": None, "detection": []}
    aggregate = {"accuracy": _mean_std([r["accuracy"] for r in per_seed])}
    detection = []
    for i, spec in enumerate(cfg.ood):
        name = _ood_name(spec, i)
        for kind in cfg.score_kinds:
            values = {m: [] for m in ("auroc", "tnr_at_tpr95", "dtacc")}
            for record in per_seed:
                ood_eval = next(e for e in record["ood_evaluations"] if e["ood"] == name)
                row = next(r for r in ood_eval["metrics"] if r["score"] == kind)
                for m in values:
                    values[m].append(row[m])
            detection.append({
                "ood": name, "score": kind,
                **{m: _mean_std(v) for m, v in values.items()},
            })
    aggregate["detection"] = detection
    return aggregate


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Train and evaluate over every seed; divergent seeds are recorded as
    warnings and skipped rather than aborting the whole run."""
    t0 = time.perf_counter()
    per_seed, warn = [], []
    for seed in cfg.seeds:
        try:
            state, _, val, heldout, scaler = train_single_seed(cfg, seed)
            per_seed.append(_evaluate_seed(cfg, seed, state, val, heldout, scaler))
        except TrainingDiverged as exc:
            warn.append(f"seed {seed}: training diverged: {exc}")
    report = Report(
        config=cfg.to_dict(),
        per_seed=per_seed,
        aggregate=_aggregate(cfg, per_seed),
        warnings=warn,
        wall_time_seconds=time.perf_counter() - t0,
    )
    validate_report(report.to_dict())
    return report


# ---------------------------------------------------------------------------
# head comparison

ACCURACY_DROP_PP = 1.0


@dataclass
class ComparisonReport:
    columns: list
    accuracy: list
    accuracy_drop_flags: list
    detection: list
    baseline_head: str | None
    reports: list
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "columns": self.columns,
            "accuracy": self.accuracy,
            "accuracy_drop_flags": self.accuracy_drop_flags,
            "detection": self.detection,
            "baseline_head": self.baseline_head,
            "reports": self.reports,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _shared_config_view(cfg: ExperimentConfig) -> dict:
    d = cfg.to_dict()
    for key in ("head", "score_kinds", "entropic_scale", "out_dir"):
        d.pop(key)
    return d


def compare_heads(cfgs, reports=None) -> ComparisonReport:
    """Side-by-side comparison of configs that differ only in their head
    (and score selections). Flags any head whose mean accuracy trails the
    SoftMax baseline by more than one percentage point."""
    cfgs = list(cfgs)
    if not cfgs:
        raise ContractViolation("compare_heads needs at least one config")
    shared = _shared_config_view(cfgs[0])
    for other in cfgs[1:]:
        if _shared_config_view(other) != shared:
            raise ContractViolation(
                "compared configs must share data specs, seeds, backbone, and optimizer")
    if reports is None:
        reports = [run_experiment(c) for c in cfgs]
    else:
        reports = list(reports)
        if len(reports) != len(cfgs):
            raise ContractViolation("one report per config is required")
        for cfg, rep in zip(cfgs, reports):
            if rep.config != cfg.to_dict():
                raise ContractViolation("supplied report does not match its config")

    baseline_index = next((i for i, c in enumerate(cfgs) if c.head == "softmax"), None)
    baseline_head = None if baseline_index is None else "softmax"
    baseline_acc = (reports[baseline_index].aggregate["accuracy"]["mean"]
                    if baseline_index is not None else None)

    columns, accuracy, flags = [], [], []
    for i, (cfg, rep) in enumerate(zip(cfgs, reports)):
        acc = rep.aggregate["accuracy"]
        columns.append({"index": i, "head": cfg.head, "score_kinds": cfg.score_kinds})
        entry = {"index": i, "head": cfg.head,
                 "mean": acc["mean"], "std": acc["std"]}
        if baseline_acc is not None:
            entry["delta_pp_vs_baseline"] = (acc["mean"] - baseline_acc) * 100.0
            drop_pp = (baseline_acc - acc["mean"]) * 100.0
            if drop_pp > ACCURACY_DROP_PP:
                flags.append({"index": i, "head": cfg.head, "drop_pp": drop_pp})
        accuracy.append(entry)

    detection = []
    ood_names = [_ood_name(spec, i) for i, spec in enumerate(cfgs[0].ood)]
    for name in ood_names:
        for metric in ("auroc", "tnr_at_tpr95", "dtacc"):
            cells = []
            for i, (cfg, rep) in enumerate(zip(cfgs, reports)):
                for row in rep.aggregate["detection"]:
                    if row["ood"] == name:
                        cells.append({"index": i, "head": cfg.head,
                                      "score": row["score"],
                                      "mean": row[metric]["mean"],
                                      "std": row[metric]["std"]})
            detection.append({"ood": name, "metric": metric, "cells": cells})

    return ComparisonReport(
        columns=columns,
        accuracy=accuracy,
        accuracy_drop_flags=flags,
        detection=detection,
        baseline_head=baseline_head,
        reports=[r.to_dict() for r in reports],
    )


# ---------------------------------------------------------------------------
# histograms and score dumps

def histogram_report(state: TrainState, in_data: data_mod.Dataset,
                     ood_data: data_mod.Dataset, bins: int) -> dict:
    """Binned in/OOD counts of inference entropy and, for distance heads,
    of the minimum feature-prototype distance.

    Returns {quantity: rows} where each row is
    (bin_left, bin_right, count_in, count_out) over shared bin edges.
    """
    if bins < 2:
        raise ContractViolation("bins must be at least 2")
    in_features = backbone_forward(state.backbone, in_data.inputs)
    ood_features = backbone_forward(state.backbone, ood_data.inputs)

    quantities = {}
    quantities["entropy"] = (
        shannon_entropy_rows(heads.inference_probabilities(state.head, in_features)),
        shannon_entropy_rows(heads.inference_probabilities(state.head, ood_features)),
    )
    if state.head.kind in DISTANCE_HEAD_KINDS:
        quantities["min_distance"] = (
            heads.feature_prototype_distances(state.head, in_features).min(axis=1),
            heads.feature_prototype_distances(state.head, ood_features).min(axis=1),
        )

    out = {}
    for name, (v_in, v_out) in quantities.items():
        lo = float(min(v_in.min(), v_out.min()))
        hi = float(max(v_in.max(), v_out.max()))
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, bins + 1)
        count_in, _ = np.histogram(v_in, bins=edges)
        count_out, _ = np.histogram(v_out, bins=edges)
        out[name] = [
            (float(edges[i]), float(edges[i + 1]), int(count_in[i]), int(count_out[i]))
            for i in range(bins)
        ]
    return out


def write_histogram_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("bin_left,bin_right,count_in,count_out\n")
        for left, right, count_in, count_out in rows:
            f.write(f"{left!r},{right!r},{count_in},{count_out}\n")


def write_scores_csv(path, in_scores, out_scores):
    """Dump raw scores as `score,group` rows, group in {in, out}."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("score,group\n")
        for s in np.asarray(in_scores).ravel():
            f.write(f"{float(s)!r},in\n")
        for s in np.asarray(out_scores).ravel():
            f.write(f"{float(s)!r},out\n")


# ---------------------------------------------------------------------------
# checkpoints

def _write_block(f, name: str, arr: np.ndarray):
    payload = np.ascontiguousarray(arr, dtype="<f8")
    encoded = name.encode()
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", payload.ndim))
    for dim in payload.shape:
        f.write(struct.pack("<Q", dim))
    f.write(payload.tobytes())


def _checkpoint_arrays(state: TrainState):
    """Deterministic (name, array) listing of everything a state holds."""
    entries = []
    for i, (w, b) in enumerate(zip(state.backbone.weights, state.backbone.biases)):
        entries.append((f"backbone.w{i}", w))
        entries.append((f"backbone.b{i}", b))
    head = state.head
    if isinstance(head, heads.SoftMaxHead):
        entries.append(("head.weights", head.weights))
        entries.append(("head.bias", head.bias))
    else:
        entries.append(("head.prototypes", head.prototypes))
        entries.append(("head.entropic_scale", np.array(head.entropic_scale)))
        if isinstance(head, heads.IsoMaxPlusHead):
            entries.append(("head.distance_scale", np.array(head.distance_scale)))
    for name in sorted(state.velocities):
        entries.append((f"velocity.{name}", np.asarray(state.velocities[name])))
    return entries


def save_checkpoint(state: TrainState, path):
    """Binary snapshot: magic, version, head kind, epoch, seed, config
    hash, then named float64 arrays, all little-endian."""
    entries = _checkpoint_arrays(state)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        kind = state.head.kind.encode()
        f.write(struct.pack("<I", len(kind)))
        f.write(kind)
        f.write(struct.pack("<Q", state.epoch))
        f.write(struct.pack("<q", state.seed))
        f.write(state.config_hash)
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            _write_block(f, name, arr)


def _read_exactly(f, count: int, what: str) -> bytes:
    buf = f.read(count)
    if len(buf) != count:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path, expected_head_kind: str | None = None,
                    expected_config_hash: bytes | None = None) -> TrainState:
    """Rebuild a TrainState bit-exactly from save_checkpoint output.

    A config-hash mismatch only warns; a head-kind mismatch or any
    structural problem raises CheckpointError.
    """
    with open(path, "rb") as f:
        magic = _read_exactly(f, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exactly(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (kind_len,) = struct.unpack("<I", _read_exactly(f, 4, "head kind"))
        kind = _read_exactly(f, kind_len, "head kind").decode()
        if kind not in HEAD_KINDS:
            raise CheckpointError(f"unknown head kind {kind!r} in checkpoint")
        if expected_head_kind is not None and kind != expected_head_kind:
            raise CheckpointError(
                f"checkpoint holds a {kind!r} head, expected {expected_head_kind!r}")
        (epoch,) = struct.unpack("<Q", _read_exactly(f, 8, "epoch"))
        (seed,) = struct.unpack("<q", _read_exactly(f, 8, "seed"))
        config_hash = _read_exactly(f, 32, "config hash")
        if expected_config_hash is not None and config_hash != expected_config_hash:
            warnings.warn("checkpoint config hash does not match the supplied config",
                          stacklevel=2)
        (count,) = struct.unpack("<I", _read_exactly(f, 4, "array count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exactly(f, 4, "array name"))
            name = _read_exactly(f, name_len, "array name").decode()
            (ndim,) = struct.unpack("<I", _read_exactly(f, 4, "array rank"))
            shape = tuple(
                struct.unpack("<Q", _read_exactly(f, 8, "array shape"))[0]
                for _ in range(ndim))
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = _read_exactly(f, size * 8, f"array {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointError("trailing bytes after the last array")

    def scalar(arr):
        return float(np.asarray(arr).reshape(-1)[0])

    layer_count = sum(1 for name in arrays if name.startswith("backbone.w"))
    backbone = MlpBackbone(
        weights=[arrays[f"backbone.w{i}"] for i in range(layer_count)],
        biases=[arrays[f"backbone.b{i}"] for i in range(layer_count)],
    )
    if kind == "softmax":
        head = heads.SoftMaxHead(weights=arrays["head.weights"], bias=arrays["head.bias"])
    elif kind == "isomax":
        head = heads.IsoMaxHead(prototypes=arrays["head.prototypes"],
                                entropic_scale=scalar(arrays["head.entropic_scale"]))
    else:
        head = heads.IsoMaxPlusHead(prototypes=arrays["head.prototypes"],
                                    distance_scale=scalar(arrays["head.distance_scale"]),
                                    entropic_scale=scalar(arrays["head.entropic_scale"]))
    velocities = {}
    for name, arr in arrays.items():
        if name.startswith("velocity."):
            key = name[len("velocity."):]
            velocities[key] = scalar(arr) if key == "head.distance_scale" else arr
    return TrainState(backbone=backbone, head=head, velocities=velocities,
                      epoch=int(epoch), seed=int(seed), config_hash=config_hash)


# ---------------------------------------------------------------------------
# report schema validation

def _schema_text() -> str:
    return resources.files("oodkit").joinpath("schemas/report.schema.json").read_text()


def report_schema() -> dict:
    return json.loads(_schema_text())


_TYPES = {
    "object": dict,
    "array": list,
    "string": str,
    "boolean": bool,
    "null": type(None),
}


def _validate_node(instance, schema: dict, path: str):
    if "const" in schema and instance != schema["const"]:
        raise ReportSchemaError(f"{path}: expected constant {schema['const']!r}")
    if "enum" in schema and instance not in schema["enum"]:
        raise ReportSchemaError(f"{path}: {instance!r} not in {schema['enum']}")
    stated = schema.get("type")
    if stated is not None:
        allowed = stated if isinstance(stated, list) else [stated]
        ok = False
        for t in allowed:
            if t == "number":
                ok = ok or (isinstance(instance, (int, float))
                            and not isinstance(instance, bool))
            elif t == "integer":
                ok = ok or (isinstance(instance, int) and not isinstance(instance, bool))
            else:
                ok = ok or isinstance(instance, _TYPES[t])
        if not ok:
            raise ReportSchemaError(f"{path}: expected type {stated}, got {type(instance).__name__}")
    if isinstance(instance, dict):
        for key in schema.get("required", []):
            if key not in instance:
                raise ReportSchemaError(f"{path}: missing required key {key!r}")
        for key, sub in schema.get("properties", {}).items():
            if key in instance:
                _validate_node(instance[key], sub, f"{path}.{key}")
    if isinstance(instance, list) and "items" in schema:
        for i, element in enumerate(instance):
            _validate_node(element, schema["items"], f"{path}[{i}]")


def validate_report(report_dict: dict):
    """Check a report dict against the shipped schema; raises on failure."""
    _validate_node(report_dict, report_schema(), "$")
