"""Run/evaluation configuration: YAML files with flag overrides.

One human-editable file carries the class map and any pipeline settings;
command-line flags override file values. Example:

    classes: [10, 30, 40]
    things: [10, 30]
    ignore: [0]
    names: {10: car, 30: person, 40: road}
    strategy: importance
    tau: 4
    fraction: 0.10
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .clustering import ClusterParams
from .errors import ValidationError
from .metrics import EvalConfig
from .volume import VolumeConfig


def load_yaml(path) -> dict:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    return data


def eval_config_from_dict(data: dict) -> EvalConfig:
    try:
        classes = tuple(int(c) for c in data["classes"])
        things = frozenset(int(c) for c in data["things"])
    except KeyError as exc:
        raise ValidationError(f"config is missing required key {exc}") from exc
    ignore = frozenset(int(c) for c in data.get("ignore", [0]))
    names = {int(k): str(v) for k, v in (data.get("names") or {}).items()}
    return EvalConfig(
        classes=classes,
        things=things,
        ignore=ignore,
        pq_match_threshold=float(data.get("pq_match_threshold", 0.5)),
        per_sequence=bool(data.get("per_sequence", False)),
        class_names=names,
    )


@dataclass
class RunConfig:
    """Everything cmd_run needs; validated before any work starts."""

    data_dir: str
    out_dir: str
    sequences: list = field(default_factory=list)  # empty = data_dir is one sequence
    volume: VolumeConfig = field(default_factory=VolumeConfig)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    eval_config: EvalConfig | None = None  # class map (things/stuff/ignore)
    assoc_iou: float = 0.5
    window_stride: int = 1
    seed: int = 0
    threads: int = 1

    def validate(self):
        self.volume.validate()
        self.cluster.validate()
        if self.eval_config is None:
            raise ValidationError("run config needs a class map (classes/things)")
        if not 0.0 < self.assoc_iou < 1.0:
            raise ValidationError("assoc_iou must lie in (0, 1)")
        if not 1 <= self.window_stride <= self.volume.tau:
            raise ValidationError("window_stride must lie in [1, tau]")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        return self


_VOLUME_KEYS = ("strategy", "tau", "fraction", "stride", "time_scale", "max_points")
_CLUSTER_KEYS = (
    "assign_prob", "seed_stop", "min_points", "normalized_pdf", "feature_mode",
    "coord_variance", "time_variance",
)


def run_config_from_sources(file_data: dict, overrides: dict) -> RunConfig:
    """Merge config-file values with CLI overrides (overrides win)."""
    merged = dict(file_data)
    merged.update({k: v for k, v in overrides.items() if v is not None})

    volume = VolumeConfig(**{k: merged[k] for k in _VOLUME_KEYS if k in merged})
    cluster = ClusterParams(**{k: merged[k] for k in _CLUSTER_KEYS if k in merged})
    eval_config = eval_config_from_dict(merged) if "classes" in merged else None

    sequences = merged.get("sequences") or []
    if isinstance(sequences, str):
        sequences = [s for s in sequences.split(",") if s]

    return RunConfig(
        data_dir=merged.get("data_dir", ""),
        out_dir=merged.get("out_dir", ""),
        sequences=list(sequences),
        volume=volume,
        cluster=cluster,
        eval_config=eval_config,
        assoc_iou=float(merged.get("assoc_iou", 0.5)),
        window_stride=int(merged.get("window_stride", 1)),
        seed=int(merged.get("seed", 0)),
        threads=int(merged.get("threads", 1)),
    )
