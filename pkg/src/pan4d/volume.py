"""Online 4D volume construction from the current scan plus sub-sampled past scans.

A volume covers the temporal window {max(0, t - tau + 1), ..., t}. The newest
scan always enters in full; points from past scans are selected by one of four
strategies ("thing", "importance", "decay", "stride"; "base" keeps tau = 1).
Each volume point carries (x, y, z, t) with t = window slot * time_scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .kitti_io import Pose, Scan

STRATEGIES = ("base", "thing", "importance", "decay", "stride")


@dataclass
class VolumeConfig:
    strategy: str = "importance"
    tau: int = 4
    fraction: float = 0.10
    stride: int = 2
    time_scale: float = 1.0
    max_points: int | None = None  # total volume cap, None = unlimited

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.tau < 1:
            raise ValidationError("tau must be >= 1")
        if not 0.0 < self.fraction <= 1.0:
            raise ValidationError("fraction must lie in (0, 1]")
        if self.stride < 2:
            raise ValidationError("stride must be >= 2")
        if self.strategy == "base" and self.tau != 1:
            raise ValidationError("strategy 'base' requires tau = 1")
        if self.strategy != "base" and self.tau < 2:
            raise ValidationError(f"strategy {self.strategy!r} requires tau >= 2")
        return self


@dataclass
class PastScanState:
    """Per-point state of an already processed scan, in world coordinates."""

    scan_index: int
    coords: np.ndarray  # (N, 3) world frame
    objectness: np.ndarray  # (N,) in [0, 1]
    semantic: np.ndarray  # (N,) predicted class ids
    instance: np.ndarray  # (N,) predicted global instance ids

    def __post_init__(self):
        n = self.coords.shape[0]
        for name in ("objectness", "semantic", "instance"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValidationError(f"{name} length {arr.shape[0]} != {n} points")
        obj = np.asarray(self.objectness, dtype=np.float64)
        if obj.size and (not np.isfinite(obj).all() or obj.min() < 0 or obj.max() > 1):
            raise ValidationError("objectness must be finite and in [0, 1]")

    def __len__(self):
        return self.coords.shape[0]


@dataclass
class Volume4D:
    """Ego-motion-aligned multi-scan point set with provenance."""

    coords: np.ndarray  # (M, 4): x, y, z world meters; t = slot * time_scale
    origin: np.ndarray  # (M, 2) int64: (scan_index, point_index)
    is_current: np.ndarray  # (M,) bool
    n_current: int
    window: tuple  # (first_scan_index, last_scan_index), inclusive
    skipped_scans: list = field(default_factory=list)  # stride strategy only

    def __len__(self):
        return self.coords.shape[0]


def align_scan(scan_points: np.ndarray | Scan, pose: Pose) -> np.ndarray:
    """Map sensor-frame points into the world frame; remission is untouched."""
    pts = scan_points.points if isinstance(scan_points, Scan) else scan_points
    return pose.transform(pts)


def weighted_sample(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Draw k indices without replacement with probability proportional to weights.

    All-zero weights fall back to uniform. If fewer than k weights are
    positive, every positive-weight index is taken and the remainder is drawn
    uniformly from the zero-weight ones.
    """
    n = weights.shape[0]
    k = min(k, n)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0.0:
        return np.sort(rng.choice(n, size=k, replace=False))
    positive = np.flatnonzero(w > 0)
    if positive.size < k:
        zeros = np.flatnonzero(w == 0)
        extra = rng.choice(zeros, size=k - positive.size, replace=False)
        return np.sort(np.concatenate([positive, extra]))
    sel = rng.choice(n, size=k, replace=False, p=w / total)
    return np.sort(sel)


def sample_thing_prop(past: PastScanState, thing_classes, budget=None, rng=None) -> np.ndarray:
    """Select exactly the points predicted as a thing class.

    If a budget is given and exceeded, a uniform random sub-sample of the
    thing points is drawn (seeded via rng).
    """
    things = set(int(c) for c in thing_classes)
    if not things:
        raise ValidationError("thing class set must be non-empty")
    mask = np.isin(np.asarray(past.semantic), sorted(things))
    idx = np.flatnonzero(mask)
    if budget is not None and idx.size > budget:
        if rng is None:
            raise ValidationError("budget sub-sampling requires an rng")
        idx = np.sort(rng.choice(idx, size=budget, replace=False))
    return idx


def sample_importance(past: PastScanState, fraction: float = 0.10, rng=None) -> np.ndarray:
    """Draw ceil(fraction * N) indices with weight proportional to objectness."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError("fraction must lie in (0, 1]")
    n = len(past)
    k = int(np.ceil(fraction * n))
    return weighted_sample(np.asarray(past.objectness, dtype=np.float64), k, rng)


def temporal_decay_shares(n_past: int, total_budget: int) -> np.ndarray:
    """Integer point budgets per past scan, weighted e^i / sum_j e^j.

    Index 0 is the oldest past scan (i = 1), index n_past - 1 the nearest
    (i = tau - 1). Budgets are allocated by largest remainder so they sum to
    total_budget exactly.
    """
    i = np.arange(1, n_past + 1, dtype=np.float64)
    w = np.exp(i)
    w /= w.sum()
    raw = w * total_budget
    alloc = np.floor(raw).astype(np.int64)
    short = total_budget - int(alloc.sum())
    if short > 0:
        order = np.argsort(-(raw - alloc), kind="stable")
        alloc[order[:short]] += 1
    return alloc


def sample_temporal_decay(past_states, total_budget: int, rng) -> list:
    """Importance-sample each past scan with a temporally decayed budget.

    past_states is ordered oldest to newest. Each scan's allocation is capped
    at its point count; budget 0 yields empty selections.
    """
    if len(past_states) < 1:
        raise ValidationError("temporal decay needs at least one past scan")
    shares = temporal_decay_shares(len(past_states), total_budget)
    out = []
    for state, share in zip(past_states, shares):
        k = min(int(share), len(state))
        out.append(weighted_sample(np.asarray(state.objectness, dtype=np.float64), k, rng))
    return out


def sample_strided(past_states, stride: int = 2, fraction: float = 0.10, rng=None):
    """Importance-sample only every stride-th past scan, oldest first.

    past_states is ordered oldest to newest; offsets i = 1, 1 + stride, ...
    (i = 1 is the oldest past scan) contribute points. Returns
    (selections, skipped) where selections maps position -> indices and
    skipped lists the positions of scans left out, for label backfill.
    """
    if stride < 2:
        raise ValidationError("stride must be >= 2")
    n_past = len(past_states)
    chosen = set(range(0, n_past, stride))  # position 0 <=> offset i = 1
    selections = {}
    skipped = []
    for pos, state in enumerate(past_states):
        if pos in chosen:
            selections[pos] = sample_importance(state, fraction=fraction, rng=rng)
        else:
            skipped.append(pos)
    return selections, skipped


def backfill_skipped(
    included_coords: np.ndarray,
    included_origin: np.ndarray,
    included_semantic: np.ndarray,
    included_instance: np.ndarray,
    query_coords: np.ndarray,
):
    """Copy (class, instance) from each query point's nearest included point.

    Nearest neighbor is exact (KD-tree over world xyz); distance ties are
    broken by the lowest (scan_index, point_index) origin pair.

    Returns (semantic, instance) arrays aligned with query_coords.
    """
    if included_coords.shape[0] == 0:
        raise ValidationError("cannot backfill from an empty volume")
    tree = cKDTree(included_coords)
    dists, _ = tree.query(query_coords, k=1)
    balls = tree.query_ball_point(query_coords, r=dists * (1.0 + 1e-9))

    sem = np.empty(query_coords.shape[0], dtype=included_semantic.dtype)
    inst = np.empty(query_coords.shape[0], dtype=included_instance.dtype)
    for q, cand in enumerate(balls):
        cand = np.asarray(cand, dtype=np.int64)
        diff = included_coords[cand] - query_coords[q]
        d2 = np.einsum("ij,ij->i", diff, diff)
        tied = cand[d2 == d2.min()]
        best = tied[np.lexsort((included_origin[tied, 1], included_origin[tied, 0]))[0]]
        sem[q] = included_semantic[best]
        inst[q] = included_instance[best]
    return sem, inst


def _per_scan_thing_budget(config: VolumeConfig, n_current: int, n_past: int):
    if config.max_points is None or n_past == 0:
        return None
    return max(0, (config.max_points - n_current) // n_past)


def build_volume(
    current_coords: np.ndarray,
    current_index: int,
    past_states,
    config: VolumeConfig,
    rng,
    thing_classes=(),
) -> Volume4D:
    """Assemble one 4D volume from the aligned current scan and past states.

    past_states must be ordered oldest to newest and cover exactly the scans
    max(0, t - tau + 1) .. t - 1 (fewer at the start of a sequence).
    """
    config.validate()
    n_past = len(past_states)
    if n_past > config.tau - 1:
        raise ValidationError(
            f"{n_past} past scans exceed window tau={config.tau}"
        )
    expect_first = max(0, current_index - config.tau + 1)
    if past_states and past_states[0].scan_index != expect_first:
        raise ValidationError(
            f"window must start at scan {expect_first}, got {past_states[0].scan_index}"
        )
    for pos, state in enumerate(past_states):
        if state.scan_index != expect_first + pos:
            raise ValidationError("past states must be consecutive scans")

    selections = {pos: np.empty(0, dtype=np.int64) for pos in range(n_past)}
    skipped = []
    if n_past > 0:
        if config.strategy == "thing":
            budget = _per_scan_thing_budget(config, current_coords.shape[0], n_past)
            for pos, state in enumerate(past_states):
                selections[pos] = sample_thing_prop(state, thing_classes, budget=budget, rng=rng)
        elif config.strategy == "importance":
            for pos, state in enumerate(past_states):
                selections[pos] = sample_importance(state, fraction=config.fraction, rng=rng)
        elif config.strategy == "decay":
            total = int(np.ceil(config.fraction * sum(len(s) for s in past_states)))
            picks = sample_temporal_decay(past_states, total, rng)
            selections = dict(enumerate(picks))
        elif config.strategy == "stride":
            selections_s, skipped = sample_strided(
                past_states, stride=config.stride, fraction=config.fraction, rng=rng
            )
            selections.update(selections_s)

    coords_parts = []
    origin_parts = []
    for pos, state in enumerate(past_states):
        idx = selections.get(pos)
        if idx is None or idx.size == 0:
            continue
        part = np.empty((idx.size, 4))
        part[:, :3] = state.coords[idx]
        part[:, 3] = pos * config.time_scale
        coords_parts.append(part)
        orig = np.empty((idx.size, 2), dtype=np.int64)
        orig[:, 0] = state.scan_index
        orig[:, 1] = idx
        origin_parts.append(orig)

    n_cur = current_coords.shape[0]
    cur = np.empty((n_cur, 4))
    cur[:, :3] = current_coords
    cur[:, 3] = n_past * config.time_scale
    coords_parts.append(cur)
    cur_orig = np.empty((n_cur, 2), dtype=np.int64)
    cur_orig[:, 0] = current_index
    cur_orig[:, 1] = np.arange(n_cur)
    origin_parts.append(cur_orig)

    coords = np.vstack(coords_parts)
    origin = np.vstack(origin_parts)
    is_current = np.zeros(coords.shape[0], dtype=bool)
    is_current[-n_cur:] = True

    return Volume4D(
        coords=coords,
        origin=origin,
        is_current=is_current,
        n_current=n_cur,
        window=(expect_first, current_index),
        skipped_scans=[past_states[pos].scan_index for pos in skipped],
    )
