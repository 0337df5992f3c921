"""Evaluation metrics for 4D panoptic label streams.

Implements the segmentation-and-tracking score (class IoU term, association
term, and their geometric mean) plus the comparison metrics: panoptic quality
(PQ/SQ/RQ/PQ-dagger), MOTS counts (TP/FP/FN/IDS, precision, recall, MOTSA,
sMOTSA), PTQ/sPTQ, and mIoU.

Points whose ground-truth class is in the ignore set are excluded from all
counts. Association is class-agnostic over thing-class tubes: a tube is the
set of (scan, point) pairs sharing one nonzero instance id, and every
overlapping gt/pred tube pair contributes TPA * IoU without any segment
matching step.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_SHIFT = np.int64(32)
_MASK = np.int64((1 << 32) - 1)


@dataclass(frozen=True)
class EvalConfig:
    """Class universe and thresholds used by all metrics."""

    classes: tuple  # evaluated class ids
    things: frozenset  # countable subset of classes
    ignore: frozenset = frozenset({0})
    pq_match_threshold: float = 0.5
    per_sequence: bool = False  # average stream scores per sequence
    class_names: dict = field(default_factory=dict)

    def __post_init__(self):
        classes = set(self.classes)
        if not self.things <= classes:
            raise ValidationError("thing classes must be a subset of the class set")
        if self.ignore & classes:
            raise ValidationError("ignore classes must not appear in the class set")
        if not 0.0 < self.pq_match_threshold < 1.0:
            raise ValidationError("pq_match_threshold must lie in (0, 1)")

    @property
    def stuff(self):
        return frozenset(self.classes) - self.things

    def name(self, c):
        return self.class_names.get(c, str(c))


def _as_arrays(item):
    """Accept PanopticLabels or a (semantic, instance) pair."""
    if hasattr(item, "semantic"):
        return np.asarray(item.semantic, dtype=np.int64), np.asarray(item.instance, dtype=np.int64)
    sem, inst = item
    return np.asarray(sem, dtype=np.int64), np.asarray(inst, dtype=np.int64)


class PanopticEvaluator:
    """Streaming accumulator; feed scans in temporal order per sequence."""

    def __init__(self, config: EvalConfig, pq_per_scan: bool = True):
        self.config = config
        self.pq_per_scan = pq_per_scan
        self._things = np.array(sorted(config.things), dtype=np.int64)
        self._ignore = np.array(sorted(config.ignore), dtype=np.int64)
        # semantic confusion: (gt class, pred class) -> point count
        self.confusion = defaultdict(int)
        # association tubes
        self.gt_tube_sizes = defaultdict(int)  # (seq, id) -> points
        self.pr_tube_sizes = defaultdict(int)
        self.tube_overlaps = defaultdict(int)  # (seq, gid, pid) -> points
        # per-class segment stats (thing classes; PQ frame = scan or sequence)
        self.seg = {
            c: {"tp": 0, "fp": 0, "fn": 0, "iou_sum": 0.0, "ids": 0, "switch_iou": 0.0}
            for c in config.classes
        }
        # 4D-PQ accumulators (used when pq_per_scan is False)
        self._tube4d_gt = defaultdict(int)  # (seq, class, id) -> points
        self._tube4d_pr = defaultdict(int)
        self._tube4d_ov = defaultdict(int)  # (seq, class, gid, pid) -> points
        self._stuff4d_gt = defaultdict(int)  # (seq, class) -> points
        self._stuff4d_pr = defaultdict(int)
        self._stuff4d_ov = defaultdict(int)
        self._last_match = {}  # (seq, class, gt id) -> pred id
        self.warnings = []

    # -- accumulation ------------------------------------------------------

    def add_scan(self, gt, pred, seq=""):
        gt_sem, gt_inst = _as_arrays(gt)
        pr_sem, pr_inst = _as_arrays(pred)
        if gt_sem.shape != pr_sem.shape:
            raise ValidationError(
                f"gt stream has {gt_sem.shape[0]} points, pred {pr_sem.shape[0]}"
            )
        valid = ~np.isin(gt_sem, self._ignore)
        gs, ps = gt_sem[valid], pr_sem[valid]
        gi, pi = gt_inst[valid], pr_inst[valid]

        for key, cnt in zip(*np.unique((gs << _SHIFT) | ps, return_counts=True)):
            self.confusion[(int(key >> _SHIFT), int(key & _MASK))] += int(cnt)

        g_tube = np.isin(gs, self._things) & (gi != 0)
        p_tube = np.isin(ps, self._things) & (pi != 0)
        for uid, cnt in zip(*np.unique(gi[g_tube], return_counts=True)):
            self.gt_tube_sizes[(seq, int(uid))] += int(cnt)
        for uid, cnt in zip(*np.unique(pi[p_tube], return_counts=True)):
            self.pr_tube_sizes[(seq, int(uid))] += int(cnt)
        both = g_tube & p_tube
        for key, cnt in zip(*np.unique((gi[both] << _SHIFT) | pi[both], return_counts=True)):
            self.tube_overlaps[(seq, int(key >> _SHIFT), int(key & _MASK))] += int(cnt)

        if self.pq_per_scan:
            self._match_scan_segments(gs, gi, ps, pi, seq)
        else:
            self._accumulate_4d_segments(gs, gi, ps, pi, seq)

    def _match_scan_segments(self, gs, gi, ps, pi, seq):
        thr = self.config.pq_match_threshold
        for c in self.config.things:
            g_mask = (gs == c) & (gi != 0)
            p_mask = (ps == c) & (pi != 0)
            if not g_mask.any() and not p_mask.any():
                continue
            g_ids, g_cnt = np.unique(gi[g_mask], return_counts=True)
            p_ids, p_cnt = np.unique(pi[p_mask], return_counts=True)
            g_sizes = dict(zip(g_ids.tolist(), g_cnt.tolist()))
            p_sizes = dict(zip(p_ids.tolist(), p_cnt.tolist()))
            inter = g_mask & p_mask
            stat = self.seg[c]
            matched_g, matched_p = set(), set()
            if inter.any():
                keys, cnts = np.unique((gi[inter] << _SHIFT) | pi[inter], return_counts=True)
                candidates = []
                for key, n_ov in zip(keys.tolist(), cnts.tolist()):
                    g, p = key >> 32, key & 0xFFFFFFFF
                    iou = n_ov / (g_sizes[g] + p_sizes[p] - n_ov)
                    if iou > thr:
                        candidates.append((-iou, g, p))
                # unique matching; automatic above 0.5, greedy below it
                for neg_iou, g, p in sorted(candidates):
                    if g in matched_g or p in matched_p:
                        continue
                    stat["tp"] += 1
                    stat["iou_sum"] += -neg_iou
                    matched_g.add(g)
                    matched_p.add(p)
                    track = (seq, c, g)
                    last = self._last_match.get(track)
                    if last is not None and last != p:
                        stat["ids"] += 1
                        stat["switch_iou"] += -neg_iou
                    self._last_match[track] = p
            stat["fp"] += len(p_sizes) - len(matched_p)
            stat["fn"] += len(g_sizes) - len(matched_g)

        for c in self.config.stuff:
            g_mask = gs == c
            p_mask = ps == c
            ng, npr = int(g_mask.sum()), int(p_mask.sum())
            if ng == 0 and npr == 0:
                continue
            stat = self.seg[c]
            n_ov = int((g_mask & p_mask).sum())
            iou = n_ov / (ng + npr - n_ov) if (ng + npr - n_ov) else 0.0
            if iou > self.config.pq_match_threshold:
                stat["tp"] += 1
                stat["iou_sum"] += iou
            else:
                if npr:
                    stat["fp"] += 1
                if ng:
                    stat["fn"] += 1

    def _accumulate_4d_segments(self, gs, gi, ps, pi, seq):
        for c in self.config.things:
            g_mask = (gs == c) & (gi != 0)
            p_mask = (ps == c) & (pi != 0)
            for uid, cnt in zip(*np.unique(gi[g_mask], return_counts=True)):
                self._tube4d_gt[(seq, c, int(uid))] += int(cnt)
            for uid, cnt in zip(*np.unique(pi[p_mask], return_counts=True)):
                self._tube4d_pr[(seq, c, int(uid))] += int(cnt)
            inter = g_mask & p_mask
            for key, cnt in zip(*np.unique((gi[inter] << _SHIFT) | pi[inter], return_counts=True)):
                self._tube4d_ov[(seq, c, int(key >> _SHIFT), int(key & _MASK))] += int(cnt)
        for c in self.config.stuff:
            self._stuff4d_gt[(seq, c)] += int((gs == c).sum())
            self._stuff4d_pr[(seq, c)] += int((ps == c).sum())
            self._stuff4d_ov[(seq, c)] += int(((gs == c) & (ps == c)).sum())

    def _finalize_4d_segments(self):
        thr = self.config.pq_match_threshold
        by_class = defaultdict(list)
        for (seq, c, g, p), n_ov in self._tube4d_ov.items():
            iou = n_ov / (
                self._tube4d_gt[(seq, c, g)] + self._tube4d_pr[(seq, c, p)] - n_ov
            )
            by_class[c].append(((seq, g), (seq, p), iou))
        for c in self.config.things:
            stat = self.seg[c]
            matched_g, matched_p = set(), set()
            ranked = sorted(by_class.get(c, []), key=lambda x: (-x[2], x[0], x[1]))
            for g, p, iou in ranked:
                if iou <= thr or g in matched_g or p in matched_p:
                    continue
                stat["tp"] += 1
                stat["iou_sum"] += iou
                matched_g.add(g)
                matched_p.add(p)
            n_g = sum(1 for (seq, cc, _) in self._tube4d_gt if cc == c)
            n_p = sum(1 for (seq, cc, _) in self._tube4d_pr if cc == c)
            stat["fn"] += n_g - len(matched_g)
            stat["fp"] += n_p - len(matched_p)
        seqs = {k[0] for k in self._stuff4d_gt} | {k[0] for k in self._stuff4d_pr}
        for c in self.config.stuff:
            stat = self.seg[c]
            for seq in sorted(seqs):
                ng = self._stuff4d_gt.get((seq, c), 0)
                npr = self._stuff4d_pr.get((seq, c), 0)
                if ng == 0 and npr == 0:
                    continue
                n_ov = self._stuff4d_ov.get((seq, c), 0)
                iou = n_ov / (ng + npr - n_ov) if (ng + npr - n_ov) else 0.0
                if iou > thr:
                    stat["tp"] += 1
                    stat["iou_sum"] += iou
                else:
                    if npr:
                        stat["fp"] += 1
                    if ng:
                        stat["fn"] += 1

    # -- results -----------------------------------------------------------

    def semantic_iou(self):
        """Per-class IoU from the pooled point-level confusion counts."""
        per_class = {}
        for c in self.config.classes:
            tp = self.confusion.get((c, c), 0)
            fp = sum(n for (g, p), n in self.confusion.items() if p == c and g != c)
            fn = sum(n for (g, p), n in self.confusion.items() if g == c and p != c)
            if tp + fp + fn == 0:
                continue
            per_class[c] = tp / (tp + fp + fn)
        return per_class

    def association_score(self):
        """TPA-weighted tube IoU, averaged over ground-truth tubes."""
        if not self.gt_tube_sizes:
            self.warnings.append("no ground-truth tubes; association score defined as 1.0")
            return 1.0
        inner = defaultdict(float)
        for (seq, g, p), tpa in self.tube_overlaps.items():
            gt_size = self.gt_tube_sizes[(seq, g)]
            pr_size = self.pr_tube_sizes[(seq, p)]
            inner[(seq, g)] += tpa * (tpa / (gt_size + pr_size - tpa))
        total = 0.0
        for key, gt_size in self.gt_tube_sizes.items():
            total += inner.get(key, 0.0) / gt_size
        return total / len(self.gt_tube_sizes)

    def result(self) -> "MetricReport":
        if not self.pq_per_scan:
            self._finalize_4d_segments()

        iou_per_class = self.semantic_iou()
        s_cls = float(np.mean(list(iou_per_class.values()))) if iou_per_class else 0.0
        things_iou = [v for c, v in iou_per_class.items() if c in self.config.things]
        stuff_iou = [v for c, v in iou_per_class.items() if c in self.config.stuff]
        s_assoc = self.association_score()

        pq_per_class = {}
        for c in self.config.classes:
            stat = self.seg[c]
            tp, fp, fn = stat["tp"], stat["fp"], stat["fn"]
            denom = tp + 0.5 * fp + 0.5 * fn
            if denom == 0:
                continue
            pq_c = stat["iou_sum"] / denom
            sq_c = stat["iou_sum"] / tp if tp else 0.0
            rq_c = tp / denom
            entry = {
                "pq": pq_c, "sq": sq_c, "rq": rq_c,
                "tp": tp, "fp": fp, "fn": fn, "iou_sum": stat["iou_sum"],
            }
            if c in self.config.things:
                entry["ptq"] = (stat["iou_sum"] - stat["ids"]) / denom
                entry["sptq"] = (stat["iou_sum"] - stat["switch_iou"]) / denom
                entry["ids"] = stat["ids"]
            pq_per_class[c] = entry

        # PQ-dagger: stuff classes contribute their plain class IoU
        pq_dagger_per_class = {}
        for c in self.config.classes:
            if c in self.config.things:
                if c in pq_per_class:
                    pq_dagger_per_class[c] = pq_per_class[c]["pq"]
            elif c in iou_per_class:
                pq_dagger_per_class[c] = iou_per_class[c]

        mots_per_class = {}
        for c in sorted(self.config.things):
            stat = self.seg[c]
            tp, fp, fn, ids = stat["tp"], stat["fp"], stat["fn"], stat["ids"]
            if tp + fp + fn == 0:
                continue
            gt_segments = tp + fn
            mots_per_class[c] = {
                "tp": tp, "fp": fp, "fn": fn, "ids": ids,
                "gt_segments": gt_segments,
                "precision": tp / (tp + fp) if tp + fp else 0.0,
                "recall": tp / (tp + fn) if tp + fn else 0.0,
                "motsa": 1.0 - (fp + fn + ids) / gt_segments if gt_segments else 0.0,
                "smotsa": (stat["iou_sum"] - fp - ids) / gt_segments if gt_segments else 0.0,
            }

        def _mean(values):
            return float(np.mean(values)) if values else 0.0

        report = MetricReport(
            s_cls=s_cls,
            s_assoc=s_assoc,
            lstq=lstq(s_cls, s_assoc),
            miou=s_cls,
            iou_per_class=iou_per_class,
            iou_things_mean=_mean(things_iou),
            iou_stuff_mean=_mean(stuff_iou),
            pq=_mean([v["pq"] for v in pq_per_class.values()]),
            sq=_mean([v["sq"] for v in pq_per_class.values()]),
            rq=_mean([v["rq"] for v in pq_per_class.values()]),
            pq_dagger=_mean(list(pq_dagger_per_class.values())),
            pq_dagger_per_class=pq_dagger_per_class,
            pq_per_class=pq_per_class,
            mots_per_class=mots_per_class,
            motsa_mean=_mean([v["motsa"] for v in mots_per_class.values()]),
            smotsa_mean=_mean([v["smotsa"] for v in mots_per_class.values()]),
            ptq_mean=_mean([v["ptq"] for v in pq_per_class.values() if "ptq" in v]),
            sptq_mean=_mean([v["sptq"] for v in pq_per_class.values() if "sptq" in v]),
            n_gt_tubes=len(self.gt_tube_sizes),
            n_pred_tubes=len(self.pr_tube_sizes),
            warnings=list(self.warnings),
        )
        return report


@dataclass
class MetricReport:
    """Aggregate and per-class results plus the counts behind them."""

    s_cls: float
    s_assoc: float
    lstq: float
    miou: float
    iou_per_class: dict
    iou_things_mean: float
    iou_stuff_mean: float
    pq: float
    sq: float
    rq: float
    pq_dagger: float
    pq_dagger_per_class: dict
    pq_per_class: dict
    mots_per_class: dict
    motsa_mean: float
    smotsa_mean: float
    ptq_mean: float
    sptq_mean: float
    n_gt_tubes: int
    n_pred_tubes: int
    warnings: list = field(default_factory=list)

    def scalars(self):
        return {
            "lstq": self.lstq,
            "s_assoc": self.s_assoc,
            "s_cls": self.s_cls,
            "miou": self.miou,
            "iou_things_mean": self.iou_things_mean,
            "iou_stuff_mean": self.iou_stuff_mean,
            "pq": self.pq,
            "pq_dagger": self.pq_dagger,
            "sq": self.sq,
            "rq": self.rq,
            "motsa_mean": self.motsa_mean,
            "smotsa_mean": self.smotsa_mean,
            "ptq_mean": self.ptq_mean,
            "sptq_mean": self.sptq_mean,
            "n_gt_tubes": self.n_gt_tubes,
            "n_pred_tubes": self.n_pred_tubes,
        }

    def _class_ids(self):
        return sorted(
            set(self.iou_per_class) | set(self.pq_per_class) | set(self.pq_dagger_per_class)
        )

    def to_dict(self):
        out = self.scalars()
        out["per_class"] = {
            str(c): {
                "iou": self.iou_per_class.get(c),
                "pq_dagger": self.pq_dagger_per_class.get(c),
                **self.pq_per_class.get(c, {}),
                **{f"mots_{k}": v for k, v in self.mots_per_class.get(c, {}).items()},
            }
            for c in self._class_ids()
        }
        out["warnings"] = self.warnings
        return out

    def write_text(self, path):
        """Flat key<TAB>value table, one line per metric."""
        lines = []
        for key, val in self.scalars().items():
            lines.append(f"{key}\t{_fmt(val)}")
        for c in self._class_ids():
            if c in self.iou_per_class:
                lines.append(f"class.{c}.iou\t{_fmt(self.iou_per_class[c])}")
            if c in self.pq_dagger_per_class:
                lines.append(f"class.{c}.pq_dagger\t{_fmt(self.pq_dagger_per_class[c])}")
            for k, v in self.pq_per_class.get(c, {}).items():
                lines.append(f"class.{c}.{k}\t{_fmt(v)}")
            for k, v in self.mots_per_class.get(c, {}).items():
                lines.append(f"class.{c}.mots.{k}\t{_fmt(v)}")
        for w in self.warnings:
            lines.append(f"warning\t{w}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    def write_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# -- functional wrappers ----------------------------------------------------


def _run_stream(gt_stream, pred_stream, config, pq_per_scan=True, seq=""):
    ev = PanopticEvaluator(config, pq_per_scan=pq_per_scan)
    gt_list, pred_list = list(gt_stream), list(pred_stream)
    if len(gt_list) != len(pred_list):
        raise ValidationError("gt and pred streams have different scan counts")
    for gt, pred in zip(gt_list, pred_list):
        ev.add_scan(gt, pred, seq=seq)
    return ev


def s_cls(gt_stream, pred_stream, config: EvalConfig):
    """Class-mean point IoU over the whole stream; returns (per_class, mean)."""
    ev = _run_stream(gt_stream, pred_stream, config)
    per_class = ev.semantic_iou()
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def s_assoc(gt_stream, pred_stream, config: EvalConfig) -> float:
    """Streaming association score."""
    return _run_stream(gt_stream, pred_stream, config).association_score()


def lstq(s_cls_value: float, s_assoc_value: float) -> float:
    """Geometric mean of the classification and association terms."""
    return math.sqrt(s_cls_value * s_assoc_value)


def brute_force_s_assoc(gt_stream, pred_stream, config: EvalConfig) -> float:
    """Association score via explicit point-id sets; the test oracle.

    Materializes every tube as a python set of (scan, point) pairs and
    evaluates the association formula with nested set intersections. Intended
    for small inputs (<= 1e4 points).
    """
    things = config.things
    ignore = config.ignore
    gt_tubes = defaultdict(set)
    pr_tubes = defaultdict(set)
    for n, (gt, pred) in enumerate(zip(gt_stream, pred_stream)):
        gt_sem, gt_inst = _as_arrays(gt)
        pr_sem, pr_inst = _as_arrays(pred)
        for k in range(gt_sem.shape[0]):
            if int(gt_sem[k]) in ignore:
                continue
            if int(gt_sem[k]) in things and gt_inst[k] != 0:
                gt_tubes[int(gt_inst[k])].add((n, k))
            if int(pr_sem[k]) in things and pr_inst[k] != 0:
                pr_tubes[int(pr_inst[k])].add((n, k))
    if not gt_tubes:
        return 1.0
    total = 0.0
    for gset in gt_tubes.values():
        inner = 0.0
        for pset in pr_tubes.values():
            tpa = len(gset & pset)
            if tpa == 0:
                continue
            inner += tpa * (tpa / (len(gset) + len(pset) - tpa))
        total += inner / len(gset)
    return total / len(gt_tubes)


def panoptic_quality(gt_stream, pred_stream, config: EvalConfig, per_scan: bool = True):
    """PQ/SQ/RQ/PQ-dagger; per_scan=True matches segments scan by scan."""
    report = _run_stream(gt_stream, pred_stream, config, pq_per_scan=per_scan).result()
    return {
        "pq": report.pq,
        "sq": report.sq,
        "rq": report.rq,
        "pq_dagger": report.pq_dagger,
        "per_class": report.pq_per_class,
    }


def mots_metrics(gt_stream, pred_stream, config: EvalConfig):
    """Per-class MOTS counts and scores (things only)."""
    return _run_stream(gt_stream, pred_stream, config).result().mots_per_class


def ptq_metrics(gt_stream, pred_stream, config: EvalConfig):
    """Per-class and mean PTQ/sPTQ."""
    report = _run_stream(gt_stream, pred_stream, config).result()
    per_class = {
        c: {"ptq": v["ptq"], "sptq": v["sptq"], "ids": v["ids"]}
        for c, v in report.pq_per_class.items()
        if "ptq" in v
    }
    return {"ptq": report.ptq_mean, "sptq": report.sptq_mean, "per_class": per_class}


def mots_from_counts(tp: int, fp: int, fn: int, ids: int, iou_sum: float | None = None):
    """MOTS scores straight from counts (the formula layer).

    The counts are inputs, not recomputed. sMOTSA requires iou_sum.
    """
    gt_segments = tp + fn
    out = {
        "motsa": 1.0 - (fp + fn + ids) / gt_segments if gt_segments else 0.0,
        "precision": tp / (tp + fp) if tp + fp else 0.0,
        "recall": tp / (tp + fn) if tp + fn else 0.0,
    }
    if iou_sum is not None:
        out["smotsa"] = (iou_sum - fp - ids) / gt_segments if gt_segments else 0.0
    return out


def ptq_from_counts(tp: int, fp: int, fn: int, ids: int, iou_sum: float,
                    switch_iou_sum: float):
    """PTQ/sPTQ straight from counts; the soft variant subtracts the IoU of
    switched segments instead of the switch count."""
    denom = tp + 0.5 * fp + 0.5 * fn
    if denom == 0:
        return {"ptq": 0.0, "sptq": 0.0}
    return {
        "ptq": (iou_sum - ids) / denom,
        "sptq": (iou_sum - switch_iou_sum) / denom,
    }


def evaluate(gt_sequences: dict, pred_sequences: dict, config: EvalConfig) -> MetricReport:
    """Full report over one or more sequences of aligned label streams.

    gt ids are namespaced per sequence (tubes never cross sequences); class
    counts are pooled before the IoU. With config.per_sequence, the stream
    scores (s_cls, s_assoc, lstq, miou) are instead averaged over per-sequence
    values; segment-level counts stay pooled.
    """
    if set(gt_sequences) != set(pred_sequences):
        raise ValidationError("gt and pred sequence sets differ")
    ev = PanopticEvaluator(config)
    per_seq = {}
    for seq in sorted(gt_sequences):
        gt_list, pred_list = list(gt_sequences[seq]), list(pred_sequences[seq])
        if len(gt_list) != len(pred_list):
            raise ValidationError(f"sequence {seq}: scan count mismatch")
        if config.per_sequence:
            per_seq[seq] = PanopticEvaluator(config)
        for gt, pred in zip(gt_list, pred_list):
            ev.add_scan(gt, pred, seq=seq)
            if config.per_sequence:
                per_seq[seq].add_scan(gt, pred, seq=seq)
    report = ev.result()
    if config.per_sequence and per_seq:
        sub = [e.result() for e in per_seq.values()]
        report.s_cls = float(np.mean([r.s_cls for r in sub]))
        report.s_assoc = float(np.mean([r.s_assoc for r in sub]))
        report.miou = float(np.mean([r.miou for r in sub]))
        report.lstq = lstq(report.s_cls, report.s_assoc)
    return report
