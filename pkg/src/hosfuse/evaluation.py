"""Five-scheme COCO mask AP for hand/object predictions.

Each scheme projects hands and objects onto class labels, then runs COCO-style
matching (score-ordered greedy, each ground truth matched once, maxDets 100)
at IoU thresholds 0.50:0.05:0.95 with 101-point interpolated precision.
IoU thresholds are integer hundredths and every threshold or recall test is
an integer cross-multiplication, so no comparison depends on float rounding.
"""
from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from hosfuse.datamodel import (
    Category,
    ContactState,
    FusedFrame,
    GroundTruthFrame,
)
from hosfuse.maskops import BinaryMask, mask_area, mask_intersection_area, mask_union

IOU_THRESHOLDS = tuple(range(50, 100, 5))  # hundredths
RECALL_STEPS = 101
MAX_DETS = 100


class EvaluationError(ValueError):
    pass


class EvalScheme(str, enum.Enum):
    HAND = "Hand"
    HAND_SIDE = "Hand + Side"
    HAND_CONTACT = "Hand + Contact"
    OBJECT = "Object"
    HAND_OBJECT = "Hand + Object"


SCHEMES = tuple(EvalScheme)


@dataclass(frozen=True)
class Pred:
    image_id: str
    instance_id: int
    label: str
    score: float
    mask: BinaryMask


@dataclass(frozen=True)
class Gt:
    image_id: str
    gt_id: int
    label: str
    mask: BinaryMask


@dataclass
class SchemeResult:
    ap: float
    per_threshold: list[float]
    class_breakdown: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": _jsonable(self.ap),
            "per_threshold": [_jsonable(v) for v in self.per_threshold],
            "class_breakdown": {k: _jsonable(v) for k, v in sorted(self.class_breakdown.items())},
        }


@dataclass
class EvalReport:
    schemes: dict[EvalScheme, SchemeResult]

    @property
    def mean_ap(self) -> float:
        return float(np.mean([self.schemes[s].ap for s in SCHEMES]))

    def to_dict(self) -> dict:
        return {
            "schemes": {s.value: self.schemes[s].to_dict() for s in SCHEMES},
            "iou_thresholds": [t / 100 for t in IOU_THRESHOLDS],
            "mean_ap": _jsonable(self.mean_ap),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _jsonable(v: float):
    return None if math.isnan(v) else v


# ---------------------------------------------------------------- projection


def _hand_label(scheme: EvalScheme, attrs) -> str:
    if scheme is EvalScheme.HAND_SIDE:
        return attrs.side.value
    if scheme is EvalScheme.HAND_CONTACT:
        return attrs.state.value
    if scheme is EvalScheme.HAND_OBJECT:
        return "hand+object"
    return "hand"


def _project(image_id, instances, scheme, id_of, link_of):
    """(instance, label, mask) triples for one frame under one scheme."""
    out = []
    masks = {id_of(i): i.mask for i in instances}
    for inst in instances:
        if scheme is EvalScheme.OBJECT:
            if inst.category is Category.OBJECT:
                out.append((inst, "object", inst.mask))
            continue
        if inst.category is not Category.HAND:
            continue
        mask = inst.mask
        if scheme is EvalScheme.HAND_OBJECT:
            link = link_of(inst)
            in_contact = inst.attrs is not None and inst.attrs.state is ContactState.IN_CONTACT
            if in_contact and link is not None and link in masks:
                mask = mask_union(mask, masks[link])
        out.append((inst, _hand_label(scheme, inst.attrs), mask))
    return out


def class_project(
    preds: Sequence[FusedFrame], gts: Sequence[GroundTruthFrame], scheme: EvalScheme
) -> tuple[list[Pred], list[Gt]]:
    pred_out = [
        Pred(f.image_id, inst.instance_id, label, inst.score, mask)
        for f in preds
        for inst, label, mask in _project(
            f.image_id, f.instances, scheme, lambda i: i.instance_id, lambda i: i.linked_object
        )
    ]
    gt_out = [
        Gt(f.image_id, inst.gt_id, label, mask)
        for f in gts
        for inst, label, mask in _project(
            f.image_id, f.instances, scheme, lambda i: i.gt_id, lambda i: i.linked_object
        )
    ]
    return pred_out, gt_out


# ---------------------------------------------------------------- matching / AP


def _iou_counts(preds: Sequence[Pred], gts: Sequence[Gt]) -> tuple[np.ndarray, np.ndarray]:
    inter = np.zeros((len(preds), len(gts)), dtype=np.int64)
    union = np.zeros_like(inter)
    gt_areas = [mask_area(g.mask) for g in gts]
    for i, p in enumerate(preds):
        pa = mask_area(p.mask)
        for j, g in enumerate(gts):
            n = mask_intersection_area(p.mask, g.mask)
            inter[i, j] = n
            union[i, j] = pa + gt_areas[j] - n
    return inter, union


def _pred_order(p: Pred):
    return (-p.score, p.image_id, p.instance_id)


def _match_frame(inter, union, thresholds: Sequence[int]) -> np.ndarray:
    """Boolean (n_thresholds, n_preds) true-positive table for one frame.

    Predictions must already be in score order.  Each prediction takes the
    still-unmatched ground truth with the highest IoU at or above the
    threshold; ties go to the lower ground-truth index.
    """
    n_pred, n_gt = inter.shape
    tp = np.zeros((len(thresholds), n_pred), dtype=bool)
    for t_idx, t in enumerate(thresholds):
        taken = np.zeros(n_gt, dtype=bool)
        for i in range(n_pred):
            best = -1
            for j in range(n_gt):
                if taken[j] or union[i, j] == 0 or inter[i, j] * 100 < t * union[i, j]:
                    continue
                # inter_i/union_i > inter_best/union_best, compared exactly
                if best < 0 or inter[i, j] * union[i, best] > inter[i, best] * union[i, j]:
                    best = j
            if best >= 0:
                taken[best] = True
                tp[t_idx, i] = True
    return tp


def _interpolated_ap(tp_sorted: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from a score-ordered TP flag vector."""
    if n_gt == 0:
        return math.nan
    if tp_sorted.size == 0:
        return 0.0
    tps = np.cumsum(tp_sorted, dtype=np.int64)
    dets = np.arange(1, tp_sorted.size + 1, dtype=np.int64)
    precision = tps / dets
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    total = 0.0
    for k in range(RECALL_STEPS):
        # first index where recall tps/n_gt >= k/100
        idx = np.searchsorted(tps * 100, k * n_gt, side="left")
        if idx < tps.size:
            total += envelope[idx]
    return total / RECALL_STEPS


def _single_class_tp(preds: Sequence[Pred], gts: Sequence[Gt], thresholds) -> tuple[np.ndarray, list[Pred]]:
    by_frame_p: dict[str, list[Pred]] = defaultdict(list)
    by_frame_g: dict[str, list[Gt]] = defaultdict(list)
    for p in preds:
        by_frame_p[p.image_id].append(p)
    for g in gts:
        by_frame_g[g.image_id].append(g)
    kept: list[Pred] = []
    flags: list[np.ndarray] = []
    for image_id in sorted(by_frame_p):
        fp = sorted(by_frame_p[image_id], key=_pred_order)[:MAX_DETS]
        fg = sorted(by_frame_g.get(image_id, []), key=lambda g: g.gt_id)
        inter, union = _iou_counts(fp, fg)
        flags.append(_match_frame(inter, union, thresholds))
        kept.extend(fp)
    if not kept:
        return np.zeros((len(thresholds), 0), dtype=bool), []
    tp = np.concatenate(flags, axis=1)
    order = sorted(range(len(kept)), key=lambda i: _pred_order(kept[i]))
    return tp[:, order], [kept[i] for i in order]


def average_precision_single_threshold(
    preds: Sequence[Pred], gts: Sequence[Gt], iou_th: int
) -> float:
    """AP at one IoU threshold given in integer hundredths (e.g. 50)."""
    tp, _ = _single_class_tp(preds, gts, (iou_th,))
    return _interpolated_ap(tp[0], len(gts))


def coco_mask_ap(preds: Sequence[Pred], gts: Sequence[Gt]) -> SchemeResult:
    labels = sorted({g.label for g in gts})
    per_class: dict[str, list[float]] = {}
    for label in labels:
        cp = [p for p in preds if p.label == label]
        cg = [g for g in gts if g.label == label]
        tp, _ = _single_class_tp(cp, cg, IOU_THRESHOLDS)
        per_class[label] = [_interpolated_ap(tp[t], len(cg)) for t in range(len(IOU_THRESHOLDS))]
    if not per_class:
        nan = [math.nan] * len(IOU_THRESHOLDS)
        return SchemeResult(math.nan, nan, {})
    per_threshold = [float(np.mean([v[t] for v in per_class.values()])) for t in range(len(IOU_THRESHOLDS))]
    breakdown = {label: float(np.mean(v)) for label, v in per_class.items()}
    return SchemeResult(float(np.mean(per_threshold)), per_threshold, breakdown)


def evaluate(preds: Iterable[FusedFrame], gts: Iterable[GroundTruthFrame]) -> EvalReport:
    pred_map = {f.image_id: f for f in preds}
    gt_map = {f.image_id: f for f in gts}
    missing_gt = sorted(set(pred_map) - set(gt_map))
    missing_pred = sorted(set(gt_map) - set(pred_map))
    if missing_gt or missing_pred:
        parts = []
        if missing_gt:
            parts.append(f"no ground truth for: {', '.join(missing_gt)}")
        if missing_pred:
            parts.append(f"no predictions for: {', '.join(missing_pred)}")
        raise EvaluationError("; ".join(parts))
    for image_id, p in pred_map.items():
        g = gt_map[image_id]
        if (p.width, p.height) != (g.width, g.height):
            raise EvaluationError(f"{image_id}: prediction {p.width}x{p.height} vs ground truth {g.width}x{g.height}")
    ids = sorted(pred_map)
    pf = [pred_map[i] for i in ids]
    gf = [gt_map[i] for i in ids]
    results = {}
    for scheme in SCHEMES:
        sp, sg = class_project(pf, gf, scheme)
        results[scheme] = coco_mask_ap(sp, sg)
    return EvalReport(results)


# ---------------------------------------------------------------- reporting


def _fmt(v: float) -> str:
    return "n/a" if math.isnan(v) else f"{v:.4f}"


def render_report(report: EvalReport | dict[str, EvalReport], label: str = "Ours") -> str:
    """Fixed-width table: one row per report, Table-1 column order plus Mean."""
    rows = report if isinstance(report, dict) else {label: report}
    headers = [s.value for s in SCHEMES] + ["Mean"]
    label_w = max([len(k) for k in rows] + [6])
    widths = [max(len(h), 6) for h in headers]
    lines = ["  ".join([" " * label_w] + [h.rjust(w) for h, w in zip(headers, widths)])]
    for name, rep in rows.items():
        values = [rep.schemes[s].ap for s in SCHEMES] + [rep.mean_ap]
        lines.append("  ".join([name.ljust(label_w)] + [_fmt(v).rjust(w) for v, w in zip(values, widths)]))
    return "\n".join(lines) + "\n"


def render_csv(report: EvalReport | dict[str, EvalReport], label: str = "Ours") -> str:
    rows = report if isinstance(report, dict) else {label: report}
    out = ["method," + ",".join(s.value for s in SCHEMES) + ",Mean"]
    for name, rep in rows.items():
        values = [rep.schemes[s].ap for s in SCHEMES] + [rep.mean_ap]
        out.append(name + "," + ",".join(_fmt(v) for v in values))
    return "\n".join(out) + "\n"
