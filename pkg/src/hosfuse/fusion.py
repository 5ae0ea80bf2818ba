"""Fuse segmentation, detection and class-agnostic parts into hand/object masks.

Per frame: detections drive the output.  A detection whose matched
segmentation box agrees above ``iou_th`` keeps the segmentation mask; a weaker
match picks the part with the best mask IoU against the segmentation mask; an
unmatched detection scores every part in its box with
``w1*C1 + w2*C2 + w3*C3``.  All hands are resolved before any object, and the
parts chosen for hands leave the pool before objects see it.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Iterable, Sequence

from hosfuse.datamodel import (
    Category,
    ContactState,
    DetInstance,
    FramePredictions,
    FusedInstance,
    HandAttributes,
    SamPart,
    SegInstance,
    Source,
)
from hosfuse.maskops import (
    BBox,
    BinaryMask,
    Point,
    box_center,
    box_iou,
    mask_area,
    mask_contains_point,
    mask_iou,
    mask_pixels_in_box,
    mask_tight_box,
)


class FallbackPolicy(str, enum.Enum):
    SKIP = "skip"
    USE_SEG_MASK = "use_seg_mask"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    w1: float = 1 / 3
    w2: float = 1 / 3
    w3: float = 1 / 3
    iou_th: float = 0.5
    det_score_min: float = 0.5
    seg_score_min: float = 0.5
    match_floor: float = 0.0
    offset_scale_mult: float = 1.0
    fallback_no_part: FallbackPolicy = FallbackPolicy.SKIP

    def __post_init__(self):
        weights = (self.w1, self.w2, self.w3)
        if any(not math.isfinite(w) or w < 0 for w in weights) or sum(weights) <= 0:
            raise ConfigError(f"weights must be non-negative with a positive sum, got {weights}")
        for name in ("iou_th", "det_score_min", "seg_score_min"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.match_floor < 1.0:
            raise ConfigError("match_floor must lie in [0, 1)")
        if not (math.isfinite(self.offset_scale_mult) and self.offset_scale_mult >= 0):
            raise ConfigError("offset_scale_mult must be a non-negative number")
        if not isinstance(self.fallback_no_part, FallbackPolicy):
            object.__setattr__(self, "fallback_no_part", FallbackPolicy(self.fallback_no_part))

    @classmethod
    def from_dict(cls, doc: dict) -> FusionConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key == "fallback_no_part":
                try:
                    kwargs[key] = FallbackPolicy(value)
                except ValueError:
                    raise ConfigError(f"unknown fallback_no_part '{value}'") from None
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key '{key}' must be a number")
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> FusionConfig:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["fallback_no_part"] = self.fallback_no_part.value
        return doc


# ---------------------------------------------------------------- constraints


def constraint_c1(box: BBox, part: SamPart) -> int:
    """1 if the box center falls on the part, else 0."""
    return int(mask_contains_point(part.mask, box_center(box)))


def constraint_c2(box: BBox, part: SamPart) -> Fraction:
    """Share of the part's pixels that lie inside the box."""
    area = mask_area(part.mask)
    if area == 0:
        return Fraction(0)
    return Fraction(mask_pixels_in_box(part.mask, box), area)


def constraint_c3(box: BBox, part: SamPart) -> Fraction:
    """Share of the box's pixels covered by the part."""
    clipped = box.clip(part.mask.width, part.mask.height)
    if clipped is None:
        return Fraction(0)
    return Fraction(mask_pixels_in_box(part.mask, clipped), clipped.area)


def combine_constraints(c1, c2, c3, cfg: FusionConfig) -> Fraction:
    # Fraction(float) is exact, so equal inputs always give equal scores
    return Fraction(cfg.w1) * c1 + Fraction(cfg.w2) * c2 + Fraction(cfg.w3) * c3


def part_score(box: BBox, part: SamPart, cfg: FusionConfig) -> Fraction:
    return combine_constraints(
        constraint_c1(box, part), constraint_c2(box, part), constraint_c3(box, part), cfg
    )


def best_part_in_box(box: BBox, parts: Sequence[SamPart], cfg: FusionConfig) -> int | None:
    best_key, best_id = None, None
    for part in parts:
        area = mask_area(part.mask)
        inside = mask_pixels_in_box(part.mask, box)
        if inside == 0:
            continue
        clipped = box.clip(part.mask.width, part.mask.height)
        c1 = constraint_c1(box, part)
        score = combine_constraints(c1, Fraction(inside, area), Fraction(inside, clipped.area), cfg)
        key = (score, -part.part_id)
        if best_key is None or key > best_key:
            best_key, best_id = key, part.part_id
    return best_id


def best_part_by_mask_iou(ref_mask: BinaryMask, parts: Sequence[SamPart]) -> int | None:
    best_key, best_id = None, None
    for part in parts:
        iou = mask_iou(ref_mask, part.mask)
        if iou == 0:
            continue
        key = (iou, -part.part_id)
        if best_key is None or key > best_key:
            best_key, best_id = key, part.part_id
    return best_id


# ---------------------------------------------------------------- matching


def match_det_to_seg(
    dets: Sequence[DetInstance], segs: Sequence[SegInstance], cfg: FusionConfig
) -> dict[int, int]:
    """Greedy one-to-one det->seg matching by box IoU within each category."""
    floor = Fraction(cfg.match_floor)
    seg_boxes = [(s, mask_tight_box(s.mask)) for s in segs if mask_area(s.mask) > 0]
    candidates = []
    for d in dets:
        for s, sbox in seg_boxes:
            if s.category is not d.category:
                continue
            iou = box_iou(d.box, sbox)
            if iou > floor:
                candidates.append((-iou, d.instance_id, s.instance_id))
    candidates.sort()
    mapping: dict[int, int] = {}
    used: set[int] = set()
    for _, det_id, seg_id in candidates:
        if det_id in mapping or seg_id in used:
            continue
        mapping[det_id] = seg_id
        used.add(seg_id)
    return mapping


def predicted_contact_point(
    box: BBox, attrs: HandAttributes | None, width: int, height: int, cfg: FusionConfig
) -> Point | None:
    """Box center pushed along the offset, scaled by the image diagonal.

    Returns None unless the hand is in contact and carries an offset.  The
    point is clamped to stay inside the image.
    """
    if attrs is None or attrs.state is not ContactState.IN_CONTACT or attrs.offset is None:
        return None
    c = box_center(box)
    reach = attrs.offset.m * cfg.offset_scale_mult * math.hypot(width, height)
    x = c.x + reach * attrs.offset.dx
    y = c.y + reach * attrs.offset.dy
    x = min(max(x, 0.0), math.nextafter(float(width), 0.0))
    y = min(max(y, 0.0), math.nextafter(float(height), 0.0))
    return Point(x, y)


# ---------------------------------------------------------------- selection


def _resolve(
    det: DetInstance,
    seg: SegInstance | None,
    parts: Sequence[SamPart],
    cfg: FusionConfig,
    contact_pt: Point | None = None,
) -> FusedInstance | None:
    attrs = seg.attrs if seg is not None else det.attrs
    by_id = {p.part_id: p for p in parts}

    def from_part(part_id, source):
        return FusedInstance(
            det.instance_id, det.category, by_id[part_id].mask, det.score, source, attrs,
            part_id=part_id,
        )

    if seg is not None:
        if box_iou(det.box, mask_tight_box(seg.mask)) > Fraction(cfg.iou_th):
            return FusedInstance(det.instance_id, det.category, seg.mask, det.score,
                                 Source.FROM_SEG, attrs)
        pid = best_part_by_mask_iou(seg.mask, parts)
        if pid is not None:
            return from_part(pid, Source.FROM_SAM_BY_IOU)
    else:
        if contact_pt is not None:
            holders = [p for p in parts if mask_contains_point(p.mask, contact_pt)]
            if holders:
                pick = min(holders, key=lambda p: (mask_area(p.mask), p.part_id))
                return from_part(pick.part_id, Source.FROM_SAM_BY_CONTACT_POINT)
        pid = best_part_in_box(det.box, parts, cfg)
        if pid is not None:
            return from_part(pid, Source.FROM_SAM_BY_SCORE)
    if seg is not None and cfg.fallback_no_part is FallbackPolicy.USE_SEG_MASK:
        return FusedInstance(det.instance_id, det.category, seg.mask, det.score,
                             Source.FROM_SEG, attrs)
    return None


def select_hand(
    det_hand: DetInstance,
    seg_match: SegInstance | None,
    parts: Sequence[SamPart],
    cfg: FusionConfig,
) -> FusedInstance | None:
    return _resolve(det_hand, seg_match, parts, cfg)


def select_object(
    det_obj: DetInstance,
    seg_match: SegInstance | None,
    parts_pool: Sequence[SamPart],
    contact_pt: Point | None,
    cfg: FusionConfig,
) -> FusedInstance | None:
    return _resolve(det_obj, seg_match, parts_pool, cfg, contact_pt)


def _hand_contact_point(hand: FusedInstance, width: int, height: int, cfg) -> Point | None:
    return predicted_contact_point(mask_tight_box(hand.mask), hand.attrs, width, height, cfg)


def link_hand_objects(
    hands: Sequence[FusedInstance],
    objects: Sequence[FusedInstance],
    width: int,
    height: int,
    cfg: FusionConfig,
) -> list[FusedInstance]:
    """Attach each in-contact hand to the object whose box center is nearest."""
    centers = [(box_center(mask_tight_box(o.mask)), o.instance_id) for o in objects]
    out = []
    for hand in hands:
        link = None
        if centers and hand.attrs is not None and hand.attrs.state is ContactState.IN_CONTACT:
            anchor = _hand_contact_point(hand, width, height, cfg)
            if anchor is None:
                anchor = box_center(mask_tight_box(hand.mask))
            _, link = min(
                ((c.x - anchor.x) ** 2 + (c.y - anchor.y) ** 2, oid) for c, oid in centers
            )
        out.append(replace(hand, linked_object=link))
    return out


def _contact_point_for(box: BBox, points: Iterable[tuple[Point, int]]) -> Point | None:
    c = box_center(box)
    inside = [
        ((p.x - c.x) ** 2 + (p.y - c.y) ** 2, hid, p)
        for p, hid in points
        if box.x1 <= p.x < box.x2 and box.y1 <= p.y < box.y2
    ]
    if not inside:
        return None
    return min(inside, key=lambda t: (t[0], t[1]))[2]


def _output_order(inst: FusedInstance):
    return (inst.category is not Category.HAND, -inst.score, inst.instance_id)


def fuse_frame(frame: FramePredictions, cfg: FusionConfig | None = None) -> list[FusedInstance]:
    cfg = cfg or FusionConfig()
    dets = [d for d in frame.det if d.score >= cfg.det_score_min]
    if not dets:
        return []
    segs = [s for s in frame.seg if s.score >= cfg.seg_score_min]
    seg_by_id = {s.instance_id: s for s in segs}
    matches = match_det_to_seg(dets, segs, cfg)
    rank = lambda d: (-d.score, d.instance_id)  # noqa: E731
    det_hands = sorted((d for d in dets if d.category is Category.HAND), key=rank)
    det_objs = sorted((d for d in dets if d.category is Category.OBJECT), key=rank)

    pool = list(frame.sam)
    hands = []
    for det in det_hands:
        seg = seg_by_id.get(matches.get(det.instance_id))
        fused = select_hand(det, seg, pool, cfg)
        if fused is None:
            continue
        if fused.part_id is not None:
            pool = [p for p in pool if p.part_id != fused.part_id]
        hands.append(fused)

    contact_points = []
    for hand in hands:
        pt = _hand_contact_point(hand, frame.width, frame.height, cfg)
        if pt is not None:
            contact_points.append((pt, hand.instance_id))

    objects = []
    for det in det_objs:
        seg = seg_by_id.get(matches.get(det.instance_id))
        pt = _contact_point_for(det.box, contact_points) if seg is None else None
        fused = select_object(det, seg, pool, pt, cfg)
        if fused is not None:
            objects.append(fused)

    hands = link_hand_objects(hands, objects, frame.width, frame.height, cfg)
    return sorted(hands + objects, key=_output_order)


def seg_passthrough(frame: FramePredictions, cfg: FusionConfig | None = None) -> list[FusedInstance]:
    """Segmentation instances as final output, linked the same way as fused ones.

    This is the segmentation-only baseline the benchmark compares against.
    """
    cfg = cfg or FusionConfig()
    segs = [s for s in frame.seg if s.score >= cfg.seg_score_min and mask_area(s.mask) > 0]
    insts = [
        FusedInstance(s.instance_id, s.category, s.mask, s.score, Source.FROM_SEG, s.attrs)
        for s in segs
    ]
    hands = [i for i in insts if i.category is Category.HAND]
    objects = [i for i in insts if i.category is Category.OBJECT]
    hands = link_hand_objects(hands, objects, frame.width, frame.height, cfg)
    return sorted(hands + objects, key=_output_order)


def source_counts(instances: Iterable[FusedInstance]) -> dict[str, int]:
    counts = {s.value: 0 for s in Source}
    for inst in instances:
        counts[inst.source.value] += 1
    return counts
