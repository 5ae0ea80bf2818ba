"""Synthetic scenes with known answers, per-pixel constraint oracles, and the
seg-only vs fused benchmark.

Every random draw comes from a generator keyed by ``(seed, frame, stream,
entity)``, so any frame can be produced alone, in any order, in any process.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from hosfuse.datamodel import (
    Category,
    ContactState,
    DetInstance,
    FramePredictions,
    FusedFrame,
    GroundTruthFrame,
    GroundTruthInstance,
    HandAttributes,
    OffsetVector,
    SamPart,
    SegInstance,
    Side,
)
from hosfuse.evaluation import EvalReport, evaluate
from hosfuse.fusion import FusionConfig, fuse_frame, seg_passthrough
from hosfuse.maskops import BBox, BinaryMask, mask_tight_box, rle_decode, rle_encode

# rng streams
_LAYOUT, _SEG, _DET, _SAM = 0, 1, 2, 3
_MAX_TRIES = 500
_GAP = 2


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    width: int = 640
    height: int = 480
    hands_min: int = 1
    hands_max: int = 2
    contact_prob: float = 0.7
    seg_drop_prob_hand: float = 0.0
    seg_drop_prob_obj: float = 0.0
    det_jitter_px: int = 0
    sam_split_parts: int = 1
    sam_extra_parts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.width < 32 or self.height < 32:
            raise SynthError("frame must be at least 32x32")
        for name in ("contact_prob", "seg_drop_prob_hand", "seg_drop_prob_obj"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthError(f"{name} must lie in [0, 1]")
        for name in ("hands_min", "hands_max", "det_jitter_px", "sam_extra_parts", "seed"):
            if getattr(self, name) < 0:
                raise SynthError(f"{name} must be >= 0")
        if self.sam_split_parts < 1:
            raise SynthError("sam_split_parts must be >= 1")
        if self.hands_min > self.hands_max:
            raise SynthError("hands_min exceeds hands_max")

    @classmethod
    def from_dict(cls, doc: dict) -> SynthParams:
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known)
        if unknown:
            raise SynthError(f"unknown synth parameters: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> SynthParams:
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(params: SynthParams, index: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([params.seed, index, *keys])


def _notched_mask(width: int, height: int, box: BBox, corner: int) -> BinaryMask:
    """Filled rectangle with one corner cut out (a quarter of each side)."""
    grid = np.zeros((height, width), dtype=bool)
    grid[box.y1 : box.y2, box.x1 : box.x2] = True
    nw, nh = (box.x2 - box.x1) // 4, (box.y2 - box.y1) // 4
    if nw and nh:
        xs = slice(box.x1, box.x1 + nw) if corner in (0, 3) else slice(box.x2 - nw, box.x2)
        ys = slice(box.y1, box.y1 + nh) if corner in (0, 1) else slice(box.y2 - nh, box.y2)
        grid[ys, xs] = False
    return rle_encode(grid)


def _overlaps(a: BBox, b: BBox, gap: int) -> bool:
    return not (
        a.x2 + gap <= b.x1 or b.x2 + gap <= a.x1 or a.y2 + gap <= b.y1 or b.y2 + gap <= a.y1
    )


def _sizes(rng, params: SynthParams, lo: float, hi: float) -> tuple[int, int]:
    w = max(4, int(rng.uniform(lo, hi) * params.width))
    h = max(4, int(rng.uniform(lo, hi) * params.height))
    return w, h


def _place_pair(rng, params: SynthParams, occupied: list[BBox], contact: bool):
    W, H = params.width, params.height
    for _ in range(_MAX_TRIES):
        hw, hh = _sizes(rng, params, 0.10, 0.18)
        if hw >= W or hh >= H:
            continue
        hx, hy = int(rng.integers(0, W - hw + 1)), int(rng.integers(0, H - hh + 1))
        hand = BBox(hx, hy, hx + hw, hy + hh)
        obj = None
        if contact:
            ow, oh = _sizes(rng, params, 0.06, 0.14)
            side = int(rng.integers(0, 4))
            if side in (0, 1):  # left / right of the hand, vertically overlapping
                ox = hx - ow if side == 0 else hx + hw
                oy = hy + int(rng.integers(-(oh - 1), hh))
            else:  # above / below
                oy = hy - oh if side == 2 else hy + hh
                ox = hx + int(rng.integers(-(ow - 1), hw))
            if ox < 0 or oy < 0 or ox + ow > W or oy + oh > H:
                continue
            obj = BBox(ox, oy, ox + ow, oy + oh)
        new = [hand] + ([obj] if obj else [])
        if any(_overlaps(n, o, _GAP) for n in new for o in occupied):
            continue
        return hand, obj
    raise SynthError("could not place a hand/object pair; frame too small or too crowded")


def _offset_between(hand: BBox, obj: BBox, width: int, height: int) -> OffsetVector:
    hx, hy = (hand.x1 + hand.x2) / 2, (hand.y1 + hand.y2) / 2
    ox, oy = (obj.x1 + obj.x2) / 2, (obj.y1 + obj.y2) / 2
    vx, vy = ox - hx, oy - hy
    dist = math.hypot(vx, vy)
    return OffsetVector(dist / math.hypot(width, height), vx / dist, vy / dist)


def _ground_truth(params: SynthParams, index: int) -> GroundTruthFrame:
    W, H = params.width, params.height
    rng = _rng(params, index, _LAYOUT)
    n_hands = int(rng.integers(params.hands_min, params.hands_max + 1))
    occupied: list[BBox] = []
    instances: list[GroundTruthInstance] = []
    next_id = 0
    for _ in range(n_hands):
        contact = bool(rng.random() < params.contact_prob)
        hand_box, obj_box = _place_pair(rng, params, occupied, contact)
        side = Side.LEFT if rng.random() < 0.5 else Side.RIGHT
        hand_id = next_id
        obj_id = next_id + 1 if obj_box else None
        next_id += 2 if obj_box else 1
        offset = _offset_between(hand_box, obj_box, W, H) if obj_box else None
        state = ContactState.IN_CONTACT if obj_box else ContactState.NO_CONTACT
        instances.append(
            GroundTruthInstance(
                hand_id, Category.HAND, _notched_mask(W, H, hand_box, int(rng.integers(0, 4))),
                HandAttributes(side, state, offset), obj_id,
            )
        )
        occupied.append(hand_box)
        if obj_box:
            instances.append(
                GroundTruthInstance(
                    obj_id, Category.OBJECT, _notched_mask(W, H, obj_box, int(rng.integers(0, 4)))
                )
            )
            occupied.append(obj_box)
    return GroundTruthFrame(f"synth_{index:06d}", W, H, tuple(instances))


def _jitter_box(rng, box: BBox, j: int, width: int, height: int) -> BBox:
    if j == 0:
        return box
    d = rng.integers(-j, j + 1, size=4)
    x1 = min(max(box.x1 + int(d[0]), 0), width - 1)
    y1 = min(max(box.y1 + int(d[1]), 0), height - 1)
    x2 = min(max(box.x2 + int(d[2]), x1 + 1), width)
    y2 = min(max(box.y2 + int(d[3]), y1 + 1), height)
    return BBox(x1, y1, x2, y2)


def _vertical_slices(mask: BinaryMask, n: int) -> list[BinaryMask]:
    box = mask_tight_box(mask)
    grid = rle_decode(mask)
    span = box.x2 - box.x1
    cuts = sorted({box.x1 + round(k * span / n) for k in range(n + 1)})
    out = []
    for a, b in zip(cuts, cuts[1:]):
        piece = np.zeros_like(grid)
        piece[:, a:b] = grid[:, a:b]
        if piece.any():
            out.append(rle_encode(piece))
    return out


def generate_frame(params: SynthParams, index: int) -> tuple[GroundTruthFrame, FramePredictions]:
    gt = _ground_truth(params, index)
    W, H = params.width, params.height
    seg, det, sam = [], [], []
    for inst in gt.instances:
        srng = _rng(params, index, _SEG, inst.gt_id)
        drop_p = params.seg_drop_prob_hand if inst.category is Category.HAND else params.seg_drop_prob_obj
        dropped = bool(srng.random() < drop_p)
        seg_score = round(float(srng.uniform(0.7, 1.0)), 6)
        if not dropped:
            seg.append(SegInstance(inst.gt_id, inst.category, inst.mask, seg_score, inst.attrs))
        drng = _rng(params, index, _DET, inst.gt_id)
        box = _jitter_box(drng, mask_tight_box(inst.mask), params.det_jitter_px, W, H)
        det_score = round(float(drng.uniform(0.7, 1.0)), 6)
        det.append(DetInstance(inst.gt_id, inst.category, box, det_score, inst.attrs))
        for piece in _vertical_slices(inst.mask, params.sam_split_parts):
            sam.append(SamPart(len(sam), piece))

    occupied = [mask_tight_box(i.mask) for i in gt.instances]
    prng = _rng(params, index, _SAM)
    for _ in range(params.sam_extra_parts):
        for _ in range(_MAX_TRIES):
            w, h = _sizes(prng, params, 0.05, 0.15)
            x, y = int(prng.integers(0, W - w + 1)), int(prng.integers(0, H - h + 1))
            box = BBox(x, y, x + w, y + h)
            if not any(_overlaps(box, o, 1) for o in occupied):
                break
        else:
            raise SynthError("could not place a background part")
        occupied.append(box)
        sam.append(SamPart(len(sam), BinaryMask.from_box(W, H, box)))
    preds = FramePredictions(gt.image_id, W, H, tuple(seg), tuple(det), tuple(sam))
    return gt, preds


# ---------------------------------------------------------------- oracle


def brute_constraints(box: BBox, part_grid: np.ndarray) -> tuple[int, Fraction, Fraction]:
    """C1, C2, C3 by walking every pixel of a dense grid; shares no fusion code."""
    rows = np.asarray(part_grid, dtype=bool).tolist()  # plain lists walk faster than ndarray indexing
    height, width = len(rows), len(rows[0])
    cx2, cy2 = box.x1 + box.x2, box.y1 + box.y2  # twice the center
    part_total = 0
    in_box = 0
    box_pixels = 0
    c1 = 0
    for y in range(height):
        for x in range(width):
            on = rows[y][x]
            inside = box.x1 <= x < box.x2 and box.y1 <= y < box.y2
            part_total += on
            box_pixels += inside
            in_box += on and inside
            # pixel x covers [x, x+1); the center lies in it iff 2x <= cx2 < 2x + 2
            if on and 2 * x <= cx2 < 2 * x + 2 and 2 * y <= cy2 < 2 * y + 2:
                c1 = 1
    c2 = Fraction(in_box, part_total) if part_total else Fraction(0)
    c3 = Fraction(in_box, box_pixels) if box_pixels else Fraction(0)
    return c1, c2, c3


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchmarkRecord:
    seg_only: EvalReport
    fused: EvalReport
    wall_time_s: float
    n_frames: int

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames,
            "wall_time_s": self.wall_time_s,
            "seg_only": self.seg_only.to_dict(),
            "fused": self.fused.to_dict(),
        }


def _as_fused_frame(frame: FramePredictions, instances) -> FusedFrame:
    return FusedFrame(frame.image_id, frame.width, frame.height, tuple(instances))


def run_benchmark(
    params: SynthParams, n_frames: int, cfg: FusionConfig | None = None,
    frames: Sequence[tuple[GroundTruthFrame, FramePredictions]] | None = None,
) -> BenchmarkRecord:
    cfg = cfg or FusionConfig()
    if frames is None:
        frames = [generate_frame(params, i) for i in range(n_frames)]
    gts = [g for g, _ in frames]
    start = time.perf_counter()
    baseline = [_as_fused_frame(p, seg_passthrough(p, cfg)) for _, p in frames]
    fused = [_as_fused_frame(p, fuse_frame(p, cfg)) for _, p in frames]
    seg_report = evaluate(baseline, gts)
    fused_report = evaluate(fused, gts)
    elapsed = time.perf_counter() - start
    return BenchmarkRecord(seg_report, fused_report, elapsed, len(frames))
