"""Per-frame prediction bundles, ground truth and fused-output documents.

All documents are UTF-8 JSON, one per frame, listed by a plain-text manifest
of relative paths.  Parsing validates everything up front so downstream code
can assume the type invariants hold.
"""
from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from hosfuse.maskops import BBox, BinaryMask, MalformedMaskError

log = logging.getLogger(__name__)

OFFSET_NORM_TOL = 1e-3


class Category(str, enum.Enum):
    HAND = "hand"
    OBJECT = "object"


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class ContactState(str, enum.Enum):
    IN_CONTACT = "contact"
    NO_CONTACT = "no_contact"


class Source(str, enum.Enum):
    """Which branch of the mask-selection procedure produced a fused mask."""

    FROM_SEG = "from_seg"
    FROM_SAM_BY_IOU = "from_sam_by_iou"
    FROM_SAM_BY_SCORE = "from_sam_by_score"
    FROM_SAM_BY_CONTACT_POINT = "from_sam_by_contact_point"


class BundleError(Exception):
    """Base class for document errors; carries the offending ids."""

    def __init__(self, message: str, image_id: str | None = None, instance_id: Any = None):
        self.image_id = image_id
        self.instance_id = instance_id
        prefix = ""
        if image_id is not None:
            prefix += f"[{image_id}]"
        if instance_id is not None:
            prefix += f"[{instance_id}]"
        super().__init__(f"{prefix} {message}" if prefix else message)


class BundleSyntaxError(BundleError):
    pass


class SchemaError(BundleError):
    pass


class GeometryError(BundleError):
    pass


@dataclass(frozen=True)
class OffsetVector:
    """Magnitude plus unit direction, pointing from a hand to its object."""

    m: float
    dx: float
    dy: float

    def as_list(self) -> list[float]:
        return [self.m, self.dx, self.dy]


@dataclass(frozen=True)
class HandAttributes:
    side: Side
    state: ContactState
    offset: OffsetVector | None = None


@dataclass(frozen=True)
class SegInstance:
    instance_id: int
    category: Category
    mask: BinaryMask
    score: float
    attrs: HandAttributes | None = None


@dataclass(frozen=True)
class DetInstance:
    instance_id: int
    category: Category
    box: BBox
    score: float
    attrs: HandAttributes | None = None


@dataclass(frozen=True)
class SamPart:
    part_id: int
    mask: BinaryMask


@dataclass(frozen=True)
class FramePredictions:
    image_id: str
    width: int
    height: int
    seg: tuple[SegInstance, ...] = ()
    det: tuple[DetInstance, ...] = ()
    sam: tuple[SamPart, ...] = ()


@dataclass(frozen=True)
class GroundTruthInstance:
    gt_id: int
    category: Category
    mask: BinaryMask
    attrs: HandAttributes | None = None
    linked_object: int | None = None


@dataclass(frozen=True)
class GroundTruthFrame:
    image_id: str
    width: int
    height: int
    instances: tuple[GroundTruthInstance, ...] = ()


@dataclass(frozen=True)
class FusedInstance:
    instance_id: int
    category: Category
    mask: BinaryMask
    score: float
    source: Source
    attrs: HandAttributes | None = None
    linked_object: int | None = None
    part_id: int | None = None


@dataclass(frozen=True)
class FusedFrame:
    image_id: str
    width: int
    height: int
    instances: tuple[FusedInstance, ...] = ()


@dataclass(frozen=True)
class Violation:
    level: str  # "error" | "warning"
    image_id: str
    instance_id: Any
    message: str

    def __str__(self):
        return f"{self.level}: [{self.image_id}][{self.instance_id}] {self.message}"


# ---------------------------------------------------------------- parsing helpers


class _Ctx:
    """Field accessors that raise with image/instance ids attached."""

    def __init__(self, image_id: str | None = None, instance_id: Any = None):
        self.image_id = image_id
        self.instance_id = instance_id

    def fail(self, msg: str, cls=SchemaError):
        raise cls(msg, self.image_id, self.instance_id)

    def get(self, obj: dict, key: str, kind, required: bool = True):
        if not isinstance(obj, dict):
            self.fail(f"expected an object, got {type(obj).__name__}")
        if key not in obj:
            if required:
                self.fail(f"missing field '{key}'")
            return None
        value = obj[key]
        if kind is int:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif kind is float:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, kind)
        if not ok:
            self.fail(f"field '{key}' has wrong type {type(value).__name__}")
        return value

    def enum(self, obj: dict, key: str, cls, required: bool = True):
        raw = self.get(obj, key, str, required)
        if raw is None:
            return None
        try:
            return cls(raw)
        except ValueError:
            self.fail(f"unknown {key} '{raw}'")


def _load_json(text: str, what: str) -> dict:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleSyntaxError(f"{what}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{what}: top level must be an object")
    return doc


def _frame_header(doc: dict) -> tuple[str, int, int]:
    ctx = _Ctx()
    image_id = ctx.get(doc, "image_id", str)
    ctx.image_id = image_id
    width = ctx.get(doc, "width", int)
    height = ctx.get(doc, "height", int)
    if width < 1 or height < 1:
        ctx.fail(f"frame dimensions must be >= 1, got {width}x{height}", GeometryError)
    return image_id, width, height


def _parse_id(ctx: _Ctx, entry: dict) -> int:
    value = ctx.get(entry, "id", int)
    ctx.instance_id = value
    return value


def _parse_rle(ctx: _Ctx, entry: dict, width: int, height: int) -> BinaryMask:
    rle = ctx.get(entry, "rle", dict)
    counts = ctx.get(rle, "counts", list)
    if not all(isinstance(c, int) and not isinstance(c, bool) for c in counts):
        ctx.fail("rle counts must be integers")
    try:
        return BinaryMask(width, height, tuple(counts))
    except MalformedMaskError as exc:
        ctx.fail(str(exc), GeometryError)


def _parse_score(ctx: _Ctx, entry: dict) -> float:
    score = float(ctx.get(entry, "score", float))
    if not (0.0 <= score <= 1.0):
        ctx.fail(f"score {score} outside [0, 1]")
    return score


def _parse_offset(ctx: _Ctx, entry: dict) -> OffsetVector | None:
    raw = ctx.get(entry, "offset", list, required=False)
    if raw is None:
        return None
    if len(raw) != 3 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        ctx.fail("offset must be [m, dx, dy]")
    m, dx, dy = (float(v) for v in raw)
    if not all(math.isfinite(v) for v in (m, dx, dy)):
        ctx.fail("offset has non-finite components")
    if m < 0:
        ctx.fail(f"offset magnitude {m} is negative")
    norm = math.hypot(dx, dy)
    if abs(norm - 1.0) > OFFSET_NORM_TOL:
        ctx.fail(f"offset direction has norm {norm:.6f}, expected 1")
    return OffsetVector(m, dx, dy)


def _parse_attrs(ctx: _Ctx, entry: dict, category: Category) -> HandAttributes | None:
    present = [k for k in ("side", "state", "offset") if k in entry]
    if category is Category.OBJECT:
        if present:
            ctx.fail(f"object instance carries hand attributes {present}")
        return None
    side = ctx.enum(entry, "side", Side)
    state = ctx.enum(entry, "state", ContactState)
    offset = _parse_offset(ctx, entry)
    if offset is not None and state is ContactState.NO_CONTACT:
        log.warning("[%s][%s] offset on a no-contact hand", ctx.image_id, ctx.instance_id)
    return HandAttributes(side, state, offset)


def _parse_box(ctx: _Ctx, entry: dict, width: int, height: int) -> BBox:
    raw = ctx.get(entry, "box", list)
    if len(raw) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
        for v in raw
    ):
        ctx.fail("box must be four finite numbers [x1, y1, x2, y2]")
    try:
        box = BBox.outward(*raw)
    except ValueError as exc:
        ctx.fail(str(exc), GeometryError)
    if not box.fits(width, height):
        ctx.fail(f"box {box.as_list()} outside {width}x{height} frame", GeometryError)
    return box


def _raise_errors(violations: list[Violation]) -> None:
    for v in violations:
        if v.level == "error":
            raise SchemaError(v.message, v.image_id, v.instance_id)


# ---------------------------------------------------------------- prediction bundles


def parse_frame_bundle(text: str) -> FramePredictions:
    doc = _load_json(text, "frame bundle")
    image_id, width, height = _frame_header(doc)
    top = _Ctx(image_id)
    seg, det, sam = [], [], []
    for entry in top.get(doc, "seg", list):
        ctx = _Ctx(image_id)
        iid = _parse_id(ctx, entry)
        category = ctx.enum(entry, "category", Category)
        mask = _parse_rle(ctx, entry, width, height)
        seg.append(
            SegInstance(iid, category, mask, _parse_score(ctx, entry), _parse_attrs(ctx, entry, category))
        )
    for entry in top.get(doc, "det", list):
        ctx = _Ctx(image_id)
        iid = _parse_id(ctx, entry)
        category = ctx.enum(entry, "category", Category)
        box = _parse_box(ctx, entry, width, height)
        det.append(
            DetInstance(iid, category, box, _parse_score(ctx, entry), _parse_attrs(ctx, entry, category))
        )
    for entry in top.get(doc, "sam", list):
        ctx = _Ctx(image_id)
        pid = _parse_id(ctx, entry)
        sam.append(SamPart(pid, _parse_rle(ctx, entry, width, height)))
    frame = FramePredictions(image_id, width, height, tuple(seg), tuple(det), tuple(sam))
    _raise_errors(validate_frame(frame))
    return frame


def _attrs_violations(image_id, iid, category, attrs) -> list[Violation]:
    out = []
    if category is Category.OBJECT and attrs is not None:
        out.append(Violation("error", image_id, iid, "object instance carries hand attributes"))
    if category is Category.HAND:
        if attrs is None:
            out.append(Violation("error", image_id, iid, "hand instance lacks attributes"))
        elif attrs.offset is not None:
            off = attrs.offset
            if off.m < 0 or abs(math.hypot(off.dx, off.dy) - 1.0) > OFFSET_NORM_TOL:
                out.append(Violation("error", image_id, iid, "offset not (m >= 0, unit direction)"))
            if attrs.state is ContactState.NO_CONTACT:
                out.append(Violation("warning", image_id, iid, "offset on a no-contact hand"))
    return out


def _dims_ok(mask: BinaryMask, frame) -> bool:
    return mask.width == frame.width and mask.height == frame.height


def validate_frame(frame: FramePredictions) -> list[Violation]:
    """Check every type invariant; violations are returned, never raised."""
    out: list[Violation] = []
    img = frame.image_id
    for source, items, key in (
        ("seg", frame.seg, "instance_id"),
        ("det", frame.det, "instance_id"),
        ("sam", frame.sam, "part_id"),
    ):
        seen = set()
        for item in items:
            iid = getattr(item, key)
            if iid in seen:
                out.append(Violation("error", img, iid, f"duplicate {source} id"))
            seen.add(iid)
    for inst in frame.seg:
        if not _dims_ok(inst.mask, frame):
            out.append(Violation("error", img, inst.instance_id, "mask dimensions differ from frame"))
        if not 0.0 <= inst.score <= 1.0:
            out.append(Violation("error", img, inst.instance_id, "score outside [0, 1]"))
        out.extend(_attrs_violations(img, inst.instance_id, inst.category, inst.attrs))
    for inst in frame.det:
        if not inst.box.fits(frame.width, frame.height):
            out.append(Violation("error", img, inst.instance_id, "box outside frame"))
        if not 0.0 <= inst.score <= 1.0:
            out.append(Violation("error", img, inst.instance_id, "score outside [0, 1]"))
        out.extend(_attrs_violations(img, inst.instance_id, inst.category, inst.attrs))
    for part in frame.sam:
        if not _dims_ok(part.mask, frame):
            out.append(Violation("error", img, part.part_id, "mask dimensions differ from frame"))
        elif part.mask.runs == (frame.width * frame.height,):
            out.append(Violation("error", img, part.part_id, "empty SAM part"))
    return out


def _attrs_doc(attrs: HandAttributes | None) -> dict:
    if attrs is None:
        return {}
    doc: dict = {"side": attrs.side.value, "state": attrs.state.value}
    if attrs.offset is not None:
        doc["offset"] = attrs.offset.as_list()
    return doc


def _rle_doc(mask: BinaryMask) -> dict:
    return {"counts": list(mask.runs)}


def serialize_frame_bundle(frame: FramePredictions) -> str:
    doc = {
        "image_id": frame.image_id,
        "width": frame.width,
        "height": frame.height,
        "seg": [
            {"id": s.instance_id, "category": s.category.value, "score": s.score,
             "rle": _rle_doc(s.mask), **_attrs_doc(s.attrs)}
            for s in frame.seg
        ],
        "det": [
            {"id": d.instance_id, "category": d.category.value, "score": d.score,
             "box": d.box.as_list(), **_attrs_doc(d.attrs)}
            for d in frame.det
        ],
        "sam": [{"id": p.part_id, "rle": _rle_doc(p.mask)} for p in frame.sam],
    }
    return _dump(doc)


def _dump(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------- ground truth


def parse_ground_truth(text: str) -> GroundTruthFrame:
    doc = _load_json(text, "ground truth")
    image_id, width, height = _frame_header(doc)
    instances = []
    for entry in _Ctx(image_id).get(doc, "instances", list):
        ctx = _Ctx(image_id)
        gid = _parse_id(ctx, entry)
        category = ctx.enum(entry, "category", Category)
        mask = _parse_rle(ctx, entry, width, height)
        attrs = _parse_attrs(ctx, entry, category)
        link = ctx.get(entry, "linked_object", int, required=False)
        instances.append(GroundTruthInstance(gid, category, mask, attrs, link))
    frame = GroundTruthFrame(image_id, width, height, tuple(instances))
    _raise_errors(validate_ground_truth(frame))
    return frame


def validate_ground_truth(frame: GroundTruthFrame) -> list[Violation]:
    out: list[Violation] = []
    img = frame.image_id
    by_id: dict[int, GroundTruthInstance] = {}
    for inst in frame.instances:
        if inst.gt_id in by_id:
            out.append(Violation("error", img, inst.gt_id, "duplicate ground-truth id"))
        by_id[inst.gt_id] = inst
        if not _dims_ok(inst.mask, frame):
            out.append(Violation("error", img, inst.gt_id, "mask dimensions differ from frame"))
        out.extend(_attrs_violations(img, inst.gt_id, inst.category, inst.attrs))
    for inst in frame.instances:
        if inst.linked_object is None:
            continue
        target = by_id.get(inst.linked_object)
        if inst.category is not Category.HAND:
            out.append(Violation("error", img, inst.gt_id, "only hands may link to objects"))
        elif target is None:
            out.append(Violation("error", img, inst.gt_id, f"dangling link to {inst.linked_object}"))
        elif target.category is not Category.OBJECT:
            out.append(Violation("error", img, inst.gt_id, "link target is not an object"))
        elif inst.attrs is not None and inst.attrs.state is ContactState.NO_CONTACT:
            out.append(Violation("error", img, inst.gt_id, "no-contact hand has a linked object"))
    return out


def serialize_ground_truth(frame: GroundTruthFrame) -> str:
    instances = []
    for inst in frame.instances:
        doc = {"id": inst.gt_id, "category": inst.category.value, "rle": _rle_doc(inst.mask),
               **_attrs_doc(inst.attrs)}
        if inst.linked_object is not None:
            doc["linked_object"] = inst.linked_object
        instances.append(doc)
    return _dump({"image_id": frame.image_id, "width": frame.width, "height": frame.height,
                  "instances": instances})


# ---------------------------------------------------------------- fused output


def serialize_fused(instances, image_id: str, width: int, height: int) -> str:
    out = []
    for inst in instances:
        doc = {"id": inst.instance_id, "category": inst.category.value, "score": inst.score,
               "source": inst.source.value, "rle": _rle_doc(inst.mask), **_attrs_doc(inst.attrs)}
        if inst.linked_object is not None:
            doc["linked_object"] = inst.linked_object
        if inst.part_id is not None:
            doc["part_id"] = inst.part_id
        out.append(doc)
    return _dump({"image_id": image_id, "width": width, "height": height, "instances": out})


def parse_fused(text: str) -> FusedFrame:
    doc = _load_json(text, "fused frame")
    image_id, width, height = _frame_header(doc)
    instances = []
    for entry in _Ctx(image_id).get(doc, "instances", list):
        ctx = _Ctx(image_id)
        iid = _parse_id(ctx, entry)
        category = ctx.enum(entry, "category", Category)
        mask = _parse_rle(ctx, entry, width, height)
        score = _parse_score(ctx, entry)
        source = ctx.enum(entry, "source", Source)
        attrs = _parse_attrs(ctx, entry, category)
        link = ctx.get(entry, "linked_object", int, required=False)
        part_id = ctx.get(entry, "part_id", int, required=False)
        instances.append(FusedInstance(iid, category, mask, score, source, attrs, link, part_id))
    ids = {i.instance_id: i for i in instances}
    if len(ids) != len(instances):
        raise SchemaError("duplicate fused instance id", image_id)
    for inst in instances:
        if inst.linked_object is not None:
            target = ids.get(inst.linked_object)
            if target is None or target.category is not Category.OBJECT:
                raise SchemaError(f"dangling link to {inst.linked_object}", image_id, inst.instance_id)
    return FusedFrame(image_id, width, height, tuple(instances))


# ---------------------------------------------------------------- manifests


def read_manifest(path: Path) -> list[Path]:
    """Paths listed in a manifest, resolved against the manifest's directory."""
    path = Path(path)
    root = path.parent
    lines = path.read_text(encoding="utf-8").splitlines()
    return [root / line.strip() for line in lines if line.strip()]


def write_manifest(path: Path, entries: list[str]) -> None:
    Path(path).write_text("".join(f"{e}\n" for e in entries), encoding="utf-8")
