"""Hand / in-contact-object mask fusion and five-scheme mask AP evaluation."""
from hosfuse.datamodel import (
    Category,
    ContactState,
    DetInstance,
    FramePredictions,
    FusedFrame,
    FusedInstance,
    GroundTruthFrame,
    GroundTruthInstance,
    HandAttributes,
    OffsetVector,
    SamPart,
    SegInstance,
    Side,
    Source,
)
from hosfuse.evaluation import EvalReport, EvalScheme, SchemeResult, evaluate, render_report
from hosfuse.fusion import FusionConfig, fuse_frame
from hosfuse.maskops import BBox, BinaryMask, Point, rle_decode, rle_encode

__version__ = "0.1.0"

__all__ = [
    "BBox", "BinaryMask", "Category", "ContactState", "DetInstance", "EvalReport", "EvalScheme",
    "FramePredictions", "FusedFrame", "FusedInstance", "FusionConfig", "GroundTruthFrame",
    "GroundTruthInstance", "HandAttributes", "OffsetVector", "Point", "SamPart", "SchemeResult",
    "SegInstance", "Side", "Source", "evaluate", "fuse_frame", "render_report", "rle_decode",
    "rle_encode",
]
