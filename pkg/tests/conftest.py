import numpy as np
import pytest

from hosfuse.datamodel import (
    Category,
    ContactState,
    DetInstance,
    HandAttributes,
    OffsetVector,
    SamPart,
    SegInstance,
    Side,
)
from hosfuse.maskops import BBox, BinaryMask, rle_encode


def grid_rect(width, height, x1, y1, x2, y2):
    g = np.zeros((height, width), dtype=bool)
    g[y1:y2, x1:x2] = True
    return g


def rect(width, height, x1, y1, x2, y2) -> BinaryMask:
    return rle_encode(grid_rect(width, height, x1, y1, x2, y2))


def hand_attrs(side="left", state="contact", offset=None):
    off = OffsetVector(*offset) if offset is not None else None
    return HandAttributes(Side(side), ContactState(state), off)


def seg(iid, category, mask, score=0.9, attrs=None):
    cat = Category(category)
    if cat is Category.HAND and attrs is None:
        attrs = hand_attrs(state="no_contact")
    return SegInstance(iid, cat, mask, score, attrs)


def det(iid, category, box, score=0.9, attrs=None):
    cat = Category(category)
    if cat is Category.HAND and attrs is None:
        attrs = hand_attrs(state="no_contact")
    return DetInstance(iid, cat, BBox(*box), score, attrs)


def part(pid, mask):
    return SamPart(pid, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
