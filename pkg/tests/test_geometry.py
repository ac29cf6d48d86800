import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangebev.errors import InvalidBoxError
from rangebev.geometry import (
    RotatedBox,
    box_corners,
    canonicalize,
    is_canonical,
    nms_rotated,
    polygon_area,
    rotated_iou,
)
from rangebev.oracles import monte_carlo_iou

# 1e6-sample stratified Monte-Carlo estimate for two 2x2 squares at 0 and 45 degrees
MC_SQUARE_45 = 0.70711


def boxes(min_dim=0.5, max_dim=10.0, span=20.0):
    dim = st.floats(min_dim, max_dim)
    return st.builds(
        RotatedBox,
        cx=st.floats(-span, span),
        cy=st.floats(-span, span),
        w=dim,
        h=dim,
        theta=st.floats(-720, 720),
    )


def same_vertex_set(poly, expected, tol=1e-9):
    got = list(poly.vertices)
    for ex in expected:
        assert any(math.dist(ex, g) < tol for g in got), (ex, got)


class TestCanonicalize:
    def test_swaps_dimensions(self):
        out = canonicalize(RotatedBox(0, 0, 2.0, 4.5, 30.0))
        assert (out.w, out.h) == (4.5, 2.0)
        assert out.theta == pytest.approx(-60.0)

    def test_already_canonical_unchanged(self):
        box = RotatedBox(1, 2, 4.5, 2.0, 10.0)
        assert canonicalize(box) == box

    def test_square_only_wraps_angle(self):
        out = canonicalize(RotatedBox(0, 0, 3.0, 3.0, 95.0))
        assert (out.w, out.h) == (3.0, 3.0)
        assert out.theta == pytest.approx(-85.0)

    @pytest.mark.parametrize("theta", [90.0, -90.0, 270.0, -450.0, 89.999999])
    def test_range(self, theta):
        out = canonicalize(RotatedBox(0, 0, 1, 2, theta))
        assert is_canonical(out)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(w=0.0, h=1.0), dict(w=1.0, h=-2.0), dict(w=1.0, h=1.0, theta=math.nan), dict(w=math.inf, h=1.0)],
    )
    def test_invalid(self, kwargs):
        kwargs.setdefault("theta", 0.0)
        with pytest.raises(InvalidBoxError):
            RotatedBox(0, 0, **kwargs)

    @given(boxes())
    def test_idempotent(self, box):
        once = canonicalize(box)
        assert canonicalize(once) == once
        assert is_canonical(once)

    @given(boxes())
    def test_same_rectangle(self, box):
        assert rotated_iou(box, canonicalize(box)) == pytest.approx(1.0, abs=1e-9)


class TestCorners:
    def test_axis_aligned(self):
        same_vertex_set(box_corners(RotatedBox(0, 0, 4, 2, 0)), [(2, 1), (-2, 1), (-2, -1), (2, -1)])

    def test_quarter_turn(self):
        same_vertex_set(box_corners(RotatedBox(0, 0, 4, 2, 90)), [(1, -2), (1, 2), (-1, 2), (-1, -2)])

    def test_diamond(self):
        r = math.sqrt(2)
        same_vertex_set(box_corners(RotatedBox(5, 5, 2, 2, 45)), [(5 + r, 5), (5, 5 + r), (5 - r, 5), (5, 5 - r)])

    @given(boxes())
    def test_ccw_and_centered(self, box):
        poly = box_corners(box)
        assert len(poly) == 4
        assert polygon_area(poly.vertices) == pytest.approx(box.w * box.h, rel=1e-9)
        cx, cy = poly.centroid
        assert abs(cx - box.cx) < 1e-9 and abs(cy - box.cy) < 1e-9


class TestRotatedIou:
    def test_identical(self):
        box = RotatedBox(3, -1, 4.5, 2.0, 17.0)
        assert rotated_iou(box, box) == pytest.approx(1.0, abs=1e-9)

    def test_cross(self):
        assert rotated_iou(RotatedBox(0, 0, 4, 2, 0), RotatedBox(0, 0, 4, 2, 90)) == pytest.approx(1 / 3, abs=1e-9)

    def test_square_45_matches_oracle(self):
        got = rotated_iou(RotatedBox(0, 0, 2, 2, 0), RotatedBox(0, 0, 2, 2, 45))
        assert got == pytest.approx(MC_SQUARE_45, abs=0.01)

    def test_disjoint(self):
        assert rotated_iou(RotatedBox(0, 0, 2, 2, 0), RotatedBox(10, 0, 2, 2, 30)) == 0.0

    def test_edge_contact_is_zero(self):
        assert rotated_iou(RotatedBox(0, 0, 2, 2, 0), RotatedBox(2, 0, 2, 2, 0)) == 0.0
        assert rotated_iou(RotatedBox(0, 0, 2, 2, 0), RotatedBox(2, 2, 2, 2, 0)) == 0.0

    def test_contained(self):
        assert rotated_iou(RotatedBox(0, 0, 4, 4, 0), RotatedBox(0, 0, 2, 2, 33)) == pytest.approx(0.25)

    @given(boxes(), boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = rotated_iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(rotated_iou(b, a), abs=1e-12)

    @given(boxes(), boxes())
    def test_canonical_invariance(self, a, b):
        assert abs(rotated_iou(canonicalize(a), b) - rotated_iou(a, b)) <= 1e-12

    @given(boxes(), boxes(), st.floats(-50, 50), st.floats(-50, 50), st.floats(-180, 180))
    def test_rigid_transform_invariance(self, a, b, tx, ty, rot):
        def move(box):
            t = math.radians(rot)
            x = box.cx * math.cos(t) - box.cy * math.sin(t) + tx
            y = box.cx * math.sin(t) + box.cy * math.cos(t) + ty
            return RotatedBox(x, y, box.w, box.h, box.theta + rot)

        assert abs(rotated_iou(move(a), move(b)) - rotated_iou(a, b)) <= 1e-9

    def test_random_pairs_against_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a = RotatedBox(*rng.uniform(-3, 3, 2), *rng.uniform(0.5, 10, 2), rng.uniform(-180, 180))
            b = RotatedBox(*rng.uniform(-3, 3, 2), *rng.uniform(0.5, 10, 2), rng.uniform(-180, 180))
            assert abs(rotated_iou(a, b) - monte_carlo_iou(a, b, rng=rng)) <= 0.01


class TestNms:
    def test_single(self):
        box = RotatedBox(0, 0, 4, 2, 0, confidence=0.5)
        assert nms_rotated([box], 0.5) == [box]

    def test_duplicates(self):
        hi = RotatedBox(0, 0, 4, 2, 0, confidence=0.9)
        lo = RotatedBox(0, 0, 4, 2, 0, confidence=0.8)
        assert nms_rotated([lo, hi], 0.5) == [hi]

    def test_disjoint_kept_sorted(self):
        a = RotatedBox(0, 0, 4, 2, 0, confidence=0.3)
        b = RotatedBox(20, 0, 4, 2, 0, confidence=0.7)
        assert nms_rotated([a, b], 0.5) == [b, a]

    def test_tie_prefers_earlier(self):
        a = RotatedBox(0, 0, 4, 2, 0, confidence=0.5)
        b = RotatedBox(0.1, 0, 4, 2, 0, confidence=0.5)
        assert nms_rotated([a, b], 0.5) == [a]
        assert nms_rotated([b, a], 0.5) == [b]

    @settings(max_examples=50)
    @given(st.lists(st.tuples(boxes(span=5.0), st.floats(0, 1)), max_size=12), st.floats(0.05, 0.95))
    def test_properties(self, items, thr):
        dets = [b.with_confidence(c) for b, c in items]
        kept = nms_rotated(dets, thr)
        assert all(k in dets for k in kept)
        confs = [k.confidence for k in kept]
        assert confs == sorted(confs, reverse=True)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert rotated_iou(kept[i], kept[j]) <= thr
        if len(set(c for _, c in items)) == len(items):
            assert nms_rotated(list(reversed(dets)), thr) == kept
