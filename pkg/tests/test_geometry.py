import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rwre.geometry import (
    BoxFamily,
    GeometryError,
    Label,
    ScaleSchedule,
    assign_box,
    axis_frame,
    build_frame,
    classify_point,
    color_classes,
    cover_check,
    make_parallelogram,
    make_slab,
    regions_intersect,
    rectangle_region,
    scale,
    slab_classify,
)


def family(N0=12, d=2, overrides=None, l=None):
    frame = build_frame(l, d) if l is not None else axis_frame(d)
    return BoxFamily.create(ScaleSchedule(N0), frame, overrides)


class TestFrames:
    def test_axis_direction_is_identity(self):
        f = build_frame([1.0, 0.0])
        assert np.allclose(f.matrix, np.eye(2))

    def test_diagonal_completion(self):
        f = build_frame([1 / math.sqrt(2), 1 / math.sqrt(2)])
        # first nonzero coordinate positive
        assert np.allclose(f.matrix[1], [1 / math.sqrt(2), -1 / math.sqrt(2)])

    def test_e3_completion_skips_used_axis(self):
        f = build_frame([0.0, 0.0, 1.0])
        assert np.allclose(f.matrix, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])

    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1))
    @settings(max_examples=50, deadline=None)
    def test_frames_are_orthonormal(self, v):
        v = np.asarray(v) / np.linalg.norm(v)
        f = build_frame(v)
        assert np.allclose(f.matrix @ f.matrix.T, np.eye(3), atol=1e-12)
        assert np.allclose(f.l, v)

    def test_non_unit_vector_rejected(self):
        with pytest.raises(GeometryError):
            build_frame([2.0, 0.0])


class TestScales:
    def test_values(self):
        s = ScaleSchedule(12)
        assert scale(s, -1) == 8
        assert scale(s, 0) == 12
        assert scale(s, 1) == 5184
        assert scale(s, 2) == 2_628_288

    @given(st.integers(1, 100), st.integers(0, 4))
    def test_recursion_matches_big_integer_evaluation(self, m, k):
        N0 = 6 * m
        n = N0
        for j in range(k):
            n = 3 * (N0 + j) ** 2 * n
        assert scale(ScaleSchedule(N0), k) == n

    def test_big_integers_do_not_overflow(self):
        assert scale(ScaleSchedule(12), 8) > 2**64

    def test_N0_must_be_multiple_of_six(self):
        with pytest.raises(GeometryError):
            ScaleSchedule(10)


class TestBoxes:
    def test_classification_examples(self):
        box = family().box((0, 0), 0)
        assert classify_point(box, (4, 0)) is Label.MIDDLE_FRONTAL
        assert classify_point(box, (3, 0)) is Label.INTERIOR
        assert classify_point(box, (12, 5)) is Label.FRONT
        assert classify_point(box, (-6, 0)) is Label.BACK
        assert classify_point(box, (0, 43200)) is Label.SIDE
        assert classify_point(box, (40, 0)) is Label.OUTSIDE

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_boundary_tripartition_exhaustive(self, d):
        fam = family(12, d, {0: (3, 2)})
        region = fam.box((0,) * d, 0).region
        lo, hi = region.bounding_box()
        pts = np.array(list(itertools.product(*[range(a - 1, b + 2) for a, b in zip(lo, hi)])))
        inside = region.contains(pts)
        steps = np.vstack([np.eye(d, dtype=int), -np.eye(d, dtype=int)])
        boundary = np.array([not inside[i] and region.contains(p + steps).any() for i, p in enumerate(pts)])
        assert np.array_equal(boundary, region.on_boundary(pts))
        labels = region.boundary_labels(pts[boundary])
        parts = {Label.FRONT.value, Label.BACK.value, Label.SIDE.value}
        assert set(labels) <= parts

    def test_assign_box_examples(self):
        fam = family()
        assert fam.covering_anchors((5, 0), 0) == [(-6, 0), (0, 0)]
        assert assign_box((5, 0), 0, fam) == (-6, 0)
        assert assign_box((4, 0), 0, fam) == (-6, 0)
        assert assign_box((11, 1727), 0, fam) == (0, 0)

    @given(st.integers(-200, 200), st.integers(-5000, 5000))
    @settings(max_examples=100, deadline=None)
    def test_assigned_anchor_covers_the_point(self, x1, x2):
        fam = family()
        a = fam.assign((x1, x2), 0)
        assert (x1, x2) in fam.box(a, 0).middle
        assert fam.assign((x1, x2), 0) == a

    def test_corrupted_spacing_leaves_holes(self):
        fam = family(12, 1)
        rep = cover_check(0, fam, [-100], [100], spacing_l=20)
        assert not rep.covered and rep.witnesses

    def test_overridden_boxes_are_flagged(self):
        assert family(12, 2, {0: (3, 2)}).box((0, 0), 0).nonconforming
        assert not family().box((0, 0), 0).nonconforming


class TestSlabs:
    def test_slab_dimensions(self):
        slab = make_slab("D", axis_frame(2), 100)
        assert slab.hi[1] == pytest.approx(1e6 * math.log(math.log(100)) / math.log(100))
        assert slab_classify(slab, (1001, 0)) is Label.FRONT
        assert slab_classify(slab, (0, 331622)) is Label.INTERIOR
        assert slab_classify(slab, (0, 331623)) is Label.OTHER

    def test_slab_needs_L_above_e_to_the_e(self):
        with pytest.raises(GeometryError):
            make_slab("D", axis_frame(2), 15)


class TestParallelograms:
    def test_extents(self):
        p = make_parallelogram((0, 0), 7, axis_frame(2))
        assert p.region.hi[0] == 14
        assert p.region.hi[1] == pytest.approx(234.69, abs=0.01)
        assert p.central.hi[1] == pytest.approx(118.35, abs=0.01)
        assert (0, 117) in p.central
        assert (0, 119) not in p.central
        assert (14, 0) not in p.region

    def test_single_anchor_coloring(self):
        part = color_classes(7, axis_frame(2), [0, 0], [0, 0])
        assert part.nonempty == 1

    def test_same_class_neighbours_are_disjoint(self):
        frame = axis_frame(2)
        a = make_parallelogram((0, 0), 7, frame).region
        b = make_parallelogram((35, 0), 7, frame).region
        c = make_parallelogram((7, 0), 7, frame).region
        assert not regions_intersect(a, b)
        assert regions_intersect(a, c)


def test_generic_intersection_agrees_with_enumeration():
    frame = build_frame([0.6, 0.8])
    rng = np.random.default_rng(1)
    for _ in range(30):
        a = rectangle_region(frame, -3.0, 4.0, 2.5, anchor=tuple(rng.integers(-6, 6, 2)))
        b = rectangle_region(frame, -2.0, 3.0, 1.5, anchor=tuple(rng.integers(-6, 6, 2)))
        sa = set(map(tuple, a.lattice_points().tolist()))
        sb = set(map(tuple, b.lattice_points().tolist()))
        assert regions_intersect(a, b) == bool(sa & sb)
