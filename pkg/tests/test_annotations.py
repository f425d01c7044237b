import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from fisheyeaug.annotations import (
    BBox,
    Detection,
    LabeledImage,
    LabelError,
    eight_points,
    parse_labels,
    read_labels,
    warp_bbox,
    warp_points_aabb,
    write_labels,
)
from fisheyeaug.geometry import Circular, NormalizedPoint, Radial, Rectangular, Tangential, forward_points, inverse_map, paper_default_models

from oracles import dense_boundary_aabb

DIMS = (640, 640)


@st.composite
def boxes(draw, min_size=1e-3, max_size=1.0):
    w = draw(st.floats(min_size, max_size))
    h = draw(st.floats(min_size, max_size))
    cx = draw(st.floats(w / 2, 1 - w / 2))
    cy = draw(st.floats(h / 2, 1 - h / 2))
    return BBox(cx, cy, w, h)


class TestBBox:
    @pytest.mark.parametrize(
        "args, field",
        [((1.2, 0.5, 0.1, 0.1), "cx"), ((0.5, -0.1, 0.1, 0.1), "cy"), ((0.5, 0.5, 0.0, 0.1), "w"), ((0.5, 0.5, 0.1, 1.5), "h")],
    )
    def test_invalid(self, args, field):
        with pytest.raises(LabelError) as info:
            BBox(*args)
        assert info.value.field == field

    def test_detection_validation(self):
        with pytest.raises(LabelError, match="class_id"):
            Detection(BBox(0.5, 0.5, 0.1, 0.1), 2)
        with pytest.raises(LabelError, match="confidence"):
            Detection(BBox(0.5, 0.5, 0.1, 0.1), 0, 1.5)

    def test_empty_image_id(self):
        with pytest.raises(LabelError):
            LabeledImage("")


class TestEightPoints:
    def test_full_frame(self):
        pts = eight_points(BBox(0.5, 0.5, 1.0, 1.0))
        assert {tuple(p) for p in pts[:4]} == {(-1, -1), (1, -1), (-1, 1), (1, 1)}
        assert {tuple(p) for p in pts[4:]} == {(0, -1), (0, 1), (-1, 0), (1, 0)}

    def test_collapse(self):
        pts = eight_points(BBox(0.5, 0.5, 1e-12, 1e-12))
        assert np.max(np.abs(pts)) <= 1e-11

    def test_quarter_box(self):
        pts = eight_points(BBox(0.25, 0.25, 0.5, 0.5))
        assert {tuple(p) for p in pts[:4]} == {(-1, -1), (0, -1), (-1, 0), (0, 0)}
        assert {tuple(p) for p in pts[4:]} == {(-0.5, -1), (-0.5, 0), (-1, -0.5), (0, -0.5)}


class TestWarpBBox:
    @given(boxes(min_size=2e-3))  # above the drop floor
    def test_identity_models(self, b):
        for m in (Radial(0, 0, 0), Tangential(0, 0)):
            out = warp_bbox(b, m, DIMS)
            assert out is not None
            assert abs(out.cx - b.cx) <= 1e-12 and abs(out.cy - b.cy) <= 1e-12
            assert abs(out.w - b.w) <= 1e-12 and abs(out.h - b.h) <= 1e-12

    @given(boxes(), st.sampled_from(paper_default_models()))
    def test_containment_and_minimality(self, b, model):
        (x0, y0, x1, y1), mapped = warp_points_aabb(b, model, DIMS)
        assert np.all(mapped[:, 0] >= x0) and np.all(mapped[:, 0] <= x1)
        assert np.all(mapped[:, 1] >= y0) and np.all(mapped[:, 1] <= y1)
        # Independent recomputation of the hull over the 8 points
        xs = [p[0] for p in mapped]
        ys = [p[1] for p in mapped]
        assert (x0, y0, x1, y1) == (min(xs), min(ys), max(xs), max(ys))

    def test_radial_against_dense_oracle(self):
        b = BBox(0.75, 0.5, 0.1, 0.1)
        m = Radial()
        got, _ = warp_points_aabb(b, m, DIMS)
        dense = dense_boundary_aabb(b.corners, lambda x, y: forward_points(m, x, y, DIMS))
        assert np.max(np.abs(np.array(got) - dense)) * 640 <= 2.0

    def test_circular_corner_sliver_dropped(self):
        # Circular never maps outside the frame, so corner slivers go via the
        # area floor: hull extents ~0.55 * (w + h) each, area ~4e-7 < 1e-6.
        sliver = BBox(0.0005, 0.0001, 0.001, 0.0002)
        assert warp_bbox(sliver, Circular(), DIMS) is None
        # The frame corner itself lies outside the circular footprint.
        assert inverse_map(Circular(), NormalizedPoint(-1.0, -1.0)) is None

    def test_radial_corner_pushed_out_of_frame(self):
        # Radial expansion sends the whole corner box beyond the frame.
        assert warp_bbox(BBox(0.02, 0.02, 0.03, 0.03), Radial(), DIMS) is None

    def test_partially_outside_is_clipped(self):
        out = warp_bbox(BBox(0.1, 0.5, 0.1, 0.1), Radial(), DIMS)
        assert out is not None
        x0, y0, x1, y1 = out.corners
        assert x0 == 0.0 and x1 <= 1.0

    def test_box_beyond_frame_edge_is_clipped_before_mapping(self):
        # Center inside the frame but extent past the edge; circular needs inputs in [-1, 1].
        out = warp_bbox(BBox(0.98, 0.5, 0.1, 0.1), Circular(), DIMS)
        assert out is not None

    @pytest.mark.parametrize("model", paper_default_models(), ids=lambda m: m.kind)
    def test_collapse_to_center(self, model, rng):
        for _ in range(50):
            cx, cy = rng.uniform(0.2, 0.8, 2)
            out = warp_bbox(BBox(cx, cy, 1e-6, 1e-6), model, DIMS)
            fx, fy = forward_points(model, 2 * cx - 1, 2 * cy - 1, DIMS)
            # The warped box is below the area floor and dropped; its unclipped hull still converges.
            (x0, y0, x1, y1), _ = warp_points_aabb(BBox(cx, cy, 1e-6, 1e-6), model, DIMS)
            assert abs((x0 + x1) / 2 - (float(fx) + 1) / 2) <= 1e-4
            assert abs((y0 + y1) / 2 - (float(fy) + 1) / 2) <= 1e-4
            assert out is None

    def test_rectangular_uses_pixel_space(self):
        b = BBox(0.9, 0.5, 0.1, 0.1)
        pix = warp_bbox(b, Rectangular(250.0), DIMS)
        norm = warp_bbox(b, Rectangular(250.0, space="normalized"), DIMS)
        assert pix.cx < 0.85  # visibly compressed toward center
        assert abs(norm.cx - 0.9) < 1e-5  # f=250 is a near no-op in normalized units


class TestLabelIO:
    def test_parse_line(self):
        li = parse_labels("0 0.500000 0.500000 0.100000 0.200000 0.950000\n")
        (d,) = li.detections
        assert d.class_id == 0 and d.confidence == 0.95
        assert (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h) == (0.5, 0.5, 0.1, 0.2)

    def test_ground_truth_has_no_confidence(self):
        (d,) = parse_labels("1 0.5 0.5 0.1 0.1").detections
        assert d.confidence is None and d.score == 1.0

    def test_empty_file(self, tmp_path):
        p = tmp_path / "a.txt"
        p.write_text("")
        li = read_labels(p)
        assert li.image_id == "a" and li.detections == []

    def test_class_out_of_range(self):
        with pytest.raises(LabelError, match="class_id out of range") as info:
            parse_labels("2 0.5 0.5 0.1 0.1")
        assert info.value.line == 1 and info.value.field == "class_id"

    @pytest.mark.parametrize("text, line", [("0 0.5 0.5 0.1\n", 1), ("0 0.5 0.5 0.1 0.1\n0 a b c d\n", 2), ("\n\n1 0.5 0.5 0.1 0.1 0.5 9\n", 3)])
    def test_malformed_line_number(self, text, line):
        with pytest.raises(LabelError) as info:
            parse_labels(text)
        assert info.value.line == line

    def test_out_of_range_names_field(self):
        with pytest.raises(LabelError, match="cy") as info:
            parse_labels("0 0.5 1.5 0.1 0.1")
        assert info.value.field == "cy"

    @given(st.lists(st.tuples(boxes(), st.sampled_from([0, 1]), st.one_of(st.none(), st.floats(0, 1))), max_size=8))
    def test_round_trip(self, items):
        import tempfile, os

        dets = [Detection(b, c, conf) for b, c, conf in items]
        assume(all(round(d.bbox.w, 6) > 0 and round(d.bbox.h, 6) > 0 for d in dets))
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.txt")
            write_labels(LabeledImage("x", detections=dets), path)
            back = read_labels(path).detections
        assert len(back) == len(dets)
        for a, b in zip(dets, back):
            assert a.class_id == b.class_id
            for f in ("cx", "cy", "w", "h"):
                assert abs(getattr(a.bbox, f) - getattr(b.bbox, f)) <= 1e-6
            if a.confidence is None:
                assert b.confidence is None
            else:
                assert abs(a.confidence - b.confidence) <= 1e-6
