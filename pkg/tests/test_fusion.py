import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fisheyeaug.annotations import FACE, PLATE, BBox, Detection, LabelError
from fisheyeaug.evaluation import iou
from fisheyeaug.fusion import (
    FusionConfig,
    TeacherFileError,
    TeacherOutput,
    fuse,
    parse_teacher_json,
    read_teacher_file,
    teacher_outputs_to_json,
)


def det(cx, cy, w, h, conf, cls=FACE):
    return Detection(BBox(cx, cy, w, h), cls, conf)


class TestFuseExamples:
    def test_single_plate_passthrough(self):
        out = fuse([TeacherOutput("uai", "img", [det(0.4, 0.4, 0.1, 0.05, 0.9, PLATE)])])
        assert out == [det(0.4, 0.4, 0.1, 0.05, 0.9, PLATE)]

    def test_three_identical_faces(self):
        box = (0.5, 0.5, 0.1, 0.1)
        outputs = [TeacherOutput(t, "img", [det(*box, c)]) for t, c in (("a", 0.9), ("b", 0.8), ("c", 0.7))]
        (d,) = fuse(outputs)
        assert d.confidence == 0.8
        assert (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h) == pytest.approx(box, abs=1e-15)

    def test_disjoint_faces_inclusive_threshold(self):
        outputs = [
            TeacherOutput("a", "img", [det(0.2, 0.2, 0.1, 0.1, 0.9)]),
            TeacherOutput("b", "img", [det(0.8, 0.8, 0.1, 0.1, 0.5)]),
        ]
        (d,) = fuse(outputs)
        assert d.confidence == 0.3
        assert (d.bbox.cx, d.bbox.cy) == (0.2, 0.2)
        # The dropped cluster sits at 0.5 / 3 ~ 0.1667
        kept = fuse(outputs, FusionConfig(min_confidence=0.16))
        assert [round(k.confidence, 4) for k in kept] == [0.3, 0.1667]


class TestFuseProperties:
    def scene(self, seed):
        r = random.Random(seed)
        outputs = []
        for t in ("uai", "yolo5face", "retinaface"):
            dets = []
            for k in range(3):
                cx, cy = 0.2 + 0.3 * k + r.uniform(-0.02, 0.02), 0.5 + r.uniform(-0.02, 0.02)
                dets.append(det(cx, cy, 0.1 + r.uniform(-0.01, 0.01), 0.12, round(r.uniform(0.3, 1.0), 3)))
            dets.append(det(r.uniform(0.1, 0.9), 0.1, 0.08, 0.04, round(r.uniform(0.3, 1.0), 3), PLATE))
            outputs.append(TeacherOutput(t, "img", dets))
        return outputs

    @given(st.integers(0, 10_000), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, seed, r):
        outputs = self.scene(seed)
        cfg = FusionConfig(expected_teachers={FACE: 3, PLATE: 3})
        ref = fuse(outputs, cfg)
        shuffled = [TeacherOutput(o.teacher_id, o.image_id, r.sample(o.detections, len(o.detections))) for o in outputs]
        r.shuffle(shuffled)
        assert fuse(shuffled, cfg) == ref

    @given(st.integers(0, 10_000))
    def test_bounds_hull_and_classes(self, seed):
        outputs = self.scene(seed)
        cfg = FusionConfig(min_confidence=0.1)
        fused = fuse(outputs, cfg)
        members = [d for o in outputs for d in o.detections]
        for f in fused:
            assert cfg.min_confidence <= f.confidence <= 1.0
            same = [m for m in members if m.class_id == f.class_id and iou(m.bbox, f.bbox) > 0]
            assert same, "fused box must come from same-class members"
            assert min(m.bbox.cx for m in same) - 1e-12 <= f.bbox.cx <= max(m.bbox.cx for m in same) + 1e-12
            assert min(m.bbox.cy for m in same) - 1e-12 <= f.bbox.cy <= max(m.bbox.cy for m in same) + 1e-12

    def test_no_cross_class_fusion(self):
        outputs = [
            TeacherOutput("a", "img", [det(0.5, 0.5, 0.1, 0.1, 0.9, FACE)]),
            TeacherOutput("b", "img", [det(0.5, 0.5, 0.1, 0.1, 0.9, PLATE)]),
        ]
        out = fuse(outputs, FusionConfig(expected_teachers={FACE: 1, PLATE: 1}))
        assert sorted(d.class_id for d in out) == [FACE, PLATE]

    @given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.floats(0.3, 1.0)), unique_by=lambda t: (t[0], t[1]), max_size=12))
    def test_singleton_idempotence(self, cells):
        # Boxes on a 10x10 grid never overlap, as in a teacher's post-NMS output.
        dets = [det(0.05 + 0.1 * i, 0.05 + 0.1 * j, 0.08, 0.08, c) for i, j, c in cells]
        out = fuse([TeacherOutput("t", "img", dets)], FusionConfig(expected_teachers={FACE: 1, PLATE: 1}))
        key = lambda d: (d.bbox.cx, d.bbox.cy)
        assert sorted(out, key=key) == sorted(dets, key=key)

    def test_weighted_average(self):
        outputs = [
            TeacherOutput("a", "img", [det(0.50, 0.5, 0.1, 0.1, 0.75)]),
            TeacherOutput("b", "img", [det(0.52, 0.5, 0.1, 0.1, 0.25)]),
        ]
        (d,) = fuse(outputs, FusionConfig(expected_teachers={FACE: 2, PLATE: 1}))
        assert d.bbox.cx == pytest.approx(0.505, abs=1e-12)
        assert d.confidence == 0.5

    def test_confidence_capped(self):
        outputs = [TeacherOutput(t, "img", [det(0.5, 0.5, 0.1, 0.1, 1.0)]) for t in "abcd"]
        (d,) = fuse(outputs)
        assert d.confidence == 1.0


class TestFuseErrors:
    def test_mismatched_images(self):
        with pytest.raises(ValueError, match="one image"):
            fuse([TeacherOutput("a", "x", []), TeacherOutput("b", "y", [])])

    def test_duplicate_teacher(self):
        with pytest.raises(LabelError, match="twice"):
            fuse([TeacherOutput("a", "x", [det(0.5, 0.5, 0.1, 0.1, 0.5)]), TeacherOutput("a", "x", [det(0.2, 0.2, 0.1, 0.1, 0.5)])])

    @pytest.mark.parametrize("kwargs", [{"iou_threshold": 0.0}, {"iou_threshold": 1.1}, {"min_confidence": -0.1}, {"expected_teachers": {FACE: 0, PLATE: 1}}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            FusionConfig(**kwargs)


class TestTeacherFile:
    def write(self, tmp_path, doc, name="t.json"):
        p = tmp_path / name
        p.write_text(json.dumps(doc), encoding="utf-8")
        return p

    def test_zero_images(self, tmp_path):
        assert read_teacher_file(self.write(tmp_path, {"teacher_id": "a", "images": []})) == []

    def test_one_face(self, tmp_path):
        doc = {"teacher_id": "retinaface", "version": "x", "images": [
            {"image_id": "f1", "extra": 1, "detections": [{"class": 0, "cx": 0.5, "cy": 0.4, "w": 0.1, "h": 0.2, "confidence": 0.8, "landmarks": []}]}]}
        (o,) = read_teacher_file(self.write(tmp_path, doc))
        assert o.teacher_id == "retinaface" and o.image_id == "f1"
        assert o.detections == (det(0.5, 0.4, 0.1, 0.2, 0.8),)

    def test_bad_confidence_names_field(self, tmp_path):
        doc = {"teacher_id": "a", "images": [{"image_id": "f", "detections": [{"class": 0, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1, "confidence": 1.5}]}]}
        with pytest.raises(TeacherFileError, match="confidence") as info:
            read_teacher_file(self.write(tmp_path, doc))
        assert info.value.json_path == "$.images[0].detections[0].confidence"

    @pytest.mark.parametrize(
        "doc, path",
        [
            ({"images": []}, "$"),
            ({"teacher_id": "a"}, "$"),
            ({"teacher_id": "a", "images": [{"detections": []}]}, "$.images[0]"),
            ({"teacher_id": "a", "images": [{"image_id": "f", "detections": [{"class": "face"}]}]}, "$.images[0].detections[0].class"),
            ({"teacher_id": "a", "images": [{"image_id": "f", "detections": [{"class": 3, "cx": 0.5, "cy": 0.5, "w": 0.1, "h": 0.1, "confidence": 0.5}]}]}, "$.images[0].detections[0].class"),
            ({"teacher_id": "a", "images": [{"image_id": "f", "detections": [{"class": 0, "cx": 0.5, "cy": 2, "w": 0.1, "h": 0.1, "confidence": 0.5}]}]}, "$.images[0].detections[0].cy"),
        ],
    )
    def test_schema_paths(self, tmp_path, doc, path):
        with pytest.raises(TeacherFileError) as info:
            read_teacher_file(self.write(tmp_path, doc))
        assert info.value.json_path == path

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(TeacherFileError, match="invalid JSON"):
            read_teacher_file(p)

    def test_serialise_round_trip(self):
        outs = [TeacherOutput("a", "f1", (det(0.5, 0.4, 0.1, 0.2, 0.8),)), TeacherOutput("a", "f2", ())]
        assert parse_teacher_json(json.loads(json.dumps(teacher_outputs_to_json(outs)))) == outs
