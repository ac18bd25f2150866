"""Data model and file formats: volumes, annotations, meshes, reports."""

import json

import numpy as np
import pytest

from echo4d.errors import ValidationError
from echo4d.meshkit import SurfaceMesh
from echo4d.slicer import build_axis_frame, _plane_for_angle
from echo4d.volcore import (
    ClinicalMetrics,
    FrameMetrics,
    MetricsReport,
    SeedContour,
    StudyAnnotation,
    Volume3D,
    Volume4D,
    annotation_from_dict,
    read_annotation,
    read_mesh,
    read_report,
    read_volume4d,
    validate_annotation,
    write_annotation,
    write_mesh,
    write_report,
    write_volume4d,
)

import helpers


def _write_raw_volume(tmp_path, header_overrides=None, payload=None):
    header = {
        "dims": [4, 4, 4],
        "spacing_mm": [1.0, 1.0, 1.0],
        "frames": 2,
        "dtype": "u8",
        "max_value": 255,
        "ed_index": 0,
        "es_index": 1,
        "data": "vol.raw",
    }
    header.update(header_overrides or {})
    if payload is None:
        payload = bytes(range(128))
    (tmp_path / "vol.json").write_text(json.dumps(header))
    (tmp_path / "vol.raw").write_bytes(payload)
    return tmp_path / "vol.json"


class TestVolumeIO:
    def test_smallest_well_formed_file(self, tmp_path):
        path = _write_raw_volume(tmp_path)
        vol = read_volume4d(path)
        assert vol.frame_count == 2
        assert vol.dims == (4, 4, 4)
        assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0
        # frame-major then z, y, x fastest: first byte is voxel (0,0,0) frame 0
        assert vol.data[0, 0, 0, 0] == 0.0
        assert vol.data[0, 0, 0, 1] == pytest.approx(1 / 255)
        assert vol.data[0, 0, 1, 0] == pytest.approx(4 / 255)
        assert vol.data[0, 1, 0, 0] == pytest.approx(16 / 255)
        assert vol.data[1, 0, 0, 0] == pytest.approx(64 / 255)

    def test_round_trip_u8_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        raw = rng.integers(0, 256, size=(3, 5, 6, 7), dtype=np.uint8)
        vol = Volume4D(data=raw / 255.0, spacing_mm=(0.7, 0.8, 0.9),
                       ed_index=0, es_index=2, dtype_label="u8", max_value=255)
        write_volume4d(vol, tmp_path / "v.json")
        back = read_volume4d(tmp_path / "v.json")
        assert (tmp_path / "v.raw").read_bytes() == raw.tobytes()
        np.testing.assert_array_equal(back.data, vol.data)
        assert back.spacing_mm == vol.spacing_mm
        assert (back.ed_index, back.es_index) == (0, 2)

    def test_round_trip_f32_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        raw = rng.uniform(0, 80, size=(2, 4, 4, 5)).astype(np.float32)
        vol = Volume4D(data=raw.astype(np.float64) / 80.0, spacing_mm=(1, 1, 1),
                       ed_index=0, es_index=1, dtype_label="f32", max_value=80.0)
        write_volume4d(vol, tmp_path / "v.json")
        back = read_volume4d(tmp_path / "v.json")
        redone = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
        np.testing.assert_array_equal(redone, raw.ravel())
        np.testing.assert_array_equal(back.data, vol.data)

    @pytest.mark.parametrize("overrides,payload,rule", [
        ({"dims": [4, 4]}, None, "volume_dims"),
        ({"dims": [4, 4, 1]}, None, "volume_dims"),
        ({"spacing_mm": [1.0, 0.0, 1.0]}, None, "volume_spacing"),
        ({"frames": 1}, None, "volume_frames"),
        ({"dtype": "u16"}, None, "volume_dtype"),
        ({"max_value": 0}, None, "volume_max_value"),
        ({"es_index": 0}, None, "volume_frame_indices"),
        ({"ed_index": 5}, None, "volume_frame_indices"),
        ({"data": "absent.raw"}, None, "volume_data_missing"),
        ({}, bytes(range(120)), "volume_data_size"),
        ({"max_value": 100}, None, "volume_value_range"),
    ])
    def test_validation_rules(self, tmp_path, overrides, payload, rule):
        path = _write_raw_volume(tmp_path, overrides, payload)
        with pytest.raises(ValidationError) as exc:
            read_volume4d(path)
        assert exc.value.rule == rule
        assert rule in str(exc.value)

    def test_payload_size_mismatch_reports_expectation(self, tmp_path):
        # dims cannot differ per frame in this format; a short payload is the
        # observable signature of mismatched frame shapes
        path = _write_raw_volume(tmp_path, {"frames": 3})
        with pytest.raises(ValidationError) as exc:
            read_volume4d(path)
        assert exc.value.rule == "volume_data_size"

    def test_missing_header_key(self, tmp_path):
        path = _write_raw_volume(tmp_path)
        hdr = json.loads(path.read_text())
        del hdr["spacing_mm"]
        path.write_text(json.dumps(hdr))
        with pytest.raises(ValidationError) as exc:
            read_volume4d(path)
        assert exc.value.rule == "volume_schema"

    def test_sample_mm_trilinear(self):
        data = np.zeros((2, 2, 2))
        data[0, 0, 1] = 1.0  # voxel at x=1,y=0,z=0
        vol = Volume3D(data=data, spacing_mm=(2.0, 1.0, 1.0))
        val = vol.sample_mm(np.array([[1.0, 0.0, 0.0]]))  # halfway in x
        assert val[0] == pytest.approx(0.5)
        out = vol.sample_mm(np.array([[50.0, 0.0, 0.0]]))
        assert out[0] == 0.0


def _valid_annotation():
    apex = np.array([0.0, 0.0, 60.0])
    base = np.array([0.0, 0.0, 20.0])
    axis = build_axis_frame(apex, base)
    contours = []
    for phase in ("ED", "ES"):
        for ang in (0, 90):
            plane = _plane_for_angle(axis, float(ang), 1.0, (3, 3))
            w = 18.0 if phase == "ED" else 14.0
            pts = helpers.meridian_contour(base, plane.basis_v, axis.axis_dir,
                                           w, 30.0, 0.0, 32)
            contours.append(SeedContour(phase=phase, angle_deg=ang, points_mm=pts))
    return StudyAnnotation(apex_mm=apex, base_mm=base, contours=tuple(contours))


class TestAnnotationIO:
    def test_valid_annotation_round_trip(self, tmp_path):
        ann = validate_annotation(_valid_annotation())
        write_annotation(ann, tmp_path / "a.json")
        back = read_annotation(tmp_path / "a.json")
        np.testing.assert_allclose(back.apex_mm, ann.apex_mm, atol=1e-12)
        for c0, c1 in zip(ann.contours, back.contours):
            assert (c0.phase, c0.angle_deg) == (c1.phase, c1.angle_deg)
            np.testing.assert_allclose(c0.points_mm, c1.points_mm, atol=1e-9)

    def test_missing_label(self):
        ann = _valid_annotation()
        pruned = StudyAnnotation(apex_mm=ann.apex_mm, base_mm=ann.base_mm,
                                 contours=ann.contours[:3])
        with pytest.raises(ValidationError) as exc:
            validate_annotation(pruned)
        assert exc.value.rule == "contour_missing"

    def test_duplicate_label(self):
        ann = _valid_annotation()
        doubled = StudyAnnotation(apex_mm=ann.apex_mm, base_mm=ann.base_mm,
                                  contours=ann.contours + (ann.contours[0],))
        with pytest.raises(ValidationError) as exc:
            validate_annotation(doubled)
        assert exc.value.rule == "contour_duplicate"

    def test_too_few_points(self):
        ann = _valid_annotation()
        short = SeedContour(phase="ED", angle_deg=0, points_mm=ann.contours[0].points_mm[:7])
        bad = StudyAnnotation(apex_mm=ann.apex_mm, base_mm=ann.base_mm,
                              contours=(short,) + ann.contours[1:])
        with pytest.raises(ValidationError) as exc:
            validate_annotation(bad)
        assert exc.value.rule == "contour_min_points"

    def test_off_plane_point(self):
        ann = _valid_annotation()
        pts = ann.contours[0].points_mm.copy()
        pts[5] += 0.01 * np.array([1.0, 0.0, 0.0])  # theta0 plane normal is x
        bad = StudyAnnotation(
            apex_mm=ann.apex_mm, base_mm=ann.base_mm,
            contours=(SeedContour("ED", 0, pts),) + ann.contours[1:])
        with pytest.raises(ValidationError) as exc:
            validate_annotation(bad)
        assert exc.value.rule == "contour_planarity"

    def test_bad_label(self):
        ann = _valid_annotation()
        bad = StudyAnnotation(
            apex_mm=ann.apex_mm, base_mm=ann.base_mm,
            contours=(SeedContour("MID", 0, ann.contours[0].points_mm),) + ann.contours[1:])
        with pytest.raises(ValidationError) as exc:
            validate_annotation(bad)
        assert exc.value.rule == "contour_label_invalid"

    def test_apex_equals_base(self):
        ann = _valid_annotation()
        bad = StudyAnnotation(apex_mm=ann.base_mm, base_mm=ann.base_mm,
                              contours=ann.contours)
        with pytest.raises(ValidationError) as exc:
            validate_annotation(bad)
        assert exc.value.rule == "apex_base_distinct"

    def test_schema_errors(self):
        with pytest.raises(ValidationError) as exc:
            annotation_from_dict([1, 2, 3])
        assert exc.value.rule == "annotation_schema"
        with pytest.raises(ValidationError) as exc:
            annotation_from_dict({"apex_mm": [0, 0, 0]})
        assert exc.value.rule == "annotation_schema"


class TestMeshIO:
    def test_tetrahedron_is_eight_lines(self, tmp_path):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        f = np.array([[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]])
        mesh = SurfaceMesh(vertices=v, triangles=f)
        write_mesh(mesh, tmp_path / "t.obj")
        lines = (tmp_path / "t.obj").read_text().strip().splitlines()
        assert len(lines) == 8
        assert sum(1 for l in lines if l.startswith("v ")) == 4
        assert sum(1 for l in lines if l.startswith("f ")) == 4

    def test_round_trip_vertices(self, tmp_path):
        rng = np.random.default_rng(5)
        v = rng.uniform(-40, 40, size=(50, 3))
        f = rng.integers(0, 50, size=(30, 3)).astype(np.int64)
        mesh = SurfaceMesh(vertices=v, triangles=f, meridian_layout=(5, 10))
        write_mesh(mesh, tmp_path / "m.obj")
        back = read_mesh(tmp_path / "m.obj")
        assert np.abs(back.vertices - v).max() < 1e-6
        np.testing.assert_array_equal(back.triangles, f)
        assert back.meridian_layout == (5, 10)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValidationError) as exc:
            SurfaceMesh(vertices=np.zeros((3, 3)), triangles=np.array([[0, 1, 3]]))
        assert exc.value.rule == "mesh_index_range"

    def test_face_arity_error(self, tmp_path):
        (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n")
        with pytest.raises(ValidationError) as exc:
            read_mesh(tmp_path / "bad.obj")
        assert exc.value.rule == "mesh_face_arity"

    def test_unknown_record_rejected(self, tmp_path):
        (tmp_path / "bad.obj").write_text("v 0 0 0\nvn 1 0 0\n")
        with pytest.raises(ValidationError) as exc:
            read_mesh(tmp_path / "bad.obj")
        assert exc.value.rule == "mesh_schema"


class TestReportIO:
    def test_round_trip(self, tmp_path):
        report = MetricsReport(
            per_frame=(FrameMetrics(frame=0, volume_ml=100.0, d_m_mm=0.8, d_h_mm=3.1, dice=0.95),
                       FrameMetrics(frame=1, volume_ml=40.0)),
            clinical=ClinicalMetrics(edv_ml=100.0, esv_ml=40.0, ef_percent=60.0),
            stats={"note": "ok"})
        write_report(report, tmp_path / "r.json")
        back = read_report(tmp_path / "r.json")
        assert back.per_frame[0].dice == 0.95
        assert back.per_frame[1].d_m_mm is None
        assert back.clinical.ef_percent == 60.0
        assert back.stats == {"note": "ok"}

    @pytest.mark.parametrize("fm", [
        FrameMetrics(frame=0, volume_ml=-1.0),
        FrameMetrics(frame=0, volume_ml=10.0, d_m_mm=-0.1),
        FrameMetrics(frame=0, volume_ml=10.0, d_m_mm=2.0, d_h_mm=1.0),
        FrameMetrics(frame=0, volume_ml=10.0, dice=1.5),
    ])
    def test_invariants_enforced(self, fm):
        with pytest.raises(ValidationError) as exc:
            MetricsReport(per_frame=(fm,))
        assert exc.value.rule == "report_invariants"

    def test_schema_error(self, tmp_path):
        (tmp_path / "r.json").write_text("{\"nope\": 1}")
        with pytest.raises(ValidationError) as exc:
            read_report(tmp_path / "r.json")
        assert exc.value.rule == "report_schema"
