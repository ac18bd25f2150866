"""Annotator HTTP service: studies, slices, annotations, and jobs.

Uses the in-process test client against a data root holding two copies
of the tiny CLI-test phantom: ``demo`` (with its seed annotation) and
``bare`` (annotation removed, as a fresh study arrives at the UI).
"""

import io
import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from echo4d.cli import main
from echo4d.service import JobRecord, create_app
from echo4d.errors import ValidationError

from test_cli import SPEC


def wait_for(client, job_id, *states, timeout=90.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = client.get(f"/api/jobs/{job_id}").json()
        if body["status"] in states:
            return body
        time.sleep(0.2)
    raise AssertionError(f"job {job_id} never reached {states}")


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SPEC))
    assert main(["phantom", "--spec", str(spec), "--out", str(root / "demo")]) == 0
    assert main(["phantom", "--spec", str(spec), "--out", str(root / "bare"),
                 "--seed", "23"]) == 0
    (root / "bare" / "annotation.json").unlink()
    spec.unlink()
    (root / "not-a-study").mkdir()
    return root


@pytest.fixture(scope="module")
def client(data_root):
    with TestClient(create_app(data_root)) as c:
        yield c


class TestStudies:
    def test_listing(self, client):
        body = client.get("/api/studies").json()
        assert [s["id"] for s in body] == ["bare", "demo"]
        demo = body[1]
        assert demo["frame_count"] == 3
        assert demo["ed_index"] == 0 and demo["es_index"] == 1
        assert demo["has_annotation"] is True
        assert body[0]["has_annotation"] is False

    def test_meta(self, client):
        body = client.get("/api/studies/demo/meta").json()
        assert body["dims"] == SPEC["dims"]
        assert body["spacing_mm"] == SPEC["spacing_mm"]
        assert body["frame_count"] == 3
        assert body["phantom"]["name"] == "cli-test"

    def test_unknown_study_is_404(self, client):
        resp = client.get("/api/studies/nope/meta")
        assert resp.status_code == 404
        assert "unknown id" in resp.json()["detail"]


class TestSlices:
    def test_png_payload_and_geometry_headers(self, client):
        resp = client.get("/api/studies/demo/slice",
                          params={"frame": 1, "angle": 30})
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(resp.content))
        assert img.mode == "L"
        assert img.size[0] == img.size[1] > 20
        u = np.array(json.loads(resp.headers["X-Slice-Basis-U"]))
        v = np.array(json.loads(resp.headers["X-Slice-Basis-V"]))
        assert np.linalg.norm(u) == pytest.approx(1.0)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert abs(np.dot(u, v)) < 1e-12
        assert len(json.loads(resp.headers["X-Slice-Origin-Mm"])) == 3
        assert json.loads(resp.headers["X-Slice-Spacing-Mm"]) > 0
        assert json.loads(resp.headers["X-Slice-Angle-Deg"]) == 30.0

    def test_angle_wraps_mod_180(self, client):
        resp = client.get("/api/studies/demo/slice",
                          params={"frame": 0, "angle": 210.5})
        assert resp.status_code == 200
        assert json.loads(resp.headers["X-Slice-Angle-Deg"]) == 30.5

    def test_same_request_is_deterministic(self, client):
        a = client.get("/api/studies/demo/slice", params={"frame": 2, "angle": 45})
        b = client.get("/api/studies/demo/slice", params={"frame": 2, "angle": 45})
        assert a.content == b.content

    def test_frame_out_of_range(self, client):
        resp = client.get("/api/studies/demo/slice", params={"frame": 9})
        assert resp.status_code == 422
        assert resp.json()["rule"] == "frame_range"


class TestAnnotation:
    def test_segment_rejected_before_annotation(self, client):
        resp = client.post("/api/studies/bare/segment", json={"theta_d": 45})
        assert resp.status_code == 422
        assert resp.json()["rule"] == "annotation_missing"

    def test_malformed_body(self, client):
        resp = client.post("/api/studies/bare/annotation", content=b"{nope")
        assert resp.status_code == 422
        assert resp.json()["rule"] == "annotation_schema"

    def test_missing_keys(self, client):
        resp = client.post("/api/studies/bare/annotation",
                           json={"apex_mm": [0, 0, 0]})
        assert resp.status_code == 422
        body = resp.json()
        assert body["rule"] == "annotation_schema"
        assert "contours" in body["detail"]

    def test_too_few_contour_points(self, client, data_root):
        ann = json.loads((data_root / "demo" / "annotation.json").read_text())
        ann["contours"][0]["points_mm"] = ann["contours"][0]["points_mm"][:5]
        resp = client.post("/api/studies/bare/annotation", json=ann)
        assert resp.status_code == 422
        assert resp.json()["rule"] == "contour_min_points"

    def test_valid_roundtrip_flips_listing(self, client, data_root):
        ann = json.loads((data_root / "demo" / "annotation.json").read_text())
        resp = client.post("/api/studies/bare/annotation", json=ann)
        assert resp.status_code == 200
        assert resp.json() == {"ok": True, "contours": 4}
        assert (data_root / "bare" / "annotation.json").is_file()
        listing = client.get("/api/studies").json()
        assert listing[0]["has_annotation"] is True


class TestJobs:
    def test_lifecycle_and_outputs(self, client, data_root):
        first = client.post("/api/studies/demo/segment", json={"theta_d": 45})
        assert first.status_code == 200
        second = client.post("/api/studies/demo/segment", json={"theta_d": 45})
        assert second.status_code == 200
        job_a, job_b = first.json()["job_id"], second.json()["job_id"]
        assert job_a != job_b
        assert first.json()["status"] in ("pending", "running")

        done = wait_for(client, job_a, "done", "failed")
        assert done["status"] == "done"
        assert done["error"] is None
        assert done["frames"] == 3
        assert done["theta_d"] == 45.0

        for t in range(3):
            resp = client.get(f"/api/jobs/{job_a}/meshes/{t}")
            assert resp.status_code == 200
            assert resp.text.startswith("v ") or "\nv " in resp.text
            assert "\nf " in resp.text
        assert client.get(f"/api/jobs/{job_a}/meshes/3").status_code == 404

        vols = client.get(f"/api/jobs/{job_a}/volumes")
        assert vols.status_code == 200
        lines = vols.text.splitlines()
        assert lines[0] == "frame,volume_mL"
        values = [float(r.split(",")[1]) for r in lines[1:]]
        assert len(values) == 3
        assert values[1] < values[0]

        # queued second job on the same study finishes as well
        done_b = wait_for(client, job_b, "done", "failed")
        assert done_b["status"] == "done"

        # job outputs land under jobs/, study inputs untouched
        assert (data_root / "demo" / "jobs" / job_a / "volumes.csv").is_file()

    def test_identical_jobs_agree(self, client, data_root):
        a = (data_root / "demo" / "jobs" / "job-0001" / "volumes.csv")
        b = (data_root / "demo" / "jobs" / "job-0002" / "volumes.csv")
        assert a.read_bytes() == b.read_bytes()

    def test_bad_segment_requests(self, client):
        resp = client.post("/api/studies/demo/segment", content=b"oops")
        assert resp.status_code == 422
        assert resp.json()["rule"] == "segment_request"
        resp = client.post("/api/studies/demo/segment", json={"spacing": 5})
        assert resp.status_code == 422
        assert resp.json()["rule"] == "segment_request"

    def test_unknown_job_is_404(self, client):
        assert client.get("/api/jobs/job-9999").status_code == 404


class TestJobRecord:
    def test_transitions_are_monotone(self):
        job = JobRecord(job_id="job-0000", study_id="s", theta_d=5.0)
        job.advance("running")
        job.advance("done")
        with pytest.raises(ValidationError, match="job_transition"):
            job.advance("running")
        with pytest.raises(ValidationError, match="job_transition"):
            job.advance("done")

    def test_cannot_skip_backwards_from_failed(self):
        job = JobRecord(job_id="job-0000", study_id="s", theta_d=5.0)
        job.advance("running")
        job.advance("failed")
        with pytest.raises(ValidationError, match="job_transition"):
            job.advance("done")
