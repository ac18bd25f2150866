"""HTTP service backing the annotator UI.

Serves study metadata, angular reslices as 8-bit PNGs, accepts seed
annotations, and runs segmentation jobs asynchronously. Studies live
under a data root, one directory per study id, each holding a
``volume.json``/``volume.raw`` pair and optionally ``annotation.json``
plus a ``truth/`` directory. Jobs write all outputs under the study's
``jobs/<job_id>/`` directory; study inputs are never touched.

At most one job runs per study at a time; later submissions queue. Job
state moves pending -> running -> done|failed, atomically under a lock.
"""

from __future__ import annotations

import io
import itertools
import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from PIL import Image

from .cli import _write_volume_csv, study_meshes
from .errors import RegistrationDegeneracyError, ValidationError
from .meshkit import capped, mesh_volume
from .slicer import (_plane_for_angle, build_axis_frame, extract_slice,
                     slice_grid_for_volume)
from .volcore import (Volume4D, annotation_from_dict, read_annotation,
                      read_volume4d, validate_annotation, write_annotation,
                      write_mesh)


@dataclass
class JobRecord:
    """Lifecycle record of one segmentation job."""

    job_id: str
    study_id: str
    theta_d: float
    status: str = "pending"  # pending -> running -> done | failed
    error: str | None = None
    mesh_files: tuple[str, ...] = ()
    volumes_file: str | None = None

    _ORDER = ("pending", "running", "done", "failed")

    def advance(self, status: str) -> None:
        if self._ORDER.index(status) <= self._ORDER.index(self.status):
            raise ValidationError(
                "job_transition",
                f"cannot move job {self.job_id} from {self.status} to {status}")
        self.status = status


class _JobManager:
    """One worker thread per study so jobs on a study run serially while
    the service (and jobs on other studies) stay responsive."""

    def __init__(self, root: Path):
        self.root = root
        self.lock = threading.Lock()
        self.jobs: dict[str, JobRecord] = {}
        self.queues: dict[str, list[str]] = {}
        self.workers: dict[str, threading.Thread] = {}
        self._counter = itertools.count(1)

    def submit(self, study_id: str, theta_d: float, runner) -> JobRecord:
        with self.lock:
            job = JobRecord(job_id=f"job-{next(self._counter):04d}",
                            study_id=study_id, theta_d=theta_d)
            self.jobs[job.job_id] = job
            self.queues.setdefault(study_id, []).append(job.job_id)
            worker = self.workers.get(study_id)
            if worker is None or not worker.is_alive():
                worker = threading.Thread(
                    target=self._drain, args=(study_id, runner), daemon=True)
                self.workers[study_id] = worker
                worker.start()
        return job

    def _drain(self, study_id: str, runner) -> None:
        while True:
            with self.lock:
                queue = self.queues.get(study_id, [])
                if not queue:
                    return
                job = self.jobs[queue.pop(0)]
                job.advance("running")
            try:
                mesh_files, volumes_file = runner(job)
                with self.lock:
                    job.mesh_files = tuple(mesh_files)
                    job.volumes_file = volumes_file
                    job.advance("done")
            except (ValidationError, RegistrationDegeneracyError) as exc:
                with self.lock:
                    job.error = str(exc)
                    job.advance("failed")


def _default_axis(vol: Volume4D):
    """Axis used for reslicing before any annotation exists: vertical
    through the volume center, spanning the middle half of z."""
    nx, ny, nz = vol.data.shape[3], vol.data.shape[2], vol.data.shape[1]
    sx, sy, sz = vol.spacing_mm
    cx, cy = (nx - 1) * sx / 2.0, (ny - 1) * sy / 2.0
    z_lo, z_hi = (nz - 1) * sz * 0.25, (nz - 1) * sz * 0.75
    return build_axis_frame((cx, cy, z_lo), (cx, cy, z_hi))


def create_app(data_root) -> FastAPI:
    root = Path(data_root)
    app = FastAPI(title="echo4d annotator service")
    volumes: dict[str, Volume4D] = {}
    manager = _JobManager(root)

    def study_dir(study_id: str) -> Path:
        path = root / study_id
        if not (path / "volume.json").is_file():
            raise LookupError(study_id)
        return path

    def volume(study_id: str) -> Volume4D:
        if study_id not in volumes:
            volumes[study_id] = read_volume4d(study_dir(study_id) / "volume.json")
        return volumes[study_id]

    def study_axis(study_id: str, vol: Volume4D):
        ann_path = study_dir(study_id) / "annotation.json"
        if ann_path.is_file():
            ann = read_annotation(ann_path)
            return build_axis_frame(ann.apex_mm, ann.base_mm)
        return _default_axis(vol)

    @app.exception_handler(ValidationError)
    async def _validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(status_code=422,
                            content={"rule": exc.rule, "detail": exc.detail})

    @app.exception_handler(LookupError)
    async def _lookup_handler(request: Request, exc: LookupError):
        return JSONResponse(status_code=404,
                            content={"detail": f"unknown id: {exc}"})

    @app.get("/api/studies")
    def list_studies():
        out = []
        for path in sorted(root.iterdir()) if root.is_dir() else []:
            if not (path / "volume.json").is_file():
                continue
            vol = volume(path.name)
            out.append({
                "id": path.name,
                "frame_count": vol.frame_count,
                "ed_index": vol.ed_index,
                "es_index": vol.es_index,
                "has_annotation": (path / "annotation.json").is_file(),
            })
        return out

    @app.get("/api/studies/{study_id}/meta")
    def study_meta(study_id: str):
        vol = volume(study_id)
        frames, nz, ny, nx = vol.data.shape
        meta_path = study_dir(study_id) / "meta.json"
        extra = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
        return {
            "id": study_id,
            "dims": [nx, ny, nz],
            "spacing_mm": list(vol.spacing_mm),
            "frame_count": frames,
            "ed_index": vol.ed_index,
            "es_index": vol.es_index,
            "has_annotation": (study_dir(study_id) / "annotation.json").is_file(),
            "phantom": extra,
        }

    @app.get("/api/studies/{study_id}/slice")
    def get_slice(study_id: str, frame: int = 0, angle: float = 0.0):
        vol = volume(study_id)
        if not (0 <= frame < vol.frame_count):
            raise ValidationError(
                "frame_range",
                f"frame {frame} outside [0, {vol.frame_count - 1}]")
        if not np.isfinite(angle):
            raise ValidationError("angle_range", f"bad angle: {angle}")
        axis = study_axis(study_id, vol)
        spacing, extent = slice_grid_for_volume(axis, vol)
        plane = _plane_for_angle(axis, float(angle) % 180.0, spacing, extent)
        img = extract_slice(vol.frame(frame), plane, frame)
        data = np.clip(np.rint(img.pixels * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(data, mode="L").save(buf, format="PNG")
        headers = {
            "X-Slice-Origin-Mm": json.dumps([float(v) for v in plane.origin_mm]),
            "X-Slice-Basis-U": json.dumps([float(v) for v in plane.basis_u]),
            "X-Slice-Basis-V": json.dumps([float(v) for v in plane.basis_v]),
            "X-Slice-Spacing-Mm": json.dumps(plane.in_plane_spacing),
            "X-Slice-Angle-Deg": json.dumps(plane.angle_deg),
        }
        return Response(content=buf.getvalue(), media_type="image/png",
                        headers=headers)

    async def _json_body(request: Request, rule: str):
        try:
            return await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ValidationError(rule, f"body is not valid JSON: {exc}")

    @app.post("/api/studies/{study_id}/annotation")
    async def post_annotation(study_id: str, request: Request):
        study_dir(study_id)
        payload = await _json_body(request, "annotation_schema")
        ann = validate_annotation(annotation_from_dict(payload))
        write_annotation(ann, study_dir(study_id) / "annotation.json")
        return {"ok": True, "contours": len(ann.contours)}

    @app.post("/api/studies/{study_id}/segment")
    async def post_segment(study_id: str, request: Request):
        payload = await _json_body(request, "segment_request")
        if not isinstance(payload, dict) or "theta_d" not in payload:
            raise ValidationError("segment_request",
                                  "body must be JSON with theta_d")
        theta_d = float(payload["theta_d"])
        sdir = study_dir(study_id)
        if not (sdir / "annotation.json").is_file():
            raise ValidationError("annotation_missing",
                                  f"study {study_id} has no annotation yet")
        vol = volume(study_id)

        def runner(job: JobRecord):
            ann = read_annotation(sdir / "annotation.json")
            meshes = study_meshes(vol, ann, job.theta_d)
            job_dir = sdir / "jobs" / job.job_id
            job_dir.mkdir(parents=True, exist_ok=True)
            names = []
            for t, mesh in enumerate(meshes):
                name = f"mesh_{t:03d}.obj"
                write_mesh(mesh, job_dir / name)
                names.append(name)
            vols = [mesh_volume(capped(m)) for m in meshes]
            _write_volume_csv(job_dir / "volumes.csv", vols)
            return names, "volumes.csv"

        job = manager.submit(study_id, theta_d, runner)
        return {"job_id": job.job_id, "status": job.status}

    def get_job(job_id: str) -> JobRecord:
        job = manager.jobs.get(job_id)
        if job is None:
            raise LookupError(job_id)
        return job

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = get_job(job_id)
        with manager.lock:
            return {
                "job_id": job.job_id,
                "study_id": job.study_id,
                "theta_d": job.theta_d,
                "status": job.status,
                "error": job.error,
                "frames": len(job.mesh_files),
            }

    @app.get("/api/jobs/{job_id}/meshes/{frame}")
    def job_mesh(job_id: str, frame: int):
        job = get_job(job_id)
        if job.status != "done" or not (0 <= frame < len(job.mesh_files)):
            raise LookupError(f"{job_id}/meshes/{frame}")
        path = root / job.study_id / "jobs" / job.job_id / job.mesh_files[frame]
        return PlainTextResponse(path.read_text(), media_type="text/plain")

    @app.get("/api/jobs/{job_id}/volumes")
    def job_volumes(job_id: str):
        job = get_job(job_id)
        if job.status != "done" or job.volumes_file is None:
            raise LookupError(f"{job_id}/volumes")
        path = root / job.study_id / "jobs" / job.job_id / job.volumes_file
        return PlainTextResponse(path.read_text(), media_type="text/csv")

    return app
