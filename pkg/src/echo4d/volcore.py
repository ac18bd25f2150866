"""Core data model and on-disk formats.

Volumes live in a self-describing two-file format: a JSON header naming
dims, spacing, frame count, sample dtype and a relative path to a raw
little-endian voxel blob ordered frame-major then z, y, x fastest.
Intensities are normalized to [0,1] on load by the header's max_value.

Annotations, meshes (OBJ subset) and metric reports are plain text.
Every reader validates fully before constructing an object and reports
failures as ValidationError naming the violated rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import ValidationError
from .meshkit import SurfaceMesh
from .slicer import _plane_for_angle, build_axis_frame

_DTYPES = {"u8": np.uint8, "f32": np.float32}
SEED_LABELS = (("ED", 0), ("ED", 90), ("ES", 0), ("ES", 90))
CONTOUR_PLANARITY_TOL_MM = 1e-6


# ---------------------------------------------------------------------------
# Volumes


@dataclass(frozen=True)
class Volume3D:
    """Scalar volume; ``data`` is indexed [z, y, x] with intensities in [0,1].

    Physical coordinates are voxel-center based: the voxel at index
    (ix, iy, iz) sits at (ix*sx, iy*sy, iz*sz) mm.
    """

    data: np.ndarray  # (nz, ny, nx) float64
    spacing_mm: tuple[float, float, float]  # (sx, sy, sz)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if d.ndim != 3:
            raise ValidationError("volume_dims", f"expected 3 axes, got {d.ndim}")
        if min(d.shape) < 2:
            raise ValidationError("volume_dims", f"all dims must be >= 2, got {self.dims}")
        if min(self.spacing_mm) <= 0:
            raise ValidationError("volume_spacing", f"spacing must be positive: {self.spacing_mm}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical span between first and last voxel centers per axis."""
        nx, ny, nz = self.dims
        sx, sy, sz = self.spacing_mm
        return ((nx - 1) * sx, (ny - 1) * sy, (nz - 1) * sz)

    def sample_mm(self, points_mm: np.ndarray) -> np.ndarray:
        """Trilinear intensities at physical points; outside the grid -> 0."""
        p = np.atleast_2d(np.asarray(points_mm, dtype=float))
        sx, sy, sz = self.spacing_mm
        coords = np.vstack([p[:, 2] / sz, p[:, 1] / sy, p[:, 0] / sx])
        return map_coordinates(self.data, coords, order=1, mode="constant", cval=0.0)


@dataclass(frozen=True)
class Volume4D:
    """Temporal stack of identically shaped frames plus cycle metadata."""

    data: np.ndarray  # (F, nz, ny, nx) float64 in [0,1]
    spacing_mm: tuple[float, float, float]
    ed_index: int
    es_index: int
    dtype_label: str = "f32"
    max_value: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        if d.ndim != 4:
            raise ValidationError("volume_dims", f"expected 4 axes, got {d.ndim}")
        if d.shape[0] < 2:
            raise ValidationError("volume_frames", f"need >= 2 frames, got {d.shape[0]}")
        if min(d.shape[1:]) < 2:
            raise ValidationError("volume_dims", f"all dims must be >= 2, got {self.dims}")
        if min(self.spacing_mm) <= 0:
            raise ValidationError("volume_spacing", f"spacing must be positive: {self.spacing_mm}")
        if self.dtype_label not in _DTYPES:
            raise ValidationError("volume_dtype", f"dtype must be u8 or f32, got {self.dtype_label!r}")
        if not np.isfinite(self.max_value) or self.max_value <= 0:
            raise ValidationError("volume_max_value", f"max_value must be positive, got {self.max_value}")
        f = self.frame_count
        for name, idx in (("ed_index", self.ed_index), ("es_index", self.es_index)):
            if not (0 <= idx < f):
                raise ValidationError("volume_frame_indices", f"{name}={idx} outside [0, {f})")
        if self.ed_index == self.es_index:
            raise ValidationError("volume_frame_indices", "ed_index and es_index must differ")

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        _, nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    def frame(self, t: int) -> Volume3D:
        if not (0 <= t < self.frame_count):
            raise ValidationError("volume_frame_indices", f"frame {t} outside [0, {self.frame_count})")
        return Volume3D(data=self.data[t], spacing_mm=self.spacing_mm)

    @property
    def frames(self) -> list[Volume3D]:
        return [self.frame(t) for t in range(self.frame_count)]


def read_volume4d(path) -> Volume4D:
    """Load a volume header + raw blob; see module docstring for the layout."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError("volume_data_missing", f"no such file: {path}")
    try:
        header = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError("volume_schema", f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ValidationError("volume_schema", "header must be a JSON object")
    required = {"dims", "spacing_mm", "frames", "dtype", "max_value",
                "ed_index", "es_index", "data"}
    missing = required - header.keys()
    if missing:
        raise ValidationError("volume_schema", f"missing keys: {sorted(missing)}")

    dims = header["dims"]
    if (not isinstance(dims, list) or len(dims) != 3
            or not all(isinstance(d, int) and d >= 2 for d in dims)):
        raise ValidationError("volume_dims", f"dims must be 3 integers >= 2, got {dims}")
    spacing = header["spacing_mm"]
    if (not isinstance(spacing, list) or len(spacing) != 3
            or not all(isinstance(s, (int, float)) and s > 0 for s in spacing)):
        raise ValidationError("volume_spacing", f"spacing_mm must be 3 positive numbers, got {spacing}")
    frames = header["frames"]
    if not isinstance(frames, int) or frames < 2:
        raise ValidationError("volume_frames", f"frames must be an integer >= 2, got {frames}")
    if header["dtype"] not in _DTYPES:
        raise ValidationError("volume_dtype", f"dtype must be 'u8' or 'f32', got {header['dtype']!r}")
    max_value = header["max_value"]
    if not isinstance(max_value, (int, float)) or not np.isfinite(max_value) or max_value <= 0:
        raise ValidationError("volume_max_value", f"max_value must be positive, got {max_value}")
    for key in ("ed_index", "es_index"):
        if not isinstance(header[key], int) or not (0 <= header[key] < frames):
            raise ValidationError("volume_frame_indices", f"{key}={header[key]} outside [0, {frames})")
    if header["ed_index"] == header["es_index"]:
        raise ValidationError("volume_frame_indices", "ed_index and es_index must differ")

    raw_path = path.parent / header["data"]
    if not raw_path.is_file():
        raise ValidationError("volume_data_missing", f"raw blob not found: {raw_path}")
    dtype = np.dtype(_DTYPES[header["dtype"]]).newbyteorder("<")
    blob = np.fromfile(raw_path, dtype=dtype)
    nx, ny, nz = dims
    expected = frames * nx * ny * nz
    if blob.size != expected:
        raise ValidationError(
            "volume_data_size",
            f"expected {expected} samples ({expected * dtype.itemsize} bytes), got {blob.size}")
    data = blob.astype(np.float64).reshape(frames, nz, ny, nx) / float(max_value)
    if not np.isfinite(data).all():
        raise ValidationError("volume_value_range", "voxel payload contains non-finite values")
    if data.min() < 0 or data.max() > 1.0 + 1e-9:
        raise ValidationError(
            "volume_value_range",
            f"normalized intensities outside [0,1]: [{data.min():.6g}, {data.max():.6g}]")
    return Volume4D(data=np.clip(data, 0.0, 1.0), spacing_mm=tuple(spacing),
                    ed_index=header["ed_index"], es_index=header["es_index"],
                    dtype_label=header["dtype"], max_value=float(max_value))


def write_volume4d(vol: Volume4D, path) -> None:
    """Write header JSON at ``path`` and the raw blob alongside it."""
    path = Path(path)
    raw_name = path.stem + ".raw"
    nx, ny, nz = vol.dims
    header = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(vol.spacing_mm),
        "frames": vol.frame_count,
        "dtype": vol.dtype_label,
        "max_value": vol.max_value,
        "ed_index": vol.ed_index,
        "es_index": vol.es_index,
        "data": raw_name,
    }
    scaled = vol.data * vol.max_value
    if vol.dtype_label == "u8":
        raw = np.rint(scaled).clip(0, 255).astype("<u1")
    else:
        raw = scaled.astype("<f4")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, indent=2) + "\n")
    raw.tofile(path.parent / raw_name)


# ---------------------------------------------------------------------------
# Annotations


@dataclass(frozen=True)
class SeedContour:
    phase: str  # "ED" | "ES"
    angle_deg: int  # 0 | 90
    points_mm: np.ndarray  # (K, 3)

    def __post_init__(self):
        object.__setattr__(self, "points_mm", np.asarray(self.points_mm, dtype=float))


@dataclass(frozen=True)
class StudyAnnotation:
    """Apex/base picks plus the four seed contours (ED/ES at 0 and 90 deg)."""

    apex_mm: np.ndarray
    base_mm: np.ndarray
    contours: tuple[SeedContour, ...]

    def __post_init__(self):
        object.__setattr__(self, "apex_mm", np.asarray(self.apex_mm, dtype=float))
        object.__setattr__(self, "base_mm", np.asarray(self.base_mm, dtype=float))
        object.__setattr__(self, "contours", tuple(self.contours))

    def contour(self, phase: str, angle_deg: int) -> SeedContour:
        for c in self.contours:
            if c.phase == phase and c.angle_deg == angle_deg:
                return c
        raise ValidationError("contour_missing", f"no contour labeled ({phase}, {angle_deg})")


def validate_annotation(ann: StudyAnnotation) -> StudyAnnotation:
    """Check every annotation rule; returns the annotation for chaining."""
    for name, p in (("apex_mm", ann.apex_mm), ("base_mm", ann.base_mm)):
        if p.shape != (3,) or not np.isfinite(p).all():
            raise ValidationError("annotation_finite", f"{name} must be a finite 3-vector")
    axis = build_axis_frame(ann.apex_mm, ann.base_mm)  # raises apex_base_distinct

    seen = set()
    for c in ann.contours:
        if c.phase not in ("ED", "ES") or c.angle_deg not in (0, 90):
            raise ValidationError(
                "contour_label_invalid",
                f"label ({c.phase!r}, {c.angle_deg!r}) not in ED/ES x 0/90")
        key = (c.phase, c.angle_deg)
        if key in seen:
            raise ValidationError("contour_duplicate", f"contour ({c.phase}, {c.angle_deg}) appears twice")
        seen.add(key)
        pts = c.points_mm
        if pts.ndim != 2 or pts.shape[1] != 3 or not np.isfinite(pts).all():
            raise ValidationError("annotation_finite", f"contour ({c.phase}, {c.angle_deg}) points must be finite (K,3)")
        if len(pts) < 8:
            raise ValidationError(
                "contour_min_points",
                f"contour ({c.phase}, {c.angle_deg}) has {len(pts)} points, need >= 8")
        plane = _plane_for_angle(axis, float(c.angle_deg), 1.0, (3, 3))
        dist = np.abs(plane.distance_to_plane(pts)).max()
        if dist > CONTOUR_PLANARITY_TOL_MM:
            raise ValidationError(
                "contour_planarity",
                f"contour ({c.phase}, {c.angle_deg}) off its slice plane by {dist:.3g} mm")
    for label in SEED_LABELS:
        if label not in seen:
            raise ValidationError("contour_missing", f"no contour labeled {label}")
    return ann


def annotation_from_dict(obj) -> StudyAnnotation:
    if not isinstance(obj, dict):
        raise ValidationError("annotation_schema", "annotation must be a JSON object")
    missing = {"apex_mm", "base_mm", "contours"} - obj.keys()
    if missing:
        raise ValidationError("annotation_schema", f"missing keys: {sorted(missing)}")
    if not isinstance(obj["contours"], list):
        raise ValidationError("annotation_schema", "contours must be a list")
    contours = []
    for entry in obj["contours"]:
        if not isinstance(entry, dict) or {"phase", "angle_deg", "points_mm"} - entry.keys():
            raise ValidationError("annotation_schema", "each contour needs phase, angle_deg, points_mm")
        pts = np.asarray(entry["points_mm"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValidationError("annotation_schema", "points_mm must be a list of [x,y,z]")
        contours.append(SeedContour(phase=entry["phase"], angle_deg=entry["angle_deg"], points_mm=pts))
    try:
        apex = np.asarray(obj["apex_mm"], dtype=float).reshape(3)
        base = np.asarray(obj["base_mm"], dtype=float).reshape(3)
    except (TypeError, ValueError) as exc:
        raise ValidationError("annotation_schema", f"apex_mm/base_mm must be 3-vectors: {exc}") from exc
    ann = StudyAnnotation(apex_mm=apex, base_mm=base, contours=tuple(contours))
    return validate_annotation(ann)


def annotation_to_dict(ann: StudyAnnotation) -> dict:
    return {
        "apex_mm": [float(v) for v in ann.apex_mm],
        "base_mm": [float(v) for v in ann.base_mm],
        "contours": [
            {
                "phase": c.phase,
                "angle_deg": int(c.angle_deg),
                "points_mm": [[float(v) for v in p] for p in c.points_mm],
            }
            for c in ann.contours
        ],
    }


def read_annotation(path) -> StudyAnnotation:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("annotation_schema", f"no such file: {path}")
    try:
        obj = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError("annotation_schema", f"not valid JSON: {exc}") from exc
    return annotation_from_dict(obj)


def write_annotation(ann: StudyAnnotation, path) -> None:
    Path(path).write_text(json.dumps(annotation_to_dict(ann), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Meshes (OBJ subset: v/f records, 1-based indices)


def write_mesh(mesh: SurfaceMesh, path) -> None:
    if len(mesh.triangles) and mesh.triangles.max() >= len(mesh.vertices):
        raise ValidationError("mesh_index_range", "triangle indices outside vertex range")
    lines = []
    if mesh.meridian_layout is not None:
        na, k = mesh.meridian_layout
        lines.append(f"# layout {na} {k}")
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SurfaceMesh:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("mesh_schema", f"no such file: {path}")
    vertices, faces, layout = [], [], None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split()
        if parts[0] == "#":
            if len(parts) == 4 and parts[1] == "layout":
                layout = (int(parts[2]), int(parts[3]))
            continue
        if parts[0] == "v":
            if len(parts) != 4:
                raise ValidationError("mesh_schema", f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise ValidationError("mesh_schema", f"line {lineno}: {exc}") from exc
        elif parts[0] == "f":
            if len(parts) != 4:
                raise ValidationError("mesh_face_arity", f"line {lineno}: faces must be triangles")
            try:
                idx = [int(x) for x in parts[1:]]
            except ValueError as exc:
                raise ValidationError("mesh_schema", f"line {lineno}: {exc}") from exc
            faces.append([i - 1 for i in idx])
        else:
            raise ValidationError("mesh_schema", f"line {lineno}: unsupported record {parts[0]!r}")
    varr = np.asarray(vertices, dtype=float).reshape(-1, 3)
    farr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(farr) and (farr.min() < 0 or farr.max() >= len(varr)):
        raise ValidationError("mesh_index_range", "face indices outside vertex range")
    return SurfaceMesh(vertices=varr, triangles=farr, meridian_layout=layout)


# ---------------------------------------------------------------------------
# Metric reports


@dataclass(frozen=True)
class FrameMetrics:
    frame: int
    volume_ml: float
    d_m_mm: float | None = None
    d_h_mm: float | None = None
    dice: float | None = None


@dataclass(frozen=True)
class ClinicalMetrics:
    edv_ml: float
    esv_ml: float
    ef_percent: float


@dataclass(frozen=True)
class MetricsReport:
    per_frame: tuple[FrameMetrics, ...]
    clinical: ClinicalMetrics | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "per_frame", tuple(self.per_frame))
        for fm in self.per_frame:
            if fm.volume_ml is not None and fm.volume_ml <= 0:
                raise ValidationError("report_invariants", f"frame {fm.frame}: volume must be positive")
            if fm.d_m_mm is not None and fm.d_m_mm < 0:
                raise ValidationError("report_invariants", f"frame {fm.frame}: d_m must be >= 0")
            if fm.d_m_mm is not None and fm.d_h_mm is not None and fm.d_h_mm < fm.d_m_mm - 1e-12:
                raise ValidationError("report_invariants", f"frame {fm.frame}: d_H must be >= d_m")
            if fm.dice is not None and not (0.0 <= fm.dice <= 1.0):
                raise ValidationError("report_invariants", f"frame {fm.frame}: dice must lie in [0,1]")


def report_to_dict(report: MetricsReport) -> dict:
    out = {
        "per_frame": [
            {"frame": fm.frame, "volume_ml": fm.volume_ml, "d_m_mm": fm.d_m_mm,
             "d_h_mm": fm.d_h_mm, "dice": fm.dice}
            for fm in report.per_frame
        ],
        "stats": report.stats,
    }
    if report.clinical is not None:
        out["clinical"] = {
            "edv_ml": report.clinical.edv_ml,
            "esv_ml": report.clinical.esv_ml,
            "ef_percent": report.clinical.ef_percent,
        }
    return out


def report_from_dict(obj) -> MetricsReport:
    if not isinstance(obj, dict) or "per_frame" not in obj:
        raise ValidationError("report_schema", "report must be an object with per_frame")
    frames = []
    for entry in obj["per_frame"]:
        if not isinstance(entry, dict) or "frame" not in entry or "volume_ml" not in entry:
            raise ValidationError("report_schema", "each per_frame entry needs frame and volume_ml")
        frames.append(FrameMetrics(
            frame=int(entry["frame"]), volume_ml=entry["volume_ml"],
            d_m_mm=entry.get("d_m_mm"), d_h_mm=entry.get("d_h_mm"),
            dice=entry.get("dice")))
    clinical = None
    if obj.get("clinical") is not None:
        c = obj["clinical"]
        if not isinstance(c, dict) or {"edv_ml", "esv_ml", "ef_percent"} - c.keys():
            raise ValidationError("report_schema", "clinical needs edv_ml, esv_ml, ef_percent")
        clinical = ClinicalMetrics(edv_ml=float(c["edv_ml"]), esv_ml=float(c["esv_ml"]),
                                   ef_percent=float(c["ef_percent"]))
    return MetricsReport(per_frame=tuple(frames), clinical=clinical,
                         stats=obj.get("stats") or {})


def read_report(path) -> MetricsReport:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("report_schema", f"no such file: {path}")
    try:
        obj = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError("report_schema", f"not valid JSON: {exc}") from exc
    return report_from_dict(obj)


def write_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
