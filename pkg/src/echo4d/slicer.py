"""Slice-plane geometry: axis alignment, angular reslicing, and 2D<->3D mapping.

Conventions used throughout the package:

- Physical coordinates are (x, y, z) in mm. Voxel (ix, iy, iz) of a volume
  is centered at (ix*sx, iy*sy, iz*sz) mm.
- The long axis of the chamber runs from the base point to the apex point;
  ``axis_dir`` is the unit vector pointing base -> apex.
- Slice planes all contain the long axis and are enumerated by their
  rotation angle about it, covering 180 degrees (a plane at theta + 180 is
  the same plane with its transverse coordinate negated).
- In-plane coordinates (u, v): u runs along the long axis (positive toward
  the apex), v is the transverse coordinate that rotates with the plane
  angle. Pixel (col, row) maps to (u, v) with the central pixel at the
  slicing origin.

The world->plane transform anchors its rotation at the slicing origin
(midpoint of apex and base), so that origin is a fixed point and every
plane contains the full apex-base segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

REF_DIR = np.array([1.0, 0.0, 0.0])

# Fallback rotation axis when the long axis is anti-parallel to REF_DIR;
# any fixed perpendicular direction works.
_ANTIPARALLEL_AXIS = np.array([0.0, 1.0, 0.0])

_PARALLEL_EPS = 1e-12


def rotation_about_axis(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Right-handed rotation matrix about a (not necessarily unit) axis."""
    n = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0.0:
        raise ValueError("rotation axis must be non-zero")
    n = n / norm
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    cross = np.array([
        [0.0, -n[2], n[1]],
        [n[2], 0.0, -n[0]],
        [-n[1], n[0], 0.0],
    ])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(n, n)


def _rotation_x(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rigid4(rot: np.ndarray, translation: np.ndarray) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = translation
    return m


@dataclass(frozen=True)
class AxisFrame:
    """User-defined long axis plus the rotation aligning it with REF_DIR.

    ``align_mat4`` is a 4x4 rigid transform whose rotation block maps
    ``axis_dir`` onto ``REF_DIR``; ``rot_axis`` is REF_DIR x axis_dir and
    ``tilt_rad`` the angle between the two directions.
    ``origin_mm`` (midpoint of apex and base) is the origin about which all
    angular slicing is performed.
    """

    apex_mm: np.ndarray
    base_mm: np.ndarray
    axis_dir: np.ndarray
    ref_dir: np.ndarray
    tilt_rad: float
    rot_axis: np.ndarray
    align_mat4: np.ndarray
    origin_mm: np.ndarray

    @property
    def align_rot(self) -> np.ndarray:
        """3x3 rotation block of align_mat4."""
        return self.align_mat4[:3, :3]

    @property
    def axis_length_mm(self) -> float:
        return float(np.linalg.norm(self.apex_mm - self.base_mm))


def build_axis_frame(apex_mm, base_mm) -> AxisFrame:
    """Build the axis frame for a picked apex/base pair.

    Parameters
    ----------
    apex_mm, base_mm : array-like, shape (3,)
        Apex and base points in physical mm.

    Raises
    ------
    ValidationError
        rule ``apex_base_distinct`` when the two points coincide.
    """
    apex = np.asarray(apex_mm, dtype=float).reshape(3)
    base = np.asarray(base_mm, dtype=float).reshape(3)
    v = apex - base
    length = np.linalg.norm(v)
    if not np.isfinite(length) or length <= 1e-6:
        raise ValidationError(
            "apex_base_distinct",
            f"apex and base must be distinct finite points (separation {length!r} mm)",
        )
    v_hat = v / length
    cos_tilt = float(np.clip(np.dot(REF_DIR, v_hat), -1.0, 1.0))
    tilt = float(np.arccos(cos_tilt))
    rot_axis = np.cross(REF_DIR, v_hat)
    if cos_tilt >= 1.0 - _PARALLEL_EPS:
        rot = np.eye(3)
    elif cos_tilt <= -1.0 + _PARALLEL_EPS:
        rot = rotation_about_axis(_ANTIPARALLEL_AXIS, np.pi)
    else:
        # Rotating by +tilt about (REF_DIR x axis_dir) carries REF_DIR onto
        # axis_dir, so the aligning rotation uses the opposite angle.
        rot = rotation_about_axis(rot_axis, -tilt)
    origin = 0.5 * (apex + base)
    return AxisFrame(
        apex_mm=apex,
        base_mm=base,
        axis_dir=v_hat,
        ref_dir=REF_DIR.copy(),
        tilt_rad=tilt,
        rot_axis=rot_axis,
        align_mat4=_rigid4(rot, np.zeros(3)),
        origin_mm=origin,
    )


@dataclass(frozen=True)
class SlicePlane:
    """One angular slice plane with its pixel grid.

    ``to_plane`` maps world mm coordinates into the plane frame (a rigid
    transform with the slicing origin as fixed point); ``from_plane`` is its
    inverse. The plane itself is the locus where the third plane-frame
    coordinate equals its value at the origin.
    """

    angle_deg: float
    to_plane: np.ndarray
    from_plane: np.ndarray
    origin_mm: np.ndarray
    in_plane_spacing: float
    extent: tuple[int, int]  # (w, h) pixels

    @property
    def basis_u(self) -> np.ndarray:
        """World direction of increasing u (long axis, toward apex)."""
        return self.from_plane[:3, 0]

    @property
    def basis_v(self) -> np.ndarray:
        """World direction of increasing v (transverse)."""
        return self.from_plane[:3, 1]

    @property
    def unit_normal(self) -> np.ndarray:
        return self.from_plane[:3, 2]

    @property
    def center_px(self) -> tuple[float, float]:
        w, h = self.extent
        return ((w - 1) / 2.0, (h - 1) / 2.0)

    def px_to_mm(self, points_px) -> np.ndarray:
        """Map (col, row) pixel coordinates to world mm points on the plane."""
        pts = np.atleast_2d(np.asarray(points_px, dtype=float))
        cx, cy = self.center_px
        u = (pts[:, 0] - cx) * self.in_plane_spacing
        v = (pts[:, 1] - cy) * self.in_plane_spacing
        return (
            self.origin_mm
            + u[:, None] * self.basis_u[None, :]
            + v[:, None] * self.basis_v[None, :]
        )

    def mm_to_px(self, points_mm) -> np.ndarray:
        """Project world mm points into (col, row) pixel coordinates.

        Points off the plane are projected orthogonally onto it.
        """
        pts = np.atleast_2d(np.asarray(points_mm, dtype=float))
        rel = pts - self.origin_mm
        u = rel @ self.basis_u
        v = rel @ self.basis_v
        cx, cy = self.center_px
        return np.column_stack([u / self.in_plane_spacing + cx,
                                v / self.in_plane_spacing + cy])

    def distance_to_plane(self, points_mm) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points_mm, dtype=float))
        return np.abs((pts - self.origin_mm) @ self.unit_normal)


@dataclass(frozen=True)
class Slice2D:
    """A resampled 2D angular slice of one frame."""

    pixels: np.ndarray  # (h, w), values in [0, 1]
    plane: SlicePlane
    frame_index: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def _plane_for_angle(axis: AxisFrame, angle_deg: float,
                     in_plane_spacing: float, extent: tuple[int, int]) -> SlicePlane:
    rot = _rotation_x(np.deg2rad(angle_deg)) @ axis.align_rot
    origin = axis.origin_mm
    to_plane = _rigid4(rot, origin - rot @ origin)
    from_plane = _rigid4(rot.T, origin - rot.T @ origin)
    return SlicePlane(
        angle_deg=float(angle_deg),
        to_plane=to_plane,
        from_plane=from_plane,
        origin_mm=origin,
        in_plane_spacing=float(in_plane_spacing),
        extent=extent,
    )


def slice_grid_for_volume(axis: AxisFrame, vol) -> tuple[float, tuple[int, int]]:
    """Pixel spacing and extent for slicing a volume.

    Spacing is the smallest voxel spacing; the square extent covers the
    volume's bounding sphere as seen from the slicing origin, with an odd
    pixel count so the central pixel lands exactly on the origin.
    """
    spacing = np.asarray(vol.spacing_mm, dtype=float)
    dims = np.asarray(vol.dims, dtype=float)
    span = (dims - 1.0) * spacing
    box_center = span / 2.0
    radius = 0.5 * float(np.linalg.norm(span))
    radius += float(np.linalg.norm(axis.origin_mm - box_center))
    step = float(spacing.min())
    half_px = int(np.ceil(radius / step))
    n = 2 * half_px + 1
    return step, (n, n)


def make_slice_planes(axis: AxisFrame, theta_d: float, vol) -> list[SlicePlane]:
    """Planes at angles {0, theta_d, ..., 180 - theta_d} about the long axis.

    ``vol`` supplies voxel spacing and dimensions for the pixel grid
    (smallest spacing, extent covering the bounding sphere).

    Raises
    ------
    ValidationError
        rule ``theta_d_divides_180`` unless theta_d > 0 and 180/theta_d is
        an integer.
    """
    count = _angle_count(theta_d)
    step, extent = slice_grid_for_volume(axis, vol)
    return [
        _plane_for_angle(axis, i * float(theta_d), step, extent)
        for i in range(count)
    ]


def _angle_count(theta_d: float) -> int:
    theta = float(theta_d)
    if not np.isfinite(theta) or theta <= 0:
        raise ValidationError("theta_d_divides_180",
                              f"angular spacing must be positive, got {theta!r}")
    count = 180.0 / theta
    if abs(count - round(count)) > 1e-9:
        raise ValidationError(
            "theta_d_divides_180",
            f"angular spacing {theta!r} does not divide 180 into a whole number of planes",
        )
    return int(round(count))


def plane_angles(theta_d: float) -> list[float]:
    """The angle grid {0, theta_d, ..., 180 - theta_d} in degrees."""
    count = _angle_count(theta_d)
    return [i * float(theta_d) for i in range(count)]


def extract_slice(vol, plane: SlicePlane, frame_index: int = 0) -> Slice2D:
    """Resample one 2D angular slice out of a 3D frame.

    Each output pixel is sampled at the world position of its (col, row)
    coordinate via trilinear interpolation; samples outside the volume are 0.
    """
    w, h = plane.extent
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    pts_px = np.column_stack([cols.ravel(), rows.ravel()])
    pts_mm = plane.px_to_mm(pts_px)
    values = vol.sample_mm(pts_mm)
    return Slice2D(pixels=values.reshape(h, w), plane=plane,
                   frame_index=int(frame_index))


def lift_contour(points2d, plane: SlicePlane) -> np.ndarray:
    """Map 2D (col, row) pixel points on a slice back to 3D mm points."""
    return plane.px_to_mm(points2d)


def project_to_slice(points_mm, plane: SlicePlane) -> np.ndarray:
    """Map 3D mm points to 2D (col, row) pixel coordinates on a plane."""
    return plane.mm_to_px(points_mm)
