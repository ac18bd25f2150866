"""Synthetic 4D echocardiography with analytic ground truth.

Each frame renders a truncated spheroidal shell (the wall) around a dark
cavity on a voxel grid, with optional multiplicative speckle. The shape
is an ellipsoid with semi-axes (a, b, c), cut by the plane a fraction of
c above its center; the apex is the opposite pole. A bent variant shears
the midline along +x into a circular arc tangent to the axis at the cut,
which leaves every cross-sectional area (and thus the cavity volume)
unchanged.

Ground truth never goes through the segmentation path: seed contours and
meshes are computed from the analytic surface alone, by radial bisection
in each slice plane, and cavity volumes come from the closed-form
truncated-spheroid formula.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .meshkit import SurfaceMesh, build_mesh
from .slicer import AxisFrame, _plane_for_angle, build_axis_frame
from .volcore import SeedContour, StudyAnnotation, Volume4D

TRUTH_MESH_ANGLE_DEG = 3.0
TRUTH_CONTOUR_POINTS = 64
MIN_WALL_VOXELS = 2.0

_BISECT_ITERS = 60


# ---------------------------------------------------------------------------
# Specification


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for one synthetic study.

    ``semi_axes_mm`` holds the per-frame cavity semi-axes (F, 3); frame 0
    is ED and the volume-minimum frame is ES. The cut plane sits at
    ``cut_frac * c`` above the ellipsoid center, the wall is a shell of
    ``wall_thickness_mm`` around the cavity, and ``bend_per_mm`` is the
    curvature of the arc the midline is bent along (0 keeps it straight).
    ``speckle_sigma`` in [0, 1] blends multiplicative Rayleigh speckle
    into the noiseless rendering (0 means none).
    """

    semi_axes_mm: np.ndarray
    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    wall_intensity: float = 0.9
    cavity_intensity: float = 0.05
    background_intensity: float = 0.35
    wall_thickness_mm: float = 8.0
    cut_frac: float = 0.5
    bend_per_mm: float = 0.0
    speckle_sigma: float = 0.0
    rng_seed: int = 0
    name: str = ""

    def __post_init__(self):
        axes = np.asarray(self.semi_axes_mm, dtype=float)
        if axes.ndim == 1:
            axes = axes[None, :]
        object.__setattr__(self, "semi_axes_mm", axes)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing_mm",
                           tuple(float(s) for s in self.spacing_mm))
        if axes.ndim != 2 or axes.shape[1] != 3 or not np.isfinite(axes).all() \
                or (axes <= 0).any():
            raise ValidationError(
                "phantom_axes", "semi_axes_mm must be positive finite (F, 3) mm")
        if len(axes) < 2:
            raise ValidationError("phantom_frames", "need >= 2 frames")
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ValidationError("phantom_grid", f"dims too small: {self.dims}")
        if len(self.spacing_mm) != 3 or min(self.spacing_mm) <= 0:
            raise ValidationError(
                "phantom_grid", f"spacing must be positive: {self.spacing_mm}")
        order = (self.wall_intensity, self.background_intensity,
                 self.cavity_intensity)
        if not all(0.0 <= v <= 1.0 for v in order) or not order[0] > order[1] > order[2]:
            raise ValidationError(
                "phantom_intensity",
                "need 1 >= wall > background > cavity >= 0, got "
                f"wall={order[0]}, background={order[1]}, cavity={order[2]}")
        if not (0.0 <= self.speckle_sigma <= 1.0):
            raise ValidationError(
                "phantom_speckle", f"speckle_sigma in [0, 1], got {self.speckle_sigma}")
        if not (-1.0 < self.cut_frac < 1.0):
            raise ValidationError(
                "phantom_cut", f"cut_frac must lie in (-1, 1), got {self.cut_frac}")
        if self.wall_thickness_mm < MIN_WALL_VOXELS * max(self.spacing_mm):
            raise ValidationError(
                "shell_thickness",
                f"wall {self.wall_thickness_mm} mm is thinner than "
                f"{MIN_WALL_VOXELS} voxels at spacing {max(self.spacing_mm)} mm")
        c_max = float(axes[:, 2].max())
        cut_span = c_max * (1.0 + self.cut_frac)
        if self.bend_per_mm != 0.0:
            if not np.isfinite(self.bend_per_mm) or abs(self.bend_per_mm) * cut_span >= 1.0:
                raise ValidationError(
                    "phantom_bend",
                    f"|bend_per_mm| must stay below 1/{cut_span:.0f} so the arc "
                    "spans the axis")
        vols = np.array([_cap_volume_mm3(a, b, c, self.cut_frac * c)
                         for a, b, c in axes])
        if vols[0] < vols.max() - 1e-9:
            raise ValidationError(
                "phantom_cycle", "frame 0 (ED) must hold the largest cavity volume")

    @property
    def frame_count(self) -> int:
        return len(self.semi_axes_mm)

    @property
    def es_index(self) -> int:
        """Volume-minimum frame; the middle frame for a static spec."""
        vols = self.volumes_mm3
        if np.ptp(vols) < 1e-12:
            return self.frame_count // 2
        return int(np.argmin(vols))

    @property
    def volumes_mm3(self) -> np.ndarray:
        return np.array([_cap_volume_mm3(a, b, c, self.cut_frac * c)
                         for a, b, c in self.semi_axes_mm])


@dataclass(frozen=True)
class PhantomTruth:
    """Analytic ground truth accompanying a generated study."""

    axis: AxisFrame
    annotation: StudyAnnotation
    meshes: tuple[SurfaceMesh, ...]
    volumes_ml: tuple[float, ...]
    ef_percent: float


def _cap_volume_mm3(a: float, b: float, c: float, z0: float) -> float:
    """Closed-form volume of the ellipsoid region z <= z0."""
    return np.pi * a * b * (z0 - z0**3 / (3.0 * c**2) + 2.0 * c / 3.0)


def cosine_cycle_axes(ed_axes, es_scale, frames: int, es_frame: int) -> np.ndarray:
    """Smooth periodic per-frame semi-axes for a beating phantom.

    Each axis falls from its ED value at frame 0 to ``ed * es_scale`` at
    ``es_frame`` along a raised-cosine ramp and recovers the same way, so
    the cycle is smooth and periodic.
    """
    if not (0 < es_frame < frames):
        raise ValidationError("phantom_frames",
                              f"es_frame {es_frame} outside (0, {frames})")
    ed = np.asarray(ed_axes, dtype=float).reshape(3)
    scale = np.asarray(es_scale, dtype=float).reshape(3)
    t = np.arange(frames)
    h = np.where(
        t <= es_frame,
        0.5 * (1.0 - np.cos(np.pi * t / es_frame)),
        0.5 * (1.0 - np.cos(np.pi * (frames - t) / (frames - es_frame))),
    )
    return ed[None, :] * (1.0 + (scale - 1.0)[None, :] * h[:, None])


# ---------------------------------------------------------------------------
# Analytic geometry


class _Shape:
    """One frame's analytic cavity surface in world mm coordinates."""

    def __init__(self, spec: PhantomSpec, frame: int):
        a, b, c = (float(v) for v in spec.semi_axes_mm[frame])
        nx, ny, nz = spec.dims
        sx, sy, sz = spec.spacing_mm
        self.a, self.b, self.c = a, b, c
        self.center = np.array([(nx - 1) * sx, (ny - 1) * sy, (nz - 1) * sz]) / 2.0
        self.z0 = spec.cut_frac * c
        self.kappa = spec.bend_per_mm

    def bend_offset(self, z_local):
        """Midline x-offset of the circular-arc bend at height ``z_local``.

        The arc is tangent to the axis at the cut plane, so the offset
        and its slope both vanish there.
        """
        if self.kappa == 0.0:
            return np.zeros_like(np.asarray(z_local, dtype=float))
        r = 1.0 / self.kappa
        dz = np.asarray(z_local, dtype=float) - self.z0
        return r - np.sign(r) * np.sqrt(r * r - dz * dz)

    def rho2(self, x, y, z, grow_mm: float = 0.0):
        """Squared ellipsoidal coordinate of world points, after unbending."""
        xl = x - self.center[0]
        yl = y - self.center[1]
        zl = z - self.center[2]
        xs = xl - self.bend_offset(zl)
        a, b, c = self.a + grow_mm, self.b + grow_mm, self.c + grow_mm
        return (xs / a) ** 2 + (yl / b) ** 2 + (zl / c) ** 2

    @property
    def apex_mm(self) -> np.ndarray:
        off = float(self.bend_offset(-self.c))
        return self.center + np.array([off, 0.0, -self.c])

    @property
    def base_mm(self) -> np.ndarray:
        return self.center + np.array([0.0, 0.0, self.z0])


def _cut_corners(shape: _Shape, plane):
    """The two points where the cavity rim meets a slice plane.

    At the cut height the bend offset vanishes, so the rim is the plain
    ellipse (x/a)^2 + (y/b)^2 = 1 - (z0/c)^2; intersecting it with the
    in-plane line at that height is a quadratic.
    """
    o = plane.origin_mm
    u_hat, v_hat = plane.basis_u, plane.basis_v
    z_cut = shape.center[2] + shape.z0
    if abs(u_hat[2]) < 1e-12:
        raise ValidationError("phantom_geometry", "slice plane parallel to the cut")
    u0 = (z_cut - o[2]) / u_hat[2]
    q0 = o + u0 * u_hat
    d = v_hat - (v_hat[2] / u_hat[2]) * u_hat  # in-plane, horizontal
    x0, y0 = q0[0] - shape.center[0], q0[1] - shape.center[1]
    dx, dy = d[0], d[1]
    k = 1.0 - (shape.z0 / shape.c) ** 2
    qa = (dx / shape.a) ** 2 + (dy / shape.b) ** 2
    qb = 2.0 * (x0 * dx / shape.a**2 + y0 * dy / shape.b**2)
    qc = (x0 / shape.a) ** 2 + (y0 / shape.b) ** 2 - k
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0:
        raise ValidationError("phantom_geometry", "cut plane misses the cavity")
    roots = np.array([(-qb + np.sqrt(disc)) / (2 * qa), (-qb - np.sqrt(disc)) / (2 * qa)])
    corners = [q0 + v * d for v in roots]
    in_plane = [((p - o) @ u_hat, (p - o) @ v_hat) for p in corners]
    return corners, in_plane


def _surface_contour(shape: _Shape, plane, k: int) -> np.ndarray:
    """Analytic cavity contour on one slice plane, by radial bisection.

    Sweeps the polar angle about the in-plane axis midpoint from one cut
    corner through the apex to the other, keeping index 0 on the +v side
    for a consistent rotational sense across planes.
    """
    corners, in_plane = _cut_corners(shape, plane)
    (u1, v1), (u2, v2) = in_plane
    if v1 < v2:
        (u1, v1), (u2, v2) = (u2, v2), (u1, v1)
        corners = corners[::-1]
    psi1 = np.arctan2(v1, u1)
    psi2 = np.arctan2(v2, u2)
    psi = np.linspace(psi1, psi2, k)  # through 0, the apex direction

    o = plane.origin_mm
    u_hat, v_hat = plane.basis_u, plane.basis_v
    dirs = (np.cos(psi)[:, None] * u_hat[None, :]
            + np.sin(psi)[:, None] * v_hat[None, :])

    lo = np.zeros(k)
    hi = np.full(k, shape.c + shape.z0 + abs(shape.bend_offset(-shape.c)) + 20.0)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        q = o[None, :] + mid[:, None] * dirs
        outside = shape.rho2(q[:, 0], q[:, 1], q[:, 2]) > 1.0
        hi = np.where(outside, mid, hi)
        lo = np.where(outside, lo, mid)
    pts = o[None, :] + (0.5 * (lo + hi))[:, None] * dirs
    pts[0], pts[-1] = corners[0], corners[1]
    return pts


def _truth_axis(spec: PhantomSpec, frame: int) -> AxisFrame:
    shape = _Shape(spec, frame)
    return build_axis_frame(shape.apex_mm, shape.base_mm)


@dataclass(frozen=True)
class _ContourGrid:
    angles_deg: list
    points: np.ndarray


def _truth_mesh(spec: PhantomSpec, frame: int) -> SurfaceMesh:
    shape = _Shape(spec, frame)
    axis = build_axis_frame(shape.apex_mm, shape.base_mm)
    angles = np.arange(0.0, 180.0, TRUTH_MESH_ANGLE_DEG)
    rows = []
    for ang in angles:
        plane = _plane_for_angle(axis, float(ang), 1.0, (3, 3))
        rows.append(_surface_contour(shape, plane, TRUTH_CONTOUR_POINTS))
    grid = _ContourGrid(angles_deg=list(angles), points=np.asarray(rows))
    return build_mesh(grid, axis)


def annotation_for_axis(spec: PhantomSpec, axis: AxisFrame) -> StudyAnnotation:
    """Analytic seed annotation for an arbitrary chamber axis.

    Intersects the true ED and ES surfaces with the 0/90 degree planes of
    the given axis, as a human re-annotating the corresponding reslices
    would. Used by the axis-perturbation experiment; the truth annotation
    is this function applied to the truth axis.
    """
    contours = []
    for phase, frame in (("ED", 0), ("ES", spec.es_index)):
        shape = _Shape(spec, frame)
        for angle in (0, 90):
            plane = _plane_for_angle(axis, float(angle), 1.0, (3, 3))
            pts = _surface_contour(shape, plane, TRUTH_CONTOUR_POINTS)
            contours.append(SeedContour(phase=phase, angle_deg=angle, points_mm=pts))
    return StudyAnnotation(apex_mm=axis.apex_mm, base_mm=axis.base_mm,
                           contours=tuple(contours))


def _truth_annotation(spec: PhantomSpec) -> StudyAnnotation:
    return annotation_for_axis(spec, _truth_axis(spec, 0))


# ---------------------------------------------------------------------------
# Rendering


def _render_frame(spec: PhantomSpec, frame: int) -> np.ndarray:
    shape = _Shape(spec, frame)
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing_mm
    z, y, x = np.meshgrid(np.arange(nz) * sz, np.arange(ny) * sy,
                          np.arange(nx) * sx, indexing="ij")
    below_cut = z - shape.center[2] <= shape.z0
    cavity = (shape.rho2(x, y, z) <= 1.0) & below_cut
    wall = (shape.rho2(x, y, z, grow_mm=spec.wall_thickness_mm) <= 1.0) \
        & below_cut & ~cavity
    img = np.full(cavity.shape, spec.background_intensity)
    img[wall] = spec.wall_intensity
    img[cavity] = spec.cavity_intensity
    if spec.speckle_sigma > 0.0:
        rng = np.random.default_rng([spec.rng_seed, frame])
        rayleigh = rng.rayleigh(scale=np.sqrt(2.0 / np.pi), size=img.shape)
        factor = (1.0 - spec.speckle_sigma) + spec.speckle_sigma * rayleigh
        img = np.clip(img * factor, 0.0, 1.0)
    return img


def generate(spec: PhantomSpec) -> tuple[Volume4D, PhantomTruth]:
    """Render a phantom study and its analytic ground truth.

    Returns the 4D volume (ED at frame 0, ES at the volume-minimum
    frame) and a PhantomTruth holding the axis, the four-seed annotation,
    one analytic surface mesh per frame, per-frame cavity volumes from
    the closed-form truncated-spheroid formula, and the analytic EF.
    Identical specs produce bit-identical volumes: the speckle stream is
    split per frame from ``rng_seed`` deterministically.
    """
    frames = np.stack([_render_frame(spec, t) for t in range(spec.frame_count)])
    vol = Volume4D(data=frames, spacing_mm=spec.spacing_mm,
                   ed_index=0, es_index=spec.es_index)
    vols_mm3 = spec.volumes_mm3
    ef = 100.0 * (1.0 - vols_mm3[spec.es_index] / vols_mm3[0])
    truth = PhantomTruth(
        axis=_truth_axis(spec, 0),
        annotation=_truth_annotation(spec),
        meshes=tuple(_truth_mesh(spec, t) for t in range(spec.frame_count)),
        volumes_ml=tuple(float(v) / 1000.0 for v in vols_mm3),
        ef_percent=float(ef),
    )
    return vol, truth


# ---------------------------------------------------------------------------
# Canonical suite


def default_suite() -> list[PhantomSpec]:
    """The four canonical phantoms used by the experiment harness.

    (a) static spheroid, (b) beating symmetric spheroid, (c) beating
    bent asymmetric LV, (d) the low-SNR variant of (b). Frame counts and
    voxel spacing sit in typical clinical 4D echo ranges.
    """
    grid = dict(dims=(68, 68, 84), spacing_mm=(0.95, 0.95, 0.95))
    symmetric = cosine_cycle_axes(
        (21.0, 21.0, 42.0), (0.82, 0.82, 0.93), frames=20, es_frame=8)
    bent = cosine_cycle_axes(
        (22.0, 17.0, 41.0), (0.84, 0.80, 0.92), frames=24, es_frame=10)
    return [
        PhantomSpec(semi_axes_mm=np.tile([20.0, 20.0, 40.0], (18, 1)),
                    speckle_sigma=0.10, rng_seed=101, name="static", **grid),
        PhantomSpec(semi_axes_mm=symmetric, speckle_sigma=0.15, rng_seed=202,
                    name="beating-symmetric", **grid),
        PhantomSpec(semi_axes_mm=bent, bend_per_mm=1.0 / 150.0,
                    speckle_sigma=0.15, rng_seed=303, name="beating-bent", **grid),
        PhantomSpec(semi_axes_mm=symmetric, speckle_sigma=0.50, rng_seed=404,
                    name="low-snr", **grid),
    ]
