"""Semi-automated LV segmentation: angular and temporal contour propagation.

A study is segmented from four manual seed contours (ED/ES at 0 and 90
degrees). Within one frame, seeds are carried to every angular slice by
chaining 2D registrations between adjacent slices; over the cycle, the ED
and ES contour sets are carried to every frame by chaining registrations
between temporally adjacent slices, and the two propagated candidates are
blended with cyclic linear weights.

Conventions
-----------
Contours are open polylines running from one basal end through the apex
to the other basal end. Seed ingestion orients them so index 0 sits on
the positive-v side of the slice plane, which gives every seed the same
rotational sense about the axis regardless of draw direction; after every
warp the contour is re-sampled to ``CONTOUR_POINTS`` points uniformly by
arc length, which keeps the point count fixed and the index
correspondence stable across angles and frames.

``register(fixed, moving)`` recovers the apparent motion of features from
``fixed`` to ``moving``, so warping a contour known on the fixed slice
with the resulting field lands it on the moving slice.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from .errors import RegistrationDegeneracyError, ValidationError
from .regengine import RegistrationConfig, register, warp_points
from .slicer import (
    AxisFrame,
    SlicePlane,
    _plane_for_angle,
    build_axis_frame,
    extract_slice,
    lift_contour,
    make_slice_planes,
    project_to_slice,
    rotation_about_axis,
    slice_grid_for_volume,
)
from .volcore import CONTOUR_PLANARITY_TOL_MM, SeedContour, StudyAnnotation

CONTOUR_POINTS = 64
MIN_CONTOUR_RADIUS_MM = 2.0
MAX_CONTOUR_DELTA_MM = 5.0

_ORIENT_TIE_TOL = 1e-9


# ---------------------------------------------------------------------------
# Contour containers


@dataclass(frozen=True)
class ContourSet3D:
    """Corresponded 3D contours of one frame, keyed by slice angle.

    ``contours`` maps angle in degrees to an ordered (K, 3) array of mm
    points. Every contour has the same K, and point k of one angle
    corresponds anatomically to point k of every other angle.
    """

    frame_index: int
    contours: dict[float, np.ndarray]

    def __post_init__(self):
        if not self.contours:
            raise ValidationError("contour_set", "contour set has no angles")
        clean: dict[float, np.ndarray] = {}
        k_ref = None
        for angle in sorted(float(a) for a in self.contours):
            pts = np.asarray(self.contours[angle], dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
                raise ValidationError(
                    "contour_set",
                    f"contour at {angle} deg must be (K>=4, 3), got {pts.shape}")
            if not np.isfinite(pts).all():
                raise ValidationError(
                    "contour_set", f"contour at {angle} deg has non-finite points")
            if k_ref is None:
                k_ref = len(pts)
            elif len(pts) != k_ref:
                raise ValidationError(
                    "contour_set",
                    f"contour at {angle} deg has {len(pts)} points, expected {k_ref}")
            clean[angle] = pts
        object.__setattr__(self, "frame_index", int(self.frame_index))
        object.__setattr__(self, "contours", clean)

    @property
    def angles_deg(self) -> np.ndarray:
        return np.array(list(self.contours), dtype=float)

    @property
    def points(self) -> np.ndarray:
        """All contours stacked as (A, K, 3) in ascending angle order."""
        return np.stack(list(self.contours.values()))

    @property
    def points_per_contour(self) -> int:
        return len(next(iter(self.contours.values())))

    def contour(self, angle_deg: float) -> np.ndarray:
        a = float(angle_deg)
        for key, pts in self.contours.items():
            if abs(key - a) <= 1e-6:
                return pts
        raise ValidationError("contour_set", f"no contour at {angle_deg} deg")


def contour_set_to_dict(cs: ContourSet3D) -> dict:
    """JSON-ready form of a contour set."""
    return {
        "frame_index": cs.frame_index,
        "contours": [
            {"angle_deg": a, "points_mm": pts.tolist()}
            for a, pts in cs.contours.items()
        ],
    }


def contour_set_from_dict(obj) -> ContourSet3D:
    if not isinstance(obj, dict) or {"frame_index", "contours"} - obj.keys():
        raise ValidationError(
            "contour_set_schema", "contour set needs frame_index and contours")
    entries = obj["contours"]
    if not isinstance(entries, list):
        raise ValidationError("contour_set_schema", "contours must be a list")
    contours = {}
    for entry in entries:
        if not isinstance(entry, dict) or {"angle_deg", "points_mm"} - entry.keys():
            raise ValidationError(
                "contour_set_schema", "each contour needs angle_deg and points_mm")
        contours[float(entry["angle_deg"])] = np.asarray(
            entry["points_mm"], dtype=float)
    return ContourSet3D(frame_index=obj["frame_index"], contours=contours)


@dataclass(frozen=True)
class TemporalWeights:
    """Per-frame blending weights for the ED-anchored candidate.

    ``weights[t]`` multiplies the contour propagated from ED at frame t;
    the ES-propagated candidate gets ``1 - weights[t]``. Weights are 1 at
    ED, 0 at ES, and vary monotonically along each of the two cycle arcs
    between the anchors.
    """

    weights: tuple[float, ...]
    ed_index: int
    es_index: int

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        n = len(self.weights)
        ed, es = self.ed_index, self.es_index
        if n < 2 or not (0 <= ed < n and 0 <= es < n) or ed == es:
            raise ValidationError(
                "temporal_weights", "need >= 2 frames and distinct ED/ES inside them")
        w = self.weights
        if any(not (0.0 <= x <= 1.0) for x in w):
            raise ValidationError("temporal_weights", "weights must lie in [0, 1]")
        if w[ed] != 1.0 or w[es] != 0.0:
            raise ValidationError(
                "temporal_weights", "weight must be 1 at ED and 0 at ES")
        for start, stop, sign in ((ed, es, -1.0), (es, ed, 1.0)):
            t = start
            while t != stop:
                nxt = (t + 1) % n
                if sign * (w[nxt] - w[t]) < -1e-12:
                    raise ValidationError(
                        "temporal_weights",
                        "weights must be monotone along each cycle arc")
                t = nxt


def cyclic_weights(frame_count: int, ed_index: int, es_index: int) -> TemporalWeights:
    """Linear cyclic blending weights between the ED and ES anchors.

    On the arc running ED -> ES the weight falls linearly from 1 to 0 with
    frame distance; on the ES -> ED arc it rises back. A frame equidistant
    from both anchors gets exactly 0.5.
    """
    n = int(frame_count)
    ed, es = int(ed_index), int(es_index)
    if n < 2 or not (0 <= ed < n and 0 <= es < n) or ed == es:
        raise ValidationError(
            "temporal_weights", "need >= 2 frames and distinct ED/ES inside them")
    w = [0.0] * n
    la = (es - ed) % n
    lb = n - la
    w[ed] = 1.0
    for s in range(1, la):
        w[(ed + s) % n] = 1.0 - s / la
    for s in range(1, lb):
        w[(es + s) % n] = s / lb
    return TemporalWeights(weights=tuple(w), ed_index=ed, es_index=es)


# ---------------------------------------------------------------------------
# Contour geometry helpers


def resample_contour(points: np.ndarray, k: int) -> np.ndarray:
    """Resample an open contour to k points uniform in arc length.

    The curve is taken as the cubic spline through the input points and
    arc length is measured along it, so resampling an already-uniform
    contour reproduces it to well below contour tolerances (straight
    chord-length resampling drifts by its corner-cutting error on every
    application, which would accumulate along propagation chains).
    Endpoints are preserved exactly. Works for any point width (2D pixel
    or 3D mm coordinates).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValidationError(
            "contour_set", f"need an (N>=2, d) polyline, got shape {pts.shape}")
    if k < 2:
        raise ValidationError("contour_set", f"need k >= 2 resample points, got {k}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0.0])
    pts = pts[keep]
    t = np.concatenate([[0.0], np.cumsum(seg[seg > 0.0])])
    if t[-1] <= 0.0:
        raise ValidationError("contour_set", "contour is degenerate (zero length)")
    if len(pts) < 4:
        targets = np.linspace(0.0, t[-1], int(k))
        return np.column_stack(
            [np.interp(targets, t, pts[:, j]) for j in range(pts.shape[1])])
    spline = make_interp_spline(t, pts, k=3)
    dense_t = np.linspace(0.0, t[-1], 16 * len(pts))
    dense = spline(dense_t)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    targets = np.linspace(0.0, s[-1], int(k))
    out = spline(np.interp(targets, s, dense_t))
    out[0], out[-1] = pts[0], pts[-1]
    return out


def _orient_positive_v_first(pts: np.ndarray, vcoord) -> np.ndarray:
    """Flip a contour so index 0 is the end on the positive-v side.

    Applied once at seed ingestion. Both ends of an LV contour sit near
    the base plane, so basal distance cannot order them; the in-plane v
    coordinate can, because the two ends bracket the apex direction. The
    resulting rotational sense matches across plane angles (the in-plane
    frames are rotations of each other about the axis), so the 0 and 90
    degree seeds always agree and the stitched mesh cannot twist. On a
    tie the caller's orientation is kept; the chain propagation preserves
    orientation from then on by point order.
    """
    if vcoord(pts[-1]) > vcoord(pts[0]) + _ORIENT_TIE_TOL:
        return pts[::-1]
    return pts


def _ingest_seed(seed, plane: SlicePlane, label: str) -> np.ndarray:
    """Validate a seed contour and normalize it to pipeline form (mm).

    The seed must lie on its slice plane. Orientation is fixed positive-v
    end first; the point count is brought to CONTOUR_POINTS unless it
    already matches, in which case the points pass through untouched.
    """
    pts = np.asarray(seed, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise ValidationError(
            "seed_shape", f"seed {label} must be (N>=4, 3) mm points, got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValidationError("seed_shape", f"seed {label} has non-finite points")
    off = float(plane.distance_to_plane(pts).max())
    if off > CONTOUR_PLANARITY_TOL_MM:
        raise ValidationError(
            "seed_off_plane",
            f"seed {label} lies {off:.3g} mm off the {plane.angle_deg} deg plane")

    def vcoord(p):
        return float((p - plane.origin_mm) @ plane.basis_v)

    pts = _orient_positive_v_first(pts, vcoord)
    if len(pts) != CONTOUR_POINTS:
        pts = resample_contour(pts, CONTOUR_POINTS)
    return pts


# ---------------------------------------------------------------------------
# Registration chaining


def _registration_fn(cfg: RegistrationConfig | None, register_fn):
    if register_fn is not None:
        return register_fn
    return lambda fixed, moving: register(fixed, moving, cfg)


def _step(reg, slice_a, slice_b, pts_px, k):
    """Carry a contour from one slice to an adjacent one.

    Point order survives the warp and the resample, so index
    correspondence (and the basal-first orientation fixed at seed time)
    is inherited along the whole chain.
    """
    field = reg(slice_a, slice_b)
    moved = warp_points(pts_px, field)
    return resample_contour(moved, k)


def segment_frame_3d(vol, axis: AxisFrame, seed0, seed90, theta_d: float,
                     cfg: RegistrationConfig | None = None, *,
                     frame_index: int = 0, register_fn=None) -> ContourSet3D:
    """Segment one frame by angular propagation of two seed contours.

    Slices are taken at every multiple of ``theta_d`` in [0, 180). Each
    slice receives its contour from the angularly nearer seed: angles
    within 45 degrees of the 0 plane (cyclically) chain from ``seed0``,
    the rest from ``seed90``. Chaining registers adjacent slices one step
    at a time and warps the contour through each field in turn.

    Parameters
    ----------
    vol
        Volume3D to segment.
    axis
        Long-axis frame the slicing rotates about.
    seed0, seed90
        Manual contours on the 0 and 90 degree planes, (N, 3) mm. Either
        draw direction is accepted; ingestion normalizes both seeds to
        the same rotational sense about the axis, which the chained
        contours then inherit by point order.
    theta_d
        Angular spacing in degrees; must divide 90.
    cfg
        Registration settings; defaults match ``register``.
    frame_index
        Frame label stamped on the output set.
    register_fn
        Optional replacement for the registration engine, called as
        ``register_fn(fixed_slice, moving_slice)``. Used for method
        comparisons.

    Returns
    -------
    ContourSet3D
        One contour per grid angle; the seed angles carry the seed
        contours themselves, untouched apart from normalization.

    Raises
    ------
    ValidationError
        rules ``theta_d_divides_90``, ``seed_shape``, ``seed_off_plane``
        and the slicing grid rules.
    RegistrationDegeneracyError
        when a chained field folds space.
    """
    planes = make_slice_planes(axis, theta_d, vol)
    n = len(planes)
    i90 = int(round(90.0 / float(theta_d)))
    if i90 >= n or abs(planes[i90].angle_deg - 90.0) > 1e-9:
        raise ValidationError(
            "theta_d_divides_90",
            f"angular spacing {theta_d!r} does not place a slice at 90 deg")

    seed_mm = {0: _ingest_seed(seed0, planes[0], "seed0"),
               i90: _ingest_seed(seed90, planes[i90], "seed90")}

    reg = _registration_fn(cfg, register_fn)
    angles = [p.angle_deg for p in planes]
    slices: dict[int, object] = {}

    def sl(i):
        if i not in slices:
            slices[i] = extract_slice(vol, planes[i], frame_index)
        return slices[i]

    # Chain indices covered by each seed. The 0 seed owns (-45, 45]
    # around the axis (taken modulo 180), the 90 seed owns (45, 135].
    up0 = [i for i in range(n) if angles[i] <= 45.0]
    down0 = [0]
    j = n - 1
    while j > 0 and angles[j] > 135.0:
        down0.append(j)
        j -= 1
    up90 = [i90]
    j = i90 + 1
    while j < n and angles[j] <= 135.0:
        up90.append(j)
        j += 1
    down90 = [i90]
    j = i90 - 1
    while angles[j] > 45.0:
        down90.append(j)
        j -= 1

    out_mm: dict[float, np.ndarray] = {angles[i]: p for i, p in seed_mm.items()}
    for chain in (up0, down0, up90, down90):
        start = chain[0]
        cur = project_to_slice(seed_mm[start], planes[start])
        for a, b in zip(chain[:-1], chain[1:]):
            try:
                cur = _step(reg, sl(a), sl(b), cur, CONTOUR_POINTS)
            except RegistrationDegeneracyError as exc:
                raise RegistrationDegeneracyError(
                    f"frame {frame_index}, angle {angles[b]:g} deg: {exc}"
                ) from exc
            out_mm[angles[b]] = lift_contour(cur, planes[b])

    return ContourSet3D(frame_index=frame_index, contours=out_mm)


def segment_cycle_4d(vol, axis: AxisFrame, ed_set: ContourSet3D,
                     es_set: ContourSet3D, cfg: RegistrationConfig | None = None,
                     *, register_fn=None) -> list[ContourSet3D]:
    """Segment every frame of a cycle from its ED and ES contour sets.

    Per angle, the anchor contours are propagated to every other frame by
    chaining registrations between temporally adjacent slices, running
    from each anchor in both cycle directions. Every non-anchor frame
    then blends its ED-propagated and ES-propagated candidates point-wise
    with linear cyclic weights (1 at ED, 0 at ES, 0.5 when equidistant).

    The ED and ES entries of the result are the input sets themselves, so
    anchor frames are preserved bit for bit. A two-frame volume is the
    degenerate cycle consisting only of the anchors and returns exactly
    the inputs; any other frame count below 3 is rejected.

    Raises
    ------
    ValidationError
        rules ``frame_count``, ``anchor_frames``, ``anchor_match``,
        ``seed_off_plane``.
    RegistrationDegeneracyError
        when a chained field folds space.
    """
    frames = vol.frame_count
    ed, es = vol.ed_index, vol.es_index
    if ed_set.frame_index != ed or es_set.frame_index != es:
        raise ValidationError(
            "anchor_frames",
            f"anchor sets are frames ({ed_set.frame_index}, {es_set.frame_index}), "
            f"volume has ED/ES at ({ed}, {es})")
    ed_angles, es_angles = ed_set.angles_deg, es_set.angles_deg
    if (len(ed_angles) != len(es_angles)
            or not np.allclose(ed_angles, es_angles, atol=1e-6)
            or ed_set.points_per_contour != es_set.points_per_contour):
        raise ValidationError(
            "anchor_match", "ED and ES sets must share angles and point count")
    if frames == 2:
        out = [ed_set, es_set]
        return out if ed < es else out[::-1]
    if frames < 3:
        raise ValidationError("frame_count", f"need >= 3 frames, got {frames}")

    reg = _registration_fn(cfg, register_fn)
    weights = cyclic_weights(frames, ed, es)
    k = ed_set.points_per_contour
    spacing, extent = slice_grid_for_volume(axis, vol)
    la = (es - ed) % frames
    lb = frames - la

    blended: dict[int, dict[float, np.ndarray]] = {
        t: {} for t in range(frames) if t not in (ed, es)}
    for angle in ed_angles:
        plane = _plane_for_angle(axis, float(angle), spacing, extent)
        anchors_px = {}
        for name, cs, t in (("ED", ed_set, ed), ("ES", es_set, es)):
            pts = cs.contour(angle)
            off = float(plane.distance_to_plane(pts).max())
            if off > CONTOUR_PLANARITY_TOL_MM:
                raise ValidationError(
                    "seed_off_plane",
                    f"{name} contour lies {off:.3g} mm off the {angle} deg plane")
            anchors_px[t] = project_to_slice(pts, plane)

        slices = [extract_slice(vol.frame(t), plane, t) for t in range(frames)]

        def walk(start, direction, arc_len):
            cands = {}
            cur = anchors_px[start]
            for s in range(1, arc_len):
                a = (start + (s - 1) * direction) % frames
                b = (start + s * direction) % frames
                try:
                    cur = _step(reg, slices[a], slices[b], cur, k)
                except RegistrationDegeneracyError as exc:
                    raise RegistrationDegeneracyError(
                        f"angle {angle:g} deg, frames {a}->{b}: {exc}"
                    ) from exc
                cands[b] = cur
            return cands

        from_ed = {**walk(ed, 1, la), **walk(ed, -1, lb)}
        from_es = {**walk(es, -1, la), **walk(es, 1, lb)}
        for t, ed_cand in from_ed.items():
            w = weights.weights[t]
            mixed = w * ed_cand + (1.0 - w) * from_es[t]
            blended[t][float(angle)] = lift_contour(mixed, plane)

    out = []
    for t in range(frames):
        if t == ed:
            out.append(ed_set)
        elif t == es:
            out.append(es_set)
        else:
            out.append(ContourSet3D(frame_index=t, contours=blended[t]))
    return out


# ---------------------------------------------------------------------------
# Mesh subsetting and perturbation studies


def extract_subset(mesh, theta_d: float, frame_index: int = 0) -> ContourSet3D:
    """Pull the meridian contours at a coarser angular spacing out of a mesh.

    The mesh must carry a meridian layout whose native spacing divides
    ``theta_d``; the returned set holds the stored contour rows at angles
    0, theta_d, 2 theta_d, ...

    Raises
    ------
    ValidationError
        rule ``subset_spacing`` when the spacings are incompatible,
        ``mesh_schema`` when the mesh has no meridian layout.
    """
    grid = mesh.contour_grid
    n_angles = grid.shape[0]
    native = 180.0 / n_angles
    ratio = float(theta_d) / native
    stride = int(round(ratio))
    if (not np.isfinite(ratio) or stride < 1 or abs(ratio - stride) > 1e-9
            or n_angles % stride != 0):
        raise ValidationError(
            "subset_spacing",
            f"spacing {theta_d!r} deg is not a multiple of the mesh's "
            f"{native:g} deg meridian spacing")
    contours = {i * float(theta_d): grid[i * stride]
                for i in range(n_angles // stride)}
    return ContourSet3D(frame_index=frame_index, contours=contours)


_ROTATION_VECTORS = {
    "+x": (1.0, 0.0, 0.0), "-x": (-1.0, 0.0, 0.0),
    "+y": (0.0, 1.0, 0.0), "-y": (0.0, -1.0, 0.0),
    "+z": (0.0, 0.0, 1.0), "-z": (0.0, 0.0, -1.0),
}


def perturb_axis(axis: AxisFrame, rotation: str, angle_rad: float) -> AxisFrame:
    """Rotate the apex about the base around a signed coordinate axis.

    ``rotation`` names the world rotation axis ("+x", "-y", ...); the
    base point stays fixed and the apex swings around it by
    ``angle_rad``. A zero angle reproduces the input frame.
    """
    if rotation not in _ROTATION_VECTORS:
        raise ValidationError(
            "rotation_label",
            f"rotation must be one of {sorted(_ROTATION_VECTORS)}, got {rotation!r}")
    ang = float(angle_rad)
    if not np.isfinite(ang):
        raise ValidationError("rotation_label", "rotation angle must be finite")
    if ang == 0.0:
        return build_axis_frame(axis.apex_mm, axis.base_mm)
    rot = rotation_about_axis(np.array(_ROTATION_VECTORS[rotation]), ang)
    apex = axis.base_mm + rot @ (axis.apex_mm - axis.base_mm)
    return build_axis_frame(apex, axis.base_mm)


def perturb_contours(annotation: StudyAnnotation, delta_mm: float) -> StudyAnnotation:
    """Displace every seed contour radially from its own centroid.

    Positive ``delta_mm`` dilates, negative erodes; each point moves by
    exactly ``|delta_mm|`` along its centroid ray, so a circle of radius
    r maps to one of radius r + delta.

    Raises
    ------
    ValidationError
        rule ``contour_delta`` when ``|delta_mm|`` exceeds 5 mm,
        ``contour_min_radius`` when the move would shrink any point
        below the 2 mm minimum radius.
    """
    delta = float(delta_mm)
    if not np.isfinite(delta) or abs(delta) > MAX_CONTOUR_DELTA_MM:
        raise ValidationError(
            "contour_delta",
            f"|delta| must be <= {MAX_CONTOUR_DELTA_MM} mm, got {delta_mm!r}")
    moved = []
    for c in annotation.contours:
        pts = c.points_mm
        center = pts.mean(axis=0)
        radial = pts - center
        radius = np.linalg.norm(radial, axis=1)
        if radius.min() <= 1e-12:
            raise ValidationError(
                "contour_min_radius",
                f"contour ({c.phase}, {c.angle_deg}) passes through its centroid")
        if (radius + delta).min() < MIN_CONTOUR_RADIUS_MM - 1e-9:
            raise ValidationError(
                "contour_min_radius",
                f"delta {delta_mm!r} mm erodes contour ({c.phase}, {c.angle_deg}) "
                f"below the {MIN_CONTOUR_RADIUS_MM} mm minimum radius")
        scale = (radius + delta) / radius
        moved.append(dataclasses.replace(c, points_mm=center + radial * scale[:, None]))
    return StudyAnnotation(apex_mm=annotation.apex_mm.copy(),
                           base_mm=annotation.base_mm.copy(),
                           contours=tuple(moved))
