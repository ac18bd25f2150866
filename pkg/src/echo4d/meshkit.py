"""Surface meshes from corresponded contour grids, mesh volume, and the
truncated-ellipsoid geometric baseline.

A contour grid is a stack of A planar contours (one per slice angle over
180 degrees) of K corresponded points each. Adjacent angles are stitched
with triangle strips; the last angle wraps back to the first with the point
order reversed, because the plane at 180 degrees is the 0-degree plane with
its transverse coordinate negated. Contours are open at the base, so the
stitched surface is an open tube closed at the apex; a fan to the basal
ring centroid closes it when a volume is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError

APEX_MERGE_RADIUS_MM = 0.5


@dataclass(frozen=True)
class SurfaceMesh:
    """Triangulated surface in physical mm.

    ``meridian_layout`` records the (num_angles, points_per_meridian) shape
    of the contour grid occupying the first num_angles*points_per_meridian
    entries of ``vertices`` (extra vertices, e.g. a merged apex point, come
    after the grid). ``None`` for meshes without a contour-grid origin.
    """

    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int, indices into vertices
    meridian_layout: tuple[int, int] | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t.reshape(-1, 3))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValidationError("mesh_schema", f"vertices must be (V,3), got {v.shape}")
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(v)):
            raise ValidationError("mesh_index_range",
                                  "triangle indices outside vertex range")
        if self.meridian_layout is not None:
            na, k = self.meridian_layout
            if na * k > len(v):
                raise ValidationError("mesh_schema",
                                      "meridian_layout larger than vertex count")

    @property
    def contour_grid(self) -> np.ndarray:
        """The (num_angles, K, 3) corresponded contour grid."""
        if self.meridian_layout is None:
            raise ValidationError("mesh_schema", "mesh has no meridian layout")
        na, k = self.meridian_layout
        return self.vertices[: na * k].reshape(na, k, 3)


def _fit_axis_line(points_a: np.ndarray, points_b: np.ndarray):
    """Axis line shared by two planar contours: the intersection of their
    planes. Returns (point_on_line, unit_direction)."""
    def plane_of(pts):
        c = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - c)
        return c, vt[2]

    c_a, n_a = plane_of(points_a)
    c_b, n_b = plane_of(points_b)
    d = np.cross(n_a, n_b)
    nd = np.linalg.norm(d)
    if nd < 1e-9:
        raise ValidationError("mesh_schema",
                              "contour planes are parallel; cannot infer axis")
    d = d / nd
    # Point on both planes, nearest the joint centroid.
    mid = 0.5 * (c_a + c_b)
    amat = np.vstack([n_a, n_b, d])
    rhs = np.array([np.dot(n_a, c_a), np.dot(n_b, c_b), np.dot(d, mid)])
    p0 = np.linalg.solve(amat, rhs)
    return p0, d


def _point_line_distance(points: np.ndarray, p0: np.ndarray, d: np.ndarray):
    rel = points - p0
    along = rel @ d
    return np.linalg.norm(rel - along[:, None] * d[None, :], axis=1)


def _boundary_loops(triangles: np.ndarray) -> list[list[int]]:
    """Directed boundary loops of an oriented triangle surface."""
    from collections import Counter, defaultdict

    undirected = Counter()
    for a, b, c in triangles:
        for e in ((a, b), (b, c), (c, a)):
            undirected[frozenset(e)] += 1
    succ: dict[int, list[int]] = defaultdict(list)
    n_boundary = 0
    for a, b, c in triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            if undirected[frozenset((u, v))] == 1:
                succ[int(u)].append(int(v))
                n_boundary += 1
    loops = []
    visited = set()
    for start in sorted(succ):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        cur = start
        while True:
            nxts = [v for v in succ.get(cur, []) if v not in visited or v == start]
            if not nxts:
                return []  # dead end: boundary is not a set of simple cycles
            nxt = nxts[0]
            if nxt == start:
                break
            if nxt in visited:
                return []
            loop.append(nxt)
            visited.add(nxt)
            cur = nxt
        loops.append(loop)
    if sum(len(l) for l in loops) != n_boundary:
        return []
    return loops


def signed_volume_mm3(mesh: SurfaceMesh) -> float:
    """Divergence-theorem signed volume of a closed mesh in mm^3."""
    v = mesh.vertices
    t = mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)


def capped(mesh: SurfaceMesh) -> SurfaceMesh:
    """Close the basal opening with a fan to the boundary-ring centroid.

    Already-closed meshes are returned unchanged.

    Raises
    ------
    ValidationError
        rule ``mesh_basal_ring`` when the boundary is not one simple cycle.
    """
    loops = _boundary_loops(mesh.triangles)
    if not loops and _has_boundary(mesh.triangles):
        raise ValidationError("mesh_basal_ring",
                              "boundary edges do not form simple cycles")
    if not loops:
        return mesh
    if len(loops) != 1:
        raise ValidationError(
            "mesh_basal_ring",
            f"expected one basal boundary ring, found {len(loops)} loops")
    ring = loops[0]
    centroid = mesh.vertices[ring].mean(axis=0)
    cid = len(mesh.vertices)
    vertices = np.vstack([mesh.vertices, centroid[None, :]])
    # Boundary edges run (u, v); the cap triangle (v, u, centroid) keeps the
    # outward orientation consistent with the open surface.
    cap = [(ring[(i + 1) % len(ring)], ring[i], cid) for i in range(len(ring))]
    triangles = np.vstack([mesh.triangles, np.asarray(cap, dtype=np.int64)])
    return SurfaceMesh(vertices=vertices, triangles=triangles,
                       meridian_layout=mesh.meridian_layout)


def _has_boundary(triangles: np.ndarray) -> bool:
    from collections import Counter

    cnt = Counter()
    for a, b, c in triangles:
        for e in ((a, b), (b, c), (c, a)):
            cnt[frozenset(e)] += 1
    return any(v == 1 for v in cnt.values())


def is_watertight(mesh: SurfaceMesh) -> bool:
    """True when every edge is shared by exactly two triangles."""
    from collections import Counter

    cnt = Counter()
    for a, b, c in mesh.triangles:
        for e in ((a, b), (b, c), (c, a)):
            cnt[frozenset(e)] += 1
    return bool(cnt) and all(v == 2 for v in cnt.values())


def mesh_volume(mesh: SurfaceMesh) -> float:
    """Enclosed volume in mL (1 mL = 1000 mm^3), capping the base if open."""
    closed = capped(mesh)
    return abs(signed_volume_mm3(closed)) / 1000.0


def _orient_outward(vertices: np.ndarray, triangles: np.ndarray,
                    layout) -> SurfaceMesh:
    mesh = SurfaceMesh(vertices=vertices, triangles=triangles,
                       meridian_layout=layout)
    if signed_volume_mm3(capped(mesh)) < 0:
        flipped = triangles[:, ::-1].copy()
        mesh = SurfaceMesh(vertices=vertices, triangles=flipped,
                           meridian_layout=layout)
    return mesh


def build_mesh(contours, axis=None) -> SurfaceMesh:
    """Stitch a corresponded contour grid into an open surface mesh.

    Parameters
    ----------
    contours
        Object with ``angles_deg`` (A,) and ``points`` (A, K, 3) attributes;
        contour k-indices correspond across angles, index 0 at one basal
        end and index K-1 at the other.
    axis
        Optional axis frame; when given, its apex-base line drives the
        apex-vertex merge. Otherwise the line is inferred from the first
        two contour planes.

    Each U-shaped contour covers two azimuthal meridians (its own angle
    and that angle + 180), so A contours yield 2A meridians over the full
    circle. Quads join azimuthally adjacent meridians level by level; a
    fan to an apex vertex closes the pole. Naive stitching of whole
    contours with the reversed wrap cannot be oriented consistently (the
    parameter band is a Mobius strip until the apex collapses it), which
    is why the split into half-meridians happens first.

    Vertices within APEX_MERGE_RADIUS_MM of the long axis are merged into
    the apex vertex to avoid sliver triangles at the pole.
    """
    pts = np.asarray(contours.points, dtype=float)
    if pts.ndim != 3 or pts.shape[2] != 3:
        raise ValidationError("contour_grid", f"expected (A,K,3) points, got {pts.shape}")
    n_angles, k = pts.shape[0], pts.shape[1]
    if n_angles < 2:
        raise ValidationError("contour_grid", "need at least 2 contour angles")
    if k < 4:
        raise ValidationError("contour_grid", "need at least 4 points per contour")

    grid = pts.reshape(-1, 3)
    levels = k // 2  # per-meridian depth; odd K leaves the exact middle out
    meridians = []
    for a in range(n_angles):
        meridians.append([a * k + j for j in range(levels)])
    for a in range(n_angles):
        meridians.append([a * k + (k - 1 - j) for j in range(levels)])
    centrals = [a * k + levels for a in range(n_angles)] if k % 2 else []

    quads = []
    n_mer = 2 * n_angles
    for m in range(n_mer):
        left, right = meridians[m], meridians[(m + 1) % n_mer]
        for j in range(levels - 1):
            quads.append((left[j], left[j + 1], right[j + 1]))
            quads.append((left[j], right[j + 1], right[j]))

    apex_id = len(grid)
    ring = [mer[levels - 1] for mer in meridians]
    apex_source = centrals if centrals else ring
    apex_vertex = grid[apex_source].mean(axis=0)
    for m in range(n_mer):
        quads.append((ring[m], ring[(m + 1) % n_mer], apex_id))
    triangles = np.asarray(quads, dtype=np.int64)
    vertices = np.vstack([grid, apex_vertex[None, :]])

    if axis is not None:
        p0, d = np.asarray(axis.base_mm, dtype=float), np.asarray(axis.axis_dir, dtype=float)
    else:
        p0, d = _fit_axis_line(pts[0], pts[1 if n_angles == 2 else n_angles // 2])
    near_axis = _point_line_distance(grid, p0, d) <= APEX_MERGE_RADIUS_MM

    remap = np.arange(len(vertices))
    remap[: len(grid)][near_axis] = apex_id
    triangles = remap[triangles]
    keep = (
        (triangles[:, 0] != triangles[:, 1])
        & (triangles[:, 1] != triangles[:, 2])
        & (triangles[:, 0] != triangles[:, 2])
    )
    triangles = triangles[keep]

    return _orient_outward(vertices, triangles, (n_angles, k))


@dataclass(frozen=True)
class EllipsoidModel:
    """Truncated ellipsoid: center, semi-axes, orthonormal triad, and the
    truncation height along the third (long-axis) direction."""

    center_mm: np.ndarray
    semi_axes_mm: tuple[float, float, float]
    orientation: np.ndarray  # rows: x_dir, y_dir, z_dir (unit)
    cut_z_mm: float

    def __post_init__(self):
        object.__setattr__(self, "center_mm", np.asarray(self.center_mm, dtype=float))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=float))
        a, b, c = self.semi_axes_mm
        if min(a, b, c) <= 0:
            raise ValidationError("ellipsoid_axes", f"semi-axes must be positive: {self.semi_axes_mm}")
        q = self.orientation
        if np.abs(q @ q.T - np.eye(3)).max() > 1e-9:
            raise ValidationError("ellipsoid_orientation", "triad is not orthonormal")
        if not (-c < self.cut_z_mm <= c):
            raise ValidationError("ellipsoid_cut", "truncation plane outside the ellipsoid")


def tessellate_ellipsoid(model: EllipsoidModel, n_longitude: int = 64,
                         n_latitude: int = 32) -> SurfaceMesh:
    """Triangulate the ellipsoid below its truncation plane.

    Latitude rings run from the cut plane down to the apex pole; the cut
    ring is left open (capped only for volume computation).
    """
    a, b, c = model.semi_axes_mm
    xd, yd, zd = model.orientation
    omega_cut = np.arccos(np.clip(model.cut_z_mm / c, -1.0, 1.0))
    omegas = np.linspace(omega_cut, np.pi, n_latitude)  # pole last
    lons = np.arange(n_longitude) * (2 * np.pi / n_longitude)

    rings = []
    for om in omegas[:-1]:
        ring = (
            model.center_mm
            + (a * np.sin(om) * np.cos(lons))[:, None] * xd
            + (b * np.sin(om) * np.sin(lons))[:, None] * yd
            + (c * np.cos(om)) * zd
        )
        rings.append(ring)
    pole = model.center_mm - c * zd
    vertices = np.vstack(rings + [pole[None, :]])
    pole_id = len(vertices) - 1

    tris = []
    for r in range(len(rings) - 1):
        base0, base1 = r * n_longitude, (r + 1) * n_longitude
        for j in range(n_longitude):
            jn = (j + 1) % n_longitude
            tris.append((base0 + j, base0 + jn, base1 + jn))
            tris.append((base0 + j, base1 + jn, base1 + j))
    last = (len(rings) - 1) * n_longitude
    for j in range(n_longitude):
        jn = (j + 1) % n_longitude
        tris.append((last + j, last + jn, pole_id))

    return _orient_outward(vertices, np.asarray(tris, dtype=np.int64), None)


def _conic_ellipsoid_params(xi, eta, zeta):
    """Least-squares axis-aligned ellipsoid through two planar contours.

    Solves A xi^2 + B eta^2 + C zeta^2 + D zeta + F = 0 (up to scale) for
    the contour samples and converts back to semi-axes plus the center
    offset along the axis. Returns (a, b, c, zc) or None when the best
    conic is not a proper ellipsoid (e.g. strongly bent contours).
    """
    rows0 = np.column_stack([xi**2, np.zeros_like(xi), np.zeros_like(xi)])
    rows90 = np.column_stack([np.zeros_like(eta), eta**2, np.zeros_like(eta)])
    quad = np.vstack([rows0, rows90])
    quad[:, 2] = zeta**2
    m = np.column_stack([quad, zeta, np.ones_like(zeta)])
    scale = np.abs(m).max(axis=0)
    scale[scale == 0] = 1.0
    _, _, vt = np.linalg.svd(m / scale, full_matrices=False)
    q = vt[-1] / scale
    a2q, b2q, c2q, dq, fq = q
    if a2q * c2q <= 0 or b2q * c2q <= 0:
        return None
    if a2q < 0:
        a2q, b2q, c2q, dq, fq = -a2q, -b2q, -c2q, -dq, -fq
    zc = -dq / (2.0 * c2q)
    s = c2q * zc**2 - fq
    if s <= 0:
        return None
    a, b, c = np.sqrt([s / a2q, s / b2q, s / c2q])
    span = zeta.max() - zeta.min()
    if not np.isfinite([a, b, c, zc]).all() or c > 25.0 * span:
        return None
    return float(a), float(b), float(c), float(zc)


def fit_ellipsoid_baseline(axis, contour_theta0, contour_theta90,
                           n_longitude: int = 64, n_latitude: int = 32):
    """Fit the geometric baseline ellipsoid to the two seed contours.

    The model keeps its long semi-axis down the chamber axis with the
    transverse semi-axes along the two slice-plane transverse bases, so
    the fit lines up with what the annotator measured on screen. Semi-axes
    and the center height come from a least-squares conic through the
    contour samples, which recovers a truncated ellipsoid exactly; when
    the contours do not determine a proper ellipsoid (degenerate or
    strongly bent data) the fit falls back to anchoring the center at the
    base point with the long semi-axis reaching the apex-most point. The
    truncation plane sits at the highest contour height along the axis.

    Returns (EllipsoidModel, SurfaceMesh).
    """
    c0 = np.asarray(contour_theta0, dtype=float)
    c90 = np.asarray(contour_theta90, dtype=float)
    base = np.asarray(axis.base_mm, dtype=float)
    z_dir = -np.asarray(axis.axis_dir, dtype=float)  # positive toward base side
    from .slicer import _plane_for_angle

    plane0 = _plane_for_angle(axis, 0.0, 1.0, (3, 3))
    plane90 = _plane_for_angle(axis, 90.0, 1.0, (3, 3))
    x_dir = plane0.basis_v
    y_dir = plane90.basis_v

    def half_width(points, direction):
        t = (points - base) @ direction
        w = float(t.max() - t.min())
        if w <= 1e-9:
            raise ValidationError("ellipsoid_fit", "contour has zero transverse extent")
        return w / 2.0

    a = half_width(c0, x_dir)
    b = half_width(c90, y_dir)
    zeta = np.concatenate([(c0 - base) @ z_dir, (c90 - base) @ z_dir])
    c = float(-zeta.min())  # depth of the apex-most point below the base
    if c <= 1e-9:
        raise ValidationError("ellipsoid_fit", "contour has zero extent along the axis")
    zc = 0.0

    fitted = _conic_ellipsoid_params((c0 - base) @ x_dir, (c90 - base) @ y_dir,
                                     zeta)
    if fitted is not None:
        fa, fb, fc, fzc = fitted
        covered = zeta.min() >= fzc - fc * (1.0 + 1e-6)
        if covered:
            a, b, c, zc = fa, fb, fc, fzc
    cut = float(zeta.max()) - zc
    cut = min(cut, c)  # numerical safety: keep the cut on the ellipsoid
    model = EllipsoidModel(
        center_mm=base + zc * z_dir,
        semi_axes_mm=(a, b, c),
        orientation=np.vstack([x_dir, y_dir, z_dir]),
        cut_z_mm=cut,
    )
    return model, tessellate_ellipsoid(model, n_longitude, n_latitude)


def transformed(mesh: SurfaceMesh, rot: np.ndarray, shift: np.ndarray) -> SurfaceMesh:
    """Rigidly transformed copy of a mesh (used by invariance tests)."""
    return replace(mesh, vertices=mesh.vertices @ np.asarray(rot).T + np.asarray(shift))
