"""Distance, overlap, clinical, and statistical measures.

Surface distances are sampled point-to-triangle, never point-to-vertex:
triangles are midpoint-split to a target edge length and sampled at
sub-triangle centroids with area weights, and each sample is matched
against whole triangles of the other surface through a centroid KD-tree
with an exact refinement pass.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import chi2, rankdata

from .errors import ValidationError
from .meshkit import SurfaceMesh, capped

_PAIR_BUDGET = 500_000  # point-triangle pairs evaluated per slab


@dataclass(frozen=True)
class BlandAltman:
    bias: float
    sd: float
    loa_low: float
    loa_high: float

    def __post_init__(self):
        if not (self.loa_low <= self.bias <= self.loa_high):
            raise ValidationError("bland_altman_limits",
                                  "limits of agreement must bracket the bias")


@dataclass(frozen=True)
class KruskalWallisResult:
    h_statistic: float
    p_value: float
    group_count: int
    n_total: int

    def __post_init__(self):
        if self.h_statistic < -1e-12 or not (0.0 <= self.p_value <= 1.0):
            raise ValidationError("kruskal_wallis_range",
                                  "H must be >= 0 and p in [0, 1]")


# ---------------------------------------------------------------------------
# point-to-triangle distance


def _point_triangle_dist2(p: np.ndarray, a: np.ndarray, b: np.ndarray,
                          c: np.ndarray) -> np.ndarray:
    """Squared distance from points to triangles, one pair per row."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    region = (d1 <= 0) & (d2 <= 0)
    closest[region] = a[region]
    done |= region

    region = ~done & (d3 >= 0) & (d4 <= d3)
    closest[region] = b[region]
    done |= region

    vc = d1 * d4 - d3 * d2
    region = ~done & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    denom = np.where(d1 - d3 != 0, d1 - d3, 1.0)
    v = d1 / denom
    closest[region] = a[region] + v[region, None] * ab[region]
    done |= region

    region = ~done & (d6 >= 0) & (d5 <= d6)
    closest[region] = c[region]
    done |= region

    vb = d5 * d2 - d1 * d6
    region = ~done & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    denom = np.where(d2 - d6 != 0, d2 - d6, 1.0)
    w = d2 / denom
    closest[region] = a[region] + w[region, None] * ac[region]
    done |= region

    va = d3 * d6 - d5 * d4
    region = ~done & (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    denom = (d4 - d3) + (d5 - d6)
    denom = np.where(denom != 0, denom, 1.0)
    w = (d4 - d3) / denom
    closest[region] = b[region] + w[region, None] * (c[region] - b[region])
    done |= region

    region = ~done
    denom = va + vb + vc
    denom = np.where(denom != 0, denom, 1.0)
    v = vb / denom
    w = vc / denom
    closest[region] = (a[region] + v[region, None] * ab[region]
                       + w[region, None] * ac[region])
    diff = p - closest
    return np.einsum("ij,ij->i", diff, diff)


def _triangle_corners(mesh: SurfaceMesh):
    v = mesh.vertices
    t = mesh.triangles
    return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


def _distances_to_surface(points: np.ndarray, mesh: SurfaceMesh) -> np.ndarray:
    """Exact distance from each point to the nearest triangle of mesh.

    Candidate triangles come from a centroid KD-tree; a radius pass
    bounded by the best candidate distance plus the largest triangle
    circumradius makes the result exact, not approximate.
    """
    if len(mesh.triangles) == 0:
        tree = cKDTree(mesh.vertices)
        d, _ = tree.query(points)
        return np.asarray(d, dtype=float)
    a, b, c = _split_triangles(*_triangle_corners(mesh))
    centroids = (a + b + c) / 3.0
    spread = np.sqrt(np.maximum.reduce([
        np.sum((a - centroids) ** 2, axis=1),
        np.sum((b - centroids) ** 2, axis=1),
        np.sum((c - centroids) ** 2, axis=1)]))
    max_spread = float(spread.max())
    tree = cKDTree(centroids)
    m = len(centroids)
    n = len(points)
    best = np.full(n, np.inf)
    best2 = np.full(n, np.inf)
    pending = np.arange(n)
    k = min(8, m)
    while len(pending):
        # bound the candidate matrix at _PAIR_BUDGET entries per slab so
        # peak memory stays flat no matter how far the escalation goes
        slab = max(1, _PAIR_BUDGET // k)
        kept = []
        for start in range(0, len(pending), slab):
            batch = pending[start:start + slab]
            dc, idx = tree.query(points[batch], k=k)
            dc = dc.reshape(len(batch), k)
            idx = idx.reshape(len(batch), k)
            # a candidate whose centroid lies beyond best + max_spread
            # cannot improve on best, so skip its exact evaluation
            useful = dc < best[batch, None] + max_spread + 1e-12
            rows, cols = np.nonzero(useful)
            rep = batch[rows]
            flat = idx[rows, cols]
            d2 = _point_triangle_dist2(points[rep], a[flat], b[flat], c[flat])
            np.minimum.at(best2, rep, d2)
            best[batch] = np.sqrt(best2[batch])
            if k < m:
                # every surface point outside the candidate set lies in a
                # triangle whose centroid is at least the k-th neighbour
                # distance away, hence at surface distance >= that minus
                # the largest circumradius; points below the bound are
                # exact already
                still = best[batch] > dc[:, -1] - max_spread - 1e-12
                kept.append(batch[still])
        if k >= m:
            break
        pending = np.concatenate(kept) if kept else np.empty(0, dtype=np.intp)
        k = min(3 * k, m)
    return best


_SPLIT_EDGE_MM = 1.5
_SPLIT_MAX_DEPTH = 4


def _split_triangles(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Corner arrays with large triangles split at edge midpoints until
    every edge is under _SPLIT_EDGE_MM (capped at _SPLIT_MAX_DEPTH
    rounds). Splitting leaves the surface unchanged."""
    limit2 = _SPLIT_EDGE_MM ** 2
    done = []
    for depth in range(_SPLIT_MAX_DEPTH + 1):
        edge2 = np.maximum.reduce([
            np.sum((b - a) ** 2, axis=1),
            np.sum((c - b) ** 2, axis=1),
            np.sum((a - c) ** 2, axis=1)])
        small = (edge2 <= limit2) | (depth == _SPLIT_MAX_DEPTH)
        if np.any(small):
            done.append((a[small], b[small], c[small]))
        if np.all(small):
            break
        big = ~small
        a, b, c = a[big], b[big], c[big]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        a, b, c = (np.vstack([a, ab, ca, ab]),
                   np.vstack([ab, b, bc, bc]),
                   np.vstack([ca, bc, c, ca]))
    return tuple(np.vstack(part) for part in zip(*done))


def _sample_grid(mesh: SurfaceMesh):
    """Centroid-quadrature samples of the surface: (points, weights).

    Triangles are midpoint-split until their edges fall under the target
    spacing, then sampled at sub-triangle centroids with area weights:
    an unbiased midpoint rule for surface integrals that is dense
    exactly where the mesh is coarse. A mesh without triangles
    contributes its vertices with uniform weights, so point-set inputs
    remain meaningful for distance measures.
    """
    if len(mesh.triangles) == 0:
        n = len(mesh.vertices)
        return (np.asarray(mesh.vertices, dtype=float),
                np.full(n, 1.0 / max(n, 1)))
    a, b, c = _split_triangles(*_triangle_corners(mesh))
    pts = (a + b + c) / 3.0
    w = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = w.sum()
    if total <= 0:
        raise ValidationError("mesh_empty", "mesh has zero surface area")
    return pts, w / total


def surface_samples(mesh: SurfaceMesh) -> np.ndarray:
    """Deterministic area-quadrature sample points over the surface."""
    return _sample_grid(mesh)[0]


def _require_mesh(mesh: SurfaceMesh, name: str):
    if len(mesh.vertices) == 0:
        raise ValidationError("mesh_empty", f"{name} mesh has no vertices")


def _directed_mean(s: SurfaceMesh, r: SurfaceMesh) -> float:
    pts, w = _sample_grid(s)
    return float(np.sum(w * _distances_to_surface(pts, r)))


def mean_absolute_distance(s: SurfaceMesh, r: SurfaceMesh,
                           symmetric: bool = False) -> float:
    """Area-weighted average distance from samples on S to the surface
    R, in mm.

    One-directional S -> R by default; symmetric=True averages the two
    directed means.
    """
    _require_mesh(s, "source")
    _require_mesh(r, "reference")
    d_sr = _directed_mean(s, r)
    if not symmetric:
        return d_sr
    return 0.5 * (d_sr + _directed_mean(r, s))


def hausdorff(s: SurfaceMesh, r: SurfaceMesh) -> float:
    """Symmetric Hausdorff distance on surface samples, in mm."""
    _require_mesh(s, "source")
    _require_mesh(r, "reference")
    d_sr = float(_distances_to_surface(surface_samples(s), r).max())
    d_rs = float(_distances_to_surface(surface_samples(r), s).max())
    return max(d_sr, d_rs)


def distance_summary(s: SurfaceMesh, r: SurfaceMesh) -> tuple[float, float]:
    """(mean S->R distance, symmetric Hausdorff) from shared sweeps.

    Equals (mean_absolute_distance(s, r), hausdorff(s, r)) but runs each
    directed sweep once, which matters when scoring long mesh sequences.
    """
    _require_mesh(s, "source")
    _require_mesh(r, "reference")
    pts_s, w_s = _sample_grid(s)
    d_sr = _distances_to_surface(pts_s, r)
    d_rs = _distances_to_surface(surface_samples(r), s)
    mean_sr = float(np.sum(w_s * d_sr))
    return mean_sr, float(max(d_sr.max(), d_rs.max()))


# ---------------------------------------------------------------------------
# voxel overlap


def voxelize_mesh(mesh: SurfaceMesh, dims: tuple[int, int, int],
                  spacing_mm: tuple[float, float, float]) -> np.ndarray:
    """Parity-count scanline fill of a closed surface on a voxel grid.

    Returns a (nz, ny, nx) boolean mask; voxel (ix, iy, iz) is centered
    at (ix*sx, iy*sy, iz*sz) mm, matching the volume convention. Rays
    run along +x with a tiny fixed lateral offset so they never hit mesh
    edges exactly.
    """
    nx, ny, nz = dims
    sx, sy, sz = spacing_mm
    a, b, c = _triangle_corners(capped(mesh))
    mask = np.zeros((nz, ny, nx), dtype=bool)
    eps_y = 7.3e-5 * sy
    eps_z = 3.1e-5 * sz

    crossings: dict[tuple[int, int], list[float]] = {}
    for t in range(len(a)):
        ys = np.array([a[t, 1], b[t, 1], c[t, 1]])
        zs = np.array([a[t, 2], b[t, 2], c[t, 2]])
        iy0 = max(0, int(np.ceil((ys.min() - eps_y) / sy)))
        iy1 = min(ny - 1, int(np.floor((ys.max() - eps_y) / sy)))
        iz0 = max(0, int(np.ceil((zs.min() - eps_z) / sz)))
        iz1 = min(nz - 1, int(np.floor((zs.max() - eps_z) / sz)))
        if iy1 < iy0 or iz1 < iz0:
            continue
        gy, gz = np.meshgrid(np.arange(iy0, iy1 + 1), np.arange(iz0, iz1 + 1))
        py = gy.ravel() * sy + eps_y
        pz = gz.ravel() * sz + eps_z
        # barycentric in the (y, z) projection
        d00 = (ys[1] - ys[0]) * (zs[2] - zs[0]) - (ys[2] - ys[0]) * (zs[1] - zs[0])
        if abs(d00) < 1e-14:
            continue
        w1 = ((py - ys[0]) * (zs[2] - zs[0]) - (ys[2] - ys[0]) * (pz - zs[0])) / d00
        w2 = ((ys[1] - ys[0]) * (pz - zs[0]) - (py - ys[0]) * (zs[1] - zs[0])) / d00
        inside = (w1 >= 0) & (w2 >= 0) & (w1 + w2 <= 1)
        if not inside.any():
            continue
        w0 = 1.0 - w1 - w2
        x_hit = (w0[inside] * a[t, 0] + w1[inside] * b[t, 0] + w2[inside] * c[t, 0])
        # snap away the last-ulp wobble of flat-face interpolation so the
        # half-open test stays exact for axis-aligned geometry
        x_hit = np.round(x_hit, 9)
        for yy, zz, xh in zip(gy.ravel()[inside], gz.ravel()[inside], x_hit):
            crossings.setdefault((int(zz), int(yy)), []).append(float(xh))

    xs_centers = np.arange(nx) * sx
    for (iz, iy), hits in crossings.items():
        hits.sort()
        if len(hits) % 2 == 1:
            hits = hits[:-1]
        for lo, hi in zip(hits[0::2], hits[1::2]):
            # half-open ownership so abutting solids tile without overlap
            mask[iz, iy, (xs_centers >= lo) & (xs_centers < hi)] = True
    return mask


def dice(v_s: np.ndarray, v_r: np.ndarray) -> float:
    """Dice overlap of two boolean voxel masks on the same grid."""
    v_s = np.asarray(v_s, dtype=bool)
    v_r = np.asarray(v_r, dtype=bool)
    if v_s.shape != v_r.shape:
        raise ValidationError("grid_mismatch",
                              f"mask grids differ: {v_s.shape} vs {v_r.shape}")
    ns = int(v_s.sum())
    nr = int(v_r.sum())
    if ns == 0 and nr == 0:
        warnings.warn("dice of two empty masks; returning 1 by convention",
                      stacklevel=2)
        return 1.0
    inter = int(np.logical_and(v_s, v_r).sum())
    return 2.0 * inter / (ns + nr)


# ---------------------------------------------------------------------------
# clinical and statistical measures


def ejection_fraction(edv_ml: float, esv_ml: float) -> float:
    if edv_ml <= 0:
        raise ValidationError("ef_domain", f"EDV must be positive, got {edv_ml}")
    return (edv_ml - esv_ml) / edv_ml * 100.0


def bland_altman(proposed, reference) -> BlandAltman:
    p = np.asarray(proposed, dtype=float)
    r = np.asarray(reference, dtype=float)
    if p.shape != r.shape or p.ndim != 1 or len(p) < 2:
        raise ValidationError("stat_length",
                              "inputs must be equal-length 1D lists with >= 2 entries")
    diffs = p - r
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(bias=bias, sd=sd,
                       loa_low=bias - 2.0 * sd, loa_high=bias + 2.0 * sd)


def _h_statistic(groups: list[np.ndarray]) -> float:
    """Average-rank Kruskal-Wallis H with tie correction."""
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = rankdata(pooled)
    grand = (n + 1) / 2.0
    h = 0.0
    start = 0
    for g in groups:
        gr = ranks[start:start + len(g)]
        start += len(g)
        h += len(g) * (gr.mean() - grand) ** 2
    h *= 12.0 / (n * (n + 1))
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts ** 3 - counts))
    correction = 1.0 - tie_term / (n ** 3 - n)
    if correction <= 0:
        return 0.0  # every value identical
    return h / correction


def _exact_permutation_p(groups: list[np.ndarray], h_obs: float) -> float:
    pooled = np.concatenate(groups)
    sizes = [len(g) for g in groups]
    n = len(pooled)
    idx_all = frozenset(range(n))

    def assignments(remaining: frozenset, size_list):
        if not size_list:
            yield []
            return
        head = size_list[0]
        for combo in combinations(sorted(remaining), head):
            for rest in assignments(remaining - set(combo), size_list[1:]):
                yield [list(combo)] + rest

    count = 0
    at_least = 0
    for assign in assignments(idx_all, sizes):
        parts = [pooled[ix] for ix in assign]
        count += 1
        if _h_statistic(parts) >= h_obs - 1e-12:
            at_least += 1
    return at_least / count


def kruskal_wallis(groups) -> KruskalWallisResult:
    """Kruskal-Wallis H test across >= 2 groups.

    p comes from the chi-squared upper tail with (groups - 1) degrees of
    freedom; for small samples (total n <= 10 with some group under 5)
    an exact permutation p is used instead. All values identical across
    all groups degenerates to H = 0, p = 1 with a warning.
    """
    arrs = [np.asarray(g, dtype=float) for g in groups]
    if len(arrs) < 2 or any(len(g) == 0 for g in arrs):
        raise ValidationError("stat_groups",
                              "need at least two non-empty groups")
    pooled = np.concatenate(arrs)
    n = len(pooled)
    if np.all(pooled == pooled[0]):
        warnings.warn("all values identical across groups; H = 0, p = 1",
                      stacklevel=2)
        return KruskalWallisResult(0.0, 1.0, len(arrs), n)
    h = _h_statistic(arrs)
    if n <= 10 and min(len(g) for g in arrs) < 5:
        p = _exact_permutation_p(arrs, h)
    else:
        p = float(chi2.sf(h, df=len(arrs) - 1))
    return KruskalWallisResult(float(h), float(min(max(p, 0.0), 1.0)),
                               len(arrs), n)


def dice_reliability_curve(scores, thresholds: int):
    """(threshold, fraction of scores reaching it) at equally spaced
    thresholds on [0, 1]; monotone non-increasing by construction."""
    arr = np.asarray(scores, dtype=float)
    if arr.size == 0:
        raise ValidationError("reliability_empty", "no dice scores given")
    if arr.min() < 0 or arr.max() > 1:
        raise ValidationError("reliability_range", "dice scores must lie in [0, 1]")
    if thresholds < 2:
        raise ValidationError("reliability_thresholds", "need >= 2 thresholds")
    ts = np.linspace(0.0, 1.0, thresholds)
    return [(float(t), float(np.mean(arr >= t))) for t in ts]


def correlation(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("stat_length",
                              "inputs must be equal-length 1D lists with >= 2 entries")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValidationError("correlation_constant",
                              "correlation undefined for constant input")
    return float(np.corrcoef(x, y)[0, 1])


# ---------------------------------------------------------------------------
# CSV export


def write_metrics_csv(report, path):
    """Per-frame metric rows for external plotting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "volume_ml", "d_m_mm", "d_h_mm", "dice"])
        for fm in report.per_frame:
            writer.writerow([
                fm.frame,
                f"{fm.volume_ml:.6f}",
                "" if fm.d_m_mm is None else f"{fm.d_m_mm:.6f}",
                "" if fm.d_h_mm is None else f"{fm.d_h_mm:.6f}",
                "" if fm.dice is None else f"{fm.dice:.6f}",
            ])
