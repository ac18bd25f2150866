"""Shared analytic fixtures for the test suite.

Everything here is independent of the package under test: closed-form
geometry and hand-rolled meshes used as oracles.
"""

import numpy as np


def trunc_spheroid_volume_mm3(a, b, c, z0):
    """Volume of the ellipsoid region z <= z0 (closed form)."""
    return np.pi * a * b * (z0 - z0**3 / (3 * c**2) + 2 * c / 3)


def cube_mesh(side=1.0):
    """Closed unit-style cube of 12 triangles, outward-oriented."""
    v = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float) * side
    f = np.array([
        [0, 2, 1], [0, 3, 2],  # bottom (z=0), outward -z
        [4, 5, 6], [4, 6, 7],  # top
        [0, 1, 5], [0, 5, 4],  # y=0
        [2, 3, 7], [2, 7, 6],  # y=1
        [1, 2, 6], [1, 6, 5],  # x=1
        [3, 0, 4], [3, 4, 7],  # x=0
    ], dtype=np.int64)
    return v, f


def icosphere(radius=10.0, subdivisions=4):
    """Icosahedron subdivided with vertices projected onto the sphere."""
    t = (1 + np.sqrt(5)) / 2
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts[0])
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = (verts[i] + verts[j]) / 2
                cache[key] = len(verts)
                verts.append(m / np.linalg.norm(m))
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            ij, jk, ki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, ij, ki), (j, jk, ij), (k, ki, jk), (ij, jk, ki)]
        faces = new_faces
    return np.asarray(verts) * radius, np.asarray(faces, dtype=np.int64)


def cross_section_half_width(a, b, t_hat):
    """Transverse semi-axis of the ellipsoid cross-section in the plane
    spanned by the z axis and the unit in-plane direction t_hat."""
    tx, ty = t_hat[0], t_hat[1]
    return 1.0 / np.sqrt((tx / a) ** 2 + (ty / b) ** 2)


def meridian_contour(center, t_hat, up_hat, half_width, c, z0, k):
    """Open U-shaped meridian contour of an ellipsoid cut at height z0.

    Runs from the cut plane on the +t side, through the apex pole, back
    up to the cut plane on the -t side; index 0 on the +t side.
    """
    t_hat = np.asarray(t_hat, dtype=float)
    up_hat = np.asarray(up_hat, dtype=float)
    omega_cut = np.arccos(np.clip(z0 / c, -1.0, 1.0))
    omega = np.linspace(omega_cut, 2 * np.pi - omega_cut, k)
    pts = (np.asarray(center, dtype=float)
           + (half_width * np.sin(omega))[:, None] * t_hat
           + (c * np.cos(omega))[:, None] * up_hat)
    return pts


def ellipsoid_contour_grid(center, a, b, c, z0, angles_deg, k,
                           t_hat_fn, up_hat=(0.0, 0.0, 1.0)):
    """Stack of meridian contours of an axis-aligned ellipsoid.

    ``t_hat_fn(angle_deg)`` supplies the in-plane transverse direction of
    the slice plane at each angle (taken from the code under test so the
    grid matches its plane conventions).
    """
    pts = []
    for ang in angles_deg:
        t_hat = np.asarray(t_hat_fn(ang), dtype=float)
        w = cross_section_half_width(a, b, t_hat)
        pts.append(meridian_contour(center, t_hat, up_hat, w, c, z0, k))
    return np.asarray(pts)


def point_to_spheroid_distance(points, a, c, center=(0.0, 0.0, 0.0)):
    """Distance from points to the full spheroid surface (a = b), by dense
    sampling of the meridian ellipse. Accurate to ~1e-3 mm for test sizes."""
    p = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    rho = np.hypot(p[:, 0], p[:, 1])
    z = p[:, 2]
    omega = np.linspace(0, np.pi, 20000)
    e_rho = a * np.sin(omega)
    e_z = c * np.cos(omega)
    d2 = (rho[:, None] - e_rho[None, :]) ** 2 + (z[:, None] - e_z[None, :]) ** 2
    return np.sqrt(d2.min(axis=1))
