"""Mesh construction, volume computation, and the ellipsoid baseline."""

from types import SimpleNamespace

import numpy as np
import pytest

from echo4d.errors import ValidationError
from echo4d.meshkit import (
    EllipsoidModel,
    SurfaceMesh,
    build_mesh,
    capped,
    fit_ellipsoid_baseline,
    is_watertight,
    mesh_volume,
    signed_volume_mm3,
    tessellate_ellipsoid,
    transformed,
)
from echo4d.slicer import build_axis_frame, _plane_for_angle, rotation_about_axis

import helpers

APEX = np.array([0.0, 0.0, -40.0])
BASE = np.array([0.0, 0.0, 0.0])


def _axis():
    return build_axis_frame(APEX, BASE)


def _t_hat_fn(axis):
    def fn(angle_deg):
        return _plane_for_angle(axis, float(angle_deg), 1.0, (3, 3)).basis_v
    return fn


def _grid(a, b, c, z0, theta_d, k=64):
    axis = _axis()
    angles = [float(t) for t in range(0, 180, theta_d)]
    pts = helpers.ellipsoid_contour_grid(BASE, a, b, c, z0, angles, k, _t_hat_fn(axis))
    return axis, SimpleNamespace(angles_deg=angles, points=pts)


class TestBuildMesh:
    def test_minimal_two_contour_mesh(self):
        axis, contours = _grid(20.0, 20.0, 40.0, 0.0, 90, k=33)
        mesh = build_mesh(contours, axis=axis)
        assert mesh.meridian_layout == (2, 33)
        assert len(mesh.vertices) >= 66
        assert signed_volume_mm3(capped(mesh)) > 0
        assert is_watertight(capped(mesh))

    def test_axis_inference_matches_explicit(self):
        axis, contours = _grid(18.0, 14.0, 35.0, 0.0, 45)
        with_axis = build_mesh(contours, axis=axis)
        inferred = build_mesh(contours)
        np.testing.assert_allclose(with_axis.vertices, inferred.vertices, atol=1e-9)
        np.testing.assert_array_equal(with_axis.triangles, inferred.triangles)

    def test_apex_vertices_merged(self):
        axis, contours = _grid(20.0, 20.0, 40.0, 0.0, 5, k=64)
        mesh = build_mesh(contours, axis=axis)
        # extra appended apex vertex beyond the grid
        assert len(mesh.vertices) == 36 * 64 + 1
        apex_vertex = mesh.vertices[-1]
        np.testing.assert_allclose(apex_vertex[:2], [0.0, 0.0], atol=0.05)
        assert apex_vertex[2] == pytest.approx(-40.0, abs=0.05)

    def test_contour_grid_preserved(self):
        axis, contours = _grid(20.0, 16.0, 40.0, 0.0, 15)
        mesh = build_mesh(contours, axis=axis)
        np.testing.assert_array_equal(mesh.contour_grid, contours.points)

    def test_surface_within_half_mm_of_spheroid(self):
        a = c = None
        axis, contours = _grid(20.0, 20.0, 40.0, 0.0, 5)
        mesh = build_mesh(contours, axis=axis)
        tri = mesh.vertices[mesh.triangles]
        centroids = tri.mean(axis=1)
        d = helpers.point_to_spheroid_distance(centroids, 20.0, 40.0, BASE)
        assert d.mean() < 0.5

    def test_rejects_single_contour(self):
        axis, contours = _grid(20.0, 20.0, 40.0, 0.0, 90)
        solo = SimpleNamespace(angles_deg=[0.0], points=contours.points[:1])
        with pytest.raises(ValidationError):
            build_mesh(solo, axis=axis)


class TestMeshVolume:
    def test_unit_cube(self):
        v, f = helpers.cube_mesh()
        mesh = SurfaceMesh(vertices=v, triangles=f)
        assert is_watertight(mesh)
        assert capped(mesh) is mesh  # already closed
        assert mesh_volume(mesh) == pytest.approx(0.001, abs=1e-12)

    def test_icosphere(self):
        v, f = helpers.icosphere(10.0, 4)
        mesh = SurfaceMesh(vertices=v, triangles=f)
        sphere = 4 / 3 * np.pi * 1000.0
        assert mesh_volume(mesh) * 1000 == pytest.approx(sphere, rel=0.005)

    def test_truncated_spheroid_volume(self):
        a, b, c, z0 = 20.0, 20.0, 40.0, 0.0
        axis, contours = _grid(a, b, c, z0, 5)
        mesh = build_mesh(contours, axis=axis)
        expect = helpers.trunc_spheroid_volume_mm3(a, b, c, z0)  # 33510.32 mm^3
        assert expect == pytest.approx(33510.32163829113)
        assert mesh_volume(mesh) * 1000 == pytest.approx(expect, rel=0.02)

    def test_capped_watertight(self):
        axis, contours = _grid(22.0, 18.0, 36.0, 0.0, 15)
        mesh = build_mesh(contours, axis=axis)
        assert not is_watertight(mesh)
        closed = capped(mesh)
        assert is_watertight(closed)

    def test_rigid_invariance(self):
        axis, contours = _grid(20.0, 17.0, 38.0, 0.0, 15)
        mesh = build_mesh(contours, axis=axis)
        vol0 = mesh_volume(mesh)
        rot = rotation_about_axis([1.0, 2.0, 0.5], 1.1)
        moved = transformed(mesh, rot, np.array([13.0, -8.0, 5.0]))
        assert mesh_volume(moved) == pytest.approx(vol0, rel=1e-9)

    def test_non_cyclic_boundary_rejected(self):
        # two disjoint open triangles produce two boundary loops
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [5, 5, 5], [6, 5, 5], [5, 6, 5]], dtype=float)
        f = np.array([[0, 1, 2], [3, 4, 5]])
        with pytest.raises(ValidationError) as exc:
            mesh_volume(SurfaceMesh(vertices=v, triangles=f))
        assert exc.value.rule == "mesh_basal_ring"


class TestEllipsoidBaseline:
    def test_self_consistency_on_true_ellipsoid(self):
        a, b, c = 22.0, 18.0, 36.0
        axis, contours = _grid(a, b, c, 0.0, 90, k=129)
        model, mesh = fit_ellipsoid_baseline(axis, contours.points[0], contours.points[1])
        np.testing.assert_allclose(model.center_mm, BASE, atol=1e-9)
        # theta0 transverse is +y (semi-axis b), theta90 transverse is +x (a)
        fit_a, fit_b, fit_c = model.semi_axes_mm
        assert fit_a == pytest.approx(b, abs=1e-6)
        assert fit_b == pytest.approx(a, abs=1e-6)
        assert fit_c == pytest.approx(c, abs=1e-6)
        assert model.cut_z_mm == pytest.approx(0.0, abs=1e-9)
        expect = helpers.trunc_spheroid_volume_mm3(a, b, c, 0.0)
        assert mesh_volume(mesh) * 1000 == pytest.approx(expect, rel=0.01)

    def test_sphere_cap_formula(self):
        r, z0 = 15.0, 5.0
        axis, contours = _grid(r, r, r, z0, 90, k=101)
        model, mesh = fit_ellipsoid_baseline(axis, contours.points[0], contours.points[1])
        assert model.cut_z_mm == pytest.approx(z0, abs=1e-6)
        kept = helpers.trunc_spheroid_volume_mm3(r, r, r, z0)  # 10471.98 mm^3
        assert kept == pytest.approx(10471.975511965977)
        assert mesh_volume(mesh) * 1000 == pytest.approx(kept, rel=0.01)

    def test_degenerate_contour_rejected(self):
        axis = _axis()
        line = np.tile(np.array([[0.0, 0.0, -10.0]]), (12, 1))
        with pytest.raises(ValidationError):
            fit_ellipsoid_baseline(axis, line, line)

    def test_model_invariants(self):
        with pytest.raises(ValidationError):
            EllipsoidModel(center_mm=np.zeros(3), semi_axes_mm=(1.0, -1.0, 1.0),
                           orientation=np.eye(3), cut_z_mm=0.0)
        with pytest.raises(ValidationError):
            EllipsoidModel(center_mm=np.zeros(3), semi_axes_mm=(1.0, 1.0, 1.0),
                           orientation=np.eye(3) * 2.0, cut_z_mm=0.0)
        with pytest.raises(ValidationError):
            EllipsoidModel(center_mm=np.zeros(3), semi_axes_mm=(1.0, 1.0, 1.0),
                           orientation=np.eye(3), cut_z_mm=3.0)

    def test_tessellation_density_default(self):
        model = EllipsoidModel(center_mm=np.zeros(3), semi_axes_mm=(20.0, 20.0, 40.0),
                               orientation=np.eye(3), cut_z_mm=0.0)
        mesh = tessellate_ellipsoid(model)
        expect = helpers.trunc_spheroid_volume_mm3(20.0, 20.0, 40.0, 0.0)
        assert mesh_volume(mesh) * 1000 == pytest.approx(expect, rel=0.005)
