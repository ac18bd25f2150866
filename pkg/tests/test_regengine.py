"""Registration engine: parameterization, optimizer, warping, composition."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from echo4d import regengine as re
from echo4d.errors import CompositionDegeneracyError, ValidationError


def blob_pair(n=96, shift=3.0, sigma=8.0):
    """fixed and a copy whose blob is translated by (shift, 0) pixels:
    a feature at p in fixed appears at p + (shift, 0)... the blob center
    moves from (cx, cy) to (cx - shift, cy) when moving(x) = fixed(x + shift),
    so the recovered field should average (-shift, 0)."""
    y, x = np.mgrid[0:n, 0:n].astype(float)
    cx = cy = n / 2.0
    fixed = np.exp(-(((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2)))
    moving = np.exp(-(((x - (cx - shift)) ** 2 + (y - cy) ** 2) / (2 * sigma ** 2)))
    return fixed, moving


def smooth_pair(n=16, seed=11):
    rng = np.random.default_rng(seed)
    f = gaussian_filter(rng.normal(size=(n, n)), 2.0, mode="nearest")
    m = gaussian_filter(rng.normal(size=(n, n)), 2.0, mode="nearest")
    return f, m


def constant_field(n, ux, uy):
    d = np.zeros((n, n, 2))
    d[..., 0] = ux
    d[..., 1] = uy
    return re.DeformationField2D(d, np.ones((n, n)), np.zeros((n, n)))


# ---------------------------------------------------------------------------
# config and type validation


def test_config_defaults_valid():
    cfg = re.RegistrationConfig()
    assert cfg.pyramid_levels == 3
    assert cfg.similarity == "SSD"
    assert cfg.mu_bounds == (0.2, 5.0)


@pytest.mark.parametrize("kwargs", [
    {"pyramid_levels": 0},
    {"similarity": "MI"},
    {"mu_bounds": (1.5, 5.0)},
    {"mu_bounds": (0.2, 0.9)},
    {"mu_bounds": (-0.1, 5.0)},
    {"max_iters_per_level": 0},
    {"step_tol": 0.0},
])
def test_config_rejects_bad_values(kwargs):
    with pytest.raises(ValidationError, match="registration_config"):
        re.RegistrationConfig(**kwargs)


def test_field_shape_validated():
    with pytest.raises(ValidationError, match="field_shape"):
        re.DeformationField2D(np.zeros((4, 4)), np.ones((4, 4)), np.zeros((4, 4)))


def test_grid_dims_is_width_height():
    fld = re.zero_field(7, 5)
    assert fld.grid_dims == (7, 5)
    assert fld.displacements.shape == (5, 7, 2)


# ---------------------------------------------------------------------------
# operator adjoints and the analytic gradient


def test_stencil_adjoints_exact():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(23, 31))
    b = rng.normal(size=(23, 31))
    for fwd, adj in [(re._diff_x, re._diff_x_t), (re._diff_y, re._diff_y_t)]:
        lhs = float(np.sum(fwd(a) * b))
        rhs = float(np.sum(a * adj(b)))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_poisson_solves_self_adjoint():
    rng = np.random.default_rng(8)
    r1 = rng.normal(size=(23, 31))
    r2 = rng.normal(size=(23, 31))
    lhs = float(np.sum(re._neumann_solve(r1) * r2))
    rhs = float(np.sum(r1 * re._neumann_solve(r2)))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)
    s1 = rng.normal(size=(21, 29))
    s2 = rng.normal(size=(21, 29))
    lhs = float(np.sum(re._dirichlet_solve(s1) * s2))
    rhs = float(np.sum(s1 * re._dirichlet_solve(s2)))
    assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_full_parameter_adjoint_exact():
    rng = np.random.default_rng(9)
    h, w = 23, 31
    u0 = re.field_from_params(np.ones((h, w)), np.zeros((h, w)))
    worst = 0.0
    for _ in range(5):
        mu = rng.normal(size=(h, w))
        gamma = rng.normal(size=(h, w))
        gu = rng.normal(size=(h, w, 2))
        lin_u = re.field_from_params(mu + 1.0, gamma) - u0
        g_mu, g_gamma = re._params_adjoint(gu)
        lhs = float(np.sum(lin_u * gu))
        rhs = float(np.sum(mu * g_mu) + np.sum(gamma * g_gamma))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-30))
    assert worst < 1e-12


@pytest.mark.parametrize("similarity", ["SSD", "NCC"])
def test_gradient_matches_finite_differences(similarity):
    rng = np.random.default_rng(11)
    f = gaussian_filter(rng.normal(size=(16, 16)), 2.0, mode="nearest")
    m = gaussian_filter(rng.normal(size=(16, 16)), 2.0, mode="nearest")
    mu = 1.0 + 0.05 * gaussian_filter(rng.normal(size=(16, 16)), 2.0, mode="nearest")
    gamma = 0.05 * gaussian_filter(rng.normal(size=(16, 16)), 2.0, mode="nearest")
    obj = re._Objective(f, m, similarity)
    _, g_mu, g_gamma, _ = obj.value_and_grad(mu, gamma)
    eps = 1e-6
    for (i, j) in [(3, 4), (8, 8), (0, 0), (15, 7), (10, 2)]:
        for grid, grad in ((mu, g_mu), (gamma, g_gamma)):
            plus = grid.copy()
            minus = grid.copy()
            plus[i, j] += eps
            minus[i, j] -= eps
            if grid is mu:
                vp, _ = obj.value(plus, gamma)
                vm, _ = obj.value(minus, gamma)
            else:
                vp, _ = obj.value(mu, plus)
                vm, _ = obj.value(mu, minus)
            fd = (vp - vm) / (2 * eps)
            denom = max(abs(fd), abs(grad[i, j]), 1e-12)
            assert abs(fd - grad[i, j]) / denom < 1e-4


def test_zero_normal_boundary_displacement_by_construction():
    rng = np.random.default_rng(13)
    for _ in range(3):
        mu = 1.0 + 0.3 * rng.normal(size=(19, 26))
        gamma = 0.3 * rng.normal(size=(19, 26))
        u = re.field_from_params(mu, gamma)
        assert np.all(u[:, 0, 0] == 0.0)
        assert np.all(u[:, -1, 0] == 0.0)
        assert np.all(u[0, :, 1] == 0.0)
        assert np.all(u[-1, :, 1] == 0.0)


# ---------------------------------------------------------------------------
# register


def test_identity_registration_stays_at_identity():
    rng = np.random.default_rng(5)
    img = gaussian_filter(rng.normal(size=(64, 64)), 2.0, mode="nearest")
    fld = re.register(img, img.copy())
    assert np.abs(fld.displacements).max() < 1e-6
    assert np.abs(fld.monitor - 1.0).max() < 1e-6
    assert np.abs(fld.rotation).max() < 1e-6
    assert fld.converged


def test_blob_translation_recovered():
    fixed, moving = blob_pair()
    fld = re.register(fixed, moving)
    support = fixed > 0.05
    mean_u = fld.displacements[support].mean(axis=0)
    assert abs(mean_u[0] - (-3.0)) <= 0.5
    assert abs(mean_u[1]) <= 0.5
    warped = re.warp_image(moving, fld.displacements)
    ssd0 = float(np.sum((moving - fixed) ** 2))
    ssd1 = float(np.sum((warped - fixed) ** 2))
    assert ssd1 < 0.01 * ssd0


def test_registered_field_invariants():
    fixed, moving = blob_pair()
    fld = re.register(fixed, moving)
    assert re.min_interior_jacobian(fld.displacements) > 0.0
    assert abs(fld.monitor.mean() - 1.0) <= 1e-6
    u = fld.displacements
    assert np.abs(u[:, 0, 0]).max() == 0.0
    assert np.abs(u[:, -1, 0]).max() == 0.0
    assert np.abs(u[0, :, 1]).max() == 0.0
    assert np.abs(u[-1, :, 1]).max() == 0.0


def test_registration_deterministic():
    fixed, moving = blob_pair(n=48, shift=2.0, sigma=5.0)
    a = re.register(fixed, moving)
    b = re.register(fixed, moving)
    assert np.array_equal(a.displacements, b.displacements)
    assert np.array_equal(a.monitor, b.monitor)
    assert np.array_equal(a.rotation, b.rotation)
    assert a.converged == b.converged


def test_non_convergence_sets_flag_and_returns_field():
    fixed, moving = blob_pair()
    cfg = re.RegistrationConfig(max_iters_per_level=1, step_tol=1e-12)
    fld = re.register(fixed, moving, cfg)
    assert not fld.converged
    assert np.all(np.isfinite(fld.displacements))


def test_objective_monotone_over_accepted_steps(monkeypatch):
    traces = []

    class Recorder(re._Objective):
        def __init__(self, *args, **kwargs):
            super().__init__(*args, **kwargs)
            self.accepted = []
            traces.append(self.accepted)

        def value_and_grad(self, mu, gamma):
            out = super().value_and_grad(mu, gamma)
            self.accepted.append(out[0])
            return out

    monkeypatch.setattr(re, "_Objective", Recorder)
    fixed, moving = blob_pair(n=48, shift=2.0, sigma=5.0)
    re.register(fixed, moving)
    assert traces
    for seq in traces:
        assert all(b <= a + 1e-15 for a, b in zip(seq, seq[1:]))


def test_ncc_similarity_registers_blob():
    fixed, moving = blob_pair(n=64, shift=2.0, sigma=6.0)
    fld = re.register(fixed, 0.5 * moving + 0.2, re.RegistrationConfig(similarity="NCC"))
    support = fixed > 0.05
    mean_u = fld.displacements[support].mean(axis=0)
    assert abs(mean_u[0] - (-2.0)) <= 0.5
    assert abs(mean_u[1]) <= 0.5


def test_register_accepts_objects_with_pixels():
    class Img:
        def __init__(self, px):
            self.pixels = px

    fixed, moving = blob_pair(n=48, shift=1.5, sigma=5.0)
    fld = re.register(Img(fixed), Img(moving))
    ref = re.register(fixed, moving)
    assert np.array_equal(fld.displacements, ref.displacements)


def test_register_rejects_mismatched_shapes():
    with pytest.raises(ValidationError, match="field_shape"):
        re.register(np.zeros((32, 32)), np.zeros((32, 40)))


def test_inverse_consistency_on_blob():
    fixed, moving = blob_pair()
    fab = re.register(fixed, moving)
    fba = re.register(moving, fixed)
    comp = re.compose(fab, fba)
    support = fixed > 0.05
    assert np.abs(comp.displacements[support]).max() < 1.5


def test_adjacent_shape_pair_mask_overlap():
    """Smooth annulus pair differing by a small deformation: the mask
    carried through the recovered field must overlap the target shape
    with Dice >= 0.98."""
    n = 96
    y, x = np.mgrid[0:n, 0:n].astype(float)
    cx = cy = n / 2.0

    def annulus(ax, ay, rot):
        ca, sa = np.cos(rot), np.sin(rot)
        xr = ((x - cx) * ca + (y - cy) * sa) / ax
        yr = (-(x - cx) * sa + (y - cy) * ca) / ay
        r = np.sqrt(xr ** 2 + yr ** 2)
        return np.exp(-((r - 1.0) ** 2) / (2 * 0.12 ** 2))

    img_a = annulus(26.0, 20.0, 0.0)
    img_b = annulus(24.0, 21.5, 0.12)
    fld = re.register(img_a, img_b)
    yy, xx = np.nonzero((((x - cx) / 26.0) ** 2 + ((y - cy) / 20.0) ** 2) <= 1.0)
    moved = re.warp_points(np.column_stack([xx, yy]).astype(float), fld)
    grid = np.zeros((n, n), dtype=bool)
    mi = np.clip(np.round(moved).astype(int), 0, n - 1)
    grid[mi[:, 1], mi[:, 0]] = True
    from scipy.ndimage import binary_closing
    grid = binary_closing(grid, np.ones((3, 3)))
    ca, sa = np.cos(0.12), np.sin(0.12)
    xr = ((x - cx) * ca + (y - cy) * sa) / 24.0
    yr = (-(x - cx) * sa + (y - cy) * ca) / 21.5
    mask_b = (xr ** 2 + yr ** 2) <= 1.0
    inter = np.logical_and(grid, mask_b).sum()
    dice = 2.0 * inter / (grid.sum() + mask_b.sum())
    assert dice >= 0.98


# ---------------------------------------------------------------------------
# warp_points


def test_warp_points_constant_field_exact():
    fld = constant_field(32, 2.5, -1.25)
    pts = np.array([[4.0, 7.0], [10.5, 20.25], [30.0, 3.0]])
    out = re.warp_points(pts, fld)
    assert np.allclose(out, pts + [2.5, -1.25], atol=1e-12)
    assert out.shape == pts.shape


def test_warp_points_circle_to_ellipse():
    n = 64
    y, x = np.mgrid[0:n, 0:n].astype(float)
    c = (n - 1) / 2.0
    d = np.zeros((n, n, 2))
    d[..., 0] = 0.15 * (x - c)
    d[..., 1] = -0.10 * (y - c)
    fld = re.DeformationField2D(d, np.ones((n, n)), np.zeros((n, n)))
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    circle = np.column_stack([c + 15 * np.cos(ang), c + 15 * np.sin(ang)])
    out = re.warp_points(circle, fld)
    expected = np.column_stack([c + 15 * 1.15 * np.cos(ang), c + 15 * 0.90 * np.sin(ang)])
    rms = np.sqrt(np.mean(np.sum((out - expected) ** 2, axis=1)))
    assert rms < 1.0


def test_warp_points_outside_domain_clamps_with_warning():
    fld = constant_field(16, 1.0, 0.0)
    with pytest.warns(UserWarning, match="clamped"):
        out = re.warp_points(np.array([[20.0, 5.0], [3.0, -2.0]]), fld)
    assert np.allclose(out[0], [16.0, 5.0])
    assert np.allclose(out[1], [4.0, 0.0])


def test_warp_points_preserves_order():
    rng = np.random.default_rng(21)
    n = 40
    mu = 1.0 + 0.1 * gaussian_filter(rng.normal(size=(n, n)), 3.0, mode="nearest")
    fld = re.DeformationField2D(
        re.field_from_params(mu, np.zeros((n, n))),
        re.effective_mu(mu), np.zeros((n, n)))
    pts = rng.uniform(2, n - 3, size=(10, 2))
    out = re.warp_points(pts, fld)
    once_more = re.warp_points(pts[::-1], fld)
    assert np.allclose(out[::-1], once_more)


# ---------------------------------------------------------------------------
# compose


def test_compose_constant_translations_add():
    f = constant_field(40, 2.0, 0.0)
    g = constant_field(40, 3.0, 0.0)
    comp = re.compose(f, g)
    assert np.abs(comp.displacements[1:-1, 1:-1, 0] - 5.0).max() < 1e-9
    assert np.abs(comp.displacements[1:-1, 1:-1, 1]).max() < 1e-9


def test_compose_with_zero_is_bit_for_bit():
    n = 40
    rng = np.random.default_rng(3)
    mu = 1.0 + 0.1 * gaussian_filter(rng.normal(size=(n, n)), 3.0, mode="nearest")
    fld = re.DeformationField2D(
        re.field_from_params(mu, np.zeros((n, n))),
        re.effective_mu(mu), np.zeros((n, n)))
    z = re.zero_field(n, n)
    assert re.compose(fld, z) is fld
    assert re.compose(z, fld) is fld
    zz = re.compose(z, re.zero_field(n, n))
    assert np.array_equal(zz.displacements, z.displacements)


def test_compose_rejects_mismatched_grids():
    with pytest.raises(ValidationError, match="field_shape"):
        re.compose(re.zero_field(8, 8), re.zero_field(9, 8))


def test_compose_detects_folding():
    # a folded field (as an unguarded demons run can produce) composed
    # with any non-zero field must fail revalidation
    n = 32
    y, x = np.mgrid[0:n, 0:n].astype(float)
    c = (n - 1) / 2.0
    d = np.zeros((n, n, 2))
    d[..., 0] = -6.0 * np.exp(-((x - c) ** 2 + (y - c) ** 2) / 8.0)
    folded = re.DeformationField2D(d, np.ones((n, n)), np.zeros((n, n)))
    with pytest.raises(CompositionDegeneracyError):
        re.compose(folded, constant_field(n, 0.5, 0.0))


def test_composed_field_monitor_and_rotation_recomputed():
    f = constant_field(30, 1.0, 0.0)
    g = constant_field(30, 0.0, 1.0)
    comp = re.compose(f, g)
    assert abs(comp.monitor.mean() - 1.0) <= 1e-6
    assert np.all(comp.monitor > 0)
    assert np.abs(comp.rotation[1:-1, 1:-1]).max() < 1e-9


# ---------------------------------------------------------------------------
# demons baseline


def test_demons_reduces_blob_residual():
    fixed, moving = blob_pair()
    fld = re.register_demons(fixed, moving, iters=50, sigma=5.0)
    warped = re.warp_image(moving, fld.displacements)
    ssd0 = float(np.sum((moving - fixed) ** 2))
    ssd1 = float(np.sum((warped - fixed) ** 2))
    assert ssd1 <= 0.2 * ssd0
    assert fld.displacements.shape == (96, 96, 2)


def test_demons_deterministic_and_channels_populated():
    fixed, moving = blob_pair(n=48, shift=2.0, sigma=5.0)
    a = re.register_demons(fixed, moving)
    b = re.register_demons(fixed, moving)
    assert np.array_equal(a.displacements, b.displacements)
    assert abs(a.monitor.mean() - 1.0) <= 1e-6
    assert a.rotation.shape == (48, 48)
