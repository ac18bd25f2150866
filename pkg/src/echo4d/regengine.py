"""Diffeomorphic moving-mesh 2D registration.

A deformation is parameterized by two node-grid scalar fields: a monitor
function mu (local area change, the radial part) and a rotational
component gamma (local curl). The displacement is reconstructed from
them through a pair of Poisson solves,

    psi  solves  lap psi = mu_eff - 1   (Neumann, mean-free rhs)
    chi  solves  lap chi = -gamma       (Dirichlet, zero boundary)
    u    = grad psi + rot chi,  rot chi = (d_y chi, -d_x chi)

so div u tracks mu_eff - 1 and curl u tracks gamma. Boundary normal
displacement is exactly zero by construction: normal derivatives of psi
vanish at the boundary stencil and chi vanishes on the whole boundary.

The solves use orthonormal DCT-I / DST-I diagonalization, which makes
them symmetric operators; the difference stencils have hand-written
transposes. The objective gradient with respect to (mu, gamma) is
therefore exact to machine precision, which the test suite checks with
dot-product identities and central finite differences.

Sign and direction conventions: register(fixed, moving) returns the
field u such that a feature at position p on the fixed slice appears at
p + u(p) on the moving slice. Image resampling uses the pull-back
warp(moving, u)(x) = moving(x + u(x)), so the warped moving image
overlays the fixed one.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field, replace

import numpy as np
from scipy.fft import dctn, dstn, idctn, idstn
from scipy.ndimage import gaussian_filter

from .errors import CompositionDegeneracyError, ValidationError

JACOBIAN_FLOOR = 0.05  # accepted steps must keep min interior det above this
ARMIJO_C = 1e-4


@dataclass(frozen=True)
class RegistrationConfig:
    pyramid_levels: int = 3
    max_iters_per_level: int = 200
    similarity: str = "SSD"
    step_tol: float = 1e-4
    smoothing_sigma: float = 2.0
    mu_bounds: tuple[float, float] = (0.2, 5.0)

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValidationError("registration_config", "pyramid_levels must be >= 1")
        if self.similarity not in ("SSD", "NCC"):
            raise ValidationError("registration_config",
                                  f"similarity must be SSD or NCC, got {self.similarity!r}")
        lo, hi = self.mu_bounds
        if not (0 < lo < 1 < hi):
            raise ValidationError("registration_config",
                                  f"mu_bounds must satisfy 0 < lo < 1 < hi, got {self.mu_bounds}")
        if self.max_iters_per_level < 1 or self.step_tol <= 0:
            raise ValidationError("registration_config", "bad iteration/tolerance settings")


@dataclass(frozen=True)
class DeformationField2D:
    """Dense node-grid displacement in pixels, plus its (mu, gamma) split.

    displacements[row, col] = (u_x, u_y); grid_dims is (w, h).
    """

    displacements: np.ndarray  # (H, W, 2)
    monitor: np.ndarray  # (H, W), mean 1
    rotation: np.ndarray  # (H, W)
    converged: bool = True

    def __post_init__(self):
        object.__setattr__(self, "displacements", np.asarray(self.displacements, dtype=float))
        object.__setattr__(self, "monitor", np.asarray(self.monitor, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        if self.displacements.ndim != 3 or self.displacements.shape[2] != 2:
            raise ValidationError("field_shape", f"displacements must be (H,W,2), got {self.displacements.shape}")

    @property
    def grid_dims(self) -> tuple[int, int]:
        h, w = self.displacements.shape[:2]
        return (w, h)


def zero_field(width: int, height: int) -> DeformationField2D:
    return DeformationField2D(
        displacements=np.zeros((height, width, 2)),
        monitor=np.ones((height, width)),
        rotation=np.zeros((height, width)))


# ---------------------------------------------------------------------------
# Linear operators: difference stencils and Poisson solves


def _diff_x(a: np.ndarray) -> np.ndarray:
    """Central difference along columns; zero on the first/last column."""
    out = np.zeros_like(a)
    out[:, 1:-1] = (a[:, 2:] - a[:, :-2]) * 0.5
    return out


def _diff_x_t(b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(b)
    out[:, 2:] += b[:, 1:-1] * 0.5
    out[:, :-2] -= b[:, 1:-1] * 0.5
    return out


def _diff_y(a: np.ndarray) -> np.ndarray:
    """Central difference along rows; zero on the first/last row."""
    out = np.zeros_like(a)
    out[1:-1, :] = (a[2:, :] - a[:-2, :]) * 0.5
    return out


def _diff_y_t(b: np.ndarray) -> np.ndarray:
    out = np.zeros_like(b)
    out[2:, :] += b[1:-1, :] * 0.5
    out[:-2, :] -= b[1:-1, :] * 0.5
    return out


def _neumann_eigenvalues(h: int, w: int) -> np.ndarray:
    ky = 2.0 * np.cos(np.pi * np.arange(h) / (h - 1)) - 2.0
    kx = 2.0 * np.cos(np.pi * np.arange(w) / (w - 1)) - 2.0
    return ky[:, None] + kx[None, :]


def _neumann_solve(rhs: np.ndarray) -> np.ndarray:
    """Poisson solve with zero normal derivative; rhs must be mean-free.

    Orthonormal DCT-I diagonalization; the zero mode is annihilated, so
    the operator is symmetric with a one-dimensional null space.
    """
    h, w = rhs.shape
    lam = _neumann_eigenvalues(h, w)
    spec = dctn(rhs, type=1, norm="ortho")
    with np.errstate(divide="ignore", invalid="ignore"):
        spec = np.where(lam < -1e-12, spec / lam, 0.0)
    return idctn(spec, type=1, norm="ortho")


def _dirichlet_solve(rhs_interior: np.ndarray) -> np.ndarray:
    """Poisson solve on interior nodes with zero boundary (DST-I)."""
    h, w = rhs_interior.shape
    ky = 2.0 * np.cos(np.pi * np.arange(1, h + 1) / (h + 1)) - 2.0
    kx = 2.0 * np.cos(np.pi * np.arange(1, w + 1) / (w + 1)) - 2.0
    lam = ky[:, None] + kx[None, :]
    spec = dstn(rhs_interior, type=1, norm="ortho")
    return idstn(spec / lam, type=1, norm="ortho")


def _pad_interior(a: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0] + 2, a.shape[1] + 2))
    out[1:-1, 1:-1] = a
    return out


def field_from_params(mu: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Displacement (H, W, 2) from node-grid (mu, gamma) parameters."""
    mu_eff = mu - mu.mean() + 1.0
    psi = _neumann_solve(mu_eff - 1.0)
    chi = _pad_interior(_dirichlet_solve(-gamma[1:-1, 1:-1]))
    ux = _diff_x(psi) + _diff_y(chi)
    uy = _diff_y(psi) - _diff_x(chi)
    return np.stack([ux, uy], axis=-1)


def _params_adjoint(grad_u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Transpose of field_from_params applied to a field-space gradient."""
    gx, gy = grad_u[..., 0], grad_u[..., 1]
    g_psi = _diff_x_t(gx) + _diff_y_t(gy)
    g_chi = _diff_y_t(gx) - _diff_x_t(gy)
    g_mu = _neumann_solve(g_psi)  # symmetric solve
    g_mu = g_mu - g_mu.mean()  # transpose of the mean-one projection
    g_gamma = -_pad_interior(_dirichlet_solve(g_chi[1:-1, 1:-1]))
    return g_mu, g_gamma


def effective_mu(mu: np.ndarray) -> np.ndarray:
    return mu - mu.mean() + 1.0


# ---------------------------------------------------------------------------
# Sampling, warping, Jacobians


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Bilinear value and exact spatial derivatives at (x, y) pixel coords.

    Cells are clamped to the grid, so positions outside extrapolate the
    edge cell linearly; the returned derivative stays exact for that
    extension.
    """
    h, w = img.shape
    cx = np.clip(np.floor(x), 0, w - 2).astype(np.intp)
    cy = np.clip(np.floor(y), 0, h - 2).astype(np.intp)
    fx = x - cx
    fy = y - cy
    i00 = img[cy, cx]
    i10 = img[cy, cx + 1]
    i01 = img[cy + 1, cx]
    i11 = img[cy + 1, cx + 1]
    val = (i00 * (1 - fx) * (1 - fy) + i10 * fx * (1 - fy)
           + i01 * (1 - fx) * fy + i11 * fx * fy)
    dvx = (i10 - i00) * (1 - fy) + (i11 - i01) * fy
    dvy = (i01 - i00) * (1 - fx) + (i11 - i10) * fx
    return val, dvx, dvy


def _grid_xy(h: int, w: int):
    y, x = np.mgrid[0:h, 0:w]
    return x.astype(float), y.astype(float)


def warp_image(moving: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Pull-back warp: out(x) = moving(x + u(x))."""
    h, w = moving.shape
    x, y = _grid_xy(h, w)
    val, _, _ = _bilinear(moving, x + displacements[..., 0], y + displacements[..., 1])
    return val


def jacobian_determinant(displacements: np.ndarray) -> np.ndarray:
    """det(I + grad u) on the node grid (central differences)."""
    ux, uy = displacements[..., 0], displacements[..., 1]
    uxx = _diff_x(ux)
    uxy = _diff_y(ux)
    uyx = _diff_x(uy)
    uyy = _diff_y(uy)
    return (1.0 + uxx) * (1.0 + uyy) - uxy * uyx


def min_interior_jacobian(displacements: np.ndarray) -> float:
    det = jacobian_determinant(displacements)
    return float(det[1:-1, 1:-1].min())


def curl(displacements: np.ndarray) -> np.ndarray:
    return _diff_x(displacements[..., 1]) - _diff_y(displacements[..., 0])


def warp_points(points, field: DeformationField2D):
    """Displace 2D pixel-coordinate points by the bilinearly sampled field.

    Point order is preserved. Sample positions outside the grid are
    clamped to the boundary with a warning.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w, h = field.grid_dims
    x, y = pts[:, 0], pts[:, 1]
    if (x < 0).any() or (x > w - 1).any() or (y < 0).any() or (y > h - 1).any():
        warnings.warn("points outside the field domain were clamped to the boundary",
                      stacklevel=2)
        x = np.clip(x, 0, w - 1)
        y = np.clip(y, 0, h - 1)
    ux, _, _ = _bilinear(field.displacements[..., 0], x, y)
    uy, _, _ = _bilinear(field.displacements[..., 1], x, y)
    return np.column_stack([x + ux, y + uy])


# ---------------------------------------------------------------------------
# Objective


class _Objective:
    """Similarity between fixed and warp(moving, u(params)), with exact
    gradient with respect to the (mu, gamma) parameter grids.

    probe() returns the value plus the cached warp derivatives so a
    gradient at an accepted line-search point costs only the adjoint
    solves, not a second field reconstruction and warp.
    """

    def __init__(self, fixed: np.ndarray, moving: np.ndarray, similarity: str):
        self.fixed = fixed
        self.moving = moving
        self.similarity = similarity
        h, w = fixed.shape
        self.x, self.y = _grid_xy(h, w)
        self.n = fixed.size

    def _similarity_and_slope(self, warped: np.ndarray):
        """Objective value and dE/dwarped."""
        if self.similarity == "SSD":
            r = warped - self.fixed
            return float(np.mean(r * r)), (2.0 / self.n) * r
        f_hat = self.fixed - self.fixed.mean()
        w_hat = warped - warped.mean()
        bb = float(np.sum(w_hat * w_hat))
        cc = float(np.sum(f_hat * f_hat))
        if bb < 1e-30 or cc < 1e-30:
            return 1.0, np.zeros_like(warped)
        aa = float(np.sum(f_hat * w_hat))
        value = 1.0 - aa / np.sqrt(bb * cc)
        d = -(f_hat / np.sqrt(bb * cc) - aa * w_hat / (np.sqrt(cc) * bb ** 1.5))
        return value, d - d.mean()

    def probe(self, mu: np.ndarray, gamma: np.ndarray):
        """(value, u, cache) at the given parameters."""
        u = field_from_params(mu, gamma)
        warped, dmx, dmy = _bilinear(self.moving, self.x + u[..., 0], self.y + u[..., 1])
        value, dE_dw = self._similarity_and_slope(warped)
        return value, u, (dE_dw, dmx, dmy)

    def grad_from(self, cache) -> tuple[np.ndarray, np.ndarray]:
        """Parameter-space gradient from a probe() cache."""
        dE_dw, dmx, dmy = cache
        grad_u = np.stack([dE_dw * dmx, dE_dw * dmy], axis=-1)
        return _params_adjoint(grad_u)

    def value_and_grad(self, mu: np.ndarray, gamma: np.ndarray):
        value, u, cache = self.probe(mu, gamma)
        g_mu, g_gamma = self.grad_from(cache)
        return value, g_mu, g_gamma, u

    def value(self, mu: np.ndarray, gamma: np.ndarray):
        value, u, _ = self.probe(mu, gamma)
        return value, u


# ---------------------------------------------------------------------------
# Multi-resolution optimizer


def _resize_bilinear(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize (deterministic, numpy only)."""
    h, w = a.shape
    th, tw = shape
    if (h, w) == (th, tw):
        return a.copy()
    ys = np.linspace(0.0, h - 1.0, th)
    xs = np.linspace(0.0, w - 1.0, tw)
    x, y = np.meshgrid(xs, ys)
    val, _, _ = _bilinear(a, x, y)
    return val


def _downsample(img: np.ndarray, scale: int) -> np.ndarray:
    if scale == 1:
        return img
    smoothed = gaussian_filter(img, sigma=0.5 * scale, mode="nearest")
    th = max(4, int(np.ceil(img.shape[0] / scale)))
    tw = max(4, int(np.ceil(img.shape[1] / scale)))
    return _resize_bilinear(smoothed, (th, tw))


def _as_pixels(image) -> np.ndarray:
    px = getattr(image, "pixels", image)
    arr = np.asarray(px, dtype=float)
    if arr.ndim != 2:
        raise ValidationError("field_shape", f"expected a 2D image, got shape {arr.shape}")
    return arr


def _resize_displacements(u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Corner-aligned field resize with per-axis pixel rescaling.

    Derivatives (hence the Jacobian) are preserved up to interpolation
    smoothing, and exact zeros on boundary rows/columns stay exact.
    """
    h, w = u.shape[:2]
    th, tw = shape
    sx = (tw - 1) / (w - 1)
    sy = (th - 1) / (h - 1)
    out = np.empty((th, tw, 2))
    out[..., 0] = _resize_bilinear(u[..., 0], shape) * sx
    out[..., 1] = _resize_bilinear(u[..., 1], shape) * sy
    return out


def _compose_displacements(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """u(x) = inner(x) + outer(x + inner(x)) with bilinear resampling."""
    h, w = inner.shape[:2]
    x, y = _grid_xy(h, w)
    gx = x + inner[..., 0]
    gy = y + inner[..., 1]
    ox, _, _ = _bilinear(outer[..., 0], gx, gy)
    oy, _, _ = _bilinear(outer[..., 1], gx, gy)
    return np.stack([inner[..., 0] + ox, inner[..., 1] + oy], axis=-1)


def register(fixed, moving, cfg: RegistrationConfig | None = None) -> DeformationField2D:
    """Estimate the deformation aligning warp(moving, u) with fixed.

    Gradient descent with Armijo backtracking on the (mu, gamma)
    parameterization, coarse-to-fine. Each pyramid level registers a
    residual deformation from identity against the moving image
    pre-warped by the accumulated field; steps that would push the
    interior Jacobian determinant below JACOBIAN_FLOOR or mu outside
    cfg.mu_bounds are rejected, so the result stays diffeomorphic.
    Deterministic: no randomized initialization.
    """
    cfg = cfg or RegistrationConfig()
    f = _as_pixels(fixed)
    m = _as_pixels(moving)
    if f.shape != m.shape:
        raise ValidationError("field_shape",
                              f"fixed {f.shape} and moving {m.shape} dims differ")

    scales = [2 ** (cfg.pyramid_levels - 1 - i) for i in range(cfg.pyramid_levels)]
    u_acc = None
    converged = True
    for scale in scales:
        f_l = _downsample(f, scale)
        m_l = _downsample(m, scale)
        if u_acc is None:
            u_acc = np.zeros(f_l.shape + (2,))
        else:
            u_acc = _resize_displacements(u_acc, f_l.shape)
        m_warp = warp_image(m_l, u_acc) if u_acc.any() else m_l
        # coarse levels only rough in the solution; the configured
        # tolerance governs the full-resolution level
        tol = cfg.step_tol * (10.0 if scale > 1 else 1.0)
        mu, gamma, level_ok = _optimize_level(
            f_l, m_warp, np.ones(f_l.shape), np.zeros(f_l.shape), cfg, tol)
        converged = converged and level_ok
        v = field_from_params(mu, gamma)
        if v.any():
            # damp the residual if discretization pushed the composition
            # over the fold threshold; per-level fields are guarded, so
            # this only absorbs resampling error
            for _ in range(20):
                u_try = _compose_displacements(u_acc, v)
                if min_interior_jacobian(u_try) > 0:
                    u_acc = u_try
                    break
                v *= 0.5
            else:
                converged = False

    return DeformationField2D(
        displacements=u_acc,
        monitor=_monitor_from_field(u_acc),
        rotation=curl(u_acc),
        converged=converged)


def _optimize_level(f: np.ndarray, m: np.ndarray, mu: np.ndarray,
                    gamma: np.ndarray, cfg: RegistrationConfig,
                    step_tol: float | None = None):
    obj = _Objective(f, m, cfg.similarity)
    value, _, cache = obj.probe(mu, gamma)
    g_mu, g_gamma = obj.grad_from(cache)
    step = 1.0
    tol = cfg.step_tol if step_tol is None else step_tol
    converged = False
    for _ in range(cfg.max_iters_per_level):
        grad_norm2 = float(np.sum(g_mu * g_mu) + np.sum(g_gamma * g_gamma))
        if grad_norm2 < 1e-30:
            converged = True
            break
        d_mu = gaussian_filter(g_mu, cfg.smoothing_sigma, mode="nearest")
        d_gamma = gaussian_filter(g_gamma, cfg.smoothing_sigma, mode="nearest")
        descent = float(np.sum(g_mu * d_mu) + np.sum(g_gamma * d_gamma))
        if descent <= 0:  # smoothing is positive definite; guards numerics
            d_mu, d_gamma = g_mu, g_gamma
            descent = grad_norm2

        step = min(step * 2.0, _initial_step(d_mu, d_gamma))
        if ARMIJO_C * step * descent <= 1e-15 * max(value, 1e-300):
            # even the largest trial's required decrease is below
            # floating-point noise: no measurable descent remains
            converged = True
            break
        accepted = False
        for _ in range(30):
            mu_try = np.clip(mu - step * d_mu, *cfg.mu_bounds)
            gamma_try = gamma - step * d_gamma
            trial, u_try, cache_try = obj.probe(mu_try, gamma_try)
            if (trial <= value - ARMIJO_C * step * descent
                    and min_interior_jacobian(u_try) > JACOBIAN_FLOOR):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        rel_drop = (value - trial) / max(value, 1e-30)
        mu, gamma, value = mu_try, gamma_try, trial
        g_mu, g_gamma = obj.grad_from(cache_try)
        if rel_drop < tol:
            converged = True
            break
    else:
        converged = False
    return mu, gamma, converged


def _initial_step(d_mu: np.ndarray, d_gamma: np.ndarray) -> float:
    steepest = max(float(np.abs(d_mu).max()), float(np.abs(d_gamma).max()), 1e-30)
    return 0.5 / steepest  # cap the parameter change of the first trial


# ---------------------------------------------------------------------------
# Composition and the demons baseline


def _monitor_from_field(displacements: np.ndarray):
    det = jacobian_determinant(displacements)
    return det / det.mean()


def compose(f: DeformationField2D, g: DeformationField2D) -> DeformationField2D:
    """(f o g)(x) = f(g(x)): apply g first, then f.

    Displacements add after resampling f's field at the g-displaced
    positions. The composed field is revalidated for Jacobian positivity.
    """
    if f.grid_dims != g.grid_dims:
        raise ValidationError("field_shape",
                              f"grid dims differ: {f.grid_dims} vs {g.grid_dims}")
    if not g.displacements.any():
        return f
    if not f.displacements.any():
        return g
    h, w = g.displacements.shape[:2]
    x, y = _grid_xy(h, w)
    gx = x + g.displacements[..., 0]
    gy = y + g.displacements[..., 1]
    fx, _, _ = _bilinear(f.displacements[..., 0], gx, gy)
    fy, _, _ = _bilinear(f.displacements[..., 1], gx, gy)
    u = np.stack([g.displacements[..., 0] + fx, g.displacements[..., 1] + fy], axis=-1)
    min_det = min_interior_jacobian(u)
    if min_det <= 0:
        raise CompositionDegeneracyError(
            f"composed field folds over: min interior det(grad phi) = {min_det:.4g}")
    return DeformationField2D(
        displacements=u,
        monitor=_monitor_from_field(u),
        rotation=curl(u),
        converged=f.converged and g.converged)


def register_demons(fixed, moving, iters: int = 50, sigma: float = 5.0) -> DeformationField2D:
    """Classical diffusion-demons baseline.

    Intensity-difference force normalized by the fixed-image gradient,
    Gaussian field smoothing after every iteration, fixed iteration
    count. The monitor/rotation channels are derived from the final
    field for invariant checking only; demons fields are not guaranteed
    diffeomorphic.
    """
    f = _as_pixels(fixed)
    m = _as_pixels(moving)
    if f.shape != m.shape:
        raise ValidationError("field_shape",
                              f"fixed {f.shape} and moving {m.shape} dims differ")
    h, w = f.shape
    x, y = _grid_xy(h, w)
    gfx = _diff_x(f)
    gfy = _diff_y(f)
    grad2 = gfx * gfx + gfy * gfy
    u = np.zeros((h, w, 2))
    for _ in range(iters):
        warped, _, _ = _bilinear(m, x + u[..., 0], y + u[..., 1])
        diff = warped - f
        denom = grad2 + diff * diff
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(denom > 1e-12, diff / denom, 0.0)
        u[..., 0] -= scale * gfx
        u[..., 1] -= scale * gfy
        u[..., 0] = gaussian_filter(u[..., 0], sigma, mode="nearest")
        u[..., 1] = gaussian_filter(u[..., 1], sigma, mode="nearest")
        u[0, :, :] = 0.0
        u[-1, :, :] = 0.0
        u[:, 0, :] = 0.0
        u[:, -1, :] = 0.0
    return DeformationField2D(
        displacements=u,
        monitor=_monitor_from_field(u),
        rotation=curl(u))
