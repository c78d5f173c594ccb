"""Tests for the differentiable volume renderer.

Physics invariants (transmittance monotonicity, unit weight budget, the
sharp-sharpness limit collapsing onto the analytic first ray-sphere hit) are
checked against closed forms and the independent intersection oracle in
``probcam.testkit``; every analytic gradient is checked against central
finite differences.
"""

import numpy as np
import pytest
from scipy.integrate import quad

from probcam.errors import InvalidArgumentError, NumericalFailureError
from probcam.geometry import Intrinsics, PoseMean, generate_rays, look_at_pose
from probcam.renderer import (
    ParamGrads,
    RenderParams,
    composite_weights,
    default_render_params,
    discrete_alphas,
    eikonal_from_gradients,
    eikonal_loss,
    logistic_cdf,
    photometric_loss,
    photometric_loss_grad,
    pose_gradient,
    render_ray,
    render_rays,
    s_density,
)
from probcam.scene import COLOR_FREQ, AnalyticScene, SpherePrimitive, color_batch
from probcam.testkit import fd_check, fd_gradient, ray_sphere_first_hit, rng_stream

# Rays whose closest-approach distance sits within this band of a sphere
# radius graze a silhouette; there the sharp-limit color is genuinely
# discontinuous and no finite tolerance is meaningful.
GRAZING_MARGIN = 0.05


@pytest.fixture
def camera(small_intrinsics):
    pose = look_at_pose([3.0, 0.4, 0.5], [0.0, 0.0, 0.0])
    return pose, small_intrinsics


# ---------------------------------------------------------------------------
# S-density primitives
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("s", [1.0, 10.0, 64.0])
def test_s_density_peaks_at_quarter_s(s):
    assert s_density(0.0, s) == pytest.approx(s / 4.0, rel=1e-12)
    # the peak really is the maximum
    xs = np.linspace(-1.0, 1.0, 201)
    assert s_density(xs, s).max() == pytest.approx(s / 4.0, rel=1e-9)


@pytest.mark.parametrize("s", [2.0, 25.0])
def test_s_density_integrates_to_one(s):
    total, _ = quad(lambda x: s_density(x, s), -np.inf, np.inf)
    assert total == pytest.approx(1.0, abs=1e-9)
    # and it is the derivative of the logistic CDF
    a, b = -0.3, 0.7
    part, _ = quad(lambda x: s_density(x, s), a, b)
    assert part == pytest.approx(logistic_cdf(b, s) - logistic_cdf(a, s), abs=1e-9)


def test_logistic_cdf_monotone_and_centered():
    xs = np.linspace(-2.0, 2.0, 101)
    vals = logistic_cdf(xs, 13.0)
    assert (np.diff(vals) > 0.0).all()
    assert ((vals > 0.0) & (vals < 1.0)).all()
    assert logistic_cdf(0.0, 13.0) == pytest.approx(0.5)


def test_discrete_alphas_range_and_direction():
    rng = rng_stream(3, "alphas")
    f = rng.normal(scale=0.5, size=(40, 17))
    a = discrete_alphas(f, 20.0)
    assert a.shape == (40, 16)
    # alpha = 1 - exp(dls) can round to exactly 1.0 once exp(dls) < 2^-53
    assert (a >= 0.0).all() and (a <= 1.0).all()
    # entering the surface (f decreasing) is opaque, leaving it contributes 0
    assert discrete_alphas(np.array([0.2, -0.2]), 20.0)[0] > 0.9
    assert discrete_alphas(np.array([-0.2, 0.2]), 20.0)[0] == 0.0


def test_discrete_alphas_finite_at_extreme_sharpness():
    # deeply negative s*f underflows naive sigmoid ratios; log-space does not
    f = np.array([0.5, 0.1, -0.4, -0.9, -1.4])
    a = discrete_alphas(f, 1e6)
    assert np.isfinite(a).all()
    assert a[1] == pytest.approx(1.0)


def test_composite_weights_invariants():
    rng = rng_stream(4, "composite")
    alphas = rng.uniform(0.0, 1.0, size=(50, 24)) ** 2
    T, w = composite_weights(alphas)
    assert T.shape == w.shape == (50, 25)
    np.testing.assert_array_equal(T[:, 0], 1.0)
    assert (np.diff(T, axis=1) <= 1e-15).all()
    assert (w >= 0.0).all()
    np.testing.assert_array_equal(w[:, -1], 0.0)
    # telescoping weight budget: sum_i T_i alpha_i = 1 - T_end <= 1
    np.testing.assert_allclose(w.sum(axis=1), 1.0 - T[:, -1], atol=1e-12)
    assert (w.sum(axis=1) <= 1.0 + 1e-12).all()


# ---------------------------------------------------------------------------
# Forward rendering physics
# ---------------------------------------------------------------------------

def test_default_render_params_brackets_the_scene():
    p = default_render_params(3.0)
    assert p.t_near == pytest.approx(1.5)
    assert p.t_far == pytest.approx(4.5)


@pytest.mark.parametrize(
    "kw",
    [dict(n_samples=1), dict(t_near=2.0, t_far=1.0), dict(t_near=-1.0), dict(s=0.0)],
)
def test_render_params_validation(kw):
    with pytest.raises(InvalidArgumentError):
        RenderParams(**kw)


def test_rays_missing_everything_composite_to_black(two_sphere_scene, camera):
    pose, K = camera
    away = PoseMean(pose.r, pose.t + np.array([0.0, 0.0, 40.0]))  # scene far off-frustum
    batch = render_rays(two_sphere_scene, away, K, [[16.0, 16.0], [4.0, 28.0]],
                        default_render_params(3.0, s=200.0))
    np.testing.assert_allclose(batch.colors, 0.0, atol=1e-6)
    np.testing.assert_allclose(batch.accumulated, 0.0, atol=1e-6)


def test_transmittance_and_weights_on_real_rays(two_sphere_scene, camera):
    pose, K = camera
    rng = rng_stream(5, "pixels")
    pixels = rng.uniform(0.0, 32.0, size=(64, 2))
    batch = render_rays(two_sphere_scene, pose, K, pixels, default_render_params(3.0))
    np.testing.assert_array_equal(batch.transmittance[:, 0], 1.0)
    assert (np.diff(batch.transmittance, axis=1) <= 1e-15).all()
    assert (batch.weights >= 0.0).all()
    assert (batch.accumulated <= 1.0 + 1e-9).all()
    np.testing.assert_allclose(batch.accumulated, batch.weights.sum(axis=1), atol=1e-12)
    assert ((batch.colors >= 0.0) & (batch.colors <= 1.0)).all()


def test_sharp_limit_matches_analytic_first_hit(two_sphere_scene, camera):
    """At s = 1e3 the composited color collapses onto the first intersection."""
    pose, K = camera
    params = default_render_params(3.1, s=1e3).with_samples(1024)
    rng = rng_stream(6, "sharp")
    pixels = rng.uniform(0.0, 32.0, size=(128, 2))
    origins, dirs = generate_rays(pose, K, pixels)
    hit, t_hit, margin = ray_sphere_first_hit(
        origins, dirs, two_sphere_scene.centers, two_sphere_scene.radii,
        params.t_near, params.t_far,
    )
    keep = margin > GRAZING_MARGIN
    assert keep.sum() > 60  # the check must actually exercise a decent batch

    batch = render_rays(two_sphere_scene, pose, K, pixels, params)
    hits = keep & hit
    expected = color_batch(two_sphere_scene, origins[hits] + t_hit[hits, None] * dirs[hits])
    assert np.abs(batch.colors[hits] - expected).max() < 0.01
    assert np.abs(batch.colors[keep & ~hit]).max() < 0.01
    # weight mass concentrates at the hit depth
    peak_tau = batch.taus[np.arange(len(pixels)), batch.weights.argmax(axis=1)]
    dt = (params.t_far - params.t_near) / params.n_samples
    assert np.abs(peak_tau[hits] - t_hit[hits]).max() < 3.0 * dt


def test_translation_equivariance(two_sphere_scene, camera):
    """Shifting scene and camera together (with matching color phases) is a no-op."""
    pose, K = camera
    delta = np.array([0.31, -0.12, 0.07])
    shifted_scene = AnalyticScene(
        [SpherePrimitive(p.center + delta, p.radius) for p in two_sphere_scene.primitives],
        color_phases=two_sphere_scene.color_phases - COLOR_FREQ * delta,
    )
    shifted_pose = PoseMean(pose.r, pose.t + delta)
    pixels = [[16.0, 16.0], [9.0, 22.0], [25.0, 8.0]]
    params = default_render_params(3.0, s=80.0)
    a = render_rays(two_sphere_scene, pose, K, pixels, params)
    b = render_rays(shifted_scene, shifted_pose, K, pixels, params)
    np.testing.assert_allclose(a.colors, b.colors, atol=1e-9)
    np.testing.assert_allclose(a.weights, b.weights, atol=1e-9)


def test_midpoint_sampling_is_deterministic_and_jitter_is_seeded(two_sphere_scene, camera):
    pose, K = camera
    params = default_render_params(3.0, s=60.0)
    pixels = [[14.0, 17.0], [20.0, 10.0]]
    a = render_rays(two_sphere_scene, pose, K, pixels, params)
    b = render_rays(two_sphere_scene, pose, K, pixels, params)
    np.testing.assert_array_equal(a.colors, b.colors)

    j1 = render_rays(two_sphere_scene, pose, K, pixels, params, jitter_rng=rng_stream(7, "j"))
    j2 = render_rays(two_sphere_scene, pose, K, pixels, params, jitter_rng=rng_stream(7, "j"))
    np.testing.assert_array_equal(j1.colors, j2.colors)
    assert not np.array_equal(j1.taus, a.taus)
    assert (j1.taus >= params.t_near).all() and (j1.taus <= params.t_far).all()


def test_render_ray_matches_batch_row(two_sphere_scene, camera):
    pose, K = camera
    params = default_render_params(3.0)
    single = render_ray(two_sphere_scene, pose, K, [16.0, 15.0], params)
    batch = render_rays(two_sphere_scene, pose, K, [[16.0, 15.0]], params)
    np.testing.assert_array_equal(single.color, batch.colors[0])
    np.testing.assert_array_equal(single.weights, batch.weights[0])
    np.testing.assert_array_equal(single.points, batch.points[0])
    assert single.accumulated == pytest.approx(float(batch.accumulated[0]))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def test_photometric_loss_hand_example():
    colors = np.array([[0.5, 0.5, 0.5]])
    gt = np.array([[0.25, 0.75, 0.5]])
    assert photometric_loss(colors, gt) == pytest.approx(0.5 / 3.0)
    np.testing.assert_allclose(photometric_loss_grad(colors, gt), [[1 / 3, -1 / 3, 0.0]])


def test_photometric_grad_matches_fd():
    rng = rng_stream(8, "photo")
    gt = rng.uniform(size=(5, 3))
    x0 = rng.uniform(size=(5, 3))
    fd = fd_gradient(lambda c: photometric_loss(c, gt), x0, h=1e-7)
    ok, worst = fd_check(photometric_loss_grad(x0, gt), fd, rel=1e-5)
    assert ok, f"worst rel err {worst:.2e}"


def test_eikonal_identically_zero_for_exact_sdf(two_sphere_scene):
    rng = rng_stream(9, "eik")
    pts = rng.uniform(-1.0, 1.0, size=(200, 3))
    # unit-gradient norms differ from 1 only by a rounding ulp
    assert eikonal_loss(two_sphere_scene, pts) < 1e-30


def test_eikonal_from_gradients_hand_example():
    grads = np.array([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    # ((2-1)^2 + (1-1)^2) / 2
    assert eikonal_from_gradients(grads) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Gradients of the full render
# ---------------------------------------------------------------------------

def _pack(poses, scene, log_s):
    return np.concatenate(
        [np.concatenate([p.r for p in poses]), np.concatenate([p.t for p in poses]),
         scene.centers.ravel(), scene.radii, [log_s]]
    )


def _unpack(vec, n_cams, template):
    rs = vec[: 3 * n_cams].reshape(n_cams, 3)
    ts = vec[3 * n_cams: 6 * n_cams].reshape(n_cams, 3)
    off = 6 * n_cams
    n_prim = len(template.primitives)
    centers = vec[off: off + 3 * n_prim].reshape(n_prim, 3)
    radii = vec[off + 3 * n_prim: off + 4 * n_prim]
    log_s = float(vec[-1])
    poses = [PoseMean(r, t) for r, t in zip(rs, ts)]
    return poses, template.with_params(centers, radii), log_s


def test_pose_gradient_matches_finite_differences(two_sphere_scene, small_intrinsics):
    rng = rng_stream(10, "posegrad")
    poses = [
        look_at_pose(3.0 * np.array([np.cos(a), np.sin(a), 0.25]), [0.0, 0.0, 0.0])
        for a in (0.3, 2.4)
    ]
    params = RenderParams(n_samples=24, t_near=1.6, t_far=4.4, s=25.0)
    ray_batch = [(0, rng.uniform(4.0, 28.0, size=(3, 2))), (1, rng.uniform(4.0, 28.0, size=(3, 2)))]
    gt_colors = [rng.uniform(size=(3, 3)), rng.uniform(size=(3, 3))]

    loss, grads = pose_gradient(
        two_sphere_scene, poses, small_intrinsics, ray_batch, gt_colors,
        params.with_s(params.s),
    )
    analytic = np.concatenate(
        [grads.d_pose_r.ravel(), grads.d_pose_t.ravel(),
         grads.d_centers.ravel(), grads.d_radii, [grads.d_log_s]]
    )

    def objective(vec):
        poses_v, scene_v, log_s_v = _unpack(vec, 2, two_sphere_scene)
        loss_v, _ = pose_gradient(
            scene_v, poses_v, small_intrinsics, ray_batch, gt_colors,
            params.with_s(float(np.exp(log_s_v))),
        )
        return loss_v

    x0 = _pack(poses, two_sphere_scene, np.log(params.s))
    assert objective(x0) == pytest.approx(loss, rel=1e-12)
    fd = fd_gradient(objective, x0, h=1e-6)
    ok, worst = fd_check(analytic, fd, rel=1e-4, abs_floor=1e-8)
    assert ok, f"worst rel err {worst:.2e} (kinks masked: {int(fd.kink_mask.sum())})"


def test_pose_gradient_rejects_empty_batch(two_sphere_scene, small_intrinsics):
    with pytest.raises(InvalidArgumentError):
        pose_gradient(two_sphere_scene, [look_at_pose([3, 0, 0], [0, 0, 0])],
                      small_intrinsics, [(0, np.zeros((0, 2)))], [np.zeros((0, 3))],
                      default_render_params(3.0))


def test_param_grads_check_finite_names_the_block():
    grads = ParamGrads.zeros(2, 2)
    grads.d_radii[1] = np.nan
    with pytest.raises(NumericalFailureError, match="radii"):
        grads.check_finite()
