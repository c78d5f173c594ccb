"""The test tooling itself: finite differences, kink detection, the
quaternion oracle's internal consistency, exhaustive NN, reference Adam."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from probcam import testkit
from probcam.errors import NumericalFailureError

RNG = np.random.default_rng(20260814)


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def test_fd_gradient_exact_on_quadratic():
    A = RNG.normal(size=(4, 4))
    A = A @ A.T

    def f(x):
        return 0.5 * float(x @ A @ x)

    x0 = RNG.normal(size=4)
    fd = testkit.fd_gradient(f, x0)
    np.testing.assert_allclose(fd.grad, A @ x0, rtol=1e-7)
    assert not fd.kink_mask.any()


def test_fd_gradient_flags_kink_of_abs():
    fd = testkit.fd_gradient(lambda x: float(np.abs(x).sum()), np.array([0.0, 1.0]))
    assert fd.kink_mask[0] and not fd.kink_mask[1]
    assert fd.grad[1] == pytest.approx(1.0, abs=1e-9)


def test_fd_gradient_rejects_non_finite_probes():
    with np.errstate(divide="ignore"), pytest.raises(NumericalFailureError):
        testkit.fd_gradient(lambda x: float(1.0 / x[0]), np.array([0.0]))


def test_fd_check_respects_kink_mask_and_tolerance():
    fd = testkit.FDGradient(grad=np.array([1.0, 5.0]),
                            kink_mask=np.array([False, True]))
    ok, worst = testkit.fd_check(np.array([1.0 + 1e-6, 0.0]), fd, rel=1e-4)
    assert ok and worst < 1e-4
    ok, worst = testkit.fd_check(np.array([1.01, 0.0]), fd, rel=1e-4)
    assert not ok


# ---------------------------------------------------------------------------
# quaternion oracle consistency
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("scale", [1.0, 1e-3, 1e-9])
def test_quat_rotate_agrees_with_quat_matrix(scale):
    for _ in range(25):
        r = RNG.normal(size=3) * scale
        q = testkit.quat_from_axis_angle(r)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        v = RNG.normal(size=3)
        np.testing.assert_allclose(
            testkit.quat_rotate(q, v), testkit.quat_to_matrix(q) @ v, atol=1e-12)


def test_quat_mul_is_associative():
    a, b, c = (testkit.quat_from_axis_angle(RNG.normal(size=3)) for _ in range(3))
    left = testkit.quat_mul(testkit.quat_mul(a, b), c)
    right = testkit.quat_mul(a, testkit.quat_mul(b, c))
    np.testing.assert_allclose(left, right, atol=1e-12)


# ---------------------------------------------------------------------------
# exhaustive nearest neighbor
# ---------------------------------------------------------------------------

def test_reference_nn_matches_kdtree_l1():
    pts = RNG.normal(size=(200, 3))
    queries = RNG.normal(size=(50, 3))
    d_ref, i_ref = testkit.reference_nn(queries, pts, p=1)
    d_kd, i_kd = cKDTree(pts).query(queries, p=1)
    np.testing.assert_allclose(d_ref, d_kd, atol=1e-12)
    np.testing.assert_array_equal(i_ref, i_kd)


def test_reference_nn_breaks_ties_toward_lower_index():
    pts = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    _, idx = testkit.reference_nn(np.zeros((1, 3)), pts, p=1)
    assert idx[0] == 0


# ---------------------------------------------------------------------------
# reference Adam and rng streams
# ---------------------------------------------------------------------------

def test_reference_adam_first_step_is_lr_sized():
    opt = testkit.ReferenceAdam(lr=1e-3)
    x = opt.step(0.0, 7.3)
    # bias correction makes the first update lr * g / (|g| + eps')
    assert x == pytest.approx(-1e-3, rel=1e-6)


def test_ray_sphere_first_hit_center_ray():
    hit, t_hit, margin = testkit.ray_sphere_first_hit(
        np.array([[0.0, 0.0, -3.0]]), np.array([[0.0, 0.0, 1.0]]),
        np.zeros((1, 3)), np.array([0.5]), 1.5, 4.5)
    assert hit[0] and t_hit[0] == pytest.approx(2.5, abs=1e-12)
    assert margin[0] == pytest.approx(0.5, abs=1e-12)


def test_ray_sphere_first_hit_miss_and_window():
    origins = np.array([[0.0, 2.0, -3.0], [0.0, 0.0, -3.0]])
    dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    hit, _, _ = testkit.ray_sphere_first_hit(
        origins, dirs, np.zeros((1, 3)), np.array([0.5]), t_near=1.5, t_far=2.0)
    assert not hit[0]      # passes beside the sphere
    assert not hit[1]      # intersection at 2.5 lies beyond t_far


def test_rng_stream_reproducible_and_label_separated():
    a = testkit.rng_stream(7, "alpha").normal(size=4)
    b = testkit.rng_stream(7, "alpha").normal(size=4)
    c = testkit.rng_stream(7, "beta").normal(size=4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
