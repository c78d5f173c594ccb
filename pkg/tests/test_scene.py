"""Scene model: SDF/color fields, surface sampling, rig generation, outlier
injection, simulated matches and the file containers."""

import json
import math

import numpy as np
import pytest

from probcam import geometry as geo
from probcam import scene as scenelib
from probcam.errors import (
    FileFormatError, InvalidArgumentError, SamplingFailureError,
)

RNG = np.random.default_rng(20260814)


# ---------------------------------------------------------------------------
# SDF and color fields
# ---------------------------------------------------------------------------

def test_sdf_is_union_min_of_sphere_distances(two_sphere_scene):
    pts = RNG.uniform(-1.0, 1.0, size=(200, 3))
    f, active = scenelib.sdf_batch(two_sphere_scene, pts)
    per_sphere = np.stack([
        np.linalg.norm(pts - p.center, axis=1) - p.radius
        for p in two_sphere_scene.primitives
    ])
    np.testing.assert_allclose(f, per_sphere.min(axis=0), atol=1e-12)
    np.testing.assert_array_equal(active, per_sphere.argmin(axis=0))


def test_sdf_gradient_unit_norm_and_fd(two_sphere_scene):
    pts = RNG.uniform(-1.0, 1.0, size=(50, 3))
    g = scenelib.sdf_gradient_batch(two_sphere_scene, pts)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)
    for x in pts[:5]:
        num = np.empty(3)
        for a in range(3):
            e = np.zeros(3)
            e[a] = 1e-6
            num[a] = (scenelib.sdf_eval(two_sphere_scene, x + e)
                      - scenelib.sdf_eval(two_sphere_scene, x - e)) / 2e-6
        np.testing.assert_allclose(
            scenelib.sdf_gradient(two_sphere_scene, x), num, atol=1e-8)


def test_sdf_gradient_raises_at_sphere_center(two_sphere_scene):
    with pytest.raises(Exception):
        scenelib.sdf_gradient(two_sphere_scene, two_sphere_scene.primitives[0].center)


def test_color_matches_formula_and_stays_in_unit_range(two_sphere_scene):
    pts = RNG.uniform(-2.0, 2.0, size=(300, 3))
    colors = scenelib.color_batch(two_sphere_scene, pts)
    phases = two_sphere_scene.color_phases
    expected = np.clip(
        scenelib.COLOR_BASE
        + scenelib.COLOR_AMP * np.sin(scenelib.COLOR_FREQ * pts + phases), 0.0, 1.0)
    np.testing.assert_allclose(colors, expected, atol=1e-12)
    assert colors.min() >= 0.0 and colors.max() <= 1.0


def test_color_is_view_independent(two_sphere_scene):
    pts = RNG.uniform(-1.0, 1.0, size=(20, 3))
    a = scenelib.color_batch(two_sphere_scene, pts, view_dirs=RNG.normal(size=(20, 3)))
    b = scenelib.color_batch(two_sphere_scene, pts, view_dirs=RNG.normal(size=(20, 3)))
    np.testing.assert_array_equal(a, b)


def test_surface_sampling_lands_on_surface(two_sphere_scene):
    pts = scenelib.sample_surface_points(two_sphere_scene, 500, RNG)
    f, _ = scenelib.sdf_batch(two_sphere_scene, pts)
    assert len(pts) == 500
    assert np.abs(f).max() < scenelib.SURFACE_TOL


def test_surface_sampling_fails_for_unreachable_count():
    # a sphere far outside the rejection-sampling box cannot be hit
    lonely = scenelib.AnalyticScene(
        [scenelib.SpherePrimitive(np.zeros(3), 1e-5)], color_seed=0)
    with pytest.raises(SamplingFailureError):
        scenelib.sample_surface_points(lonely, 100000, np.random.default_rng(0),
                                       max_batches=2)


def test_unit_bound_validator():
    scene = scenelib.AnalyticScene(
        [scenelib.SpherePrimitive(np.array([0.8, 0.0, 0.0]), 0.5)], color_seed=0)
    with pytest.raises(InvalidArgumentError):
        scenelib.validate_unit_bound(scene)


# ---------------------------------------------------------------------------
# camera rig and outliers
# ---------------------------------------------------------------------------

def test_generate_cameras_on_hemisphere(small_intrinsics):
    rig = scenelib.generate_cameras(10, 3.0, small_intrinsics, seed=4)
    for pose in rig.true_poses:
        assert np.linalg.norm(pose.t) == pytest.approx(3.0, abs=1e-9)
        assert pose.t[2] > 0.0  # upper hemisphere
        fwd = pose.rotation @ np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(fwd, -pose.t / np.linalg.norm(pose.t), atol=1e-9)
    assert not rig.outlier_flags.any()


def test_different_rig_seeds_differ(small_intrinsics):
    a = scenelib.generate_cameras(5, 3.0, small_intrinsics, seed=1)
    b = scenelib.generate_cameras(5, 3.0, small_intrinsics, seed=2)
    assert not np.allclose(a.true_poses[0].t, b.true_poses[0].t)


def test_inject_outliers_counts_and_magnitudes(small_intrinsics):
    rig = scenelib.generate_cameras(12, 3.0, small_intrinsics, seed=3)
    noisy = scenelib.inject_outliers(rig, 0.25, rot_range_deg=(20.0, 30.0),
                                     trans_range=(0.2, 0.4),
                                     inlier_noise=(1.0, 0.01), seed=5)
    assert noisy.outlier_flags.sum() == math.ceil(0.25 * 12)
    for i in range(12):
        err_deg = geo.rotation_geodesic_deg(noisy.init_poses[i].rotation,
                                            noisy.true_poses[i].rotation)
        err_t = np.linalg.norm(noisy.init_poses[i].t - noisy.true_poses[i].t)
        if noisy.outlier_flags[i]:
            assert 20.0 - 1e-6 <= err_deg <= 30.0 + 1e-6
            assert 0.2 - 1e-9 <= err_t <= 0.4 + 1e-9
        else:
            assert err_deg <= 1.0 + 1e-6
            assert err_t <= 0.01 + 1e-9
    # truth untouched
    np.testing.assert_array_equal(noisy.true_poses[0].t, rig.true_poses[0].t)


def test_inject_outliers_validates_fraction(small_intrinsics):
    rig = scenelib.generate_cameras(4, 3.0, small_intrinsics, seed=0)
    with pytest.raises(InvalidArgumentError):
        scenelib.inject_outliers(rig, 1.5)


# ---------------------------------------------------------------------------
# simulated matches
# ---------------------------------------------------------------------------

@pytest.fixture()
def matched_setup(two_sphere_scene, small_intrinsics):
    rig = scenelib.generate_cameras(8, 3.0, small_intrinsics, seed=2)
    noisy = scenelib.inject_outliers(rig, 0.25, seed=9)
    table = scenelib.simulate_matches(two_sphere_scene, noisy,
                                      n_surface_points=400, seed=13)
    return noisy, table


def test_match_counts_symmetric_zero_diagonal(matched_setup):
    _, table = matched_setup
    np.testing.assert_array_equal(table.counts, table.counts.T)
    assert not np.diagonal(table.counts).any()


def test_match_pairs_consistent_with_counts(matched_setup):
    _, table = matched_setup
    for (i, j), rows in table.pairs.items():
        assert i < j
        # counts tallies matched surface points; stored rows are snapped to
        # pixel centers and de-duplicated, so rows can only be fewer.
        assert 0 < len(rows) <= table.counts[i, j]
        assert rows.shape[1] == 4
        # stored pixel coordinates are snapped to pixel centers
        np.testing.assert_allclose(rows - np.floor(rows) , 0.5, atol=1e-12)


def test_outlier_cameras_get_no_matches(matched_setup):
    noisy, table = matched_setup
    # a 20-30 degree pose error moves projections far beyond the 2 px gate
    assert table.counts[noisy.outlier_flags].sum() == 0


def test_matches_within_transfer_threshold(two_sphere_scene, small_intrinsics):
    rig = scenelib.generate_cameras(6, 3.0, small_intrinsics, seed=6)
    gentle = scenelib.inject_outliers(rig, 0.0, inlier_noise=(0.5, 0.005), seed=7)
    table = scenelib.simulate_matches(two_sphere_scene, gentle,
                                      n_surface_points=300,
                                      threshold_px=2.0, seed=8)
    assert table.counts.sum() > 0  # near-true poses keep their matches


# ---------------------------------------------------------------------------
# ground-truth images and containers
# ---------------------------------------------------------------------------

def test_gt_pixel_lookup_is_exact(two_sphere_scene, small_intrinsics):
    rig = scenelib.generate_cameras(2, 3.0, small_intrinsics, seed=1)
    from probcam.renderer import RenderParams

    gt = scenelib.render_gt_images(
        two_sphere_scene, rig, RenderParams(n_samples=24, t_near=1.5, t_far=4.5, s=10.0))
    img = gt.images[0]
    assert img.shape == (32, 32, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0
    px = np.array([[3.5, 7.5], [31.5, 0.5]])
    np.testing.assert_array_equal(gt.pixel_colors(0, px),
                                  img[[7, 0], [3, 31]])


def test_scenario_round_trip(tmp_path, two_sphere_scene, small_intrinsics):
    rig = scenelib.inject_outliers(
        scenelib.generate_cameras(5, 3.0, small_intrinsics, seed=2), 0.2, seed=3)
    table = scenelib.simulate_matches(two_sphere_scene, rig,
                                      n_surface_points=200, seed=5)
    path = tmp_path / "scenario.json"
    scenelib.save_scenario(path, two_sphere_scene, rig, table)
    scene2, rig2, table2 = scenelib.load_scenario(path)

    np.testing.assert_allclose(scene2.centers, two_sphere_scene.centers, atol=1e-15)
    np.testing.assert_allclose(scene2.color_phases, two_sphere_scene.color_phases,
                               atol=1e-15)
    assert rig2.n_cameras == 5
    np.testing.assert_array_equal(rig2.outlier_flags, rig.outlier_flags)
    for p, q in zip(rig2.init_poses, rig.init_poses):
        np.testing.assert_allclose(p.r, q.r, atol=1e-15)
        np.testing.assert_allclose(p.t, q.t, atol=1e-15)
    np.testing.assert_array_equal(table2.counts, table.counts)
    for key in table.pairs:
        np.testing.assert_allclose(table2.pairs[key], table.pairs[key], atol=1e-15)


def test_load_scenario_reports_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1, "scene": }')
    with pytest.raises(FileFormatError) as err:
        scenelib.load_scenario(path)
    assert "byte 24" in str(err.value)


def test_image_blob_round_trip(tmp_path):
    img = RNG.uniform(0.0, 1.0, size=(8, 6, 3))
    scenelib.save_image_blob(tmp_path / "cam00", img, 0)
    loaded, header = scenelib.load_image_blob(tmp_path / "cam00")
    np.testing.assert_allclose(loaded, img, atol=1e-7)  # float32 storage
    assert header["camera_id"] == 0


def test_image_blob_size_mismatch(tmp_path):
    img = RNG.uniform(0.0, 1.0, size=(4, 4, 3))
    scenelib.save_image_blob(tmp_path / "cam01", img, 1)
    with open(f"{tmp_path}/cam01.bin", "ab") as fh:
        fh.write(b"\x00\x00\x00\x00")
    with pytest.raises(FileFormatError):
        scenelib.load_image_blob(tmp_path / "cam01")


def test_rig_rejects_cameras_missing_the_origin(small_intrinsics):
    pose = geo.look_at_pose(np.array([3.0, 0.0, 0.5]), np.array([0.0, 0.9, 0.0]))
    with pytest.raises(InvalidArgumentError):
        scenelib.CameraRig([pose], [pose], small_intrinsics, np.zeros(1, dtype=bool))
