import numpy as np
import pytest

from exo2ego.depth_align import KIND_VIDEO, DepthStack
from exo2ego.ego_render import (
    PointCloudFrame,
    lift_frame,
    lift_video,
    read_clouds,
    render_clouds,
    render_frame,
    render_prior,
    write_clouds,
)
from exo2ego.geometry import Intrinsics, Pose, unproject
from exo2ego.io_formats import Camera, CameraTrajectory
from exo2ego.synthetic import PlaneSceneConfig, decode_texture, make_plane_scene, plane_homography

K = Intrinsics(64.0, 64.0, 32.0, 32.0)


def brute_force_render(cloud, intrinsics, pose, height, width, radius, fill=0.5):
    """Independent oracle: per-pixel min over all splat contributions."""
    rgb = np.full((3, height, width), fill, dtype=np.float32)
    depth = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=bool)
    best = {}
    for idx in range(cloud.points.shape[0]):
        point = cloud.points[idx]
        cam = pose.rotation @ point + pose.translation
        if cam[2] <= 0:
            continue
        u = intrinsics.fx * cam[0] / cam[2] + intrinsics.cx
        v = intrinsics.fy * cam[1] / cam[2] + intrinsics.cy
        col, row = int(np.floor(u)), int(np.floor(v))
        if not (0 <= col < width and 0 <= row < height):
            continue
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                r, c = row + dr, col + dc
                if not (0 <= r < height and 0 <= c < width):
                    continue
                key = (r, c)
                if key not in best or (cam[2], idx) < best[key][:2]:
                    best[key] = (cam[2], idx)
    for (r, c), (z, idx) in best.items():
        rgb[:, r, c] = cloud.colors[idx]
        depth[r, c] = z
        valid[r, c] = True
    return rgb, depth, valid


def small_cloud(points, colors=None):
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if colors is None:
        colors = np.linspace(0.1, 0.9, 3 * n, dtype=np.float32).reshape(n, 3)
    return PointCloudFrame(points, np.asarray(colors, np.float32), np.zeros((n, 2), dtype=np.int64), 0, 4, 4)


def test_lift_single_pixel_principal_point():
    rgb = np.zeros((3, 5, 5), dtype=np.float32)
    rgb[:, 2, 2] = [0.2, 0.4, 0.6]
    depth = np.ones((5, 5))
    valid = np.zeros((5, 5), dtype=bool)
    valid[2, 2] = True
    k = Intrinsics(10.0, 10.0, 2.5, 2.5)
    cloud = lift_frame(rgb, depth, valid, k, Pose.identity())
    assert cloud.points.shape == (1, 3)
    assert np.allclose(cloud.points[0], [0.0, 0.0, 1.0])
    assert np.allclose(cloud.colors[0], [0.2, 0.4, 0.6])
    assert cloud.source_pixel[0].tolist() == [2, 2]


def test_lift_all_invalid_gives_empty_cloud():
    cloud = lift_frame(np.zeros((3, 4, 4), np.float32), np.ones((4, 4)), np.zeros((4, 4)), K, Pose.identity())
    assert cloud.empty


def test_lift_matches_unproject_oracle():
    rng = np.random.default_rng(2)
    rgb = rng.random((3, 2, 2)).astype(np.float32)
    depth = rng.uniform(1.0, 4.0, (2, 2))
    valid = np.ones((2, 2), dtype=bool)
    k = Intrinsics(7.0, 9.0, 1.0, 1.0)
    cloud = lift_frame(rgb, depth, valid, k, Pose.identity())
    assert cloud.points.shape == (4, 3)
    for n, (r, c) in enumerate(cloud.source_pixel):
        expect = unproject(c + 0.5, r + 0.5, depth[r, c], k, Pose.identity())
        assert np.allclose(cloud.points[n], expect)


def test_zbuffer_two_points_same_pixel():
    # both points on the optical axis; nearer one must win
    cloud = small_cloud([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    rgb, depth, valid = render_frame(cloud, K, Pose.identity(), 64, 64, radius=0)
    assert valid[32, 32]
    assert depth[32, 32] == 1.0
    assert rgb[:, 32, 32].tolist() == [0.0, 1.0, 0.0]


def test_equal_depth_tie_lower_index_wins():
    cloud = small_cloud([[0.0, 0.0, 2.0], [0.0, 0.0, 2.0]], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    rgb, _, _ = render_frame(cloud, K, Pose.identity(), 64, 64, radius=0)
    assert rgb[:, 32, 32].tolist() == [1.0, 0.0, 0.0]


def test_behind_camera_culled():
    cloud = small_cloud([[0.0, 0.0, -1.0]])
    _, _, valid = render_frame(cloud, K, Pose.identity(), 64, 64, radius=1)
    assert not valid.any()


def test_out_of_bounds_culled():
    cloud = small_cloud([[100.0, 0.0, 1.0]])
    _, _, valid = render_frame(cloud, K, Pose.identity(), 64, 64, radius=1)
    assert not valid.any()


def test_hole_fill_and_depth_sentinel():
    cloud = small_cloud([[0.0, 0.0, 2.0]])
    k = Intrinsics(8.0, 8.0, 4.0, 4.0)
    rgb, depth, valid = render_frame(cloud, k, Pose.identity(), 8, 8, radius=0, fill=0.5)
    assert valid.sum() == 1
    assert np.all(depth[~valid] == 0.0)
    assert np.all(rgb[:, ~valid] == np.float32(0.5))
    # valid == 0 exactly where depth == 0
    assert np.array_equal(valid, depth != 0)


def test_splat_radius_square():
    cloud = small_cloud([[0.0, 0.0, 2.0]])
    _, _, valid = render_frame(cloud, K, Pose.identity(), 64, 64, radius=1)
    assert valid.sum() == 9
    assert valid[31:34, 31:34].all()


def test_zbuffer_against_brute_force_random():
    rng = np.random.default_rng(9)
    for trial in range(25):
        n = int(rng.integers(1, 30))
        points = np.column_stack(
            [rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, n), rng.uniform(0.5, 4.0, n)]
        )
        colors = rng.random((n, 3)).astype(np.float32)
        cloud = small_cloud(points, colors)
        radius = int(rng.integers(0, 3))
        got = render_frame(cloud, K, Pose.identity(), 16, 16, radius=radius)
        want = brute_force_render(cloud, K, Pose.identity(), 16, 16, radius=radius)
        for g, w in zip(got, want):
            assert np.array_equal(g, w)


def test_identity_reprojection_exact():
    scene = make_plane_scene(PlaneSceneConfig(frames=2))
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    clouds = lift_video(scene.video, depth, scene.static, scene.exo_cams)
    prior = render_clouds(clouds, scene.exo_cams, 64, 64, radius=0)
    coverage = prior.valid[0].mean()
    assert coverage >= 0.99
    sel = prior.valid[0]
    assert np.array_equal(prior.rgb[0][:, sel], scene.video[0][:, sel])
    assert np.abs(prior.depth[0][sel] - scene.depth_true[0][sel]).max() < 1e-5


def test_render_prior_identity_pose_reproduces_source():
    scene = make_plane_scene(PlaneSceneConfig(frames=2))
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    prior = render_prior(scene.video, depth, scene.static, scene.exo_cams, scene.exo_cams, 64, 64, radius=0)
    for f in range(2):
        sel = prior.valid[f]
        assert sel.mean() >= 0.99
        assert np.array_equal(prior.rgb[f][:, sel], scene.video[f][:, sel])


def test_plane_reprojection_matches_homography():
    scene = make_plane_scene()
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    prior = render_prior(scene.video, depth, scene.static, scene.exo_cams, scene.ego_cams, 64, 64, radius=0)
    for f in (0, len(scene.ego_cams) - 1):
        hom = plane_homography(scene.exo_cams[f], scene.ego_cams[f], (0.0, 0.0, 1.0), scene.plane_z)
        rows, cols = np.nonzero(scene.static[f] > 0)
        src = np.stack([cols + 0.5, rows + 0.5, np.ones_like(cols, dtype=np.float64)])
        mapped = hom @ src
        mapped = mapped[:2] / mapped[2]
        # decode where each rendered pixel came from, then compare positions
        out_rows, out_cols = np.nonzero(prior.valid[f])
        tex = prior.rgb[f][:, out_rows, out_cols].T
        src_row, src_col, src_frame = decode_texture(tex, 64, 64, scene.video.shape[0])
        assert np.all(src_frame == f)
        expected_u = np.empty(out_rows.size)
        expected_v = np.empty(out_rows.size)
        lut_u = mapped[0].reshape(64, 64)
        lut_v = mapped[1].reshape(64, 64)
        expected_u = lut_u[src_row, src_col]
        expected_v = lut_v[src_row, src_col]
        err_u = np.abs(expected_u - (out_cols + 0.5))
        err_v = np.abs(expected_v - (out_rows + 0.5))
        assert max(err_u.max(), err_v.max()) <= 0.5 + 1e-9


def test_render_facing_away_all_holes():
    scene = make_plane_scene(PlaneSceneConfig(frames=1))
    flipped = Pose(np.diag([1.0, -1.0, -1.0]), np.zeros(3))  # looks toward -z
    cams = CameraTrajectory([Camera(scene.exo_cams[0].intrinsics, flipped)])
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    prior = render_prior(scene.video, depth, scene.static, scene.exo_cams, cams, 64, 64)
    assert not prior.valid.any()


def test_static_mask_excludes_pixels():
    scene = make_plane_scene(PlaneSceneConfig(frames=1))
    static = scene.static.copy()
    static[0, :32] = 0
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    clouds = lift_video(scene.video, depth, static, scene.exo_cams)
    assert np.all(clouds[0].source_pixel[:, 0] >= 32)


def test_frame_count_mismatch():
    scene = make_plane_scene(PlaneSceneConfig(frames=2))
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    short = CameraTrajectory([scene.ego_cams[0]])
    with pytest.raises(ValueError, match="frame count"):
        render_prior(scene.video, depth, scene.static, scene.exo_cams, short, 64, 64)


def test_cloud_file_roundtrip(tmp_path):
    scene = make_plane_scene(PlaneSceneConfig(frames=2, height=16, width=16))
    depth = DepthStack(scene.depth_true, KIND_VIDEO)
    clouds = lift_video(scene.video, depth, scene.static, scene.exo_cams)
    path = tmp_path / "clouds.egxt"
    write_clouds(path, clouds)
    back = read_clouds(path, num_frames=2)
    assert len(back) == 2
    for orig, loaded in zip(clouds, back):
        assert np.array_equal(loaded.source_pixel, orig.source_pixel)
        assert np.allclose(loaded.points, orig.points, atol=1e-4)
        assert np.array_equal(loaded.colors, orig.colors)
        assert (loaded.source_height, loaded.source_width) == (16, 16)
