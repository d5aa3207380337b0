import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from exo2ego import io_formats
from exo2ego.geometry import Intrinsics, Pose
from exo2ego.io_formats import (
    Camera,
    CameraTrajectory,
    read_cameras,
    read_objects,
    read_tensor,
    tight_box,
    track_from_masks,
    write_cameras,
    write_objects,
    write_tensor,
)


def test_single_float_roundtrip(tmp_path):
    path = tmp_path / "t.egxt"
    data = np.array([[0.5]], dtype=np.float32)
    write_tensor(path, data)
    raw = path.read_bytes()
    # 4 magic + 4 version + 1 dtype + 1 ndim + 2*4 dims = 18-byte header
    assert len(raw) == 18 + 4
    assert raw[:4] == b"EGXT"
    back = read_tensor(path)
    assert back.dtype == np.float32
    assert back[0, 0] == np.float32(0.5)


def test_u8_roundtrip(tmp_path):
    path = tmp_path / "t.egxt"
    data = np.arange(6, dtype=np.uint8).reshape(2, 3)
    write_tensor(path, data)
    back = read_tensor(path)
    assert back.dtype == np.uint8
    assert np.array_equal(back, data)


def test_rank_limit(tmp_path):
    with pytest.raises(ValueError, match="unsupported rank"):
        write_tensor(tmp_path / "t.egxt", np.zeros((1, 1, 1, 1, 1, 1), dtype=np.float32))


def test_unsupported_dtype(tmp_path):
    with pytest.raises(ValueError, match="unsupported dtype"):
        write_tensor(tmp_path / "t.egxt", np.zeros(3, dtype=np.float64))


def test_zero_dim_rejected(tmp_path):
    with pytest.raises(ValueError, match="dims"):
        write_tensor(tmp_path / "t.egxt", np.zeros((2, 0), dtype=np.float32))


def test_bad_magic(tmp_path):
    path = tmp_path / "t.egxt"
    write_tensor(path, np.zeros(3, dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="bad magic"):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.egxt"
    write_tensor(path, np.zeros(4, dtype=np.float32))
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError, match="truncated payload"):
        read_tensor(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.egxt"
    write_tensor(path, np.zeros(4, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="size mismatch"):
        read_tensor(path)


@settings(max_examples=40, deadline=None)
@given(
    data=arrays(
        np.float32,
        shape=st.lists(st.integers(1, 4), min_size=1, max_size=5).map(tuple),
        elements=st.floats(-1e6, 1e6, width=32),
    ),
    as_u8=st.booleans(),
)
def test_roundtrip_bitexact(tmp_path_factory, data, as_u8):
    path = tmp_path_factory.mktemp("rt") / "t.egxt"
    if as_u8:
        data = (np.abs(data) % 256).astype(np.uint8)
    write_tensor(path, data)
    back = read_tensor(path)
    assert back.dtype == data.dtype
    assert back.tobytes() == np.ascontiguousarray(data).tobytes()


# -- cameras ---------------------------------------------------------------


def test_identity_pose_line(tmp_path):
    path = tmp_path / "c.cam"
    path.write_text("# comment\n1 1 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n")
    traj = read_cameras(path)
    assert len(traj) == 1
    assert np.allclose(traj[0].pose.center, [0, 0, 0])


def test_comment_only_file(tmp_path):
    path = tmp_path / "c.cam"
    path.write_text("# nothing here\n")
    with pytest.raises(ValueError, match="empty trajectory"):
        read_cameras(path)


def test_non_orthonormal_rejected(tmp_path):
    path = tmp_path / "c.cam"
    path.write_text("1 1 0 0 2 0 0 0 0 2 0 0 0 0 2 0\n")
    with pytest.raises(ValueError, match="non-orthonormal"):
        read_cameras(path)


def test_wrong_field_count(tmp_path):
    path = tmp_path / "c.cam"
    path.write_text("1 1 0 0 1 0 0\n")
    with pytest.raises(ValueError, match="wrong field count"):
        read_cameras(path)


def test_camera_save_load_full_precision(tmp_path):
    rng = np.random.default_rng(7)
    cams = []
    for _ in range(3):
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        cams.append(Camera(Intrinsics(*(rng.uniform(10, 100, 2)), *rng.uniform(-5, 5, 2)), Pose(q, rng.normal(size=3))))
    traj = CameraTrajectory(cams)
    path = tmp_path / "c.cam"
    write_cameras(path, traj)
    back = read_cameras(path)
    for orig, loaded in zip(traj, back):
        assert loaded.intrinsics == orig.intrinsics
        assert np.array_equal(loaded.pose.rotation, orig.pose.rotation)
        assert np.array_equal(loaded.pose.translation, orig.pose.translation)


# -- object annotations ----------------------------------------------------


def _square_mask(frames, size, r0, c0, side):
    masks = np.zeros((frames, size, size), dtype=np.uint8)
    masks[:, r0 : r0 + side, c0 : c0 + side] = 1
    return masks


def test_tight_box_convention():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1:3, 2:4] = 1
    assert tight_box(mask) == (2, 1, 4, 3)
    assert tight_box(np.zeros((3, 3))) is None


def test_objects_roundtrip(tmp_path):
    emb = np.zeros(8)
    emb[0] = 1.0
    track = track_from_masks(0, _square_mask(2, 16, 3, 4, 5), emb)
    obj_set = io_formats.ObjectSet([track], side="ground_truth")
    path = tmp_path / "objs.json"
    write_objects(path, obj_set)
    back = read_objects(path)
    assert back.side == "ground_truth"
    assert back.objects[0].boxes[0] == (4.0, 3.0, 9.0, 8.0)
    assert np.array_equal(back.objects[0].masks, track.masks)
    assert np.allclose(back.objects[0].embedding, emb)


def test_embedding_renormalized_within_slack(tmp_path):
    emb = np.zeros(4)
    emb[1] = 1.003  # within 1e-2 slack
    track = track_from_masks(1, _square_mask(1, 8, 0, 0, 2), emb)
    assert np.isclose(np.linalg.norm(track.embedding), 1.0)


def test_embedding_rejected_beyond_slack():
    emb = np.zeros(4)
    emb[1] = 1.2
    with pytest.raises(ValueError, match="embedding norm"):
        track_from_masks(1, _square_mask(1, 8, 0, 0, 2), emb)


def test_box_must_be_tight(tmp_path):
    emb = np.zeros(4)
    emb[0] = 1.0
    track = track_from_masks(0, _square_mask(1, 8, 1, 1, 3), emb)
    track.boxes[0] = (0.0, 0.0, 8.0, 8.0)  # not tight
    path = tmp_path / "objs.json"
    write_objects(path, io_formats.ObjectSet([track]))
    with pytest.raises(ValueError, match="tight box"):
        read_objects(path)
