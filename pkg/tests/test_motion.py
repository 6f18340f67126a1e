import math

import numpy as np
import pytest

from audiomotion.binio import FormatError
from audiomotion.motion import (
    CanonicalKeypoints,
    MotionFrame,
    MotionSequence,
    MotionStats,
    canonical_layout,
    compute_stats,
    destandardize,
    flatten,
    load_keypoints,
    load_sequence,
    motion_dim,
    rotation_matrix,
    save_keypoints,
    save_sequence,
    standardize,
    transform_keypoints,
    unflatten,
)


def scalar_transform_oracle(points, euler, t, s, delta):
    """Straight-line per-coordinate reimplementation of the keypoint transform.

    Builds the three generators as nested lists, multiplies them by hand, and
    loops over every coordinate. Shares no code with the implementation.
    """
    pitch, yaw, roll = [float(v) for v in euler]
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cr, sr = math.cos(roll), math.sin(roll)
    rx = [[1, 0, 0], [0, cp, sp], [0, -sp, cp]]
    ry = [[cy, 0, -sy], [0, 1, 0], [sy, 0, cy]]
    rz = [[cr, sr, 0], [-sr, cr, 0], [0, 0, 1]]

    def matmul(a, b):
        return [[sum(a[i][k] * b[k][j] for k in range(3)) for j in range(3)] for i in range(3)]

    r = matmul(matmul(rz, ry), rx)
    out = []
    for i in range(len(points)):
        rotated = [sum(points[i][k] * r[k][j] for k in range(3)) for j in range(3)]
        out.append([s * (rotated[j] + delta[i][j]) + t[j] for j in range(3)])
    return np.array(out)


def random_frame(rng, k):
    return MotionFrame(
        euler=rng.uniform(-np.pi, np.pi, 3),
        t=rng.normal(size=3),
        s=float(rng.uniform(0.3, 2.5)),
        delta=rng.normal(scale=0.3, size=(k, 3)),
    )


class TestRotationMatrix:
    def test_zero_rotation_is_identity(self):
        assert np.array_equal(rotation_matrix((0.0, 0.0, 0.0)), np.eye(3))

    def test_yaw_quarter_turn_direction(self):
        # Trigonometric oracle under the row-vector convention x @ R.
        r = rotation_matrix((0.0, math.pi / 2, 0.0))
        mapped = np.array([1.0, 0.0, 0.0]) @ r
        np.testing.assert_allclose(mapped, [0.0, 0.0, -1.0], atol=1e-15)

    def test_half_turn_composed_twice_is_identity(self):
        r = rotation_matrix((math.pi, 0.0, 0.0))
        np.testing.assert_allclose(r @ r, np.eye(3), atol=1e-12)

    def test_orthonormal_and_proper_on_random_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            r = rotation_matrix(rng.uniform(-2 * np.pi, 2 * np.pi, 3))
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-6
            assert abs(np.linalg.det(r) - 1.0) < 1e-6


class TestTransformKeypoints:
    def test_identity_parameters_are_the_identity(self):
        rng = np.random.default_rng(0)
        xc = CanonicalKeypoints(points=rng.normal(size=(5, 3)))
        out = transform_keypoints(xc, MotionFrame.identity(5))
        assert np.array_equal(out, xc.points)

    def test_hand_arithmetic_case(self):
        # 2 * ((1,1,1) + 0) + (1,0,0) = (3,2,2)
        xc = CanonicalKeypoints(points=[[1.0, 1.0, 1.0]])
        frame = MotionFrame(euler=np.zeros(3), t=[1.0, 0.0, 0.0], s=2.0, delta=np.zeros((1, 3)))
        np.testing.assert_array_equal(transform_keypoints(xc, frame), [[3.0, 2.0, 2.0]])

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            k = int(rng.integers(1, 6))
            xc = CanonicalKeypoints(points=rng.normal(size=(k, 3)))
            frame = random_frame(rng, k)
            got = transform_keypoints(xc, frame)
            want = scalar_transform_oracle(
                xc.points.tolist(), frame.euler, frame.t.tolist(), frame.s, frame.delta.tolist()
            )
            np.testing.assert_allclose(got, want, atol=1e-9)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(3)
        xc = CanonicalKeypoints(points=rng.normal(size=(4, 3)))
        frame = random_frame(rng, 4)
        scaled = MotionFrame(euler=frame.euler, t=frame.t, s=frame.s * 1.7, delta=frame.delta)
        base = transform_keypoints(xc, frame) - frame.t
        np.testing.assert_allclose(transform_keypoints(xc, scaled) - frame.t, 1.7 * base, atol=1e-9)

    def test_dimension_mismatch_raises(self):
        xc = CanonicalKeypoints(points=np.zeros((3, 3)))
        with pytest.raises(ValueError, match="mismatch"):
            transform_keypoints(xc, MotionFrame.identity(4))


class TestFlatten:
    def test_layout_definition(self):
        frame = MotionFrame(euler=np.zeros(3), t=np.zeros(3), s=1.0, delta=np.zeros((1, 3)))
        np.testing.assert_array_equal(flatten(frame), [0, 0, 0, 0, 0, 0, 1, 0, 0, 0])

    def test_round_trip_on_random_frames(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            k = int(rng.integers(1, 8))
            frame = random_frame(rng, k)
            back = unflatten(flatten(frame), k)
            assert np.array_equal(back.euler, frame.euler)
            assert np.array_equal(back.t, frame.t)
            assert back.s == frame.s
            assert np.array_equal(back.delta, frame.delta)

    def test_dimension_for_default_k(self):
        assert motion_dim(21) == 70

    def test_wrong_length_raises(self):
        with pytest.raises(ValueError, match="length"):
            unflatten(np.zeros(11), 1)


class TestStats:
    def test_constant_corpus_floors_std(self):
        frame = MotionFrame(euler=[0.1, 0.2, 0.3], t=[1, 2, 3], s=1.5, delta=np.ones((2, 3)))
        seq = MotionSequence(frames=[frame] * 10)
        stats = compute_stats([seq])
        assert np.all(stats.std == 1e-6)
        # mean of identical floats rounds at ~1e-16; the 1e-6 floor amplifies
        # that to ~1e-10, still indistinguishable from zero
        np.testing.assert_allclose(standardize(seq.to_array(), stats), 0.0, atol=1e-9)

    def test_two_point_population_std(self):
        # {0, 2} per dimension -> mean 1, population std 1 (scale dim uses
        # {1, 3} since it must stay positive: mean 2, std 1).
        k = 1
        rows = np.zeros((2, motion_dim(k)))
        rows[1] = 2.0
        rows[:, 6] = [1.0, 3.0]
        seq = MotionSequence(frames=[unflatten(r, k) for r in rows])
        stats = compute_stats([seq])
        np.testing.assert_allclose(np.delete(stats.mean, 6), 1.0)
        assert stats.mean[6] == 2.0
        np.testing.assert_allclose(stats.std, 1.0)

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        stats = MotionStats(mean=rng.normal(size=10), std=rng.uniform(0.5, 2.0, 10))
        x = rng.normal(size=(50, 10))
        np.testing.assert_allclose(destandardize(standardize(x, stats), stats), x, atol=1e-9)

    def test_empty_corpus_raises(self):
        with pytest.raises(ValueError, match="empty"):
            compute_stats([])


class TestFiles:
    def test_mseq_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        arr = rng.normal(size=(7, motion_dim(3))).astype(np.float32).astype(np.float64)
        arr[:, 6] = np.abs(arr[:, 6]) + 0.5
        arr = arr.astype(np.float32).astype(np.float64)
        seq = MotionSequence.from_array(arr, k=3, fps=25.0)
        path = tmp_path / "a.mseq"
        save_sequence(seq, path)
        back = load_sequence(path)
        assert back.fps == seq.fps and back.k == seq.k
        assert np.array_equal(back.to_array(), seq.to_array())
        # a second save produces identical bytes
        save_sequence(back, tmp_path / "b.mseq")
        assert (tmp_path / "a.mseq").read_bytes() == (tmp_path / "b.mseq").read_bytes()

    def test_mseq_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.mseq"
        path.write_bytes(b"XSEQ" + b"\x00" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_sequence(path)

    def test_mseq_truncation_reports_offset(self, tmp_path):
        seq = MotionSequence(frames=[MotionFrame.identity(2)] * 4)
        path = tmp_path / "t.mseq"
        save_sequence(seq, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="offset"):
            load_sequence(path)

    def test_ckpc_round_trip(self, tmp_path):
        xc = canonical_layout(21)
        path = tmp_path / "c.ckpc"
        save_keypoints(xc, path)
        back = load_keypoints(path)
        assert np.array_equal(back.points, xc.points)
        assert path.stat().st_size == 8 + 21 * 3 * 4

    def test_ckpc_bad_magic(self, tmp_path):
        path = tmp_path / "c.ckpc"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_keypoints(path)


class TestTypes:
    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError, match="positive"):
            MotionFrame(euler=np.zeros(3), t=np.zeros(3), s=0.0, delta=np.zeros((1, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            MotionFrame(euler=[np.nan, 0, 0], t=np.zeros(3), s=1.0, delta=np.zeros((1, 3)))

    def test_sequences_require_uniform_k(self):
        with pytest.raises(ValueError, match="same K"):
            MotionSequence(frames=[MotionFrame.identity(1), MotionFrame.identity(2)])

    def test_frames_are_immutable(self):
        frame = MotionFrame.identity(2)
        with pytest.raises(ValueError):
            frame.delta[0, 0] = 1.0
