import numpy as np
import pytest

from motionspace import rotations
from motionspace.errors import DegenerateInput

from util import finite_diff_array, random_rotations, rel_err


def test_project_identity():
    r = rotations.project([1, 0, 0, 0, 1, 0])
    assert np.allclose(r, np.eye(3), atol=0)


def test_project_scaled_columns_is_identity():
    # [2,0,0,0,3,0]: normalization and orthogonalization recover identity.
    r = rotations.project([2, 0, 0, 0, 3, 0])
    assert np.max(np.abs(r - np.eye(3))) < 1e-12
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-6
    assert abs(np.linalg.det(r) - 1.0) < 1e-6


def test_project_swapped_axes():
    # Hand Gram-Schmidt: a1=(0,1,0) -> b1=(0,1,0); a2=(1,0,0) already
    # orthogonal -> b2=(1,0,0); b3 = b1 x b2 = (0,0,-1).
    r = rotations.project([0, 1, 0, 1, 0, 0])
    expected = np.array([[0, 1, 0], [1, 0, 0], [0, 0, -1]], dtype=float).T
    assert np.max(np.abs(r - expected.T)) < 1e-12
    assert np.allclose(r[:, 0], [0, 1, 0])
    assert np.allclose(r[:, 1], [1, 0, 0])
    assert np.allclose(r[:, 2], [0, 0, -1])
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-6
    assert abs(np.linalg.det(r) - 1.0) < 1e-6


def test_project_degenerate_raises():
    with pytest.raises(DegenerateInput):
        rotations.project([0, 0, 0, 0, 1, 0])
    with pytest.raises(DegenerateInput):
        rotations.project([1, 0, 0, 2, 0, 0])  # a2 parallel to a1


def test_project_clamped_never_raises():
    r = rotations.project([0, 0, 0, 0, 0, 0], min_norm=1e-6)
    assert np.all(np.isfinite(r))


def test_extract_identity():
    assert np.allclose(rotations.extract(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_extract_z_rotation():
    # 90 degrees about z: columns (0,1,0) and (-1,0,0).
    rz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.allclose(rotations.extract(rz), [0, 1, 0, -1, 0, 0])


def test_round_trip_1000_random_rotations():
    rng = np.random.default_rng(12345)
    mats = random_rotations(rng, 1000)
    back = rotations.project(rotations.extract(mats))
    assert np.max(np.abs(back - mats)) < 1e-6
    # Orthonormality and determinant on the projected matrices.
    rtr = np.einsum("nba,nbc->nac", back, back)
    assert np.max(np.abs(rtr - np.eye(3))) < 1e-6
    dets = np.linalg.det(back)
    assert np.max(np.abs(dets - 1.0)) < 1e-6


def test_projection_idempotent():
    rng = np.random.default_rng(7)
    r6 = rng.standard_normal((200, 6))
    once = rotations.project(r6)
    twice = rotations.project(rotations.extract(once))
    assert np.max(np.abs(twice - once)) < 1e-6


def test_continuity_small_perturbation():
    rng = np.random.default_rng(3)
    r6 = rng.standard_normal((100, 6))
    base = rotations.project(r6)
    pert = rotations.project(r6 + 1e-6 * rng.standard_normal((100, 6)))
    assert np.max(np.abs(pert - base)) < 1e-4


def test_center_uncenter_inverse():
    rng = np.random.default_rng(11)
    r6 = rng.standard_normal((50, 6))
    # Inverse up to one ulp of the +-1 offset (exact for representable sums).
    assert np.allclose(rotations.center(rotations.uncenter(r6)), r6, atol=5e-16)
    r6_data = rotations.extract(random_rotations(rng, 50))
    assert np.allclose(
        rotations.uncenter(rotations.center(r6_data)), r6_data, atol=5e-16
    )
    assert np.allclose(rotations.center([1, 0, 0, 0, 1, 0]), np.zeros(6), atol=0)
    assert np.allclose(rotations.uncenter(np.zeros(6)), [1, 0, 0, 0, 1, 0], atol=0)
    assert np.allclose(
        rotations.center([1.5, 0, 0, 0, 1, 0]), [0.5, 0, 0, 0, 0, 0], atol=0
    )


def test_lerp():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(6)
    b = rng.standard_normal(6)
    assert np.allclose(rotations.lerp(a, a, 0.5), a)
    assert np.array_equal(rotations.lerp(a, b, 0.0), a)
    assert np.allclose(
        rotations.lerp([1, 0, 0, 0, 1, 0], [0, 1, 0, 1, 0, 0], 0.5),
        [0.5, 0.5, 0, 0.5, 0.5, 0],
    )


def test_project_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        r6 = rng.standard_normal(6)
        # Keep away from degeneracy.
        if np.linalg.norm(r6[:3]) < 0.3:
            continue
        upstream = rng.standard_normal((3, 3))

        def scalar(x):
            return float(np.sum(rotations.project(x) * upstream))

        analytic = rotations.project_vjp(r6, upstream)
        fd = finite_diff_array(scalar, r6)
        worst = max(worst, rel_err(analytic, fd))
    assert worst < 1e-4


def test_project_vjp_batched_matches_loop():
    rng = np.random.default_rng(5)
    r6 = rng.standard_normal((4, 7, 6))
    up = rng.standard_normal((4, 7, 3, 3))
    batched = rotations.project_vjp(r6, up)
    for i in range(4):
        for j in range(7):
            single = rotations.project_vjp(r6[i, j], up[i, j])
            assert np.allclose(batched[i, j], single)
