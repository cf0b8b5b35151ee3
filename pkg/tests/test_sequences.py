import numpy as np
import pytest

from motionspace import body as bodymod
from motionspace import rotations, sequences
from motionspace.errors import (
    EmptyInput,
    InvalidConfig,
    OutOfBounds,
    ParseError,
    TooShort,
)
from motionspace.sequences import (
    GaitParams,
    MotionSequence,
    NormalizationSpec,
    align,
    concat_cycles,
    denormalize,
    dtw_distance,
    make_gait_dataset,
    normalize,
    read_sequences,
    resample,
    segment_cycles,
    synth_gait,
    write_sequences,
)


@pytest.fixture(scope="module")
def gait_body():
    return bodymod.make_synthetic_body(n_joints=8, n_vertices=60, n_shape=4, seed=5)


@pytest.fixture(scope="module")
def hip_joints(gait_body):
    layout = bodymod.joint_layout(gait_body.n_joints)
    return (layout["hip_l"], layout["hip_r"])


def static_sequence(n=10, n_joints=8, n_shape=4, dt=0.05):
    theta = np.tile(rotations.IDENTITY_6D, (n, n_joints, 1))
    return MotionSequence(
        beta=np.zeros(n_shape),
        theta=theta,
        gamma=np.zeros((n, 3)),
        times=dt * np.arange(n),
    )


# --- normalization -----------------------------------------------------------


def test_normalize_static_sequence():
    seq = static_sequence(n=10, dt=0.05)
    spec = NormalizationSpec(np.ones(3), 0.1)
    chi = normalize(seq, spec)
    theta_c, gamma_n, phi = sequences.split_chi(chi, seq.n_joints)
    assert np.allclose(theta_c, 0.0)
    assert np.allclose(gamma_n, 0.0)
    assert phi[0] == 0.0
    assert np.allclose(phi[1:], 0.5)  # 0.05 / 0.1


def test_normalize_boundary_value_is_one():
    seq = static_sequence(n=4)
    seq.gamma[2] = np.array([0.7, 0.8, 0.9])
    spec = NormalizationSpec(np.array([0.7, 0.8, 0.9]), 0.1)
    chi = normalize(seq, spec)
    _, gamma_n, _ = sequences.split_chi(chi, seq.n_joints)
    assert np.allclose(gamma_n[2], 1.0)


def test_normalize_out_of_bounds():
    seq = static_sequence(n=4)
    seq.gamma[1, 0] = 2.5
    spec = NormalizationSpec(np.ones(3), 0.1)
    with pytest.raises(OutOfBounds):
        normalize(seq, spec)
    chi = normalize(seq, spec, clip=True)
    _, gamma_n, _ = sequences.split_chi(chi, seq.n_joints)
    assert gamma_n[1, 0] == 1.0


def test_phi_out_of_bounds():
    seq = static_sequence(n=4, dt=0.5)
    spec = NormalizationSpec(np.ones(3), 0.1)
    with pytest.raises(OutOfBounds):
        normalize(seq, spec)


def test_round_trip_100_synthetic(gait_body):
    seqs = make_gait_dataset(gait_body, 100, 16, seed=3)
    spec = NormalizationSpec.fit(seqs, 16, quantile=1.0)  # covering bounds
    worst = 0.0
    for s in seqs:
        chi = normalize(s, spec)
        back = denormalize(chi, spec, s.beta, s.n_joints)
        worst = max(
            worst,
            np.max(np.abs(back.theta - s.theta)),
            np.max(np.abs(back.gamma - s.gamma)),
            np.max(np.abs((back.times - back.times[0]) - (s.times - s.times[0]))),
        )
    assert worst < 1e-9


# --- align -------------------------------------------------------------------


def walk_cycle(gait_body, **kw):
    params = GaitParams(**kw) if kw else GaitParams()
    return synth_gait(params, gait_body, 32, seed=1)


def test_align_zeroes_first_frame(gait_body):
    seq = walk_cycle(gait_body, heading_deg=70.0)
    out = align(seq)
    assert np.allclose(out.gamma[0], 0.0, atol=1e-12)
    root0 = rotations.project(out.theta[0, 0])
    assert np.max(np.abs(root0 - np.eye(3))) < 1e-9


def test_align_idempotent(gait_body):
    seq = walk_cycle(gait_body, heading_deg=-120.0)
    once = align(seq)
    twice = align(once)
    assert np.max(np.abs(twice.gamma - once.gamma)) < 1e-9
    assert np.max(np.abs(twice.theta - once.theta)) < 1e-9


def test_align_invariant_to_ground_plane_rigid_transform(gait_body):
    seq = walk_cycle(gait_body, heading_deg=40.0)
    ang = 1.234
    rot = np.array(
        [[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1.0]]
    )
    t = np.array([3.0, -2.0, 0.0])
    moved = seq.copy()
    moved.gamma = seq.gamma @ rot.T + t
    roots = rotations.project(seq.theta[:, 0])
    moved.theta[:, 0] = rotations.extract(rot @ roots)
    a, b = align(seq), align(moved)
    assert np.max(np.abs(a.gamma - b.gamma)) < 1e-6
    assert np.max(np.abs(a.theta - b.theta)) < 1e-6


# --- resample ----------------------------------------------------------------


def test_resample_same_count_uniform_identity(gait_body):
    seq = walk_cycle(gait_body)
    seq.times = np.linspace(0, seq.times[-1], seq.n_frames)  # force uniform
    out = resample(seq, seq.n_frames)
    assert np.max(np.abs(out.theta - seq.theta)) < 1e-9
    assert np.max(np.abs(out.gamma - seq.gamma)) < 1e-9


def test_resample_constant_sequence():
    seq = static_sequence(n=7)
    out = resample(seq, 13)
    assert np.allclose(out.theta, seq.theta[0])
    assert np.allclose(out.gamma, 0.0)


def test_resample_preserves_duration(gait_body):
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        times = np.sort(rng.uniform(0, 2, size=n))
        times += 1e-3 * np.arange(n)  # strictly increasing
        theta = np.tile(rotations.IDENTITY_6D, (n, 4, 1))
        seq = MotionSequence(np.zeros(2), theta, rng.standard_normal((n, 3)), times)
        out = resample(seq, int(rng.integers(2, 50)))
        assert abs(out.duration - seq.duration) < 1e-9


def test_resample_too_short():
    seq = static_sequence(n=1)
    with pytest.raises(TooShort):
        resample(seq, 10)


# --- DTW ---------------------------------------------------------------------


def brute_force_dtw(a, b):
    """Exhaustive enumeration of monotone boundary-anchored paths."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    n, m = cost.shape
    best = [np.inf]

    def walk(i, j, acc):
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc + cost[i + 1, j])
        if j + 1 < m:
            walk(i, j + 1, acc + cost[i, j + 1])
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc + cost[i + 1, j + 1])

    walk(0, 0, cost[0, 0])
    return best[0]


def test_dtw_identical_is_zero():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((10, 3))
    assert dtw_distance(x, x) == 0.0


def test_dtw_single_scalars():
    assert dtw_distance([0.0], [3.0]) == 3.0


def test_dtw_empty_raises():
    with pytest.raises(EmptyInput):
        dtw_distance(np.zeros((0, 2)), np.ones((3, 2)))


def test_dtw_matches_brute_force():
    rng = np.random.default_rng(77)
    for _ in range(200):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 7))
        k = int(rng.integers(1, 4))
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((m, k))
        assert dtw_distance(a, b) == pytest.approx(brute_force_dtw(a, b), abs=1e-12)


def test_dtw_symmetric_nonnegative():
    rng = np.random.default_rng(13)
    for _ in range(20):
        a = rng.standard_normal((5, 2))
        b = rng.standard_normal((8, 2))
        d_ab = dtw_distance(a, b)
        assert d_ab >= 0.0
        assert d_ab == pytest.approx(dtw_distance(b, a), abs=1e-12)


# --- segmentation ------------------------------------------------------------


def test_segment_three_identical_cycles(gait_body, hip_joints):
    cycle = synth_gait(GaitParams(cadence=1.2, stride=0.7), gait_body, 32, seed=4)
    long = concat_cycles(cycle, 3)
    segs, bounds = segment_cycles(
        long, [cycle], threshold=2.0, hip_joints=hip_joints, return_bounds=True
    )
    assert len(segs) == 3
    # Ground-truth boundaries at frame multiples of the cycle length.
    truth = [(0, 32), (32, 64), (64, 96)]
    for (s, e), (ts, te) in zip(sorted(bounds), truth):
        assert abs(s - ts) <= 1
        assert abs(e - te) <= 1
    assert all(
        sequences.MIN_CYCLE_SECONDS <= s.duration <= sequences.MAX_CYCLE_SECONDS
        for s in segs
    )


def test_segment_standing_sequence_empty(gait_body, hip_joints):
    cycle = synth_gait(GaitParams(), gait_body, 32, seed=2)
    standing = static_sequence(n=96, n_joints=gait_body.n_joints, dt=cycle.duration / 31)
    segs = segment_cycles(standing, [cycle], threshold=2.0, hip_joints=hip_joints)
    assert segs == []


def test_segment_prunes_short_durations(gait_body, hip_joints):
    # A 0.2 s pseudo-cycle: every returned segment must still be >= 0.3 s.
    cycle = synth_gait(GaitParams(cadence=1.0), gait_body, 32, seed=6)
    fast = cycle.copy()
    fast.times = cycle.times * 0.2
    long = concat_cycles(fast, 5)
    segs = segment_cycles(long, [fast], threshold=10.0, hip_joints=hip_joints)
    assert all(s.duration >= sequences.MIN_CYCLE_SECONDS - 1e-9 for s in segs)


def test_segment_outputs_aligned(gait_body, hip_joints):
    cycle = synth_gait(GaitParams(heading_deg=90.0), gait_body, 32, seed=8)
    long = concat_cycles(cycle, 3)
    segs = segment_cycles(long, [cycle], threshold=2.0, hip_joints=hip_joints)
    for s in segs:
        assert np.allclose(s.gamma[0], 0.0, atol=1e-9)


# --- synthetic gait ----------------------------------------------------------


def test_synth_gait_deterministic(gait_body):
    a = synth_gait(GaitParams(), gait_body, 24, seed=11)
    b = synth_gait(GaitParams(), gait_body, 24, seed=11)
    assert np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.gamma, b.gamma)
    assert np.array_equal(a.times, b.times)


def test_synth_gait_heading_negates_ground_plane(gait_body):
    fwd = synth_gait(GaitParams(heading_deg=0.0, jitter=0.0), gait_body, 24, seed=1)
    back = synth_gait(GaitParams(heading_deg=180.0, jitter=0.0), gait_body, 24, seed=1)
    assert np.allclose(back.gamma[-1, :2], -fwd.gamma[-1, :2], atol=1e-9)
    assert back.gamma[-1, 2] == pytest.approx(fwd.gamma[-1, 2])


def test_synth_gait_run_shorter_than_walk(gait_body):
    walk = synth_gait(GaitParams(cadence=1.0, style="walk"), gait_body, 24, seed=1)
    run = synth_gait(GaitParams(cadence=3.0, style="run"), gait_body, 24, seed=1)
    assert run.duration < walk.duration


def test_synth_gait_rejects_bad_config(gait_body):
    with pytest.raises(InvalidConfig):
        synth_gait(GaitParams(cadence=-1.0), gait_body, 24)
    with pytest.raises(InvalidConfig):
        synth_gait(GaitParams(style="moonwalk"), gait_body, 24)
    small = bodymod.make_synthetic_body(n_joints=5, n_vertices=20, n_shape=2, seed=0)
    with pytest.raises(InvalidConfig):
        synth_gait(GaitParams(), small, 24)


# --- file I/O ----------------------------------------------------------------


def test_write_read_round_trip_static(tmp_path):
    seq = static_sequence(n=3)
    path = tmp_path / "one.mseq"
    write_sequences(path, [seq])
    back = read_sequences(path)
    assert len(back) == 1
    assert np.array_equal(back[0].theta, seq.theta)
    assert np.array_equal(back[0].gamma, seq.gamma)
    assert np.array_equal(back[0].times, seq.times)
    assert np.array_equal(back[0].beta, seq.beta)


def test_write_read_round_trip_100(gait_body, tmp_path):
    seqs = make_gait_dataset(gait_body, 100, 12, seed=21)
    path = tmp_path / "many.mseq"
    write_sequences(path, seqs)
    back = read_sequences(path)
    assert len(back) == 100
    for a, b in zip(seqs, back):
        assert np.max(np.abs(a.theta - b.theta)) < 1e-9
        assert np.max(np.abs(a.gamma - b.gamma)) < 1e-9
        assert np.max(np.abs(a.times - b.times)) < 1e-9
        assert np.max(np.abs(a.beta - b.beta)) < 1e-9


def test_read_truncated_file_raises(gait_body, tmp_path):
    seqs = make_gait_dataset(gait_body, 2, 12, seed=1)
    path = tmp_path / "trunc.mseq"
    write_sequences(path, seqs)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ParseError):
        read_sequences(path)


def test_read_bad_header(tmp_path):
    path = tmp_path / "bad.mseq"
    path.write_text("NOPE 9\n")
    with pytest.raises(ParseError, match="header"):
        read_sequences(path)
