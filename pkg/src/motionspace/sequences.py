"""Motion sequences and everything that turns raw data into network food.

A sequence is one subject's shape vector plus per-frame joint rotations
(raw 6D), root translations, and absolute timestamps. The network consumes
a flat normalized vector per sequence: centered rotations, translations
scaled to [-1,1]^3, and per-frame time deltas scaled to [0,1]. This module
owns that conversion plus alignment, uniform resampling, dynamic time
warping, cycle segmentation, a synthetic gait generator, and the sequence
container file format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import body as bodymod
from . import rotations
from .errors import (
    EmptyInput,
    InvalidConfig,
    OutOfBounds,
    ParseError,
    ShapeMismatch,
    TooShort,
)

# Durations outside this window are not single locomotion cycles.
MIN_CYCLE_SECONDS = 0.3
MAX_CYCLE_SECONDS = 3.0


def frame_dim(n_joints: int) -> int:
    """Scalars per frame in the flat representation: 6J + 3 + 1."""
    return 6 * n_joints + 4


@dataclass
class MotionSequence:
    """One subject's shape plus n time-stamped frames.

    theta holds raw (uncentered) 6D rotations, gamma root translations in
    meters, times absolute seconds (strictly increasing).
    """

    beta: np.ndarray  # (B,)
    theta: np.ndarray  # (n, J, 6)
    gamma: np.ndarray  # (n, 3)
    times: np.ndarray  # (n,)
    frame_rate_hint: float = 0.0

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.theta.ndim != 3 or self.theta.shape[2] != 6:
            raise ShapeMismatch(f"theta must be (n, J, 6), got {self.theta.shape}")
        n = self.theta.shape[0]
        if self.gamma.shape != (n, 3) or self.times.shape != (n,):
            raise ShapeMismatch("gamma/times frame counts do not match theta")
        if n >= 2 and np.any(np.diff(self.times) <= 0):
            raise InvalidConfig("timestamps must be strictly increasing")

    @property
    def n_frames(self) -> int:
        return self.theta.shape[0]

    @property
    def n_joints(self) -> int:
        return self.theta.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def copy(self) -> "MotionSequence":
        return MotionSequence(
            self.beta.copy(),
            self.theta.copy(),
            self.gamma.copy(),
            self.times.copy(),
            self.frame_rate_hint,
        )


@dataclass(frozen=True)
class NormalizationSpec:
    """Fixed scaling constants, stored with every trained model."""

    translation_bound: np.ndarray  # (3,) meters, maps gamma to [-1,1]^3
    max_frame_delta: float  # seconds, maps time deltas to [0,1]

    def __post_init__(self):
        object.__setattr__(
            self, "translation_bound", np.asarray(self.translation_bound, dtype=float)
        )
        if np.any(self.translation_bound <= 0) or self.max_frame_delta <= 0:
            raise InvalidConfig("normalization bounds must be strictly positive")

    @staticmethod
    def fit(
        seqs: list["MotionSequence"], n_frames: int, quantile: float = 0.999
    ) -> "NormalizationSpec":
        """Bounds from training data: per-axis quantile of |gamma|, max
        delta sized so an N-frame cycle of maximal duration maps to 1."""
        if not seqs:
            raise EmptyInput("cannot fit normalization on an empty dataset")
        gammas = np.concatenate([np.abs(s.gamma) for s in seqs], axis=0)
        bound = np.maximum(np.quantile(gammas, quantile, axis=0), 1e-3)
        return NormalizationSpec(bound, MAX_CYCLE_SECONDS / (n_frames - 1))


def normalize(seq: MotionSequence, spec: NormalizationSpec, clip: bool = False):
    """Flatten a sequence into the normalized per-frame representation.

    Rotations are centered on the identity encoding, translations divided
    by the per-axis bound, and the per-frame time delta (0 for the first
    frame) divided by the max delta. With ``clip=False`` values outside
    the bounds raise OutOfBounds; ``clip=True`` clamps them (the training
    path, where the bound is a quantile of the data by construction).
    """
    n = seq.n_frames
    theta_c = rotations.center(seq.theta).reshape(n, 6 * seq.n_joints)
    gamma_n = seq.gamma / spec.translation_bound
    deltas = np.diff(seq.times, prepend=seq.times[0])
    phi = deltas / spec.max_frame_delta
    if clip:
        gamma_n = np.clip(gamma_n, -1.0, 1.0)
        phi = np.clip(phi, 0.0, 1.0)
    else:
        if np.any(np.abs(gamma_n) > 1.0 + 1e-9):
            raise OutOfBounds(
                "translation exceeds the normalization bound "
                f"(max |gamma|/bound = {np.max(np.abs(gamma_n)):.6g})"
            )
        if np.any(phi > 1.0 + 1e-9) or np.any(phi < 0.0):
            raise OutOfBounds(
                f"frame delta outside [0, max_frame_delta] (max phi = {np.max(phi):.6g})"
            )
    rows = np.concatenate([theta_c, gamma_n, phi[:, None]], axis=1)
    return rows.ravel()


def denormalize(
    chi, spec: NormalizationSpec, beta, n_joints: int, frame_rate_hint: float = 0.0
) -> MotionSequence:
    """Inverse of :func:`normalize`; clamps time deltas at zero.

    The absolute time origin is not represented (deltas only), so decoded
    timestamps always start at the first delta.
    """
    chi = np.asarray(chi, dtype=float)
    width = frame_dim(n_joints)
    if chi.size % width != 0:
        raise ShapeMismatch(
            f"flat length {chi.size} is not a multiple of frame width {width}"
        )
    rows = chi.reshape(-1, width)
    n = rows.shape[0]
    theta = rotations.uncenter(rows[:, : 6 * n_joints].reshape(n, n_joints, 6))
    gamma = rows[:, 6 * n_joints : 6 * n_joints + 3] * spec.translation_bound
    phi = np.maximum(rows[:, -1], 0.0)
    times = np.cumsum(phi * spec.max_frame_delta)
    # Guard against clamped zero deltas producing non-increasing stamps;
    # positive deltas pass through untouched so round trips stay exact.
    if n >= 2 and np.any(np.diff(times) <= 0.0):
        tiny = 1e-12 * max(1.0, spec.max_frame_delta)
        for i in range(1, n):
            if times[i] <= times[i - 1]:
                times[i] = times[i - 1] + tiny
    return MotionSequence(np.asarray(beta, dtype=float), theta, gamma, times,
                          frame_rate_hint)


def split_chi(chi, n_joints: int):
    """View a flat vector as (theta_centered (n,J,6), gamma_n (n,3), phi (n,))."""
    chi = np.asarray(chi)
    rows = chi.reshape(-1, frame_dim(n_joints))
    n = rows.shape[0]
    return (
        rows[:, : 6 * n_joints].reshape(n, n_joints, 6),
        rows[:, 6 * n_joints : 6 * n_joints + 3],
        rows[:, -1],
    )


def align(seq: MotionSequence) -> MotionSequence:
    """Move a sequence into its canonical frame.

    The inverse of frame 1's root transform is applied to every frame's
    translation and root rotation, so the sequence starts at zero
    translation with identity root orientation. Limb joints and
    timestamps are untouched. Idempotent, and invariant to rigid
    pre-transforms of the whole sequence.
    """
    r_first = rotations.project(seq.theta[0, 0])
    out = seq.copy()
    out.gamma = (seq.gamma - seq.gamma[0]) @ r_first  # R^T applied from the left
    roots = rotations.project(seq.theta[:, 0])
    out.theta[:, 0] = rotations.extract(r_first.T @ roots)
    return out


def resample(seq: MotionSequence, n_frames: int) -> MotionSequence:
    """Resample to ``n_frames`` uniformly spaced over the full duration.

    Rotations interpolate componentwise in 6D (projected downstream),
    translations and time linearly. Total duration is preserved.
    """
    if seq.n_frames < 2:
        raise TooShort(f"resampling needs >= 2 frames, got {seq.n_frames}")
    if n_frames < 2:
        raise InvalidConfig(f"target frame count must be >= 2, got {n_frames}")
    u = np.linspace(seq.times[0], seq.times[-1], n_frames)
    idx = np.clip(np.searchsorted(seq.times, u, side="right") - 1, 0, seq.n_frames - 2)
    t0 = seq.times[idx]
    t1 = seq.times[idx + 1]
    s = ((u - t0) / (t1 - t0))[:, None]
    gamma = (1.0 - s) * seq.gamma[idx] + s * seq.gamma[idx + 1]
    sw = s[:, :, None]
    theta = (1.0 - sw) * seq.theta[idx] + sw * seq.theta[idx + 1]
    return MotionSequence(seq.beta.copy(), theta, gamma, u, seq.frame_rate_hint)


# ---------------------------------------------------------------------------
# Dynamic time warping and cycle segmentation
# ---------------------------------------------------------------------------


def dtw_distance(a, b) -> float:
    """Classic boundary-anchored DTW with steps (1,0), (0,1), (1,1).

    Inputs are sequences of K-vectors; the cost of matching two frames is
    their Euclidean distance, and the result is the minimum summed cost
    over monotone alignment paths.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 1:
        a = a[:, None]  # sequence of scalars
    if b.ndim == 1:
        b = b[:, None]
    if a.size == 0 or b.size == 0:
        raise EmptyInput("dtw_distance requires non-empty sequences")
    diff = a[:, None, :] - b[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    n, m = cost.shape
    prev = np.empty(m)
    cur = np.empty(m)
    prev[0] = cost[0, 0]
    for j in range(1, m):
        prev[j] = prev[j - 1] + cost[0, j]
    for i in range(1, n):
        cur[0] = prev[0] + cost[i, 0]
        row = cost[i]
        for j in range(1, m):
            best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = row[j] + best
        prev, cur = cur, prev
    return float(prev[m - 1])


def _hip_channels(seq: MotionSequence, hip_joints) -> np.ndarray:
    li, ri = hip_joints
    return seq.theta[:, (li, ri), :].reshape(seq.n_frames, 12)


def segment_cycles(
    long: MotionSequence,
    refs: list[MotionSequence],
    threshold: float,
    hip_joints: tuple[int, int],
    start_stride: int = 5,
    n_lengths: int = 8,
    return_bounds: bool = False,
):
    """Cut single locomotion cycles out of a long sequence.

    Candidate windows (start grid with the given stride, log-spaced length
    grid spanning 0.3-3.0 s) are scored by DTW between their two-hip 6D
    channels and each reference cycle; windows under the threshold are
    greedily selected by ascending distance (ties to the earlier start)
    without overlap, locally refined around their grid boundaries, pruned
    to the 0.3-3.0 s duration window, and aligned. An empty result is
    valid. With ``return_bounds`` the frame index ranges come back too.
    """
    if not refs:
        raise EmptyInput("segmentation needs at least one reference cycle")
    n = long.n_frames
    if n < 2:
        return ([], []) if return_bounds else []
    dt = float(np.median(np.diff(long.times)))
    len_lo = max(2, int(round(MIN_CYCLE_SECONDS / dt)))
    len_hi = min(n, int(round(MAX_CYCLE_SECONDS / dt)))
    if len_hi < len_lo:
        return ([], []) if return_bounds else []
    lengths = np.unique(
        np.round(np.geomspace(len_lo, len_hi, n_lengths)).astype(int)
    )
    chan = _hip_channels(long, hip_joints)
    ref_chans = [_hip_channels(r, hip_joints) for r in refs]

    candidates = []
    for start in range(0, n - len_lo + 1, start_stride):
        for length in lengths:
            end = start + int(length)
            if end > n:
                continue
            window = chan[start:end]
            dist = min(dtw_distance(window, rc) for rc in ref_chans)
            if dist < threshold:
                candidates.append((dist, start, end))

    candidates.sort(key=lambda c: (c[0], c[1]))
    chosen: list[tuple[int, int]] = []
    for _, start, end in candidates:
        if all(end <= s or start >= e for s, e in chosen):
            chosen.append((start, end))
    chosen.sort()

    # The grids are coarse; refine each pick around its boundaries.
    refined = []
    for start, end in chosen:
        length = end - start
        d_len = max(2, int(round(0.3 * length)))
        best = (math.inf, start, end)
        for s in range(max(0, start - start_stride // 2), min(n - 2, start + start_stride // 2) + 1):
            for e in range(max(s + len_lo, end - d_len), min(n, end + d_len) + 1):
                if e - s > len_hi:
                    continue
                dist = min(dtw_distance(chan[s:e], rc) for rc in ref_chans)
                if dist < best[0]:
                    best = (dist, s, e)
        refined.append((best[1], best[2]))

    out = []
    bounds = []
    for start, end in refined:
        duration = float(long.times[end - 1] - long.times[start])
        if not MIN_CYCLE_SECONDS <= duration <= MAX_CYCLE_SECONDS:
            continue
        sub = MotionSequence(
            long.beta.copy(),
            long.theta[start:end].copy(),
            long.gamma[start:end].copy(),
            long.times[start:end] - long.times[start],
            long.frame_rate_hint,
        )
        out.append(align(sub))
        bounds.append((start, end))
    return (out, bounds) if return_bounds else out


def concat_cycles(seq: MotionSequence, repeats: int) -> MotionSequence:
    """Chain ``repeats`` copies of a cycle into one long sequence.

    Translation and time continue from the previous copy (one median
    frame delta apart), so cycle k starts at frame index k * n_frames.
    """
    if repeats < 1:
        raise InvalidConfig("repeats must be >= 1")
    dt = float(np.median(np.diff(seq.times)))
    step_gamma = seq.gamma[-1] - seq.gamma[0] + (seq.gamma[1] - seq.gamma[0])
    thetas, gammas, times = [], [], []
    t_off = 0.0
    g_off = np.zeros(3)
    for _ in range(repeats):
        thetas.append(seq.theta)
        gammas.append(seq.gamma + g_off)
        times.append(seq.times - seq.times[0] + t_off)
        t_off += seq.duration + dt
        g_off = g_off + step_gamma
    return MotionSequence(
        seq.beta.copy(),
        np.concatenate(thetas),
        np.concatenate(gammas),
        np.concatenate(times),
        seq.frame_rate_hint,
    )


# ---------------------------------------------------------------------------
# Synthetic gait generation
# ---------------------------------------------------------------------------

GAIT_STYLES = ("walk", "run", "backward", "sidestep", "turn")


@dataclass
class GaitParams:
    """Knobs of the procedural locomotion cycle."""

    speed: float = 1.2  # m/s along the heading
    cadence: float = 1.0  # cycles per second; duration = 1/cadence
    stride: float = 0.6  # m, modulates hip swing amplitude
    heading_deg: float = 0.0  # facing direction in the ground plane
    arm_swing: float = 0.35  # rad
    style: str = "walk"
    phase0: float = 0.0  # rad, where in the cycle frame 0 sits
    warp: float = 0.0  # in (-1,1), sinusoidal time warp of the sampling
    jitter: float = 0.02  # seeded per-joint amplitude/phase noise


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    zeros = np.zeros_like(angle)
    ones = np.ones_like(angle)
    return np.stack(
        [
            np.stack([c, zeros, s], axis=-1),
            np.stack([zeros, ones, zeros], axis=-1),
            np.stack([-s, zeros, c], axis=-1),
        ],
        axis=-2,
    )


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    zeros = np.zeros_like(angle)
    ones = np.ones_like(angle)
    return np.stack(
        [
            np.stack([c, -s, zeros], axis=-1),
            np.stack([s, c, zeros], axis=-1),
            np.stack([zeros, zeros, ones], axis=-1),
        ],
        axis=-2,
    )


def synth_gait(
    params: GaitParams, body: bodymod.BodyModel, n_frames: int, seed: int = 0,
    beta=None,
) -> MotionSequence:
    """One procedural locomotion cycle on the given body.

    Hips and knees swing in the sagittal plane with phase-offset
    waveforms (knee flexion is a rectified, peaked bump, so the family is
    genuinely nonlinear in the cycle phase), arms counter-swing if the
    body has them, and the root translates along the heading. Deterministic
    in ``seed``.
    """
    if params.speed == 0.0 and params.style != "turn":
        raise InvalidConfig("speed must be nonzero")
    if params.cadence <= 0:
        raise InvalidConfig("cadence must be positive")
    if params.style not in GAIT_STYLES:
        raise InvalidConfig(f"unknown style {params.style!r}; choose from {GAIT_STYLES}")
    if n_frames < 2:
        raise InvalidConfig("a cycle needs at least 2 frames")

    layout = bodymod.joint_layout(body.n_joints)
    for needed in ("hip_l", "hip_r", "knee_l", "knee_r"):
        if needed not in layout:
            raise InvalidConfig(
                f"body with {body.n_joints} joints lacks {needed}; need >= 7 joints"
            )

    rng = np.random.default_rng(seed)
    if beta is None:
        beta = np.zeros(body.n_shape)
    beta = np.asarray(beta, dtype=float)

    duration = float(np.clip(1.0 / params.cadence, MIN_CYCLE_SECONDS, MAX_CYCLE_SECONDS))
    u = np.linspace(0.0, 1.0, n_frames)
    warp = float(np.clip(params.warp, -0.8, 0.8))
    times = duration * (u + warp * np.sin(2 * np.pi * u) / (2 * np.pi))
    phase = 2 * np.pi * u + params.phase0

    amp_scale = 1.4 if params.style == "run" else 1.0
    hip_amp = amp_scale * np.clip(0.5 * params.stride / 0.8, 0.05, 0.9)
    knee_amp = amp_scale * (0.9 * hip_amp + 0.15)
    jit = lambda: params.jitter * rng.standard_normal()  # noqa: E731

    theta = np.tile(rotations.IDENTITY_6D, (n_frames, body.n_joints, 1))

    def set_joint(name, angles, axis="y"):
        if name not in layout:
            return
        mats = _rot_y(angles) if axis == "y" else _rot_z(angles)
        theta[:, layout[name]] = rotations.extract(mats)

    set_joint("hip_l", (hip_amp + jit()) * np.sin(phase + jit()))
    set_joint("hip_r", (hip_amp + jit()) * np.sin(phase + np.pi + jit()))
    # Rectified flexion bump during the swing phase of each leg.
    set_joint("knee_l", (knee_amp + jit()) * np.maximum(0.0, np.sin(phase + 0.5)) ** 2)
    set_joint("knee_r", (knee_amp + jit()) * np.maximum(0.0, np.sin(phase + np.pi + 0.5)) ** 2)
    set_joint("shoulder_l", (params.arm_swing + jit()) * np.sin(phase + np.pi))
    set_joint("shoulder_r", (params.arm_swing + jit()) * np.sin(phase))
    set_joint("elbow_l", 0.4 * params.arm_swing * np.maximum(0.0, np.sin(phase + np.pi)))
    set_joint("elbow_r", 0.4 * params.arm_swing * np.maximum(0.0, np.sin(phase)))
    set_joint("spine", (0.05 + jit()) * np.sin(2 * phase))
    set_joint("ankle_l", 0.3 * hip_amp * np.sin(phase + 1.0))
    set_joint("ankle_r", 0.3 * hip_amp * np.sin(phase + np.pi + 1.0))

    heading = np.deg2rad(params.heading_deg)
    yaw = np.full(n_frames, heading)
    if params.style == "turn":
        yaw = heading + np.deg2rad(60.0) * times / duration
    theta[:, 0] = rotations.extract(_rot_z(yaw))

    facing = np.stack([np.cos(yaw), np.sin(yaw), np.zeros(n_frames)], axis=1)
    lateral = np.stack([-np.sin(yaw), np.cos(yaw), np.zeros(n_frames)], axis=1)
    speed = params.speed
    if params.style == "backward":
        speed = -abs(speed)
    move_dir = lateral if params.style == "sidestep" else facing
    gamma = np.cumsum(
        np.diff(times, prepend=times[0])[:, None] * speed * move_dir, axis=0
    )
    bob = 0.5 if params.style != "run" else 1.0
    gamma[:, 2] += 0.02 * bob * hip_amp * np.sin(2 * phase)
    gamma[:, 0] += 0.01 * np.sin(phase) * (params.style != "sidestep")

    return MotionSequence(beta, theta, gamma, times, float(n_frames / duration))


def random_gait_params(rng, style: str) -> GaitParams:
    """Draw one plausible parameter set for the given style."""
    if style == "run":
        speed = rng.uniform(2.0, 3.5)
        cadence = rng.uniform(2.0, 3.0)
    else:
        speed = rng.uniform(0.6, 1.6)
        cadence = rng.uniform(0.7, 1.4)
    return GaitParams(
        speed=speed,
        cadence=cadence,
        stride=rng.uniform(0.4, 0.9),
        heading_deg=rng.uniform(-180.0, 180.0),
        arm_swing=rng.uniform(0.1, 0.6),
        style=style,
        phase0=rng.uniform(0.0, 2 * np.pi),
        warp=rng.uniform(-0.25, 0.25),
    )


def make_gait_dataset(
    body: bodymod.BodyModel,
    n_sequences: int,
    n_frames: int,
    seed: int = 0,
    styles: tuple = GAIT_STYLES,
) -> list[MotionSequence]:
    """Aligned, uniformly resampled synthetic cycles with per-subject shape.

    Shape vectors are drawn per sequence and coupled into the gait (shape
    component 0 scales the body, so it also scales stride and speed),
    giving the decoder's shape conditioning real signal.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_sequences):
        style = styles[i % len(styles)]
        params = random_gait_params(rng, style)
        beta = np.clip(rng.standard_normal(body.n_shape) * 0.8, -2.0, 2.0)
        size_factor = 1.0 + 0.2 * np.tanh(beta[0])
        params.stride *= size_factor
        params.speed *= size_factor
        seq = synth_gait(params, body, n_frames, seed=int(rng.integers(2**31)), beta=beta)
        out.append(resample(align(seq), n_frames))
    return out


# ---------------------------------------------------------------------------
# Sequence container file (line-oriented text)
# ---------------------------------------------------------------------------

_FLOAT_FMT = "%.17g"


def write_sequences(path, seqs: list[MotionSequence]) -> None:
    """Write sequences in the MSEQ text container (lossless floats)."""
    if seqs:
        n_joints = seqs[0].n_joints
        n_shape = seqs[0].beta.size
        for s in seqs:
            if s.n_joints != n_joints or s.beta.size != n_shape:
                raise ShapeMismatch("all sequences in one file must share J and B")
    else:
        n_joints = n_shape = 0
    with open(path, "w") as fh:
        fh.write(f"MSEQ 1 J={n_joints} B={n_shape}\n")
        for s in seqs:
            fh.write(" ".join(_FLOAT_FMT % x for x in s.beta) + "\n")
            fh.write(f"{s.n_frames}\n")
            flat = np.concatenate(
                [s.theta.reshape(s.n_frames, -1), s.gamma, s.times[:, None]], axis=1
            )
            for row in flat:
                fh.write(" ".join(_FLOAT_FMT % x for x in row) + "\n")


def read_sequences(path) -> list[MotionSequence]:
    """Parse an MSEQ container; raises ParseError with line context."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", path=str(path), line=1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != "MSEQ" or header[1] != "1":
        raise ParseError(f"bad header {lines[0]!r}", path=str(path), line=1)
    try:
        n_joints = int(header[2].removeprefix("J="))
        n_shape = int(header[3].removeprefix("B="))
    except ValueError as exc:
        raise ParseError(f"bad header fields: {exc}", path=str(path), line=1) from exc

    def parse_floats(lineno, expect):
        if lineno > len(lines):
            raise ParseError("unexpected end of file", path=str(path), line=len(lines))
        parts = lines[lineno - 1].split()
        if len(parts) != expect:
            raise ParseError(
                f"expected {expect} numbers, got {len(parts)}",
                path=str(path),
                line=lineno,
            )
        try:
            return np.array([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(str(exc), path=str(path), line=lineno) from exc

    out = []
    lineno = 2
    width = frame_dim(n_joints)
    while lineno <= len(lines):
        if not lines[lineno - 1].strip():
            lineno += 1
            continue
        beta = parse_floats(lineno, n_shape)
        lineno += 1
        try:
            n = int(lines[lineno - 1])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad frame count: {exc}", path=str(path), line=lineno) from exc
        lineno += 1
        rows = np.empty((n, width))
        for i in range(n):
            rows[i] = parse_floats(lineno, width)
            lineno += 1
        theta = rows[:, : 6 * n_joints].reshape(n, n_joints, 6)
        try:
            out.append(
                MotionSequence(beta, theta, rows[:, 6 * n_joints : 6 * n_joints + 3],
                               rows[:, -1])
            )
        except (ShapeMismatch, InvalidConfig) as exc:
            raise ParseError(str(exc), path=str(path), line=lineno - 1) from exc
    return out
