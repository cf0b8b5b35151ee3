"""Latent-space applications of a trained model.

Interpolation blends two codes linearly; prediction and completion invert
the decoder by optimizing a latent code against partial observations:
posed meshes for a frame prefix, or unordered point sets with optional
marker tracks. Observed frames map to decoded frames by nearest decoded
timestamp, recomputed every iteration since decoded timing is itself
optimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import body as bodymod
from . import nn
from .errors import EmptyInput, EmptyObservation, InvalidConfig
from .sequences import MotionSequence, frame_dim
from .vae import (
    AdaptiveWeights,
    LatentCode,
    MotionVae,
    TRAIN_PROJECTION_FLOOR,
    _chi_to_params,
)

# Beyond this size, nearest-neighbour queries go through a KD-tree
# (identical results, just faster).
KDTREE_CUTOFF = 500


def interpolate(model: MotionVae, code_a: LatentCode, code_b: LatentCode, t: float
                ) -> MotionSequence:
    """Decode the linear blend of two codes: both z and beta interpolate.

    At t = 0 and t = 1 the inputs pass through bit-exactly.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidConfig(f"interpolation parameter must be in [0, 1], got {t}")
    z = (1.0 - t) * code_a.z + t * code_b.z
    beta = (1.0 - t) * code_a.beta + t * code_b.beta
    return model.decode_sequence(LatentCode(z, beta))


# ---------------------------------------------------------------------------
# Chamfer distance
# ---------------------------------------------------------------------------


def _nearest_indices(query, target):
    """Index into ``target`` of the nearest neighbour of each query point."""
    if target.shape[0] > KDTREE_CUTOFF:
        _, idx = cKDTree(target).query(query)
        return np.asarray(idx, dtype=int)
    d2 = np.sum((query[:, None, :] - target[None, :, :]) ** 2, axis=2)
    return np.argmin(d2, axis=1)


def chamfer(points_a, points_b) -> float:
    """Symmetric Chamfer distance (meters^2).

    Mean over A of the squared distance to the nearest point of B, plus
    the same with roles swapped.
    """
    val, _ = chamfer_grad(points_a, points_b, want_grad=False)
    return val


def chamfer_grad(points_a, points_b, want_grad: bool = True):
    """(value, gradient w.r.t. points_a) of :func:`chamfer`."""
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise EmptyInput("chamfer requires two non-empty point sets")
    idx_ab = _nearest_indices(a, b)
    idx_ba = _nearest_indices(b, a)
    diff_ab = a - b[idx_ab]
    diff_ba = b - a[idx_ba]
    val = float(np.mean(np.sum(diff_ab**2, axis=1))) + float(
        np.mean(np.sum(diff_ba**2, axis=1))
    )
    if not want_grad:
        return val, None
    grad = 2.0 * diff_ab / a.shape[0]
    np.add.at(grad, idx_ba, -2.0 * diff_ba / b.shape[0])
    return val, grad


# ---------------------------------------------------------------------------
# Sparse observations
# ---------------------------------------------------------------------------


@dataclass
class ObservationFrame:
    """One observed frame: unordered points and/or a marker set."""

    timestamp: float
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    markers: np.ndarray | None = None  # (16, 3) when present

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.markers is not None:
            self.markers = np.asarray(self.markers, dtype=float).reshape(-1, 3)


@dataclass
class SparseObservation:
    """Per-frame unordered 3D point sets with timestamps."""

    frames: list
    marker_vertex_ids: np.ndarray | None = None  # template vertex ids

    def __post_init__(self):
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise InvalidConfig("observation timestamps must be strictly increasing")
        if self.marker_vertex_ids is not None:
            self.marker_vertex_ids = np.asarray(self.marker_vertex_ids, dtype=int)

    @property
    def has_points(self) -> bool:
        return any(f.points.shape[0] > 0 for f in self.frames)

    @property
    def has_markers(self) -> bool:
        return self.marker_vertex_ids is not None and any(
            f.markers is not None for f in self.frames
        )


def observation_from_sequence(
    seq: MotionSequence,
    body,
    rng=None,
    points_per_frame: int | None = None,
    frame_subset=None,
    marker_vertex_ids=None,
    noise: float = 0.0,
):
    """Render a sequence into a SparseObservation (testing/demo helper).

    Poses the sequence with its own shape vector, optionally subsampling
    frames and points and attaching marker tracks at the given template
    vertex ids.
    """
    rng = rng or np.random.default_rng(0)
    verts = bodymod.pose_mesh(body, seq.beta, seq.theta, seq.gamma)
    idx = range(seq.n_frames) if frame_subset is None else frame_subset
    frames = []
    for i in idx:
        pts = verts[i]
        if points_per_frame is not None and points_per_frame < pts.shape[0]:
            sel = rng.choice(pts.shape[0], size=points_per_frame, replace=False)
            pts = pts[sel]
        elif points_per_frame == 0:
            pts = np.zeros((0, 3))
        if noise > 0.0 and pts.size:
            pts = pts + noise * rng.standard_normal(pts.shape)
        markers = None
        if marker_vertex_ids is not None:
            markers = verts[i][marker_vertex_ids]
            if noise > 0.0:
                markers = markers + noise * rng.standard_normal(markers.shape)
        frames.append(ObservationFrame(float(seq.times[i]), pts, markers))
    return SparseObservation(frames, marker_vertex_ids)


# ---------------------------------------------------------------------------
# Latent optimization
# ---------------------------------------------------------------------------


@dataclass
class FitOptions:
    iters: int = 500
    lr: float = 0.05
    early_stop_rel: float = 1e-6
    early_stop_window: int = 20
    weight_update_every: int = 10
    weight_lr: float = 0.025


@dataclass
class FitResult:
    sequence: MotionSequence
    code: LatentCode
    loss: float
    n_iters: int
    converged: bool
    history: list


def _associate(obs_times, phi_hat, max_frame_delta):
    """Map each observed timestamp to the nearest decoded frame index."""
    t_dec = np.cumsum(phi_hat) * max_frame_delta
    pos = np.searchsorted(t_dec, obs_times)
    pos = np.clip(pos, 0, t_dec.size - 1)
    prev = np.clip(pos - 1, 0, t_dec.size - 1)
    choose_prev = np.abs(t_dec[prev] - obs_times) <= np.abs(t_dec[pos] - obs_times)
    return np.where(choose_prev, prev, pos)


def _time_loss_grad(obs_times, assoc, phi_hat, max_frame_delta):
    """Mean squared mismatch of inter-observation deltas, in normalized
    units, anchored at the sequence start. Returns (value, dL/dphi_hat)."""
    n = phi_hat.size
    k = obs_times.size
    cum = np.cumsum(phi_hat)
    t_norm = np.asarray(obs_times) / max_frame_delta
    # Indicator rows: d cum[a] / d phi_j = (j <= a).
    ind = (np.arange(n)[None, :] <= assoc[:, None]).astype(float)
    dec_cum = cum[assoc]
    resid = np.empty(k)
    rows = np.empty((k, n))
    resid[0] = dec_cum[0] - t_norm[0]
    rows[0] = ind[0]
    if k > 1:
        resid[1:] = (dec_cum[1:] - dec_cum[:-1]) - (t_norm[1:] - t_norm[:-1])
        rows[1:] = ind[1:] - ind[:-1]
    val = float(np.mean(resid**2))
    grad = (2.0 / k) * resid @ rows
    return val, grad


def _run_latent_fit(model: MotionVae, term_fn, tasks, opt: FitOptions,
                    weights: AdaptiveWeights | None,
                    init: LatentCode | None = None):
    """Shared optimization loop over (z, beta).

    ``term_fn(chi_hat, beta)`` returns per-task (values, chi gradients,
    direct beta gradients). The total is the (optionally adaptive)
    weighted sum; gradients flow through the frozen decoder back to the
    latent variables. Starts at the prior mean (0, 0) unless ``init`` is
    given. The best iterate is tracked and returned even without
    convergence.
    """
    fit_store = nn.ParamStore()
    fit_store.add("z", init.z.copy() if init else np.zeros(model.dim_z))
    fit_store.add("beta", init.beta.copy() if init else np.zeros(model.n_shape))
    adam = nn.AdamState(lr=opt.lr)

    best = (np.inf, None, None)
    history = []
    best_history = []
    converged = False
    iters_done = 0
    for it in range(opt.iters):
        z = fit_store.params["z"]
        beta = fit_store.params["beta"]
        chi_hat, dec_tape = model.decode_with_tape(z, beta)
        parts, chi_grads, beta_grads = term_fn(chi_hat, beta)

        if weights is not None and it % opt.weight_update_every == 0:
            norms = {}
            for t in tasks:
                model.store.zero_grads()
                gx = nn.mlp_backward(model.store, dec_tape, chi_grads[t])
                full = np.concatenate([gx[: model.dim_z],
                                       gx[model.dim_z :] + beta_grads[t]])
                norms[t] = float(np.linalg.norm(full))
            weights.update(norms, parts, opt.weight_lr)

        w = weights if weights is not None else {t: 1.0 for t in tasks}
        total = float(sum(w[t] * parts[t] for t in tasks))
        grad_chi = sum(w[t] * chi_grads[t] for t in tasks)
        grad_beta_direct = sum(w[t] * beta_grads[t] for t in tasks)

        history.append(total)
        if total < best[0]:
            best = (total, z.copy(), beta.copy())
        best_history.append(best[0])

        model.store.zero_grads()
        gx = nn.mlp_backward(model.store, dec_tape, grad_chi)
        fit_store.grads["z"][...] = gx[: model.dim_z]
        fit_store.grads["beta"][...] = gx[model.dim_z :] + grad_beta_direct
        model.store.zero_grads()
        nn.adam_step(fit_store, adam)
        iters_done = it + 1

        if it >= opt.early_stop_window:
            prev = best_history[-opt.early_stop_window - 1]
            if prev - best_history[-1] < opt.early_stop_rel * max(abs(prev), 1e-12):
                converged = True
                break

    code = LatentCode(best[1], best[2])
    return FitResult(
        sequence=model.decode_sequence(code),
        code=code,
        loss=best[0],
        n_iters=iters_done,
        converged=converged,
        history=history,
    )


def predict(prefix: MotionSequence, body, model: MotionVae,
            opt: FitOptions | None = None,
            init: LatentCode | None = None) -> FitResult:
    """Complete a sequence from an observed frame prefix (or any labeled
    time window) by optimizing a latent code.

    The observed frames are posed with the prefix's own shape vector; the
    objective is the per-vertex mean squared distance at the associated
    decoded frames plus the timing mismatch, with the decoder frozen.
    Returns the full decoded sequence (the best iterate even if the
    optimization did not converge).
    """
    if prefix.n_frames < 1:
        raise EmptyInput("prediction needs at least one observed frame")
    if prefix.n_joints != model.n_joints:
        raise InvalidConfig("prefix joint count does not match the model")
    opt = opt or FitOptions()
    obs_verts = bodymod.pose_mesh(body, prefix.beta, prefix.theta, prefix.gamma)
    obs_times = prefix.times - prefix.times[0]
    k, n_v = obs_verts.shape[0], obs_verts.shape[1]
    spec = model.spec
    n_joints = model.n_joints
    tasks = ("vertex", "time")

    def term_fn(chi_hat, beta):
        theta_h, gamma_h = _chi_to_params(chi_hat, spec, n_joints)
        phi_hat = chi_hat.reshape(-1, frame_dim(n_joints))[:, -1]
        assoc = _associate(obs_times, np.maximum(phi_hat, 0.0), spec.max_frame_delta)
        verts = bodymod.pose_mesh(
            body, beta, theta_h[assoc], gamma_h[assoc],
            min_norm=TRAIN_PROJECTION_FLOOR,
        )
        diff = verts - obs_verts
        v_val = float(np.sum(diff * diff) / (k * n_v))
        upstream = 2.0 * diff / (k * n_v)
        g_beta, g_theta, g_gamma = bodymod.pose_mesh_vjp(
            body, beta, theta_h[assoc], gamma_h[assoc], upstream,
            min_norm=TRAIN_PROJECTION_FLOOR,
        )
        n = model.n_frames
        rows = np.zeros((n, frame_dim(n_joints)))
        np.add.at(rows[:, : 6 * n_joints], assoc, g_theta.reshape(k, -1))
        np.add.at(
            rows[:, 6 * n_joints : 6 * n_joints + 3],
            assoc,
            g_gamma * spec.translation_bound,
        )
        t_val, t_grad_phi = _time_loss_grad(
            obs_times, assoc, phi_hat, spec.max_frame_delta
        )
        t_rows = np.zeros_like(rows)
        t_rows[:, -1] = t_grad_phi
        return (
            {"vertex": v_val, "time": t_val},
            {"vertex": rows.ravel(), "time": t_rows.ravel()},
            {"vertex": g_beta, "time": np.zeros(model.n_shape)},
        )

    return _run_latent_fit(model, term_fn, tasks, opt, weights=None, init=init)


def complete(obs: SparseObservation, body, model: MotionVae,
             opt: FitOptions | None = None,
             init: LatentCode | None = None) -> FitResult:
    """Fit a latent code to spatio-temporally sparse observations.

    The objective combines the Chamfer distance to the per-frame point
    sets, the squared distance of the decoded marker vertices to observed
    markers, and the timing mismatch, with adaptively balanced weights.
    The point-set weight drops out when no points are given, the marker
    weight when no markers are given.
    """
    if not obs.frames:
        raise EmptyObservation("observation has no frames")
    if not (obs.has_points or obs.has_markers):
        raise EmptyObservation("observation carries neither points nor markers")
    opt = opt or FitOptions()
    spec = model.spec
    n_joints = model.n_joints
    n = model.n_frames

    obs_times = np.array([f.timestamp for f in obs.frames])
    obs_times = obs_times - obs_times[0]
    point_frames = [i for i, f in enumerate(obs.frames) if f.points.shape[0] > 0]
    marker_frames = (
        [i for i, f in enumerate(obs.frames) if f.markers is not None]
        if obs.has_markers
        else []
    )
    tasks = ["time"]
    if point_frames:
        tasks.insert(0, "dense")
    if marker_frames:
        tasks.insert(-1, "mocap")
    weights = AdaptiveWeights(tuple(tasks))
    marker_ids = obs.marker_vertex_ids

    def term_fn(chi_hat, beta):
        theta_h, gamma_h = _chi_to_params(chi_hat, spec, n_joints)
        phi_hat = chi_hat.reshape(-1, frame_dim(n_joints))[:, -1]
        assoc = _associate(obs_times, np.maximum(phi_hat, 0.0), spec.max_frame_delta)
        verts = bodymod.pose_mesh(
            body, beta, theta_h, gamma_h, min_norm=TRAIN_PROJECTION_FLOOR
        )
        parts, chi_grads, beta_grads = {}, {}, {}
        upstreams = {}

        if point_frames:
            val = 0.0
            up = np.zeros_like(verts)
            for i in point_frames:
                c_val, c_grad = chamfer_grad(verts[assoc[i]], obs.frames[i].points)
                val += c_val / len(point_frames)
                up[assoc[i]] += c_grad / len(point_frames)
            parts["dense"] = val
            upstreams["dense"] = up

        if marker_frames:
            val = 0.0
            up = np.zeros_like(verts)
            m = len(marker_frames) * marker_ids.size
            for i in marker_frames:
                d = verts[assoc[i], marker_ids] - obs.frames[i].markers
                val += float(np.sum(d * d)) / m
                up[assoc[i], marker_ids] += 2.0 * d / m
            parts["mocap"] = val
            upstreams["mocap"] = up

        for t, up in upstreams.items():
            g_beta, g_theta, g_gamma = bodymod.pose_mesh_vjp(
                body, beta, theta_h, gamma_h, up, min_norm=TRAIN_PROJECTION_FLOOR
            )
            rows = np.zeros((n, frame_dim(n_joints)))
            rows[:, : 6 * n_joints] = g_theta.reshape(n, -1)
            rows[:, 6 * n_joints : 6 * n_joints + 3] = (
                g_gamma * spec.translation_bound
            )
            chi_grads[t] = rows.ravel()
            beta_grads[t] = g_beta

        t_val, t_grad_phi = _time_loss_grad(
            obs_times, assoc, phi_hat, spec.max_frame_delta
        )
        rows = np.zeros((n, frame_dim(n_joints)))
        rows[:, -1] = t_grad_phi
        parts["time"] = t_val
        chi_grads["time"] = rows.ravel()
        beta_grads["time"] = np.zeros(model.n_shape)
        return parts, chi_grads, beta_grads

    return _run_latent_fit(model, term_fn, tuple(tasks), opt, weights=weights,
                           init=init)


# ---------------------------------------------------------------------------
# Observation container file (text)
# ---------------------------------------------------------------------------

_FLOAT_FMT = "%.17g"


def write_observation(path, obs: SparseObservation) -> None:
    """Write the SOBS text container (marker ids live in the body sidecar)."""
    with open(path, "w") as fh:
        fh.write("SOBS 1\n")
        for f in obs.frames:
            fh.write(_FLOAT_FMT % f.timestamp + "\n")
            fh.write(f"{f.points.shape[0]}\n")
            for p in f.points:
                fh.write(" ".join(_FLOAT_FMT % x for x in p) + "\n")
            if f.markers is not None:
                fh.write("MARKERS\n")
                for p in f.markers:
                    fh.write(" ".join(_FLOAT_FMT % x for x in p) + "\n")


def read_observation(path, marker_vertex_ids=None) -> SparseObservation:
    """Parse an SOBS container; raises ParseError with line context."""
    from .errors import ParseError

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != ["SOBS", "1"]:
        raise ParseError(f"bad header {lines[0]!r}" if lines else "empty file",
                         path=str(path), line=1)

    def floats(lineno, expect):
        if lineno > len(lines):
            raise ParseError("unexpected end of file", path=str(path), line=len(lines))
        parts = lines[lineno - 1].split()
        if len(parts) != expect:
            raise ParseError(f"expected {expect} numbers, got {len(parts)}",
                             path=str(path), line=lineno)
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(str(exc), path=str(path), line=lineno) from exc

    frames = []
    lineno = 2
    while lineno <= len(lines):
        if not lines[lineno - 1].strip():
            lineno += 1
            continue
        ts = floats(lineno, 1)[0]
        lineno += 1
        try:
            m = int(lines[lineno - 1])
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad point count: {exc}", path=str(path),
                             line=lineno) from exc
        lineno += 1
        pts = np.array([floats(lineno + i, 3) for i in range(m)]).reshape(m, 3)
        lineno += m
        markers = None
        if lineno <= len(lines) and lines[lineno - 1].strip() == "MARKERS":
            lineno += 1
            markers = np.array([floats(lineno + i, 3) for i in range(16)])
            lineno += 16
        frames.append(ObservationFrame(ts, pts, markers))
    return SparseObservation(frames, marker_vertex_ids)
