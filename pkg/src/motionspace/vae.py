"""Sequence autoencoder over the flat motion representation.

The encoder maps a whole normalized sequence to a latent Gaussian
(mu, sigma); the decoder reconstructs the sequence from a sampled latent
together with the shape vector (the encoder never sees shape). Training
runs in two phases: first on the flat representation with per-block
losses, then on posed mesh vertices, both with gradient-norm-balanced
adaptive weights and a KL regularizer toward the standard normal.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import body as bodymod
from . import nn, rotations
from .errors import (
    NonFiniteGradient,
    ParseError,
    ShapeMismatch,
)
from .sequences import (
    MotionSequence,
    NormalizationSpec,
    denormalize,
    frame_dim,
    normalize,
)

# Norm floor used when projecting decoded 6D rotations mid-training:
# collapsed vectors are clamped instead of raising, keeping losses finite.
TRAIN_PROJECTION_FLOOR = 1e-6


@dataclass
class LatentCode:
    """A point in motion space: latent vector plus shape condition."""

    z: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.beta))):
            raise ShapeMismatch("latent code must be finite")


@dataclass
class PhaseConfig:
    epochs: int
    lr: float
    batch: int


@dataclass
class TrainConfig:
    """Dimensions and optimization constants.

    Defaults reproduce the reference setup (100-frame sequences, 20
    joints, 64-dim latent, 5000 + 200 epochs); :meth:`desk` is a small
    configuration that trains in minutes on a laptop.
    """

    dim_z: int = 64
    n_shape: int = 8
    n_frames: int = 100
    n_joints: int = 20
    omega_kl: float = 0.01
    square_kl: bool = False
    phase1: PhaseConfig = field(default_factory=lambda: PhaseConfig(5000, 1e-3, 256))
    phase2: PhaseConfig = field(default_factory=lambda: PhaseConfig(200, 1e-4, 16))
    encoder_hidden: tuple = (1024, 512, 256)
    decoder_hidden: tuple = (256, 512, 1024)
    weight_update_every: int = 10
    weight_lr: float = 0.025
    seed: int = 0

    @staticmethod
    def desk(seed: int = 1) -> "TrainConfig":
        return TrainConfig(
            dim_z=16,
            n_shape=8,
            n_frames=32,
            n_joints=8,
            phase1=PhaseConfig(300, 1e-3, 256),
            phase2=PhaseConfig(30, 1e-4, 16),
            encoder_hidden=(256, 128, 64),
            decoder_hidden=(64, 128, 256),
            seed=seed,
        )

    @staticmethod
    def paper(seed: int = 0) -> "TrainConfig":
        return TrainConfig(seed=seed)

    @property
    def input_dim(self) -> int:
        return self.n_frames * frame_dim(self.n_joints)


class MotionVae:
    """Encoder/decoder pair over one ParamStore."""

    def __init__(self, config: TrainConfig, spec: NormalizationSpec, seed=None):
        self.config = config
        self.spec = spec
        self.dim_z = config.dim_z
        self.n_shape = config.n_shape
        self.n_frames = config.n_frames
        self.n_joints = config.n_joints
        self.enc_widths = [config.input_dim, *config.encoder_hidden, 2 * config.dim_z]
        self.dec_widths = [
            config.dim_z + config.n_shape,
            *config.decoder_hidden,
            config.input_dim,
        ]
        self.store = nn.ParamStore()
        rng = np.random.default_rng(config.seed if seed is None else seed)
        nn.init_mlp(self.store, "enc", self.enc_widths, rng)
        nn.init_mlp(self.store, "dec", self.dec_widths, rng)

    # -- inference ---------------------------------------------------------

    def encode(self, chi):
        """Deterministic map to the latent Gaussian (mu, sigma)."""
        (mu, sigma), _ = self.encode_with_tape(chi)
        return mu, sigma

    def encode_with_tape(self, chi):
        out, tape = nn.mlp_forward(self.store, chi, self.enc_widths, "enc")
        mu = out[..., : self.dim_z]
        logvar = out[..., self.dim_z :]
        sigma = np.exp(0.5 * logvar)
        return (mu, sigma), tape

    def decode(self, z, beta):
        """Deterministic reconstruction of the flat representation."""
        chi_hat, _ = self.decode_with_tape(z, beta)
        return chi_hat

    def decode_with_tape(self, z, beta):
        z = np.asarray(z, dtype=float)
        beta = np.asarray(beta, dtype=float)
        x = np.concatenate([z, beta], axis=-1)
        return nn.mlp_forward(self.store, x, self.dec_widths, "dec")

    def decode_sequence(self, code: LatentCode) -> MotionSequence:
        chi_hat = self.decode(code.z, code.beta)
        return denormalize(chi_hat, self.spec, code.beta, self.n_joints)

    def reconstruct(self, chi, beta):
        """Auto-encode with the latent mean (no sampling)."""
        mu, _ = self.encode(chi)
        return self.decode(mu, beta)

    def encode_sequence(self, seq: MotionSequence) -> LatentCode:
        """Normalize and encode a sequence to its latent-mean code."""
        chi = normalize(seq, self.spec, clip=True)
        mu, _ = self.encode(chi)
        return LatentCode(mu, seq.beta)

    def clone(self) -> "MotionVae":
        out = MotionVae(self.config, self.spec, seed=0)
        for name in out.store.params:
            out.store.params[name] = self.store.params[name].copy()
        return out

    # The last decoder layer all reconstruction tasks flow through.
    @property
    def shared_layer_name(self) -> str:
        return f"dec.W{len(self.dec_widths) - 3}"


def sample_latent(mu, sigma, eps):
    """Reparameterized draw z = mu + eps * sigma (sigma floored at 1e-12)."""
    sigma = np.maximum(np.asarray(sigma, dtype=float), 1e-12)
    return np.asarray(mu, dtype=float) + np.asarray(eps, dtype=float) * sigma


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _as_rows(chi):
    chi = np.asarray(chi, dtype=float)
    return (chi[None, :], True) if chi.ndim == 1 else (chi, False)


def rec_parts_and_grads(chi, chi_hat, n_joints: int):
    """Per-block mean-squared losses and their (unweighted) gradients.

    Blocks are the pose, translation, and time columns of the per-frame
    layout. Each part is the mean over its own block (and the batch), so
    values are comparable across batch sizes and frame counts. Gradients
    are with respect to ``chi_hat`` and flattened like it.
    """
    x, single = _as_rows(chi)
    y, _ = _as_rows(chi_hat)
    if x.shape != y.shape:
        raise ShapeMismatch(f"chi shapes differ: {x.shape} vs {y.shape}")
    b = x.shape[0]
    width = frame_dim(n_joints)
    n = x.shape[1] // width
    dx = (y - x).reshape(b, n, width)
    pose = dx[:, :, : 6 * n_joints]
    trans = dx[:, :, 6 * n_joints : 6 * n_joints + 3]
    time = dx[:, :, -1]
    parts = {
        "pose": float(np.mean(pose**2)),
        "trans": float(np.mean(trans**2)),
        "time": float(np.mean(time**2)),
    }
    grads = {}
    for name, block, sl in (
        ("pose", pose, np.s_[:, :, : 6 * n_joints]),
        ("trans", trans, np.s_[:, :, 6 * n_joints : 6 * n_joints + 3]),
        ("time", time[:, :, None], np.s_[:, :, width - 1 : width]),
    ):
        g = np.zeros((b, n, width))
        g[sl] = 2.0 * block / block.size
        grads[name] = g.reshape(b, -1)[0] if single else g.reshape(b, -1)
    return parts, grads


def loss_rec(chi, chi_hat, weights, n_joints: int):
    """Weighted reconstruction loss on the flat representation.

    Returns (total, parts) where parts holds the raw per-block means.
    """
    parts, _ = rec_parts_and_grads(chi, chi_hat, n_joints)
    total = sum(weights[t] * parts[t] for t in ("pose", "trans", "time"))
    return float(total), parts


def loss_kl(mu, sigma, square: bool = False):
    """Diagonal-Gaussian divergence from the standard normal.

    Closed form 0.5 * sum(mu^2 + sigma^2 - 1 - 2 ln sigma), summed over
    latent dimensions and averaged over any batch dimension. ``square``
    squares the resulting scalar (an alternative reading of the
    regularizer; off by default).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    per = 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)
    val = float(np.mean(per))
    return val * val if square else val


def loss_kl_grads(mu, sigma, square: bool = False):
    """(value, dL/dmu, dL/dsigma) for :func:`loss_kl`."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    per = 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)
    b = per.size if per.ndim else 1
    val = float(np.mean(per))
    g_mu = mu / b
    g_sigma = (sigma - 1.0 / sigma) / b
    if square:
        return val * val, 2.0 * val * g_mu, 2.0 * val * g_sigma
    return val, g_mu, g_sigma


def _chi_to_params(chi, spec: NormalizationSpec, n_joints: int):
    """Flat vector -> (theta uncentered (n,J,6), gamma meters (n,3))."""
    rows = np.asarray(chi, dtype=float).reshape(-1, frame_dim(n_joints))
    n = rows.shape[0]
    theta = rotations.uncenter(rows[:, : 6 * n_joints].reshape(n, n_joints, 6))
    gamma = rows[:, 6 * n_joints : 6 * n_joints + 3] * spec.translation_bound
    return theta, gamma


def loss_spatial(body, beta, chi, chi_hat, spec: NormalizationSpec):
    """Mean squared vertex distance between meshes posed from chi and
    chi_hat with the same shape vector (meters^2)."""
    val, _ = loss_spatial_grad(body, beta, chi, chi_hat, spec, want_grad=False)
    return val


def loss_spatial_grad(
    body, beta, chi, chi_hat, spec: NormalizationSpec, want_grad: bool = True
):
    """(value, dL/dchi_hat). Gradient flows through posing and projection;
    decoded 6D rotations are clamped away from degeneracy."""
    n_joints = body.n_joints
    theta, gamma = _chi_to_params(chi, spec, n_joints)
    theta_h, gamma_h = _chi_to_params(chi_hat, spec, n_joints)
    verts = bodymod.pose_mesh(body, beta, theta, gamma, min_norm=TRAIN_PROJECTION_FLOOR)
    verts_h = bodymod.pose_mesh(
        body, beta, theta_h, gamma_h, min_norm=TRAIN_PROJECTION_FLOOR
    )
    diff = verts_h - verts
    n, v = diff.shape[0], diff.shape[1]
    val = float(np.sum(diff * diff) / (n * v))
    if not want_grad:
        return val, None
    upstream = 2.0 * diff / (n * v)
    _, g_theta, g_gamma = bodymod.pose_mesh_vjp(
        body, beta, theta_h, gamma_h, upstream, min_norm=TRAIN_PROJECTION_FLOOR
    )
    grad_rows = np.zeros((n, frame_dim(n_joints)))
    grad_rows[:, : 6 * n_joints] = g_theta.reshape(n, -1)
    grad_rows[:, 6 * n_joints : 6 * n_joints + 3] = g_gamma * spec.translation_bound
    return val, grad_rows.ravel()


# ---------------------------------------------------------------------------
# Adaptive loss weights (gradient-norm balancing)
# ---------------------------------------------------------------------------


class AdaptiveWeights:
    """Per-task weights balanced so partial losses decrease in proportion.

    Weights stay positive (floor 1e-4) and renormalize to a fixed sum
    equal to the task count after each update. The first update call
    snapshots the initial losses used for the relative inverse training
    rates.
    """

    FLOOR = 1e-4

    def __init__(self, tasks):
        self.tasks = tuple(tasks)
        self.weights = {t: 1.0 for t in self.tasks}
        self.initial_losses = None

    def __getitem__(self, task: str) -> float:
        return self.weights[task]

    @property
    def total(self) -> float:
        return float(len(self.tasks))

    def as_dict(self) -> dict:
        return dict(self.weights)

    def update(self, grad_norms: dict, losses: dict, lr: float) -> None:
        """One balancing step from raw (unweighted) gradient norms.

        The effective norm of task i is w_i * norm_i; its target is the
        mean effective norm scaled by the task's relative inverse training
        rate. Weights move one signed gradient step of the L1 deviation,
        then renormalize.
        """
        for t in self.tasks:
            if not (np.isfinite(grad_norms[t]) and np.isfinite(losses[t])):
                raise NonFiniteGradient(f"non-finite statistics for task {t!r}")
        if self.initial_losses is None:
            self.initial_losses = {t: max(losses[t], 1e-12) for t in self.tasks}
        ratios = {t: losses[t] / self.initial_losses[t] for t in self.tasks}
        mean_ratio = max(np.mean(list(ratios.values())), 1e-12)
        eff = {t: self.weights[t] * grad_norms[t] for t in self.tasks}
        mean_eff = np.mean(list(eff.values()))
        for t in self.tasks:
            target = mean_eff * ratios[t] / mean_ratio
            step = lr * np.sign(eff[t] - target) * grad_norms[t]
            self.weights[t] = max(self.FLOOR, self.weights[t] - step)
        scale = self.total / sum(self.weights.values())
        for t in self.tasks:
            self.weights[t] *= scale


def update_adaptive_weights(weights: AdaptiveWeights, grad_norms, losses, lr):
    """Functional wrapper over :meth:`AdaptiveWeights.update`."""
    weights.update(grad_norms, losses, lr)
    return weights


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: MotionVae
    model_phase1: MotionVae
    curves: list  # per recorded step: dict of scalars
    weight_history: list


def prepare_dataset(seqs, spec: NormalizationSpec, clip: bool = True):
    """Stack sequences into (chis (n, D), betas (n, B)) training arrays."""
    chis = np.stack([normalize(s, spec, clip=clip) for s in seqs])
    betas = np.stack([s.beta for s in seqs])
    return chis, betas


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def train(dataset, body, config: TrainConfig, spec: NormalizationSpec) -> TrainResult:
    """Two-phase training over normalized (chi, beta) pairs.

    Phase 1 minimizes the weighted flat reconstruction plus the KL term;
    phase 2 swaps the pose/translation blocks for the mesh-vertex loss.
    Deterministic in ``config.seed``. ``dataset`` is either a list of
    MotionSequence (normalized here) or a prepared (chis, betas) pair.
    """
    if isinstance(dataset, tuple):
        chis, betas = dataset
    else:
        chis, betas = prepare_dataset(dataset, spec)
    n = chis.shape[0]
    if chis.shape[1] != config.input_dim:
        raise ShapeMismatch(
            f"dataset frame layout {chis.shape[1]} != config input {config.input_dim}"
        )

    model = MotionVae(config, spec)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    eps_rng = np.random.default_rng(config.seed + 2)
    curves: list = []
    weight_history: list = []

    def task_grad_norms(tape, task_grads):
        """Raw gradient norm of each partial loss at the shared layer."""
        norms = {}
        shared = model.shared_layer_name
        for t, g in task_grads.items():
            model.store.zero_grads()
            nn.mlp_backward(model.store, tape, g)
            norms[t] = float(np.linalg.norm(model.store.grads[shared]))
        model.store.zero_grads()
        return norms

    def run_phase(phase: PhaseConfig, phase_name: str, weights: AdaptiveWeights, step0: int):
        adam = nn.AdamState(lr=phase.lr)
        step = step0
        for epoch in range(phase.epochs):
            for idx in _batches(n, phase.batch, shuffle_rng):
                chi = chis[idx]
                beta = betas[idx]
                (mu, sigma), enc_tape = model.encode_with_tape(chi)
                eps = eps_rng.standard_normal(size=mu.shape)
                z = sample_latent(mu, sigma, eps)
                chi_hat, dec_tape = model.decode_with_tape(z, beta)

                if phase_name == "phase1":
                    parts, task_grads = rec_parts_and_grads(chi, chi_hat, config.n_joints)
                else:
                    rec_parts, rec_grads = rec_parts_and_grads(
                        chi, chi_hat, config.n_joints
                    )
                    b = chi.shape[0]
                    spatial_val = 0.0
                    spatial_grad = np.zeros_like(chi_hat)
                    for i in range(b):
                        val_i, grad_i = loss_spatial_grad(
                            body, beta[i], chi[i], chi_hat[i], spec
                        )
                        spatial_val += val_i / b
                        spatial_grad[i] = grad_i / b
                    parts = {"spatial": spatial_val, "time": rec_parts["time"]}
                    task_grads = {"spatial": spatial_grad, "time": rec_grads["time"]}

                if (step - step0) % config.weight_update_every == 0:
                    norms = task_grad_norms(dec_tape, task_grads)
                    weights.update(norms, parts, config.weight_lr)
                    weight_history.append(
                        {"step": step, "phase": phase_name, **weights.as_dict()}
                    )

                kl_val, g_mu_kl, g_sigma_kl = loss_kl_grads(
                    mu, sigma, square=config.square_kl
                )
                total = (
                    sum(weights[t] * parts[t] for t in weights.tasks)
                    + config.omega_kl * kl_val
                )
                grad_chi_hat = sum(
                    weights[t] * task_grads[t] for t in weights.tasks
                )

                grad_dec_in = nn.mlp_backward(model.store, dec_tape, grad_chi_hat)
                grad_z = grad_dec_in[:, : model.dim_z]
                grad_mu = grad_z + config.omega_kl * g_mu_kl
                grad_sigma = grad_z * eps + config.omega_kl * g_sigma_kl
                grad_logvar = 0.5 * sigma * grad_sigma
                nn.mlp_backward(
                    model.store, enc_tape, np.concatenate([grad_mu, grad_logvar], axis=1)
                )
                nn.adam_step(model.store, adam)

                curves.append(
                    {
                        "step": step,
                        "phase": phase_name,
                        "total": float(total),
                        "kl": float(kl_val),
                        **{f"loss_{t}": float(parts[t]) for t in weights.tasks},
                        **{f"w_{t}": weights[t] for t in weights.tasks},
                    }
                )
                step += 1
        return step

    weights1 = AdaptiveWeights(("pose", "trans", "time"))
    steps = run_phase(config.phase1, "phase1", weights1, 0)
    model_phase1 = model.clone()

    weights2 = AdaptiveWeights(("spatial", "time"))
    run_phase(config.phase2, "phase2", weights2, steps)

    return TrainResult(
        model=model, model_phase1=model_phase1, curves=curves,
        weight_history=weight_history,
    )


# ---------------------------------------------------------------------------
# Checkpoint file (versioned binary)
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"MVAE1"


def save_checkpoint(model: MotionVae, path, extra: dict | None = None) -> None:
    """Write magic, JSON descriptor, then raw little-endian float64 params."""
    cfg = model.config
    header = {
        "format": 1,
        "arch": {
            "dim_z": cfg.dim_z,
            "n_shape": cfg.n_shape,
            "n_frames": cfg.n_frames,
            "n_joints": cfg.n_joints,
            "encoder_hidden": list(cfg.encoder_hidden),
            "decoder_hidden": list(cfg.decoder_hidden),
        },
        "omega_kl": cfg.omega_kl,
        "square_kl": cfg.square_kl,
        "normspec": {
            "translation_bound": model.spec.translation_bound.tolist(),
            "max_frame_delta": model.spec.max_frame_delta,
        },
        "params": [[name, list(p.shape)] for name, p in model.store.params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.store.pack())


def load_checkpoint(path) -> MotionVae:
    """Read a checkpoint; rejects bad magic or mismatched descriptors."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"bad checkpoint magic {magic!r}", path=str(path))
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"bad checkpoint header: {exc}", path=str(path)) from exc
        data = fh.read()
    if header.get("format") != 1:
        raise ParseError(f"unsupported checkpoint format {header.get('format')!r}",
                         path=str(path))
    arch = header["arch"]
    spec = NormalizationSpec(
        np.asarray(header["normspec"]["translation_bound"], dtype=float),
        float(header["normspec"]["max_frame_delta"]),
    )
    config = TrainConfig(
        dim_z=arch["dim_z"],
        n_shape=arch["n_shape"],
        n_frames=arch["n_frames"],
        n_joints=arch["n_joints"],
        omega_kl=header.get("omega_kl", 0.01),
        square_kl=header.get("square_kl", False),
        encoder_hidden=tuple(arch["encoder_hidden"]),
        decoder_hidden=tuple(arch["decoder_hidden"]),
    )
    model = MotionVae(config, spec)
    declared = [[name, list(p.shape)] for name, p in model.store.params.items()]
    if declared != header["params"]:
        raise ParseError("checkpoint parameter manifest does not match architecture",
                         path=str(path))
    try:
        model.store.unpack(data)
    except ShapeMismatch as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    return model
