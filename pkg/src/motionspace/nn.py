"""Dense-layer computation with reverse-mode gradients.

Small on purpose: named parameter arrays with paired gradient buffers,
forward/backward for fully connected ReLU stacks, the bias-corrected
adaptive-moment optimizer, and a central-difference gradient checker.
Everything is float64 and deterministic given a seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch, StaleTape


class ParamStore:
    """Named dense arrays with matching gradient buffers.

    Parameters keep insertion order; serialization and optimizer updates
    iterate in that order so runs are reproducible. ``version`` increments
    on every optimizer step and invalidates outstanding tapes.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.version = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        self.params[name] = np.asarray(value, dtype=float)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def names(self) -> list[str]:
        return list(self.params)

    def n_scalars(self) -> int:
        return sum(p.size for p in self.params.values())

    def pack(self) -> bytes:
        """All parameter values, little-endian float64, declaration order."""
        if not self.params:
            return b""
        flat = np.concatenate([p.ravel() for p in self.params.values()])
        return flat.astype("<f8").tobytes()

    def unpack(self, data: bytes) -> None:
        """Load values from :meth:`pack` output into the existing shapes."""
        if len(data) % 8 != 0:
            raise ShapeMismatch(f"parameter blob of {len(data)} bytes is truncated")
        flat = np.frombuffer(data, dtype="<f8")
        if flat.size != self.n_scalars():
            raise ShapeMismatch(
                f"checkpoint holds {flat.size} scalars, store declares {self.n_scalars()}"
            )
        offset = 0
        for name, p in self.params.items():
            block = flat[offset : offset + p.size]
            self.params[name] = block.reshape(p.shape).astype(float)
            self.grads[name] = np.zeros_like(self.params[name])
            offset += p.size
        self.version += 1


def init_mlp(store: ParamStore, prefix: str, widths: list[int], rng) -> None:
    """Add weights/biases for an MLP with the given layer widths.

    Weights are uniform with fan-in scaling ``U(-1/sqrt(n_in), 1/sqrt(n_in))``,
    biases zero. Layer ``l`` maps widths[l] -> widths[l+1] and is stored as
    ``{prefix}.W{l}`` (shape out x in) and ``{prefix}.b{l}``.
    """
    for layer, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        scale = 1.0 / np.sqrt(n_in)
        store.add(f"{prefix}.W{layer}", rng.uniform(-scale, scale, size=(n_out, n_in)))
        store.add(f"{prefix}.b{layer}", np.zeros(n_out))


@dataclass
class Tape:
    """Activations recorded by a forward pass, consumed by backward."""

    prefix: str
    n_layers: int
    version: int
    single: bool
    inputs: list = field(default_factory=list)  # per-layer input activations
    preacts: list = field(default_factory=list)  # per-layer pre-activations


def mlp_forward(store: ParamStore, x, widths: list[int], prefix: str):
    """Run ``x`` through the ReLU MLP under ``prefix``.

    Hidden layers use ReLU, the output layer is linear. ``x`` may be a
    single vector (in,) or a batch (B, in).

    Returns:
        (y, tape) where y matches the batch shape of x.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != widths[0]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != declared {widths[0]}")

    n_layers = len(widths) - 1
    tape = Tape(prefix=prefix, n_layers=n_layers, version=store.version, single=single)
    for layer in range(n_layers):
        w = store.params[f"{prefix}.W{layer}"]
        b = store.params[f"{prefix}.b{layer}"]
        tape.inputs.append(h)
        z = h @ w.T + b
        tape.preacts.append(z)
        h = z if layer == n_layers - 1 else np.maximum(z, 0.0)
    return (h[0] if single else h, tape)


def mlp_backward(store: ParamStore, tape: Tape, upstream):
    """Accumulate parameter gradients from ``upstream`` = dL/dy.

    Gradients add into the store's buffers (callers zero them between
    steps). Returns dL/dx with the same batch shape as the forward input.
    ReLU takes subgradient 0 at 0.
    """
    if tape.version != store.version:
        raise StaleTape("parameters changed since this tape was recorded")
    g = np.asarray(upstream, dtype=float)
    g = g[None, :] if tape.single else g
    if g.shape != tape.preacts[-1].shape:
        raise ShapeMismatch(
            f"upstream shape {g.shape} != output shape {tape.preacts[-1].shape}"
        )

    for layer in reversed(range(tape.n_layers)):
        if layer != tape.n_layers - 1:
            g = g * (tape.preacts[layer] > 0.0)
        w = store.params[f"{tape.prefix}.W{layer}"]
        h_in = tape.inputs[layer]
        store.grads[f"{tape.prefix}.W{layer}"] += g.T @ h_in
        store.grads[f"{tape.prefix}.b{layer}"] += g.sum(axis=0)
        g = g @ w
    return g[0] if tape.single else g


@dataclass
class AdamState:
    """Adaptive-moment optimizer state over one ParamStore."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One bias-corrected adaptive-moment update; zeroes gradients after.

    Raises NonFiniteGradient (naming the parameter) before touching any
    value if a gradient contains NaN/inf.
    """
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in store.params.items():
        g = store.grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1**state.t)
        v_hat = v / (1.0 - b2**state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        if not np.all(np.isfinite(p)):
            raise NonFiniteGradient(f"parameter {name!r} became non-finite")
    store.zero_grads()
    store.version += 1


@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def finite_diff_check(
    f,
    store: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    sample: int = 20,
    rng=None,
    atol: float = 1e-7,
) -> FiniteDiffReport:
    """Compare the store's gradient buffers against central differences of f.

    ``f`` is a deterministic scalar function of the store's parameters;
    the caller populates ``store.grads`` (e.g. via a backward pass) before
    calling. Large parameters are subsampled to ``sample`` coordinates per
    array. The per-coordinate error is
    ``|fd - grad| / (atol/tol + max(|fd|, |grad|))`` so the report passes
    iff every coordinate satisfies ``|fd - grad| <= atol + tol * max``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    worst_param = ""
    worst_index: tuple = ()
    n_checked = 0
    floor = atol / tol
    for name, p in store.params.items():
        flat = p.ravel()
        idx = np.arange(flat.size)
        if flat.size > sample:
            idx = np.sort(rng.choice(flat.size, size=sample, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f()
            flat[i] = orig - h
            f_minus = f()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = store.grads[name].ravel()[i]
            rel = abs(fd - an) / (floor + max(abs(fd), abs(an)))
            n_checked += 1
            if rel > worst:
                worst = rel
                worst_param = name
                worst_index = np.unravel_index(i, p.shape)
    return FiniteDiffReport(
        max_rel_error=worst,
        worst_param=worst_param,
        worst_index=worst_index,
        n_checked=n_checked,
        tol=tol,
    )
