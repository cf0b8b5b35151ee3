"""Skinned parametric body: shape blendshapes, kinematics, skinning.

The body plays the role of a statistical mesh model: a fixed template plus
per-unit-shape displacement fields, a kinematic tree, and per-vertex
skinning weights. Posing is plain linear blend skinning with the root
orientation living in joint 0 and translation handled separately, so the
full static-frame parameterization is (beta, theta, gamma).

Everything here is differentiable by hand: :func:`pose_mesh_vjp` returns
exact gradients with respect to all three parameter groups, which the
sequence losses and latent fits rely on.

Conventions: z is up, x is forward, y is left; units are meters. Batched
calls broadcast over leading dimensions of ``theta``/``gamma``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rotations
from .errors import InvalidConfig, ParseError, ShapeMismatch

# Canonical joint list: (name, parent index, rest position). parents[i] < i
# throughout, so ascending index order is topological.
_CANONICAL_JOINTS = [
    ("pelvis", -1, (0.00, 0.00, 1.00)),
    ("spine", 0, (0.00, 0.00, 1.25)),
    ("head", 1, (0.00, 0.00, 1.55)),
    ("hip_l", 0, (0.00, 0.10, 0.95)),
    ("hip_r", 0, (0.00, -0.10, 0.95)),
    ("knee_l", 3, (0.00, 0.11, 0.55)),
    ("knee_r", 4, (0.00, -0.11, 0.55)),
    ("shoulder_l", 1, (0.00, 0.20, 1.42)),
    ("shoulder_r", 1, (0.00, -0.20, 1.42)),
    ("elbow_l", 7, (0.00, 0.45, 1.40)),
    ("elbow_r", 8, (0.00, -0.45, 1.40)),
    ("ankle_l", 5, (0.00, 0.11, 0.12)),
    ("ankle_r", 6, (0.00, -0.11, 0.12)),
    ("wrist_l", 9, (0.00, 0.68, 1.38)),
    ("wrist_r", 10, (0.00, -0.68, 1.38)),
    ("toe_l", 11, (0.14, 0.11, 0.04)),
    ("toe_r", 12, (0.14, -0.11, 0.04)),
    ("chest", 1, (0.00, 0.00, 1.35)),
    ("neck", 1, (0.00, 0.00, 1.45)),
    ("head_top", 2, (0.00, 0.00, 1.70)),
]

MAX_JOINTS = len(_CANONICAL_JOINTS)


def joint_layout(n_joints: int) -> dict[str, int]:
    """Name -> index map for the first ``n_joints`` canonical joints."""
    if not 4 <= n_joints <= MAX_JOINTS:
        raise InvalidConfig(f"joint count must be in [4, {MAX_JOINTS}], got {n_joints}")
    return {name: i for i, (name, _, _) in enumerate(_CANONICAL_JOINTS[:n_joints])}


@dataclass(frozen=True)
class BodyModel:
    """Fixed tensors behind the posing function. Immutable once built."""

    template_vertices: np.ndarray  # (V, 3) meters
    shape_dirs: np.ndarray  # (V, 3, B) meters per unit shape coefficient
    joint_shape_dirs: np.ndarray  # (J, 3, B)
    skin_weights: np.ndarray  # (V, J), rows nonnegative, sum 1
    rest_joints: np.ndarray  # (J, 3)
    parents: np.ndarray  # (J,) int, parents[0] == -1, parents[i] < i
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_joints(self) -> int:
        return self.rest_joints.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_dirs.shape[2]


def validate_body(body: BodyModel) -> None:
    """Check all structural invariants; raise ParseError on violation."""
    v, j, b = body.n_vertices, body.n_joints, body.n_shape
    if body.template_vertices.shape != (v, 3):
        raise ParseError("template_vertices must be V x 3")
    if body.shape_dirs.shape != (v, 3, b):
        raise ParseError(f"shape_dirs must be V x 3 x B, got {body.shape_dirs.shape}")
    if body.joint_shape_dirs.shape != (j, 3, b):
        raise ParseError("joint_shape_dirs must be J x 3 x B")
    if body.skin_weights.shape != (v, j):
        raise ParseError("skin_weights must be V x J")
    if body.parents.shape != (j,):
        raise ParseError("parents must have length J")
    if body.parents[0] != -1:
        raise ParseError("parents[0] must be -1 (root)")
    if np.any(body.parents[1:] >= np.arange(1, j)) or np.any(body.parents[1:] < 0):
        raise ParseError("parents must satisfy 0 <= parents[i] < i for i > 0")
    if np.any(body.skin_weights < -1e-12):
        raise ParseError("skin_weights must be nonnegative")
    row_sums = body.skin_weights.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ParseError("skin_weights rows must sum to 1 within 1e-6")
    for arr in (body.template_vertices, body.shape_dirs, body.joint_shape_dirs,
                body.rest_joints):
        if not np.all(np.isfinite(arr)):
            raise ParseError("body tensors must be finite")


def shape(body: BodyModel, beta):
    """Apply shape blendshapes: returns (vertices (V,3), joints (J,3))."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (body.n_shape,):
        raise ShapeMismatch(f"beta must have length {body.n_shape}, got {beta.shape}")
    if not np.all(np.isfinite(beta)):
        raise InvalidConfig("beta must be finite")
    verts = body.template_vertices + body.shape_dirs @ beta
    joints = body.rest_joints + body.joint_shape_dirs @ beta
    return verts, joints


def _local_transforms(rot, joints):
    """Rotation ``rot[j]`` about point ``joints[j]`` as 4x4 matrices."""
    batch = rot.shape[:-3]
    j = rot.shape[-3]
    m = np.zeros(batch + (j, 4, 4))
    m[..., :3, :3] = rot
    m[..., :3, 3] = joints - np.einsum("...jab,jb->...ja", rot, joints)
    m[..., 3, 3] = 1.0
    return m


def forward_kinematics(body: BodyModel, joints, theta, min_norm=None):
    """Compose per-joint world transforms along the kinematic tree.

    ``joints`` are the (shaped) rest joint positions (J,3); ``theta`` is
    (..., J, 6). Each joint's local transform rotates about its own rest
    position, so the all-identity pose maps to identity transforms.

    Returns (..., J, 4, 4) rigid transforms taking rest-space points to
    posed space.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-2:] != (body.n_joints, 6):
        raise ShapeMismatch(
            f"theta must be (..., {body.n_joints}, 6), got {theta.shape}"
        )
    rot = rotations.project(theta, min_norm=min_norm)
    local = _local_transforms(rot, np.asarray(joints, dtype=float))
    out = np.empty_like(local)
    out[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, body.n_joints):
        p = int(body.parents[j])
        out[..., j, :, :] = out[..., p, :, :] @ local[..., j, :, :]
    return out


def pose_mesh(body: BodyModel, beta, theta, gamma, min_norm=None):
    """Pose the shaped mesh by LBS: returns vertices (..., V, 3).

    ``theta`` is (..., J, 6), ``gamma`` is (..., 3); leading dimensions
    broadcast (a shared ``beta`` shapes the body once).
    """
    verts, joints = shape(body, beta)
    transforms = forward_kinematics(body, joints, theta, min_norm=min_norm)
    rot = transforms[..., :3, :3]  # (..., J, 3, 3)
    tr = transforms[..., :3, 3]  # (..., J, 3)
    w = body.skin_weights
    blend_rot = np.einsum("vj,...jab->...vab", w, rot)
    blend_tr = np.einsum("vj,...ja->...va", w, tr)
    posed = np.einsum("...vab,vb->...va", blend_rot, verts) + blend_tr
    return posed + np.asarray(gamma, dtype=float)[..., None, :]


def pose_mesh_vjp(body: BodyModel, beta, theta, gamma, upstream, min_norm=None):
    """Vector-Jacobian product of :func:`pose_mesh`.

    ``upstream`` is dL/dvertices with the same shape as the pose_mesh
    output. Returns ``(grad_beta, grad_theta, grad_gamma)`` where
    grad_theta/grad_gamma match the batched input shapes and grad_beta
    (B,) is summed over all leading dimensions (beta is shared).
    """
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    u = np.asarray(upstream, dtype=float)
    verts, joints = shape(body, beta)
    n_joints = body.n_joints

    rot6 = rotations.project(theta, min_norm=min_norm)
    local = _local_transforms(rot6, joints)
    world = np.empty_like(local)
    world[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, n_joints):
        p = int(body.parents[j])
        world[..., j, :, :] = world[..., p, :, :] @ local[..., j, :, :]

    w = body.skin_weights
    rot = world[..., :3, :3]
    grad_gamma = u.sum(axis=-2)

    # Skinning: v = gamma + blend_rot @ v_hat + blend_tr.
    blend_rot = np.einsum("vj,...jab->...vab", w, rot)
    g_vhat = np.einsum("...vab,...va->...vb", blend_rot, u)
    if g_vhat.ndim > 2:
        g_vhat = g_vhat.reshape(-1, *g_vhat.shape[-2:]).sum(axis=0)
    g_world = np.zeros_like(world)
    g_world[..., :3, :3] = np.einsum("vj,...va,vb->...jab", w, u, verts)
    g_world[..., :3, 3] = np.einsum("vj,...va->...ja", w, u)

    # Chain rule through world[j] = world[parent] @ local[j]; descending
    # index order is reverse-topological.
    g_local = np.empty_like(g_world)
    for j in range(n_joints - 1, 0, -1):
        p = int(body.parents[j])
        g_local[..., j, :, :] = (
            np.swapaxes(world[..., p, :, :], -1, -2) @ g_world[..., j, :, :]
        )
        g_world[..., p, :, :] += g_world[..., j, :, :] @ np.swapaxes(
            local[..., j, :, :], -1, -2
        )
    g_local[..., 0, :, :] = g_world[..., 0, :, :]

    # local rotation block = R, translation block = j - R @ j.
    g_mrot = g_local[..., :3, :3]
    g_mtr = g_local[..., :3, 3]
    g_rot = g_mrot - np.einsum("...ja,jb->...jab", g_mtr, joints)
    g_joints = g_mtr - np.einsum("...jba,...jb->...ja", rot6, g_mtr)

    grad_theta = rotations.project_vjp(theta, g_rot, min_norm=min_norm)

    batch_axes = tuple(range(g_joints.ndim - 2))
    g_joints_total = g_joints.sum(axis=batch_axes) if batch_axes else g_joints
    grad_beta = np.einsum("vcb,vc->b", body.shape_dirs, g_vhat) + np.einsum(
        "jcb,jc->b", body.joint_shape_dirs, g_joints_total
    )
    return grad_beta, grad_theta, grad_gamma


# ---------------------------------------------------------------------------
# Synthetic body asset
# ---------------------------------------------------------------------------


def _bone_radius(length: float) -> float:
    return float(np.clip(0.3 * length, 0.05, 0.13))


def make_synthetic_body(n_joints=20, n_vertices=500, n_shape=8, seed=0) -> BodyModel:
    """Build a deterministic humanoid-ish body asset.

    The kinematic tree takes the first ``n_joints`` canonical joints
    (torso chain, head, arm and leg chains). Vertices are sampled as rings
    around each bone, skinning weights come from a bone-distance softmax,
    and shape directions are smooth fields capped at 0.05 m per unit
    coefficient (component 0 is a global size change so shape correlates
    with limb length).
    """
    if n_joints < 4 or n_joints > MAX_JOINTS:
        raise InvalidConfig(f"n_joints must be in [4, {MAX_JOINTS}], got {n_joints}")
    if n_vertices < n_joints:
        raise InvalidConfig(f"n_vertices must be >= n_joints, got {n_vertices}")
    if n_shape < 1:
        raise InvalidConfig(f"n_shape must be >= 1, got {n_shape}")

    rng = np.random.default_rng(seed)
    spec = _CANONICAL_JOINTS[:n_joints]
    parents = np.array([p for _, p, _ in spec], dtype=int)
    rest_joints = np.array([pos for _, _, pos in spec], dtype=float)

    # Allocate vertices to bones proportionally to bone length.
    bones = [(int(parents[j]), j) for j in range(1, n_joints)]
    lengths = np.array(
        [np.linalg.norm(rest_joints[c] - rest_joints[p]) for p, c in bones]
    )
    alloc = np.maximum(1, np.floor(n_vertices * lengths / lengths.sum()).astype(int))
    while alloc.sum() < n_vertices:
        alloc[int(np.argmax(lengths / alloc))] += 1
    while alloc.sum() > n_vertices:
        alloc[int(np.argmax(alloc))] -= 1

    ring_size = 6
    verts = []
    faces = []
    for (p, c), count in zip(bones, alloc):
        a, b = rest_joints[p], rest_joints[c]
        axis = b - a
        length = np.linalg.norm(axis)
        axis = axis / length
        # Orthonormal frame around the bone axis.
        helper = np.array([1.0, 0.0, 0.0])
        if abs(axis @ helper) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        radius = _bone_radius(length)

        n_rings = max(1, int(np.ceil(count / ring_size)))
        params = np.linspace(0.15, 0.85, n_rings)
        phase = rng.uniform(0.0, 2 * np.pi)
        start = len(verts)
        placed = 0
        ring_starts = []
        for r, s in enumerate(params):
            n_here = min(ring_size, count - placed)
            if n_here <= 0:
                break
            ring_starts.append((len(verts), n_here))
            centre = a + s * (b - a)
            for m in range(n_here):
                ang = 2 * np.pi * m / ring_size + phase
                rad = radius * (1.0 + 0.08 * rng.standard_normal())
                verts.append(centre + rad * (np.cos(ang) * e1 + np.sin(ang) * e2))
            placed += n_here
        # Triangulate between consecutive full rings of this bone.
        for (s0, n0), (s1, n1) in zip(ring_starts[:-1], ring_starts[1:]):
            if n0 == ring_size and n1 == ring_size:
                for m in range(ring_size):
                    m2 = (m + 1) % ring_size
                    faces.append((s0 + m, s1 + m, s1 + m2))
                    faces.append((s0 + m, s1 + m2, s0 + m2))
        del start
    template = np.array(verts)
    faces_arr = np.array(faces, dtype=int) if faces else np.zeros((0, 3), dtype=int)

    # Skinning: softmax over negative squared distance to each joint's bone
    # (segment from the joint's parent to the joint; the root uses its
    # own position).
    d2 = np.empty((n_vertices, n_joints))
    for j in range(n_joints):
        if parents[j] < 0:
            d = template - rest_joints[j]
            d2[:, j] = np.sum(d * d, axis=1)
        else:
            a, b = rest_joints[parents[j]], rest_joints[j]
            ab = b - a
            denom = float(ab @ ab)
            t = np.clip(((template - a) @ ab) / denom, 0.0, 1.0)
            close = a + t[:, None] * ab
            d = template - close
            d2[:, j] = np.sum(d * d, axis=1)
    tau = 2.0 * 0.07**2
    logits = -d2 / tau
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=1, keepdims=True)

    # Shape displacement fields, evaluated at vertices and joints so the
    # skeleton moves consistently with the surface. Component 0 is a
    # global size change; the rest are smooth low-frequency fields.
    shape_dirs = np.zeros((n_vertices, 3, n_shape))
    joint_shape_dirs = np.zeros((n_joints, 3, n_shape))
    cap = 0.05
    root = rest_joints[0]
    for k in range(n_shape):
        if k == 0:
            fv = template - root
            fj = rest_joints - root
        else:
            fv = np.zeros_like(template)
            fj = np.zeros_like(rest_joints)
            for _ in range(3):
                u = rng.standard_normal(3)
                u /= np.linalg.norm(u)
                freq = rng.uniform(1.0, 3.0)
                ph = rng.uniform(0.0, 2 * np.pi)
                amp = rng.standard_normal(3)
                fv += np.sin(freq * (template @ u) + ph)[:, None] * amp
                fj += np.sin(freq * (rest_joints @ u) + ph)[:, None] * amp
        norm = max(
            np.linalg.norm(fv, axis=1).max(), np.linalg.norm(fj, axis=1).max(), 1e-12
        )
        scale = cap * 0.85**k / norm
        shape_dirs[:, :, k] = fv * scale
        joint_shape_dirs[:, :, k] = fj * scale

    model = BodyModel(
        template_vertices=template,
        shape_dirs=shape_dirs,
        joint_shape_dirs=joint_shape_dirs,
        skin_weights=weights,
        rest_joints=rest_joints,
        parents=parents,
        faces=faces_arr,
    )
    validate_body(model)
    return model


def pick_marker_vertices(body: BodyModel, count: int = 16) -> np.ndarray:
    """Deterministic well-spread template vertex ids (farthest-point)."""
    if body.n_vertices < count:
        raise InvalidConfig(f"need at least {count} vertices, body has {body.n_vertices}")
    pts = body.template_vertices
    chosen = [int(np.argmax(pts[:, 2]))]
    dist = np.linalg.norm(pts - pts[chosen[0]], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.array(chosen, dtype=int)


# ---------------------------------------------------------------------------
# Asset file I/O (JSON)
# ---------------------------------------------------------------------------

BODY_FORMAT_VERSION = 1


def save_body(body: BodyModel, path) -> None:
    """Write the asset as a single JSON document."""
    doc = {
        "version": BODY_FORMAT_VERSION,
        "J": body.n_joints,
        "V": body.n_vertices,
        "B": body.n_shape,
        "template_vertices": body.template_vertices.tolist(),
        "shape_dirs": body.shape_dirs.tolist(),
        "joint_shape_dirs": body.joint_shape_dirs.tolist(),
        "skin_weights": body.skin_weights.tolist(),
        "rest_joints": body.rest_joints.tolist(),
        "parents": body.parents.tolist(),
        "faces": body.faces.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_body(path) -> BodyModel:
    """Read and validate a body asset; rejects on any invariant violation."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    if not isinstance(doc, dict) or doc.get("version") != BODY_FORMAT_VERSION:
        raise ParseError(
            f"unsupported body asset version {doc.get('version')!r}", path=str(path)
        )
    required = [
        "J", "V", "B", "template_vertices", "shape_dirs", "joint_shape_dirs",
        "skin_weights", "rest_joints", "parents",
    ]
    for key in required:
        if key not in doc:
            raise ParseError(f"missing field {key!r}", path=str(path))
    try:
        body = BodyModel(
            template_vertices=np.asarray(doc["template_vertices"], dtype=float),
            shape_dirs=np.asarray(doc["shape_dirs"], dtype=float),
            joint_shape_dirs=np.asarray(doc["joint_shape_dirs"], dtype=float),
            skin_weights=np.asarray(doc["skin_weights"], dtype=float),
            rest_joints=np.asarray(doc["rest_joints"], dtype=float),
            parents=np.asarray(doc["parents"], dtype=int),
            faces=np.asarray(doc.get("faces", []), dtype=int).reshape(-1, 3),
        )
    except (ValueError, TypeError) as exc:
        raise ParseError(f"malformed array field: {exc}", path=str(path)) from exc
    if (body.n_joints, body.n_vertices, body.n_shape) != (doc["J"], doc["V"], doc["B"]):
        raise ParseError("declared J/V/B do not match array shapes", path=str(path))
    try:
        validate_body(body)
    except ParseError as exc:
        raise ParseError(f"invalid body asset: {exc}", path=str(path)) from exc
    return body
