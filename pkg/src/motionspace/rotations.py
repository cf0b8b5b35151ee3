"""Continuous 6D rotation representation.

A rotation is stored as the first two columns of its matrix, flattened to
six scalars ``[a1, a2]``. The representation is continuous, so it is safe
to regress with a network and to interpolate componentwise; projection back
to SO(3) is a Gram-Schmidt orthonormalization.

All functions accept arbitrary leading batch dimensions: a ``(..., 6)``
array of 6D vectors maps to a ``(..., 3, 3)`` array of matrices whose
columns are the orthonormalized frame.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInput

# Threshold below which a 6D vector counts as collapsed (unprojectable).
EPS_DEGENERATE = 1e-8

# 6D encoding of the identity rotation: columns (1,0,0) and (0,1,0).
IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def project(r6, min_norm=None):
    """Orthonormalize a 6D vector into a rotation matrix.

    Column 1 is ``a1`` normalized, column 2 is ``a2`` minus its component
    along column 1 (normalized), column 3 is their cross product.

    Args:
        r6: array (..., 6).
        min_norm: if None, raise DegenerateInput when a normalization norm
            falls below EPS_DEGENERATE. If a float, clamp norms at that
            floor instead (training-path behaviour: finite output, no
            branching in the gradient).

    Returns:
        array (..., 3, 3) with orthonormal columns and determinant +1.
    """
    r6 = np.asarray(r6, dtype=float)
    if r6.shape[-1] != 6:
        raise ValueError(f"expected (..., 6) 6D vectors, got shape {r6.shape}")
    a1 = r6[..., :3]
    a2 = r6[..., 3:]

    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if min_norm is None:
        if np.any(n1 <= EPS_DEGENERATE):
            raise DegenerateInput(f"first 6D column has norm <= {EPS_DEGENERATE}")
        n1c = n1
    else:
        n1c = np.maximum(n1, min_norm)
    b1 = a1 / n1c

    u = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if min_norm is None:
        if np.any(n2 <= EPS_DEGENERATE):
            raise DegenerateInput(
                f"second 6D column is parallel to the first (norm <= {EPS_DEGENERATE})"
            )
        n2c = n2
    else:
        n2c = np.maximum(n2, min_norm)
    b2 = u / n2c

    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def project_vjp(r6, upstream, min_norm=None):
    """Vector-Jacobian product of :func:`project`.

    Args:
        r6: array (..., 6), the projection input.
        upstream: array (..., 3, 3), gradient w.r.t. the projected matrix.
        min_norm: must match the value used in the forward call.

    Returns:
        array (..., 6), gradient w.r.t. the 6D input.
    """
    r6 = np.asarray(r6, dtype=float)
    g = np.asarray(upstream, dtype=float)
    a1 = r6[..., :3]
    a2 = r6[..., 3:]

    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    n2_floor = EPS_DEGENERATE if min_norm is None else min_norm
    if min_norm is None and np.any(n1 <= EPS_DEGENERATE):
        raise DegenerateInput(f"first 6D column has norm <= {EPS_DEGENERATE}")
    n1c = np.maximum(n1, n2_floor) if min_norm is not None else n1
    b1 = a1 / n1c

    d = np.sum(b1 * a2, axis=-1, keepdims=True)
    u = a2 - d * b1
    n2 = np.linalg.norm(u, axis=-1, keepdims=True)
    if min_norm is None and np.any(n2 <= EPS_DEGENERATE):
        raise DegenerateInput(
            f"second 6D column is parallel to the first (norm <= {EPS_DEGENERATE})"
        )
    n2c = np.maximum(n2, min_norm) if min_norm is not None else n2
    b2 = u / n2c

    g1 = g[..., :, 0]
    g2 = g[..., :, 1]
    g3 = g[..., :, 2]

    # b3 = b1 x b2 feeds gradient back into both factors.
    g_b2 = g2 + np.cross(g3, b1)
    g_b1 = g1 + np.cross(b2, g3)

    # Backward through b2 = u / n2c. When the clamp is active the
    # denominator is constant, so the projection term drops out.
    if min_norm is None:
        g_u = (g_b2 - b2 * np.sum(b2 * g_b2, axis=-1, keepdims=True)) / n2c
    else:
        clamped2 = n2 < min_norm
        g_u_free = (g_b2 - b2 * np.sum(b2 * g_b2, axis=-1, keepdims=True)) / n2c
        g_u = np.where(clamped2, g_b2 / n2c, g_u_free)

    # Backward through u = a2 - (b1 . a2) b1.
    b1_dot_gu = np.sum(b1 * g_u, axis=-1, keepdims=True)
    g_a2 = g_u - b1 * b1_dot_gu
    g_b1 = g_b1 - b1_dot_gu * a2 - d * g_u

    # Backward through b1 = a1 / n1c.
    if min_norm is None:
        g_a1 = (g_b1 - b1 * np.sum(b1 * g_b1, axis=-1, keepdims=True)) / n1c
    else:
        clamped1 = n1 < min_norm
        g_a1_free = (g_b1 - b1 * np.sum(b1 * g_b1, axis=-1, keepdims=True)) / n1c
        g_a1 = np.where(clamped1, g_b1 / n1c, g_a1_free)

    return np.concatenate([g_a1, g_a2], axis=-1)


def extract(rot):
    """Read the first two matrix columns back into a 6D vector.

    Inverse of :func:`project` on actual rotation matrices:
    ``project(extract(R)) == R`` up to roundoff.
    """
    rot = np.asarray(rot, dtype=float)
    if rot.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) matrices, got shape {rot.shape}")
    return np.concatenate([rot[..., :, 0], rot[..., :, 1]], axis=-1)


def center(r6):
    """Subtract the identity encoding [1,0,0,0,1,0] componentwise."""
    return np.asarray(r6, dtype=float) - IDENTITY_6D


def uncenter(r6):
    """Add the identity encoding back; exact inverse of :func:`center`."""
    return np.asarray(r6, dtype=float) + IDENTITY_6D


def lerp(r6_a, r6_b, t):
    """Componentwise linear blend ``(1-t)*a + t*b`` of raw 6D vectors.

    The result is in general unnormalized; project before posing.
    """
    r6_a = np.asarray(r6_a, dtype=float)
    r6_b = np.asarray(r6_b, dtype=float)
    return (1.0 - t) * r6_a + t * r6_b
