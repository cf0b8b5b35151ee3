"""Shared helpers for the test suite."""

import numpy as np


def finite_diff_array(f, x, h=1e-6):
    """Central-difference Jacobian of scalar f at array x, same shape as x."""
    x = np.asarray(x, dtype=float).copy()
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad.ravel()[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-3):
    """Max elementwise relative error with an absolute floor."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def random_rotations(rng, n):
    """Haar-ish random rotation matrices via Gram-Schmidt of Gaussians."""
    from motionspace import rotations

    return rotations.project(rng.standard_normal((n, 6)))
