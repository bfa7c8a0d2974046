"""Axis-angle helpers: exponential map, its right Jacobian, and canonicalization."""

import numpy as np
from scipy.spatial.transform import Rotation

_SMALL = 1e-8


def skew(w):
    """Cross-product matrix, so that ``skew(w) @ x == np.cross(w, x)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(r):
    """Rotation matrix for axis-angle vector ``r`` (radians)."""
    r = np.asarray(r, dtype=float)
    theta = np.sqrt(r @ r)
    K = skew(r)
    if theta < _SMALL:
        # second-order Taylor expansion
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rodrigues_batch(r):
    """Vectorized :func:`rodrigues` over an (n, 3) array."""
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    theta2 = np.einsum("ij,ij->i", r, r)
    theta = np.sqrt(theta2)
    small = theta < _SMALL
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = np.zeros((len(r), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -r[:, 2], r[:, 1]
    K[:, 1, 0], K[:, 1, 2] = r[:, 2], -r[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -r[:, 1], r[:, 0]
    KK = K @ K
    return np.eye(3)[None] + a[:, None, None] * K + b[:, None, None] * KK


def right_jacobian(r):
    """Right Jacobian of the SO(3) exponential map.

    ``rodrigues(r + d) ~= rodrigues(r) @ rodrigues(right_jacobian(r) @ d)`` for small ``d``.
    """
    r = np.asarray(r, dtype=float)
    theta2 = r @ r
    theta = np.sqrt(theta2)
    K = skew(r)
    if theta < 1e-4:
        b = 0.5 - theta2 / 24.0
        c = 1.0 / 6.0 - theta2 / 120.0
    else:
        b = (1.0 - np.cos(theta)) / theta2
        c = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - b * K + c * (K @ K)


def right_jacobian_batch(r):
    return np.stack([right_jacobian(x) for x in np.asarray(r, dtype=float).reshape(-1, 3)])


def log_map(R):
    """Axis-angle vector of a rotation matrix, angle in [0, pi]."""
    return Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()


def canonicalize(r):
    """Map an axis-angle vector to the equivalent one with angle in [0, pi].

    Angles above pi are stored as the opposite axis with angle ``2*pi - theta``.
    Idempotent.
    """
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("non-finite axis-angle vector")
    theta = float(np.sqrt(r @ r))
    if theta <= np.pi:
        return r.copy()
    axis = r / theta
    theta = np.fmod(theta, 2.0 * np.pi)
    if theta > np.pi:
        return -axis * (2.0 * np.pi - theta)
    return axis * theta


def angle_between(Ra, Rb):
    """Geodesic distance (radians) between two rotation matrices."""
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
