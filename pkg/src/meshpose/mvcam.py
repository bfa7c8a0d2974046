"""Azimuthal multi-view camera ring and pinhole projection.

World frame is right-handed with +y up. Each camera's own (viewing) frame
looks toward -z with +y up; pixel coordinates use the usual image layout
(u to the right, v downward), so the camera-space coordinates fed to the
pinhole model are ``(x, -y, -z)`` of the viewing frame and the returned depth
is positive in front of the camera.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

NEAR_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    view_id: int
    azimuth: float
    elevation: float
    radius: float
    focal: float
    principal: tuple
    image_size: tuple

    def __post_init__(self):
        object.__setattr__(self, "principal", tuple(float(x) for x in self.principal))
        object.__setattr__(self, "image_size", tuple(int(x) for x in self.image_size))
        if not self.radius > 0:
            raise InvalidInputError(f"camera {self.view_id}: radius must be > 0", "radius")
        if not self.focal > 0:
            raise InvalidInputError(f"camera {self.view_id}: focal must be > 0", "focal")
        w, h = self.image_size
        cx, cy = self.principal
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise InvalidInputError(f"camera {self.view_id}: principal point outside image",
                                    "principal")
        ca, sa = np.cos(self.azimuth), np.sin(self.azimuth)
        ce, se = np.cos(self.elevation), np.sin(self.elevation)
        center = self.radius * np.array([ce * sa, se, ce * ca])
        back = center / np.linalg.norm(center)
        up = np.array([0.0, 1.0, 0.0])
        if abs(back @ up) > 1 - 1e-12:
            up = np.array([0.0, 0.0, -np.sign(back[1])])
        x = np.cross(up, back)
        x /= np.linalg.norm(x)
        y = np.cross(back, x)
        object.__setattr__(self, "center", center)
        # world -> pinhole camera coordinates (x right, y down, z forward)
        object.__setattr__(self, "rotation", np.stack([x, -y, -back]))

    def to_camera(self, points):
        return (np.asarray(points, dtype=float) - self.center) @ self.rotation.T

    def intrinsic_matrix(self):
        return np.array([[self.focal, 0.0, self.principal[0]],
                         [0.0, self.focal, self.principal[1]],
                         [0.0, 0.0, 1.0]])

    def extrinsic_matrix(self):
        """3x4 world-to-camera matrix."""
        return np.hstack([self.rotation, (-self.rotation @ self.center)[:, None]])


@dataclass(frozen=True, eq=False)
class ViewRig:
    cameras: tuple

    def __post_init__(self):
        cams = tuple(self.cameras)
        if not cams:
            raise InvalidInputError("camera rig needs at least one view", "cameras")
        if sorted(c.view_id for c in cams) != list(range(len(cams))):
            raise InvalidInputError("camera view ids must be dense 0..N-1", "cameras.view_id")
        object.__setattr__(self, "cameras", tuple(sorted(cams, key=lambda c: c.view_id)))

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    def __iter__(self):
        return iter(self.cameras)


def make_ring_rig(n_views, elevation=0.0, radius=4.0, focal=560.0, image_size=(512, 512),
                  principal=None):
    """Cameras evenly spaced in azimuth (``2*pi*k/N``), all looking at the origin."""
    if n_views < 1:
        raise InvalidInputError("n_views must be >= 1", "n_views")
    if principal is None:
        principal = (image_size[0] / 2.0, image_size[1] / 2.0)
    return ViewRig(tuple(
        Camera(k, 2.0 * np.pi * k / n_views, elevation, radius, focal, principal, image_size)
        for k in range(n_views)))


def project_points(camera, points):
    """Project (K, 3) world points.

    Returns pixel coordinates (K, 2), camera depth (K,) and a mask that is
    False for points at or behind the near plane (their pixels are NaN).
    """
    pc = camera.to_camera(np.atleast_2d(points))
    z = pc[:, 2]
    ok = z > NEAR_EPS
    zs = np.where(ok, z, np.nan)
    uv = camera.focal * pc[:, :2] / zs[:, None] + np.asarray(camera.principal)
    return uv, z, ok


def project(camera, point):
    """Project one point; returns (uv, depth, projectable)."""
    uv, z, ok = project_points(camera, np.asarray(point, dtype=float)[None])
    return uv[0], float(z[0]), bool(ok[0])


def projection_jacobian(camera, points):
    """d(uv)/d(world point), shape (K, 2, 3)."""
    pc = camera.to_camera(np.atleast_2d(points))
    z = pc[:, 2:3]
    f = camera.focal
    Rm = camera.rotation
    du = f / z * (Rm[0][None] - pc[:, 0:1] / z * Rm[2][None])
    dv = f / z * (Rm[1][None] - pc[:, 1:2] / z * Rm[2][None])
    return np.stack([du, dv], axis=1)
