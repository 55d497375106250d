"""Equirectangular panorama geometry under a flat-ground assumption.

Pixel column maps linearly to azimuth and row to elevation. The camera
sits ``height_m`` above a flat floor with zero roll and pitch; a
below-horizon ray therefore meets the floor at a single point, which is
how 2D ankle detections become ground-plane positions in the robot frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HORIZON_EPS = 1e-3
COCO_LEFT_ANKLE = 15
COCO_RIGHT_ANKLE = 16

_TWO_PI = 2.0 * math.pi


class AboveHorizonError(ValueError):
    """The ray does not intersect the ground plane."""


@dataclass(frozen=True)
class CameraModel:
    width: int
    height: int
    height_m: float = 0.85
    yaw_offset: float = 0.0  # radians; azimuth of the robot's forward axis relative to the image center column

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise ValueError(f"equirectangular image must be 2:1, got {self.width}x{self.height}")
        if not self.height_m > 0:
            raise ValueError("camera height must be positive")


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % _TWO_PI - math.pi


def pixel_to_bearing(u, v, cam: CameraModel):
    """Return (azimuth, elevation) in radians for pixel (u, v).

    Azimuth is in [-pi, pi) with 0 straight ahead and positive to the
    left; elevation is in (-pi/2, pi/2] with 0 on the horizon.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any((u < 0) | (u >= cam.width) | (v < 0) | (v >= cam.height)):
        raise ValueError(f"pixel outside image bounds [0,{cam.width})x[0,{cam.height})")
    theta = wrap_angle(_TWO_PI * u / cam.width - math.pi - cam.yaw_offset)
    phi = math.pi / 2 - math.pi * v / cam.height
    if theta.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def ground_range(phi, height_m: float, eps: float = HORIZON_EPS):
    """Horizontal distance at which a ray of elevation ``phi`` meets the floor."""
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi >= -eps):
        raise AboveHorizonError(f"above-horizon ray (elevation >= {-eps} rad) has no ground intersection")
    # extended precision keeps e.g. h / tan(pi/4) correctly rounded
    ld = np.longdouble
    r = ld(height_m) / np.tan(-phi.astype(ld))
    return r.astype(np.float64)


def bearing_to_ground(theta, phi, cam: CameraModel, eps: float = HORIZON_EPS) -> np.ndarray:
    """Intersect the ray (theta, phi) with the floor; returns (..., 2) meters."""
    r = ground_range(phi, cam.height_m, eps)
    theta = np.asarray(theta, dtype=np.float64)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def bearing_to_pixel(theta, phi, cam: CameraModel):
    """Inverse of :func:`pixel_to_bearing`; ``u`` wraps into [0, W)."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    # scale to turns before wrapping so theta = 0 lands exactly on W/2
    u = (((theta + cam.yaw_offset) / _TWO_PI + 0.5) % 1.0) * cam.width
    u = np.where(u >= cam.width, u - cam.width, u)
    v = (math.pi / 2 - phi) * cam.height / math.pi
    return u, v


def ground_to_pixel(p, cam: CameraModel):
    """Pixel (u, v) at which floor point ``p`` (robot frame) appears."""
    p = np.asarray(p, dtype=np.float64)
    r = np.hypot(p[..., 0], p[..., 1])
    if np.any(r == 0):
        raise ValueError("azimuth undefined for the point below the camera")
    theta = np.arctan2(p[..., 1], p[..., 0])
    phi = -np.arctan2(cam.height_m, r)
    u, v = bearing_to_pixel(theta, phi, cam)
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def point_to_pixel(p3, cam: CameraModel):
    """Project 3D robot-frame points (..., 3) into the panorama.

    Points are measured from the floor; the optical center is at
    ``(0, 0, cam.height_m)``. Returns (u, v) arrays.
    """
    p3 = np.asarray(p3, dtype=np.float64)
    theta = np.arctan2(p3[..., 1], p3[..., 0])
    phi = np.arctan2(p3[..., 2] - cam.height_m, np.hypot(p3[..., 0], p3[..., 1]))
    return bearing_to_pixel(theta, phi, cam)


def keypoints_to_position(kp2d, valid, cam: CameraModel, anchor_height_m: float = 0.0,
                          eps: float = HORIZON_EPS):
    """Ground position of a person from their COCO-17 ankle keypoints.

    Each valid ankle is projected onto the plane ``z = anchor_height_m``
    (0 is the floor itself) and the results are averaged.

    Returns:
        ``(pos, ok)``; ``ok`` is False and ``pos`` is NaN when no ankle is
        valid or a valid ankle lies above the horizon.
    """
    kp2d = np.asarray(kp2d, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    nan = np.array([np.nan, np.nan])
    idx = [j for j in (COCO_LEFT_ANKLE, COCO_RIGHT_ANKLE) if valid[j]]
    if not idx:
        return nan, False
    eff = cam.height_m - anchor_height_m
    if eff <= 0:
        raise ValueError("anchor height must be below the camera")
    pts = []
    for j in idx:
        u, v = kp2d[j, 0], kp2d[j, 1]
        try:
            theta, phi = pixel_to_bearing(u, v, cam)
            r = ground_range(phi, eff, eps)
        except ValueError:  # out of bounds or above horizon
            return nan, False
        pts.append((r * math.cos(theta), r * math.sin(theta)))
    return np.mean(np.asarray(pts), axis=0), True
