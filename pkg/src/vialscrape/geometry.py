"""Exact geometric queries against an axis-aligned cylindrical vial.

The vial is modelled as a vertical hollow cylinder with a flat base and an
open top.  The tool tip is a point; the inner wall acts as a hard constraint:
attempted positions beyond the wall radius are projected back onto the wall
surface and the overshoot is reported as penetration depth, from which the
environment derives a spring-like contact force.

All lengths are in meters.  Positions are plain float64 numpy arrays of
shape (3,); the helper :func:`vec3` builds one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Cylinder", "ContactInfo", "vec3", "radial_distance", "resolve_wall"]


def vec3(x: float, y: float, z: float) -> np.ndarray:
    """A 3-D point/vector as a float64 array."""
    return np.array([x, y, z], dtype=np.float64)


@dataclass(frozen=True)
class Cylinder:
    """A vertical hollow cylinder: the simplified vial.

    ``center_xy`` locates the axis in the horizontal plane, ``inner_radius``
    is the radius of the inner wall, and the wall spans ``base_z`` (flat
    bottom) to ``rim_z`` (open top).
    """

    center_xy: tuple[float, float] = (0.0, 0.0)
    inner_radius: float = 0.011
    base_z: float = 0.0
    rim_z: float = 0.055

    def __post_init__(self) -> None:
        if not self.inner_radius > 0.0:
            raise ValueError(f"inner_radius must be > 0, got {self.inner_radius}")
        if not self.rim_z > self.base_z:
            raise ValueError(
                f"rim_z ({self.rim_z}) must exceed base_z ({self.base_z})"
            )

    def translated(self, offset_xy: np.ndarray) -> "Cylinder":
        """The same cylinder with its axis shifted horizontally."""
        return Cylinder(
            center_xy=(self.center_xy[0] + float(offset_xy[0]),
                       self.center_xy[1] + float(offset_xy[1])),
            inner_radius=self.inner_radius,
            base_z=self.base_z,
            rim_z=self.rim_z,
        )


@dataclass(frozen=True)
class ContactInfo:
    """Result of classifying a resolved tool position against the vial.

    ``normal`` is the unit inward wall normal (from wall toward the axis)
    when ``in_contact`` holds, else the zero vector.  ``penetration`` is the
    radial overshoot of the *attempted* position beyond the wall, and
    ``base_penetration`` the vertical overshoot below the base; both are 0
    for unconstrained positions.
    """

    in_contact: bool
    normal: np.ndarray
    penetration: float
    base_penetration: float = 0.0


def radial_distance(p: np.ndarray, vial: Cylinder) -> float:
    """Horizontal (xy-plane) Euclidean distance from ``p`` to the vial axis."""
    dx = float(p[0]) - vial.center_xy[0]
    dy = float(p[1]) - vial.center_xy[1]
    return math.sqrt(dx * dx + dy * dy)


def resolve_wall(
    p_attempted: np.ndarray, vial: Cylinder, band: float
) -> tuple[np.ndarray, ContactInfo]:
    """Project an attempted tool position into the vial and classify contact.

    Positions radially beyond the inner wall are pulled straight back onto
    the wall surface (hard constraint); positions below the base, while
    inside the vial footprint, are clamped up to the base plane.  The point
    counts as in contact when the resolved position lies within ``band`` of
    the wall surface and below the rim.

    Returns the resolved position and a :class:`ContactInfo`.  Idempotent:
    resolving an already-resolved point changes nothing.
    """
    if not band > 0.0:
        raise ValueError(f"band must be > 0, got {band}")

    cx, cy = vial.center_xy
    x, y, z = float(p_attempted[0]), float(p_attempted[1]), float(p_attempted[2])
    dx, dy = x - cx, y - cy
    r = math.sqrt(dx * dx + dy * dy)

    penetration = 0.0
    if r > vial.inner_radius:
        penetration = r - vial.inner_radius
        scale = vial.inner_radius / r
        x = cx + dx * scale
        y = cy + dy * scale
        # A later call re-derives dx from the stored absolute x, and that
        # roundtrip quantizes at ulp(x), which is coarser than ulp(r) once
        # the center sits away from the origin.  Walk the absolute
        # coordinates toward the axis one representable value at a time,
        # re-testing the exact derivation a second resolve performs, so a
        # resolved point is a bitwise fixed point.  Each pass moves x or y
        # (or exits with r = 0), so this terminates, in practice within a
        # couple of steps.
        while True:
            dx, dy = x - cx, y - cy
            r = math.sqrt(dx * dx + dy * dy)
            if r <= vial.inner_radius:
                break
            x = math.nextafter(x, cx)
            y = math.nextafter(y, cy)

    # After radial projection every point sits inside the footprint, so the
    # base plane always bounds z from below.
    base_penetration = 0.0
    if z < vial.base_z:
        base_penetration = vial.base_z - z
        z = vial.base_z

    wall_gap = vial.inner_radius - r
    in_contact = wall_gap <= band and z < vial.rim_z
    if in_contact and r > 0.0:
        normal = vec3(-dx / r, -dy / r, 0.0)
    else:
        # Degenerate on-axis case: no usable wall direction.
        in_contact = in_contact and r > 0.0
        normal = vec3(0.0, 0.0, 0.0)

    resolved = vec3(x, y, z)
    if not in_contact:
        # The contract ties reported penetration to actual wall contact;
        # an interior point carries none by definition.
        contact = ContactInfo(False, normal, penetration, base_penetration)
    else:
        contact = ContactInfo(True, normal, penetration, base_penetration)
    return resolved, contact
