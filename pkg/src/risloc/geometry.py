"""Coordinates, unit vectors and RIS element layouts.

Vectors are plain ``numpy`` arrays of shape ``(3,)``. Spherical coordinates
use azimuth ``theta`` measured from +x toward +y and elevation ``phi``
measured from the +z axis, so a surface lying in the z = 0 plane has its
broadside along +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateGeometry, ValidationError

TWO_PI = 2.0 * math.pi


def as_vec3(value, name="vector"):
    """Return ``value`` as a read-only float64 array of shape (3,).

    Raises:
        ValidationError: wrong shape or non-finite components.
    """
    arr = np.array(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name} must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite components: {arr}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Spherical:
    """Range / azimuth / elevation triple.

    ``theta`` is wrapped into [0, 2*pi) and ``phi`` clamped to [0, pi] on
    construction.
    """

    rho: float
    theta: float
    phi: float

    def __post_init__(self):
        for name in ("rho", "theta", "phi"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.rho < 0:
            raise ValidationError(f"rho must be >= 0, got {self.rho}")
        theta = math.fmod(self.theta, TWO_PI)
        if theta < 0:
            theta += TWO_PI
        if theta >= TWO_PI:
            theta = 0.0
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", min(max(float(self.phi), 0.0), math.pi))


def spherical_to_cartesian(s: Spherical) -> np.ndarray:
    sin_phi = math.sin(s.phi)
    return as_vec3(
        [
            s.rho * sin_phi * math.cos(s.theta),
            s.rho * sin_phi * math.sin(s.theta),
            s.rho * math.cos(s.phi),
        ]
    )


def cartesian_to_spherical(p) -> Spherical:
    """Inverse of :func:`spherical_to_cartesian`; the origin maps to (0, 0, 0)."""
    x, y, z = as_vec3(p)
    rho = math.sqrt(x * x + y * y + z * z)
    if rho == 0.0:
        return Spherical(0.0, 0.0, 0.0)
    phi = math.atan2(math.hypot(x, y), z)
    theta = math.atan2(y, x)
    return Spherical(rho, theta, phi)


def direction(theta, phi):
    """Unit vectors for arrays of azimuth/elevation, shape ``(..., 3)``."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    sp = np.sin(phi)
    return np.stack([sp * np.cos(theta), sp * np.sin(theta), np.cos(phi) + 0 * theta], axis=-1)


def unit_vector_to(p, origin) -> np.ndarray:
    """Unit vector pointing from ``origin`` toward ``p``."""
    d = as_vec3(p) - as_vec3(origin)
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise DegenerateGeometry("unit vector between coincident points")
    return as_vec3(d / n)


def unit_vector_jacobian(p, origin) -> np.ndarray:
    """``d u / d p`` for ``u = unit_vector_to(p, origin)``: ``(I - u u^T) / ||p - origin||``."""
    d = as_vec3(p) - as_vec3(origin)
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise DegenerateGeometry("unit vector between coincident points")
    u = d / n
    return (np.eye(3) - np.outer(u, u)) / n


@dataclass(frozen=True, eq=False)
class RisArray:
    """Element positions of a reconfigurable surface.

    Attributes:
        elements: ``(M, 3)`` element coordinates in meters.
        reference: reference point (the centroid for :func:`build_upa`).
    """

    elements: np.ndarray
    reference: np.ndarray = field(default=None)

    def __post_init__(self):
        el = np.array(self.elements, dtype=np.float64)
        if el.ndim != 2 or el.shape[1] != 3 or el.shape[0] < 1:
            raise ValidationError(f"elements must be (M, 3) with M >= 1, got {el.shape}")
        if not np.all(np.isfinite(el)):
            raise ValidationError("element positions must be finite")
        if len(np.unique(el, axis=0)) != len(el):
            raise ValidationError("element positions must be distinct")
        el.setflags(write=False)
        ref = el.mean(axis=0) if self.reference is None else self.reference
        object.__setattr__(self, "elements", el)
        object.__setattr__(self, "reference", as_vec3(ref, "reference"))

    @property
    def element_count(self) -> int:
        return self.elements.shape[0]

    @cached_property
    def offsets(self) -> np.ndarray:
        """``p_m - p_r`` for every element, shape ``(M, 3)``."""
        return self.elements - self.reference

    @cached_property
    def radii(self) -> np.ndarray:
        """In-plane distances ``q_m = ||p_m - p_r||``."""
        return np.linalg.norm(self.offsets, axis=1)

    @cached_property
    def azimuths(self) -> np.ndarray:
        """Element azimuths ``psi_m`` about the reference point."""
        return np.arctan2(self.offsets[:, 1], self.offsets[:, 0])

    def min_distance(self, p) -> float:
        """Smallest element-to-``p`` distance."""
        return float(np.min(np.linalg.norm(self.elements - as_vec3(p), axis=1)))


def build_upa(rows: int, cols: int, spacing: float) -> RisArray:
    """Uniform planar array in the z = 0 plane, centred on the origin.

    Elements are ordered row-major: the row index runs along x, the column
    index along y, and the column index varies fastest.
    """
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise ValidationError(f"rows and cols must be positive integers, got {rows}x{cols}")
    if not (spacing > 0 and math.isfinite(spacing)):
        raise ValidationError(f"spacing must be positive, got {spacing}")
    xs = (np.arange(rows) - (rows - 1) / 2.0) * spacing
    ys = (np.arange(cols) - (cols - 1) / 2.0) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    el = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    return RisArray(el, np.zeros(3))
