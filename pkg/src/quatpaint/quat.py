"""Quaternion scalar and tensor algebra.

A quaternion q = w + x*i + y*j + z*k is stored as four doubles. Grids of
quaternions (images, feature maps, gradients) are stored planar: a single
float64 array of shape (4, C, H, W) whose leading axis holds the W, X, Y, Z
component planes. The planar layout is what lets quaternion convolution run
as a 4x4 block of real-plane convolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch


@dataclass(frozen=True)
class Quaternion:
    """A single quaternion w + x*i + y*j + z*k."""

    w: float
    x: float
    y: float
    z: float

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton(self, other)

    def __add__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w + other.w, self.x + other.x,
                          self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(self.w - other.w, self.x - other.x,
                          self.y - other.y, self.z - other.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)


def hamilton(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product p*q (non-commutative)."""
    return Quaternion(
        p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    )


def conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def modulus(q: Quaternion) -> float:
    return math.sqrt(q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z)


def is_pure(q: Quaternion) -> bool:
    return q.w == 0.0


class QTensor:
    """A C x H x W grid of quaternions stored as four real component planes.

    ``planes`` has shape (4, C, H, W), float64. Treated as a value type:
    arithmetic returns new tensors and nothing here mutates operands.
    """

    __slots__ = ("planes",)

    def __init__(self, planes: np.ndarray):
        planes = np.asarray(planes)
        if planes.dtype != np.float32:       # float32 is the opt-in speed lane
            planes = np.asarray(planes, dtype=np.float64)
        if planes.ndim != 4 or planes.shape[0] != 4:
            raise ValueError(f"expected planes of shape (4, C, H, W), got {planes.shape}")
        self.planes = planes

    # -- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "QTensor":
        return cls(np.zeros((4, channels, height, width)))

    @classmethod
    def from_planes(cls, w, x, y, z) -> "QTensor":
        return cls(np.stack([np.asarray(p, dtype=np.float64) for p in (w, x, y, z)]))

    @classmethod
    def pure(cls, x, y, z) -> "QTensor":
        """Build a pure-quaternion tensor (zero real plane) from three planes."""
        x = np.asarray(x, dtype=np.float64)
        return cls.from_planes(np.zeros_like(x), x, y, z)

    # -- shape ------------------------------------------------------------

    @property
    def channels(self) -> int:
        return self.planes.shape[1]

    @property
    def height(self) -> int:
        return self.planes.shape[2]

    @property
    def width(self) -> int:
        return self.planes.shape[3]

    @property
    def shape(self) -> tuple:
        """(channels, height, width) of the quaternion grid."""
        return self.planes.shape[1:]

    # component-plane views (W = real part)
    @property
    def w(self) -> np.ndarray:
        return self.planes[0]

    @property
    def x(self) -> np.ndarray:
        return self.planes[1]

    @property
    def y(self) -> np.ndarray:
        return self.planes[2]

    @property
    def z(self) -> np.ndarray:
        return self.planes[3]

    # -- element access ---------------------------------------------------

    def get(self, c: int, i: int, j: int) -> Quaternion:
        p = self.planes
        return Quaternion(p[0, c, i, j], p[1, c, i, j], p[2, c, i, j], p[3, c, i, j])

    def set(self, c: int, i: int, j: int, q: Quaternion) -> None:
        self.planes[:, c, i, j] = (q.w, q.x, q.y, q.z)

    # -- predicates ---------------------------------------------------------

    def is_pure(self, tol: float = 0.0) -> bool:
        """True iff the real plane is zero (within tol; exact by default)."""
        if tol == 0.0:
            return bool(np.all(self.planes[0] == 0.0))
        return bool(np.max(np.abs(self.planes[0])) <= tol)

    # -- arithmetic ---------------------------------------------------------

    def _check_same_shape(self, other: "QTensor", what: str) -> None:
        if self.planes.shape != other.planes.shape:
            raise ShapeMismatch(what, self.planes.shape, other.planes.shape)

    def __add__(self, other: "QTensor") -> "QTensor":
        self._check_same_shape(other, "QTensor add")
        return QTensor(self.planes + other.planes)

    def __sub__(self, other: "QTensor") -> "QTensor":
        self._check_same_shape(other, "QTensor sub")
        return QTensor(self.planes - other.planes)

    def scale(self, s: float) -> "QTensor":
        return QTensor(self.planes * float(s))

    def copy(self) -> "QTensor":
        return QTensor(self.planes.copy())

    def __repr__(self) -> str:
        return f"QTensor(channels={self.channels}, height={self.height}, width={self.width})"


def frobenius_norm_sq(a: QTensor) -> float:
    """Sum over all entries of the squared quaternion modulus."""
    return float(np.sum(a.planes * a.planes))
