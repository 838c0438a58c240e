"""SE(3)/SO(3) arithmetic with explicit frames.

Conventions used across the package:

* vectors are columns; 6-vectors are stacked linear-first,
  twist = [v; w] and wrench = [f; m], so power is ``wrench @ twist``;
* a ``Transform`` labelled (base, target) maps target coordinates into
  base coordinates, i.e. it is H^base_target;
* frame labels are metadata only. They are compared at combination sites
  while ``__debug__`` is on and never branch the numerics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FrameMismatch(ValueError):
    pass


def skew(v) -> np.ndarray:
    """Hat operator: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def asy(M) -> np.ndarray:
    """Axial vector of the antisymmetric part of ``M``.

    Returns ``v`` with ``skew(v) == (M - M.T) / 2``.
    """
    M = np.asarray(M, dtype=float)
    return 0.5 * np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if abs(n - 1.0) > 1e-9:
        raise ValueError(f"rotation axis must be unit length, got |axis|={n:.6g}")
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R @ R.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


@dataclass(frozen=True)
class Transform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base: str = ""
    target: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))

    @classmethod
    def identity(cls, base: str = "", target: str = "") -> "Transform":
        return cls(np.eye(3), np.zeros(3), base, target)

    @classmethod
    def from_matrix(cls, H, base: str = "", target: str = "") -> "Transform":
        H = np.asarray(H, dtype=float)
        return cls(H[:3, :3].copy(), H[:3, 3].copy(), base, target)

    def matrix(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.translation
        return H

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation, self.target, self.base)

    def __matmul__(self, other: "Transform") -> "Transform":
        if __debug__ and self.target and other.base and self.target != other.base:
            raise FrameMismatch(f"cannot compose {self.base}<-{self.target} with {other.base}<-{other.target}")
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            self.base,
            other.target,
        )

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


@dataclass(frozen=True)
class Twist:
    angular: np.ndarray
    linear: np.ndarray
    frame: str = ""

    @classmethod
    def from_vector(cls, x, frame: str = "") -> "Twist":
        x = np.asarray(x, dtype=float)
        return cls(x[3:].copy(), x[:3].copy(), frame)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    moment: np.ndarray
    frame: str = ""

    @classmethod
    def zero(cls, frame: str = "") -> "Wrench":
        return cls(np.zeros(3), np.zeros(3), frame)

    @classmethod
    def from_vector(cls, x, frame: str = "") -> "Wrench":
        x = np.asarray(x, dtype=float)
        return cls(x[:3].copy(), x[3:].copy(), frame)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.moment])

    def __add__(self, other: "Wrench") -> "Wrench":
        if __debug__ and self.frame != other.frame:
            raise FrameMismatch(f"adding wrenches in frames {self.frame!r} and {other.frame!r}")
        return Wrench(self.force + other.force, self.moment + other.moment, self.frame)

    def __mul__(self, s: float) -> "Wrench":
        return Wrench(s * self.force, s * self.moment, self.frame)

    __rmul__ = __mul__

    def power(self, twist: Twist) -> float:
        if __debug__ and self.frame != twist.frame:
            raise FrameMismatch(f"pairing wrench in {self.frame!r} with twist in {twist.frame!r}")
        return float(self.force @ twist.linear + self.moment @ twist.angular)


def adjoint(T: Transform) -> np.ndarray:
    """6x6 map of twists from ``T.target`` to ``T.base`` coordinates."""
    R, p = T.rotation, T.translation
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[:3, 3:] = skew(p) @ R
    A[3:, 3:] = R
    return A


def adjoint_transpose(T: Transform) -> np.ndarray:
    """6x6 map of wrenches from ``T.target`` to ``T.base`` coordinates.

    This is Ad^T of the inverse transform; the moment picks up ``p x f``.
    """
    R, p = T.rotation, T.translation
    A = np.zeros((6, 6))
    A[:3, :3] = R
    A[3:, :3] = skew(p) @ R
    A[3:, 3:] = R
    return A


def transform_wrench(w: Wrench, T: Transform) -> Wrench:
    if __debug__ and T.target and w.frame and w.frame != T.target:
        raise FrameMismatch(f"wrench in {w.frame!r} cannot be mapped by {T.base}<-{T.target}")
    return Wrench.from_vector(adjoint_transpose(T) @ w.vector(), T.base)


def transform_twist(t: Twist, T: Transform) -> Twist:
    if __debug__ and T.target and t.frame and t.frame != T.target:
        raise FrameMismatch(f"twist in {t.frame!r} cannot be mapped by {T.base}<-{T.target}")
    return Twist.from_vector(adjoint(T) @ t.vector(), T.base)


def exp_se3(xi) -> Transform:
    """Exponential of a linear-first twist coordinate vector."""
    xi = np.asarray(xi, dtype=float)
    v, w = xi[:3], xi[3:]
    th = np.linalg.norm(w)
    W = skew(w)
    if th < 1e-12:
        return Transform(np.eye(3) + W, v.copy())
    a = np.sin(th) / th
    b = (1.0 - np.cos(th)) / th**2
    c = (th - np.sin(th)) / th**3
    R = np.eye(3) + a * W + b * (W @ W)
    V = np.eye(3) + b * W + c * (W @ W)
    return Transform(R, V @ v)
