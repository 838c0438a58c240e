"""Variable spatial spring between the end-effector and its desired frame.

The spring is parametrised by translational, rotational and coupling
stiffnesses. Forces and energy are written in terms of co-stiffnesses
``G = tr(K)/2 I - K``; the energy scale ``lam`` multiplies all three
co-stiffnesses and is always applied to the unscaled baseline.

Displacement convention: ``R = R^d_EE`` and ``p = p^d_EE`` describe the
end-effector relative to the desired frame. The wrench returned by
:func:`elastic_wrench` is expressed in the end-effector frame and equals
minus the gradient of :func:`potential_energy` with respect to a body
twist displacement of the end-effector.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .lie import Transform, Wrench, asy, skew, transform_wrench


def co_stiffness(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    return 0.5 * np.trace(K) * np.eye(3) - K


def _as_matrix(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.shape == (3,):
        return np.diag(K)
    if K.shape != (3, 3):
        raise ValueError(f"stiffness must be a 3-vector (diagonal) or 3x3, got shape {K.shape}")
    if not np.allclose(K, K.T, atol=1e-12):
        raise ValueError("stiffness matrix must be symmetric")
    return K


@dataclass(frozen=True)
class StiffnessSet:
    K_t: np.ndarray
    K_r: np.ndarray
    K_c: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    scale: float = 1.0

    def __post_init__(self):
        for name in ("K_t", "K_r", "K_c"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError(f"energy scale must lie in [0, 1], got {self.scale}")
        object.__setattr__(self, "_baseline", tuple(co_stiffness(K) for K in (self.K_t, self.K_r, self.K_c)))
        self._set_scale(float(self.scale))

    def _set_scale(self, s: float) -> None:
        object.__setattr__(self, "scale", s)
        for name, G in zip(("G_t", "G_r", "G_c"), self._baseline):
            object.__setattr__(self, name, s * G)

    @classmethod
    def diagonal(cls, translational, rotational, coupling=0.0) -> "StiffnessSet":
        def diag(x):
            return np.diag(np.broadcast_to(np.asarray(x, dtype=float), (3,)))

        return cls(diag(translational), diag(rotational), diag(coupling))


def apply_energy_scale(stiffness: StiffnessSet, lam: float) -> StiffnessSet:
    """Scale the co-stiffnesses by ``lam`` relative to the unscaled baseline."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"energy scale must lie in [0, 1], got {lam}")
    scaled = copy.copy(stiffness)
    scaled._set_scale(float(lam))
    return scaled


@dataclass(frozen=True)
class SpringState:
    current: Transform
    desired: Transform

    def relative(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(R^d_EE, p^d_EE)``."""
        H = self.desired.inverse() @ self.current
        return H.rotation, H.translation


def elastic_wrench(state: SpringState, stiffness: StiffnessSet) -> Wrench:
    R, p = state.relative()
    Rt = R.T
    P = skew(p)
    G_t, G_r, G_c = stiffness.G_t, stiffness.G_r, stiffness.G_c
    f = -Rt @ asy(G_t @ P) - asy(G_t @ Rt @ P @ R) - 2.0 * asy(G_c @ R)
    m = -2.0 * asy(G_r @ R) - asy(G_t @ Rt @ P @ P @ R) - 2.0 * asy(G_c @ P @ R)
    return Wrench(f, m, state.current.target or "EE")


def wrench_to_base(w_ee: Wrench, current: Transform) -> Wrench:
    return transform_wrench(w_ee, current)


def potential_energy(state: SpringState, stiffness: StiffnessSet) -> float:
    R, p = state.relative()
    P = skew(p)
    G_t, G_r, G_c = stiffness.G_t, stiffness.G_r, stiffness.G_c
    u_t = -0.25 * np.trace(P @ G_t @ P) - 0.25 * np.trace(P @ R @ G_t @ R.T @ P)
    u_r = np.trace(G_r @ (np.eye(3) - R))
    u_c = np.trace(G_c @ R.T @ P)
    return float(u_t + u_r + u_c)
