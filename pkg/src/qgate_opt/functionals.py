"""Final-time functionals on the 4x4 logical gate and their co-state
boundary conditions.

Gate matrices follow ``U[l, k] = <l|phi_k(T)>``. A co-state boundary is
returned as a 4x4 coefficient matrix whose column ``k`` holds the logical
components of ``|chi_k(T)>``; :meth:`TransmonModel.embed` maps it into the
full Hilbert space.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "T0_DEFAULT",
    "FunctionalValue",
    "diagonal_overlaps",
    "check_unitary",
    "eval_sm",
    "eval_geo",
    "eval_splx",
    "costate_boundary_sm",
    "costate_boundary_geo",
    "GateFunctional",
    "sm_functional",
    "geo_functional",
]

T0_DEFAULT = 200.0


@dataclass(frozen=True)
class FunctionalValue:
    total: float
    parts: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.total)


def diagonal_overlaps(U) -> np.ndarray:
    """``(tau_00, tau_01, tau_10, tau_11)``."""
    U = np.asarray(U)
    if U.shape != (4, 4):
        raise ValueError(f"gate must be 4x4, got shape {U.shape}")
    return np.diag(U).astype(np.complex128)


def check_unitary(O, atol=1e-8):
    O = np.asarray(O, dtype=np.complex128)
    if O.shape != (4, 4):
        raise ValueError(f"target must be 4x4, got shape {O.shape}")
    err = np.max(np.abs(O.conj().T @ O - np.eye(4)))
    if err > atol:
        raise ValueError(f"target gate is not unitary (max deviation {err:.3g})")
    return O


def _embed(coeffs, basis):
    return coeffs if basis is None else np.asarray(basis) @ coeffs


def eval_sm(U, target) -> FunctionalValue:
    """``1 - |tr(O^+ U)|^2 / 16``."""
    O = check_unitary(target)
    z = np.trace(O.conj().T @ np.asarray(U))
    value = 1.0 - abs(z) ** 2 / 16.0
    return FunctionalValue(value, {"J_sm": value})


def _geo_parts(U):
    t00, t01, t10, t11 = diagonal_overlaps(U)
    j_diag = 4.0 - float(np.sum(np.abs([t00, t01, t10, t11]) ** 2))
    j_gamma = 2.0 + 2.0 * float((t00 * np.conj(t01) * np.conj(t10) * t11).real)
    return j_diag, j_gamma


def eval_geo(U) -> FunctionalValue:
    """``(J_diag + J_gamma) / 8``; zero iff U is a diagonal perfect entangler."""
    j_diag, j_gamma = _geo_parts(U)
    return FunctionalValue((j_diag + j_gamma) / 8.0, {"J_diag": j_diag, "J_gamma": j_gamma})


def eval_splx(U, T, T0=T0_DEFAULT) -> FunctionalValue:
    """``J_diag + J_gamma + T/T0``. Not a distance: stays near 1 at the optimum."""
    if not T > 0:
        raise ValueError("gate duration must be positive")
    j_diag, j_gamma = _geo_parts(U)
    duration = T / T0
    return FunctionalValue(
        j_diag + j_gamma + duration,
        {"J_diag": j_diag, "J_gamma": j_gamma, "duration": duration},
    )


def costate_boundary_geo(U, basis=None) -> np.ndarray:
    """Boundary co-states for the geometric-phase-gate functional.

    ``chi_00 = (tau_00 - tau_01 tau_10 tau_11^*) |00>`` and cyclic, which is
    ``-d(J_diag + J_gamma)/d<phi_k|``, i.e. eight times the derivative of
    :func:`eval_geo`.
    """
    t00, t01, t10, t11 = diagonal_overlaps(U)
    c = np.conj
    coeffs = np.diag([
        t00 - t01 * t10 * c(t11),
        t01 - t00 * c(t10) * t11,
        t10 - t00 * c(t01) * t11,
        t11 - c(t00) * t01 * t10,
    ])
    return _embed(coeffs, basis)


def costate_boundary_sm(U, target, basis=None) -> np.ndarray:
    """``chi_k = tr(O^+ U)/16 * O|k>``, equal to ``-dJ_sm/d<phi_k|``."""
    O = check_unitary(target)
    z = np.trace(O.conj().T @ np.asarray(U))
    return _embed(z / 16.0 * O, basis)


class GateFunctional:
    """A final-time functional together with its co-state ``-dJ/d<phi_k|``.

    ``convex`` tells the optimizer whether the second-order term is needed.
    """

    def __init__(self, name, value, costate, convex, target=None):
        self.name = name
        self._value = value
        self._costate = costate
        self.convex = convex
        self.target = target

    def __call__(self, U) -> FunctionalValue:
        return self._value(U)

    def costate(self, U) -> np.ndarray:
        return self._costate(U)

    def __repr__(self):
        return f"GateFunctional({self.name!r})"


def sm_functional(target) -> GateFunctional:
    O = check_unitary(target)
    return GateFunctional(
        "sm",
        lambda U: eval_sm(U, O),
        lambda U: costate_boundary_sm(U, O),
        convex=True,
        target=O,
    )


def geo_functional() -> GateFunctional:
    return GateFunctional(
        "geo",
        eval_geo,
        lambda U: costate_boundary_geo(U) / 8.0,
        convex=False,
    )
