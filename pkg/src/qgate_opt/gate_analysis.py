"""Quality measures for (near-)diagonal two-qubit gates."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .functionals import check_unitary, diagonal_overlaps

__all__ = [
    "GateMetrics",
    "nonlocal_phase",
    "diagonal_pe",
    "closest_diagonal_pe",
    "pe_distance",
    "average_gate_fidelity",
    "population_loss",
    "gate_metrics",
    "write_metrics",
]


def _fold(gamma):
    """Fold an angle into (-2 pi, 2 pi]."""
    g = np.fmod(gamma, 4 * np.pi)
    if g > 2 * np.pi:
        g -= 4 * np.pi
    elif g <= -2 * np.pi:
        g += 4 * np.pi
    return float(g)


def nonlocal_phase(U, tiny=1e-12):
    """Non-local phase ``gamma = phi_00 - phi_01 - phi_10 + phi_11`` and the
    concurrence ``C = |sin(gamma/2)|`` reachable with a diagonal gate."""
    tau = diagonal_overlaps(U)
    if np.min(np.abs(tau)) <= tiny:
        raise ValueError("diagonal element vanishes; phase undefined")
    phi = np.angle(tau)
    gamma = _fold(phi[0] - phi[1] - phi[2] + phi[3])
    return gamma, abs(np.sin(gamma / 2.0))


def diagonal_pe(phi00, phi01, phi10) -> np.ndarray:
    """Diagonal perfect entangler with the fourth phase fixed by gamma = pi."""
    phi11 = np.pi + phi01 + phi10 - phi00
    return np.diag(np.exp(1j * np.array([phi00, phi01, phi10, phi11])))


def pe_distance(U, phases) -> float:
    """Frobenius distance between ``U`` and ``diagonal_pe(*phases)``."""
    return float(np.linalg.norm(diagonal_pe(*phases) - np.asarray(U)))


def closest_diagonal_pe(U, n_starts=8, rng=None, return_phases=False):
    """Diagonal perfect entangler closest to ``U`` in Frobenius norm.

    Only the diagonal of ``U`` matters: with ``tau_k = r_k e^{i theta_k}`` the
    squared distance is a constant minus ``2 sum_k r_k cos(phi_k - theta_k)``.
    The three free phases are found by BFGS from the seed
    ``phi_k = theta_k`` and from the corners ``theta + {0, pi}^3`` shifted by
    a fixed asymmetric offset. Without the shift, a gate with symmetric
    phases (the identity, for example) puts every corner on a saddle point
    where the gradient vanishes. ``rng`` adds further random starts.
    """
    tau = diagonal_overlaps(U)
    r, theta = np.abs(tau), np.angle(tau)

    def neg_overlap(p):
        phi = np.array([p[0], p[1], p[2], np.pi + p[1] + p[2] - p[0]])
        d = phi - theta
        f = -np.sum(r * np.cos(d))
        s = r * np.sin(d)
        grad = np.array([s[0] - s[3], s[1] + s[3], s[2] + s[3]])
        return f, grad

    offset = np.array([0.3, -0.5, 0.7])
    corners = [theta[:3] + offset + np.array(c) for c in itertools.product((0.0, np.pi), repeat=3)]
    starts = [theta[:3]] + corners[:max(0, n_starts)]
    if rng is not None:
        rng = np.random.default_rng(rng)
        starts += list(rng.uniform(-np.pi, np.pi, size=(n_starts, 3)))
    best = None
    for x0 in starts:
        res = minimize(neg_overlap, x0, jac=True, method="BFGS", options={"gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    phases = np.angle(np.exp(1j * best.x))
    O = diagonal_pe(*phases)
    return (O, phases) if return_phases else O


def average_gate_fidelity(U, O):
    """``F_avg = (|tr(O^+ U)|^2 + tr(O^+ U U^+ O)) / 20`` and ``1 - F_avg``.

    ``U`` may be non-unitary (population loss lowers both terms).
    """
    O = check_unitary(O)
    M = O.conj().T @ np.asarray(U)
    F = (abs(np.trace(M)) ** 2 + np.trace(M @ M.conj().T).real) / 20.0
    return float(F), float(1.0 - F)


def population_loss(final_states, basis=None) -> float:
    """``1 - (1/4) sum_k ||P_L phi_k(T)||^2``.

    ``final_states`` is either the ``(dim, 4)`` block of propagated logical
    states (with ``basis`` the ``(dim, 4)`` logical basis) or directly the
    4x4 gate matrix.
    """
    U = np.asarray(final_states) if basis is None else np.asarray(basis).conj().T @ final_states
    return float(1.0 - np.sum(np.abs(U) ** 2) / 4.0)


@dataclass(frozen=True)
class GateMetrics:
    gamma: float
    concurrence: float
    eps_C: float
    eps_pop: float
    eps_avg: float
    closest_target: np.ndarray
    phases: tuple
    target_phases: tuple

    @property
    def weyl_c1(self) -> float:
        """First Weyl-chamber coordinate of a diagonal gate (c2 = c3 = 0)."""
        return float(np.mod(self.gamma / 2.0, np.pi))

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "concurrence": self.concurrence,
            "eps_C": self.eps_C,
            "eps_pop": self.eps_pop,
            "eps_avg": self.eps_avg,
            "phases": list(self.phases),
            "target_phases": list(self.target_phases),
        }


def gate_metrics(U, target=None, rng=None) -> GateMetrics:
    """All metrics of a projected gate.

    The gate error is taken w.r.t. ``target`` if given, else w.r.t. the
    closest diagonal perfect entangler of ``U``.
    """
    U = np.asarray(U, dtype=np.complex128)
    gamma, C = nonlocal_phase(U)
    if target is None:
        target = closest_diagonal_pe(U, rng=rng)
    target = check_unitary(target)
    _, eps_avg = average_gate_fidelity(U, target)
    return GateMetrics(
        gamma=gamma,
        concurrence=float(C),
        eps_C=float(1.0 - C),
        eps_pop=population_loss(U),
        eps_avg=eps_avg,
        closest_target=target,
        phases=tuple(float(p) for p in np.angle(np.diag(U))),
        target_phases=tuple(float(p) for p in np.angle(np.diag(target))),
    )


def write_metrics(metrics: GateMetrics, path, **extra):
    data = metrics.to_dict()
    data.update(extra)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
