"""Two transmons coupled through a shared cavity, in the frame of the drive.

The Hamiltonian, with all modes rotating at the drive frequency, reads

    H(t) = sum_q [ (w_q - w_d) n_q + alpha_q/2 b_q^+ b_q^+ b_q b_q
                   + g_q (b_q^+ a + b_q a^+) ]
           + (w_c - w_d) n_c + eps*(t) a + eps(t) a^+

Frequencies are given in linear units (GHz / MHz) and converted to angular
frequencies (rad/ns) exactly once, when operators are built. The product basis
is |q1> x |q2> x |n_cav> with the cavity index running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "TWO_PI",
    "MHZ",
    "SystemParams",
    "TransmonModel",
    "basis_index",
    "build_model",
    "build_drift_hamiltonian",
    "build_drive_operators",
    "ladder_operators",
    "logical_basis",
    "expectation_series",
]

TWO_PI = 2.0 * np.pi
#: one MHz expressed in GHz (= 1/ns)
MHZ = 1.0e-3

ENVELOPE_FACTORS = {"rwa": 0.5, "direct": 1.0}


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the two-transmon/cavity system.

    Defaults are the values used for the geometric phase gate: cavity at
    8.10 GHz, qubits at 6.85 and 7.25 GHz, drive at 8.14 GHz, anharmonicities
    of -300 MHz and couplings of 70 MHz, truncated at 6 qubit and 70 cavity
    levels.

    ``envelope`` selects how the peak amplitude of the lab-frame pulse
    ``E0 sin^2(pi t/T) cos(w_d t)`` maps onto the rotating-frame envelope:
    ``"rwa"`` keeps the co-rotating half (factor 1/2), ``"direct"`` uses E0
    as the envelope amplitude. ``logical_basis`` chooses between the dressed
    eigenstates of the drift Hamiltonian and the bare product states
    |q1 q2 0> as the computational subspace.
    """

    cavity_freq: float = 8.10
    qubit1_freq: float = 6.85
    qubit2_freq: float = 7.25
    drive_freq: float = 8.14
    anharmonicity1: float = -300.0
    anharmonicity2: float = -300.0
    coupling1: float = 70.0
    coupling2: float = 70.0
    qubit_levels: int = 6
    cavity_levels: int = 70
    envelope: str = "rwa"
    logical_basis: str = "dressed"

    def __post_init__(self):
        for name in ("qubit_levels", "cavity_levels"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {value!r}")
        for name in ("cavity_freq", "qubit1_freq", "qubit2_freq", "drive_freq"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive (GHz), got {getattr(self, name)!r}")
        if self.envelope not in ENVELOPE_FACTORS:
            raise ValueError(
                f"envelope must be one of {sorted(ENVELOPE_FACTORS)}, got {self.envelope!r}"
            )
        if self.logical_basis not in ("dressed", "bare"):
            raise ValueError(
                f"logical_basis must be 'dressed' or 'bare', got {self.logical_basis!r}"
            )

    @property
    def dim(self) -> int:
        return self.qubit_levels**2 * self.cavity_levels

    @property
    def envelope_factor(self) -> float:
        return ENVELOPE_FACTORS[self.envelope]

    def replace(self, **kwargs) -> "SystemParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(kwargs)
        return SystemParams(**values)


def basis_index(params: SystemParams, q1: int, q2: int, n: int) -> int:
    """Position of the product state |q1, q2, n> in the state vector."""
    nq, nc = params.qubit_levels, params.cavity_levels
    if not (0 <= q1 < nq and 0 <= q2 < nq and 0 <= n < nc):
        raise IndexError(f"|{q1},{q2},{n}> outside the truncated space")
    return (q1 * nq + q2) * nc + n


def _destroy(n):
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, format="csr")


def ladder_operators(params: SystemParams):
    """Annihilation operators ``(b1, b2, a)`` on the full product space."""
    nq, nc = params.qubit_levels, params.cavity_levels
    if nq < 2 or nc < 2:
        raise ValueError("truncation levels must be >= 2")
    iq = sp.identity(nq, format="csr")
    ic = sp.identity(nc, format="csr")
    b1 = sp.kron(sp.kron(_destroy(nq), iq), ic, format="csr")
    b2 = sp.kron(sp.kron(iq, _destroy(nq)), ic, format="csr")
    a = sp.kron(sp.kron(iq, iq), _destroy(nc), format="csr")
    return b1, b2, a


def build_drift_hamiltonian(params: SystemParams) -> sp.csr_matrix:
    """Drift Hamiltonian H0 in rad/ns, in the frame rotating at the drive."""
    b1, b2, a = ladder_operators(params)
    wd = params.drive_freq
    h = (params.cavity_freq - wd) * (a.T @ a)
    qubits = (
        (b1, params.qubit1_freq, params.anharmonicity1, params.coupling1),
        (b2, params.qubit2_freq, params.anharmonicity2, params.coupling2),
    )
    for b, wq, alpha, g in qubits:
        bd = b.T
        h = h + (wq - wd) * (bd @ b)
        h = h + 0.5 * alpha * MHZ * (bd @ bd @ b @ b)
        h = h + g * MHZ * (bd @ a + b @ a.T)
    h = TWO_PI * h
    h = sp.csr_matrix(h, dtype=np.complex128)
    h.sort_indices()
    return h


def build_drive_operators(params: SystemParams):
    """Return ``(H_re, H_im) = (a + a^+, i(a^+ - a))``.

    The control enters as ``2 pi [Re eps H_re + Im eps H_im]``, which equals
    ``2 pi (eps* a + eps a^+)``.
    """
    _, _, a = ladder_operators(params)
    h_re = sp.csr_matrix(a + a.T, dtype=np.complex128)
    h_im = sp.csr_matrix(1j * (a.T - a), dtype=np.complex128)
    h_re.sort_indices()
    h_im.sort_indices()
    return h_re, h_im


def _excitation_numbers(params: SystemParams):
    nq, nc = params.qubit_levels, params.cavity_levels
    q1, q2, n = np.meshgrid(np.arange(nq), np.arange(nq), np.arange(nc), indexing="ij")
    return (q1 + q2 + n).ravel()


def _excitation_blocks(params: SystemParams, h0):
    """Yield ``(indices, eigenvalues, eigenvectors)`` per excitation number.

    The drift Hamiltonian conserves the total number of excitations, so it is
    block diagonal and each block can be diagonalized on its own.
    """
    exc = _excitation_numbers(params)
    for n_exc in np.unique(exc):
        idx = np.nonzero(exc == n_exc)[0]
        block = h0[idx][:, idx].toarray()
        evals, evecs = np.linalg.eigh(block)
        yield idx, evals, evecs


LOGICAL_LABELS = ("00", "01", "10", "11")


def logical_basis(params: SystemParams, h0=None):
    """The four logical states as columns of a dense ``(dim, 4)`` array.

    For ``logical_basis="dressed"`` each column is the eigenstate of H0 with
    the largest overlap with the bare state |q1 q2 0>, phased so that this
    overlap is real and positive. Also returns the corresponding drift
    energies (rad/ns).
    """
    if h0 is None:
        h0 = build_drift_hamiltonian(params)
    bare = [basis_index(params, int(l[0]), int(l[1]), 0) for l in LOGICAL_LABELS]
    states = np.zeros((params.dim, 4), dtype=np.complex128)
    energies = np.zeros(4)
    if params.logical_basis == "bare":
        for k, i in enumerate(bare):
            states[i, k] = 1.0
            energies[k] = h0[i, i].real
        return states, energies
    exc = _excitation_numbers(params)
    for k, i in enumerate(bare):
        idx = np.nonzero(exc == exc[i])[0]
        block = h0[idx][:, idx].toarray()
        evals, evecs = np.linalg.eigh(block)
        pos = int(np.nonzero(idx == i)[0][0])
        j = int(np.argmax(np.abs(evecs[pos, :])))
        vec = evecs[:, j]
        vec = vec * np.exp(-1j * np.angle(vec[pos]))
        states[idx, k] = vec
        energies[k] = evals[j]
    return states, energies


def drift_spectrum_bounds(params: SystemParams, h0=None):
    """Exact smallest and largest eigenvalue of H0 (rad/ns)."""
    if h0 is None:
        h0 = build_drift_hamiltonian(params)
    lo, hi = np.inf, -np.inf
    for _, evals, _ in _excitation_blocks(params, h0):
        lo = min(lo, evals[0])
        hi = max(hi, evals[-1])
    return float(lo), float(hi)


@dataclass(frozen=True)
class TransmonModel:
    """All operators needed to propagate and optimize, built once."""

    params: SystemParams
    h0: sp.csr_matrix = field(repr=False)
    h_re: sp.csr_matrix = field(repr=False)
    h_im: sp.csr_matrix = field(repr=False)
    logical: np.ndarray = field(repr=False)
    logical_energies: np.ndarray = field(repr=False)
    h0_bounds: tuple

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def drive_ops(self):
        return (self.h_re, self.h_im)

    @cached_property
    def number_operators(self):
        """Number operators ``{'cav', 'q1', 'q2'}``."""
        b1, b2, a = ladder_operators(self.params)
        return {
            "cav": sp.csr_matrix(a.T @ a, dtype=np.complex128),
            "q1": sp.csr_matrix(b1.T @ b1, dtype=np.complex128),
            "q2": sp.csr_matrix(b2.T @ b2, dtype=np.complex128),
        }

    def gate(self, final_states) -> np.ndarray:
        """Project four propagated states onto the logical subspace."""
        return self.logical.conj().T @ np.asarray(final_states)

    def embed(self, coeffs) -> np.ndarray:
        """Map logical-space coefficient columns into the full space."""
        return self.logical @ np.asarray(coeffs)


def build_model(params: SystemParams | None = None) -> TransmonModel:
    if params is None:
        params = SystemParams()
    h0 = build_drift_hamiltonian(params)
    h_re, h_im = build_drive_operators(params)
    states, energies = logical_basis(params, h0)
    for m in (states, energies):
        m.setflags(write=False)
    return TransmonModel(
        params=params,
        h0=h0,
        h_re=h_re,
        h_im=h_im,
        logical=states,
        logical_energies=energies,
        h0_bounds=drift_spectrum_bounds(params, h0),
    )


def expectation_series(states, observable, projector_state=None):
    """Mean and standard deviation of ``observable`` along a trajectory.

    Parameters
    ----------
    states : array, shape (n_t, dim)
        State vectors at successive times.
    observable : sparse or dense (dim, dim) Hermitian matrix
    projector_state : array (dim,), optional
        If given, also return the population ``|<s|psi(t)>|^2``.

    Returns
    -------
    mean, std : arrays of shape (n_t,)
    pop : array of shape (n_t,), only if ``projector_state`` is given
    """
    states = np.atleast_2d(np.asarray(states))
    if states.shape[1] != observable.shape[0]:
        raise ValueError(
            f"state dimension {states.shape[1]} does not match observable "
            f"dimension {observable.shape[0]}"
        )
    o_psi = (observable @ states.T).T
    mean = np.einsum("ti,ti->t", states.conj(), o_psi).real
    second = np.einsum("ti,ti->t", o_psi.conj(), o_psi).real
    std = np.sqrt(np.clip(second - mean**2, 0.0, None))
    if projector_state is None:
        return mean, std
    pop = np.abs(states @ np.asarray(projector_state).conj()) ** 2
    return mean, std, pop
