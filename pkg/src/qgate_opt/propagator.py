"""Time propagation for piecewise-constant controls.

Each interval applies ``exp(-i H dt)`` to a block of state vectors through a
Chebyshev expansion of the exponential, so no dense matrix exponential is
ever formed. The expansion is truncated once the tail of the Bessel
coefficients drops below ``tol``, which bounds the per-step error in norm.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import jv

from .system import MHZ, TWO_PI

__all__ = [
    "FIELD_SCALE",
    "PropagationError",
    "ChebyshevStepper",
    "TrajectorySet",
    "propagate_forward",
    "propagate_backward",
    "propagate",
    "n_threads",
]

#: rad/ns per MHz of control amplitude
FIELD_SCALE = TWO_PI * MHZ


class PropagationError(RuntimeError):
    pass


def n_threads() -> int:
    """Thread cap from ``QGATE_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("QGATE_THREADS", "1")))
    except ValueError:
        return 1


def _gershgorin(m):
    m = sp.csr_matrix(m)
    diag = m.diagonal().real
    off = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(m.diagonal())
    return float(np.min(diag - off)), float(np.max(diag + off))


def _row_norm(m):
    return float(np.max(np.asarray(abs(sp.csr_matrix(m)).sum(axis=1)))) if m.nnz else 0.0


def chebyshev_coefficients(alpha, tol=1e-14, max_order=4000):
    """Bessel coefficients ``J_k(alpha)`` up to the order where the tail
    ``2 sum_{j>k} |J_j|`` falls below ``tol``."""
    k_max = int(alpha + 40 + 10 * np.sqrt(alpha + 1))
    coeffs = jv(np.arange(k_max + 1), alpha)
    tail = 2 * np.cumsum(np.abs(coeffs[::-1]))[::-1]
    # tail[k] = 2 sum_{j>=k} |J_j|
    ok = np.nonzero(tail < tol)[0]
    order = int(ok[0]) if ok.size else k_max + 1
    if order > max_order:
        raise PropagationError(
            f"Chebyshev expansion requires order {order}, allowed {max_order} "
            f"(spectral radius x dt = {alpha:.3g}); reduce dt"
        )
    return coeffs[: max(order, 2)]


class ChebyshevStepper:
    """Single-interval propagator for ``H = H0 + c (x H_re + y H_im)``.

    Parameters
    ----------
    h0 : sparse (dim, dim)
        Drift Hamiltonian in rad/ns.
    drive_ops : pair of sparse (dim, dim)
        ``(H_re, H_im)``, the derivatives of H w.r.t. the real and imaginary
        part of the control, without the ``c = FIELD_SCALE`` prefactor.
    dt : float
        Interval length in ns.
    amp_bound : float
        Largest control magnitude (MHz) the spectral bound must cover. It is
        widened automatically if a larger amplitude shows up.
    h0_bounds : (float, float), optional
        Lower/upper bound of the spectrum of H0; Gershgorin discs if omitted.
    """

    def __init__(self, h0, drive_ops, dt, amp_bound=0.0, h0_bounds=None,
                 tol=1e-14, max_order=4000, scale=FIELD_SCALE):
        h_re, h_im = drive_ops
        h0 = sp.csr_matrix(h0, dtype=np.complex128)
        dim = h0.shape[0]
        if h0.shape != (dim, dim) or h_re.shape != h0.shape or h_im.shape != h0.shape:
            raise ValueError("Hamiltonian and drive operators must be square and of equal shape")
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.dim = dim
        self.dt = float(dt)
        self.tol = tol
        self.max_order = max_order
        self.scale = scale
        eye = sp.identity(dim, dtype=np.complex128, format="csr")
        pattern = (abs(h0) + abs(h_re) + abs(h_im) + eye).tocsr()
        pattern.sort_indices()
        rows = np.repeat(np.arange(dim), np.diff(pattern.indptr))
        cols = pattern.indices

        def aligned(m):
            return np.asarray(sp.csr_matrix(m, dtype=np.complex128)[rows, cols]).ravel()

        self._d0 = aligned(h0)
        self._dre = aligned(h_re) * scale
        self._dim_ = aligned(h_im) * scale
        self._deye = aligned(eye).real
        self._mat = sp.csr_matrix(
            (np.zeros(cols.size, np.complex128), cols.copy(), pattern.indptr.copy()),
            shape=(dim, dim),
        )
        self._h0_bounds = tuple(h0_bounds) if h0_bounds is not None else _gershgorin(h0)
        self._drive_norm = np.sqrt(2.0) * scale * max(_row_norm(h_re), _row_norm(h_im))
        self._set_bounds(float(amp_bound))

    def _set_bounds(self, amp_bound):
        self.amp_bound = amp_bound
        lo, hi = self._h0_bounds
        widen = self._drive_norm * amp_bound
        lo, hi = lo - widen, hi + widen
        # margin keeps the normalized spectrum strictly inside [-1, 1]
        margin = 1e-8 * max(1.0, hi - lo)
        lo, hi = lo - margin, hi + margin
        self.e_center = 0.5 * (hi + lo)
        self.e_half = max(0.5 * (hi - lo), 1e-12)
        self.alpha = self.e_half * self.dt
        self.bessel = chebyshev_coefficients(self.alpha, self.tol, self.max_order)

    @property
    def order(self) -> int:
        return self.bessel.size

    def _normalized(self, eps):
        amp = abs(eps)
        if amp > self.amp_bound:
            self._set_bounds(1.25 * amp)
        x, y = eps.real, eps.imag
        self._mat.data[:] = (
            self._d0 + x * self._dre + y * self._dim_ - self.e_center * self._deye
        ) * (2.0 / self.e_half)
        return self._mat

    def step(self, psi, eps, backward=False):
        """Return ``exp(-+ i H(eps) dt) psi`` (``+`` if ``backward``)."""
        h2 = self._normalized(complex(eps))  # 2 * normalized Hamiltonian
        sign = 1j if backward else -1j
        c = self.bessel
        t_prev = psi
        t_cur = h2 @ psi
        t_cur *= 0.5
        out = c[0] * psi + (2 * sign * c[1]) * t_cur
        phase = sign
        for k in range(2, c.size):
            phase *= sign
            t_next = h2 @ t_cur
            t_next -= t_prev
            out += (2 * phase * c[k]) * t_next
            t_prev, t_cur = t_cur, t_next
        out *= np.exp(sign * self.e_center * self.dt)
        return out

    def apply_hamiltonian_derivatives(self, psi, drive_ops):
        """``(c H_re psi, c H_im psi)``."""
        h_re, h_im = drive_ops
        return self.scale * (h_re @ psi), self.scale * (h_im @ psi)


@dataclass
class TrajectorySet:
    """States of a forward or backward propagation.

    ``states[j]`` is the block of state vectors (columns) at ``times[j]``;
    times are always in ascending order. Without storage only the final state
    (at T for forward, at 0 for backward) is kept.
    """

    times: np.ndarray
    states: np.ndarray
    direction: str

    @property
    def final(self) -> np.ndarray:
        return self.states[-1] if self.direction == "forward" else self.states[0]

    def state(self, k):
        """Trajectory of the ``k``-th column, shape ``(n_t, dim)``."""
        return self.states[:, :, k]


def _as_block(psi, dim):
    psi = np.asarray(psi, dtype=np.complex128)
    single = psi.ndim == 1
    block = psi.reshape(dim, -1) if single else psi
    if block.shape[0] != dim:
        raise ValueError(f"state dimension {block.shape[0]} does not match H dimension {dim}")
    return np.array(block, dtype=np.complex128, order="C"), single


def _stride(store, n_steps):
    if store is True:
        return 1
    if not store:
        return None
    stride = int(store)
    if stride < 1:
        raise ValueError("store stride must be >= 1")
    return stride


def _run(h0, drive_ops, field, psi, backward, store, h0_bounds, tol, max_order):
    stepper = ChebyshevStepper(h0, drive_ops, field.dt, field.max_amplitude,
                               h0_bounds=h0_bounds, tol=tol, max_order=max_order)
    n = field.n_steps
    samples = field.samples
    stride = _stride(store, n)
    tgrid = field.tgrid
    if stride is None:
        for i in range(n):
            j = n - 1 - i if backward else i
            psi = stepper.step(psi, samples[j], backward=backward)
        t_final = 0.0 if backward else field.T
        return np.array([t_final]), psi[None]
    keep = list(range(0, n + 1, stride))
    if keep[-1] != n:
        keep.append(n)
    keep_set = set(keep)
    out = {}
    start = n if backward else 0
    out[start] = psi.copy()
    for i in range(n):
        if backward:
            j = n - 1 - i
            psi = stepper.step(psi, samples[j], backward=True)
            idx = j
        else:
            psi = stepper.step(psi, samples[i])
            idx = i + 1
        if idx in keep_set:
            out[idx] = psi.copy()
    keep = sorted(out)
    return tgrid[keep], np.stack([out[i] for i in keep])


def _propagate(h0, drive_ops, field, psi, backward, store, h0_bounds, tol, max_order):
    block, single = _as_block(psi, h0.shape[0])
    threads = min(n_threads(), block.shape[1])
    if threads > 1:
        chunks = np.array_split(np.arange(block.shape[1]), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(
                lambda cols: _run(h0, drive_ops, field, block[:, cols], backward,
                                  store, h0_bounds, tol, max_order),
                chunks,
            ))
        times = parts[0][0]
        states = np.concatenate([p[1] for p in parts], axis=2)
    else:
        times, states = _run(h0, drive_ops, field, block, backward, store,
                              h0_bounds, tol, max_order)
    if single:
        states = states[:, :, :1]
    return TrajectorySet(times=times, states=states,
                         direction="backward" if backward else "forward")


def propagate_forward(h0, drive_ops, field, initial, store=False, *,
                      h0_bounds=None, tol=1e-14, max_order=4000) -> TrajectorySet:
    """Propagate ``initial`` (vector or block of column vectors) from 0 to T.

    ``store`` is ``False`` (final state only), ``True`` (every grid point) or
    an integer stride.
    """
    return _propagate(h0, drive_ops, field, initial, False, store, h0_bounds, tol, max_order)


def propagate_backward(h0, drive_ops, field, final_costate, store=False, *,
                       h0_bounds=None, tol=1e-14, max_order=4000) -> TrajectorySet:
    """Propagate a co-state from T back to 0 with H^+ (= H).

    The co-state is not renormalized.
    """
    return _propagate(h0, drive_ops, field, final_costate, True, store, h0_bounds, tol, max_order)


def propagate(model, field, initial=None, store=False, backward=False, **kwargs) -> TrajectorySet:
    """Propagate with the operators of a :class:`~qgate_opt.system.TransmonModel`.

    ``initial`` defaults to the four logical basis states.
    """
    if initial is None:
        initial = model.logical
    kwargs.setdefault("h0_bounds", model.h0_bounds)
    fn = propagate_backward if backward else propagate_forward
    return fn(model.h0, model.drive_ops, field, initial, store, **kwargs)
