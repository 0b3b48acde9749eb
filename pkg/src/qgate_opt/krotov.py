"""Krotov's method for the four logical basis states.

One iteration propagates the co-states ``chi_k`` backward under the old
field and then sweeps forward in time, updating the control sample by sample
with the freshly propagated forward states (sequential update). The two
quadratures of the complex envelope are updated independently, with
``H_re`` and ``H_im`` as the derivatives of H.

The co-state trajectories are either kept in memory or, when that would
exceed ``memory_budget_mb``, rebuilt during the forward sweep by propagating
checkpointed co-states forward again under the old field.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .gate_analysis import gate_metrics
from .pulse import ControlField, ShapeFunction, default_shape
from .propagator import ChebyshevStepper, propagate

__all__ = [
    "KrotovConfig",
    "KrotovError",
    "IterationRow",
    "OptimizationRecord",
    "KrotovOptimizer",
    "compute_sigma",
    "krotov_iterate",
    "run_krotov",
]

logger = logging.getLogger(__name__)


class KrotovError(RuntimeError):
    pass


@dataclass
class KrotovConfig:
    """Settings of a Krotov optimization.

    ``lambda_a`` scales the step size inversely (units of MHz^-1 times the
    functional); ``epsilon_A`` is the floor of the second-order prefactor.
    ``sigma_enabled=None`` enables the second-order term exactly for
    non-convex functionals.
    """

    lambda_a: float = 2.0e-3
    epsilon_A: float = 1.0e-4
    sigma_enabled: Optional[bool] = None
    max_iterations: int = 500
    convergence_ratio: float = 1.0e-4
    fixed_point_passes: int = 0
    memory_budget_mb: float = 1500.0
    checkpoint_stride: int = 100
    monotonic_tolerance: float = 1.0e-10
    strict_monotonic: bool = False
    metrics_every: int = 1
    tol: float = 1.0e-14

    def __post_init__(self):
        if not self.lambda_a > 0:
            raise ValueError("lambda_a must be positive")
        if not self.epsilon_A >= 0:
            raise ValueError("epsilon_A must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.fixed_point_passes < 0:
            raise ValueError("fixed_point_passes must be >= 0")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be >= 1")


@dataclass(frozen=True)
class IterationRow:
    iteration: int
    J_T: float
    parts: dict
    delta_J: float
    sigma: float
    n_props: int
    wall_s: float
    update_max: float
    metrics: Optional[dict] = None


CSV_COLUMNS = ["iteration", "J_T", "J_diag", "J_gamma", "delta_J", "sigma", "n_props", "wall_s"]


@dataclass
class OptimizationRecord:
    functional: str
    initial_J: Optional[float] = None
    initial_parts: dict = field(default_factory=dict)
    initial_metrics: Optional[dict] = None
    rows: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def __len__(self):
        return len(self.rows)

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def n_props(self) -> int:
        return self.rows[-1].n_props if self.rows else 0

    @property
    def J_T(self) -> np.ndarray:
        return np.array([r.J_T for r in self.rows])

    def J_history(self) -> np.ndarray:
        """J_T including the guess value at position 0."""
        head = [] if self.initial_J is None else [self.initial_J]
        return np.array(head + [r.J_T for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            if self.initial_J is not None:
                writer.writerow([0, repr(self.initial_J),
                                 repr(self.initial_parts.get("J_diag", "")),
                                 repr(self.initial_parts.get("J_gamma", "")),
                                 "", "", 0, 0.0])
            for r in self.rows:
                writer.writerow([
                    r.iteration, repr(r.J_T), repr(r.parts.get("J_diag", "")),
                    repr(r.parts.get("J_gamma", "")), repr(r.delta_J), repr(r.sigma),
                    r.n_props, f"{r.wall_s:.3f}",
                ])


def compute_sigma(chi_T, dphi_T, delta_J, epsilon_A) -> float:
    """Second-order prefactor from the previous iteration's final-time data.

    ``sigma = -max(eps_A, 2A + eps_A)`` with
    ``A = (2 sum_k Re<chi_k|dphi_k> + dJ) / sum_k ||dphi_k||^2``;
    ``-eps_A`` when there is no change in the final states.
    """
    chi_T = np.asarray(chi_T)
    dphi_T = np.asarray(dphi_T)
    denom = float(np.vdot(dphi_T, dphi_T).real)
    if not denom > 0 or not np.isfinite(denom):
        return -float(epsilon_A)
    A = (2.0 * np.vdot(chi_T, dphi_T).real + delta_J) / denom
    return -max(float(epsilon_A), 2.0 * A + float(epsilon_A))


class KrotovOptimizer:
    """Stateful driver of Krotov iterations for one model and functional."""

    def __init__(self, model, functional, config=None, shape: ShapeFunction | None = None,
                 metrics_target=None):
        self.model = model
        self.functional = functional
        self.config = config or KrotovConfig()
        self.shape = shape
        self.metrics_target = metrics_target if metrics_target is not None else functional.target
        self.sigma_enabled = (
            (not functional.convex) if self.config.sigma_enabled is None
            else bool(self.config.sigma_enabled)
        )
        self.field = None
        self.record = OptimizationRecord(functional=functional.name)
        self._n_props = 0
        self._wall = 0.0
        self._sigma = -self.config.epsilon_A if self.sigma_enabled else 0.0
        self._phi_T = None
        self._J = None
        self._phi_traj = None  # forward trajectory under current field (store mode)
        self._phi_ckpt = None  # checkpoints of the same (recompute mode)
        self._first_iteration = 1

    # -- helpers ---------------------------------------------------------
    def _metrics(self, U):
        try:
            return gate_metrics(U, target=self.metrics_target).to_dict()
        except ValueError:
            return None

    def _store_mode(self, n_steps):
        per_traj = (n_steps + 1) * self.model.dim * 4 * 16 / 2**20
        n_traj = 2 if self.sigma_enabled else 1
        return per_traj * n_traj <= self.config.memory_budget_mb

    def _stepper(self, field_, amp=None):
        return ChebyshevStepper(
            self.model.h0, self.model.drive_ops, field_.dt,
            field_.max_amplitude if amp is None else amp,
            h0_bounds=self.model.h0_bounds, tol=self.config.tol,
        )

    # -- public API ------------------------------------------------------
    def start(self, guess: ControlField, sigma=None, first_iteration=1, n_props=0):
        """Propagate the guess and evaluate the functional on it.

        To resume an interrupted run pass the dumped pulse together with the
        second-order prefactor, iteration number and propagation count that
        were saved alongside it.
        """
        if sigma is not None and self.sigma_enabled:
            self._sigma = float(sigma)
        self._first_iteration = int(first_iteration)
        self._n_props = int(n_props)
        if self.shape is None:
            self.shape = default_shape(guess)
        if len(self.shape) != guess.n_steps:
            raise ValueError("shape function and field have different grids")
        self.field = guess
        store_mode = self._store_mode(guess.n_steps)
        t0 = time.perf_counter()
        if store_mode and self.sigma_enabled:
            traj = propagate(self.model, guess, store=True, tol=self.config.tol)
            self._phi_traj = traj.states
            self._phi_T = traj.final
        elif self.sigma_enabled:
            traj = propagate(self.model, guess, store=self.config.checkpoint_stride,
                             tol=self.config.tol)
            self._phi_ckpt = dict(zip(np.rint(traj.times / guess.dt).astype(int), traj.states))
            self._phi_T = traj.final
        else:
            self._phi_T = propagate(self.model, guess, tol=self.config.tol).final
        self._wall += time.perf_counter() - t0
        U = self.model.gate(self._phi_T)
        self._J = self.functional(U)
        self.record.initial_J = float(self._J.total)
        self.record.initial_parts = dict(self._J.parts)
        self.record.initial_metrics = self._metrics(U)
        return self._J

    @property
    def J(self):
        return self._J

    @property
    def sigma(self) -> float:
        return self._sigma

    def iterate(self) -> IterationRow:
        if self.field is None:
            raise KrotovError("call start() before iterate()")
        t0 = time.perf_counter()
        cfg = self.config
        model = self.model
        old = self.field
        n = old.n_steps
        e_old = old.samples
        S = self.shape.samples
        sigma = self._sigma if self.sigma_enabled else 0.0
        use_old = sigma != 0.0
        store_mode = self._store_mode(n)
        K = cfg.checkpoint_stride

        U_old = model.gate(self._phi_T)
        chi_T = model.embed(self.functional.costate(U_old))

        # backward propagation of the co-states under the old field
        back = self._stepper(old)
        chi_traj = None
        chi_ckpt = {}
        chi = chi_T.copy()
        if store_mode:
            chi_traj = np.empty((n + 1, model.dim, 4), dtype=np.complex128)
            chi_traj[n] = chi
        else:
            chi_ckpt[n] = chi.copy()
        for j in range(n - 1, -1, -1):
            chi = back.step(chi, e_old[j], backward=True)
            if store_mode:
                chi_traj[j] = chi
            elif j % K == 0:
                chi_ckpt[j] = chi.copy()

        # forward sweep with sequential update
        fwd_old = self._stepper(old)
        fwd_new = self._stepper(old, amp=1.1 * old.max_amplitude + 1e-3)
        h_re, h_im = model.drive_ops
        scale = fwd_new.scale
        e_new = np.empty(n, dtype=np.complex128)
        phi = model.logical.astype(np.complex128, copy=True)
        new_traj = None
        new_ckpt = {}
        if store_mode and self.sigma_enabled:
            new_traj = np.empty((n + 1, model.dim, 4), dtype=np.complex128)
            new_traj[0] = phi
        elif self.sigma_enabled:
            new_ckpt[0] = phi.copy()

        if not store_mode:
            aux = chi_ckpt[0].copy()
            if use_old:
                aux = np.hstack([aux, self._phi_ckpt[0]])

        def gradient(chi_n, phi_old_n, phi_n):
            a = chi_n if not use_old else chi_n + 0.5 * sigma * (phi_n - phi_old_n)
            g_re = np.vdot(a, h_re @ phi_n).imag
            g_im = np.vdot(a, h_im @ phi_n).imag
            return scale * complex(g_re, g_im)

        update_max = 0.0
        for i in range(n):
            if store_mode:
                chi_n = chi_traj[i]
                phi_old_n = self._phi_traj[i] if use_old else None
            else:
                chi_n = aux[:, :4]
                phi_old_n = aux[:, 4:] if use_old else None
            g = gradient(chi_n, phi_old_n, phi)
            de = S[i] / cfg.lambda_a * g
            e_new[i] = e_old[i] + de
            if cfg.fixed_point_passes or not store_mode:
                if store_mode:
                    chi_next = chi_traj[i + 1]
                    phi_old_next = self._phi_traj[i + 1] if use_old else None
                else:
                    aux = fwd_old.step(aux, e_old[i])
                    if (i + 1) in chi_ckpt:
                        aux[:, :4] = chi_ckpt[i + 1]
                    if use_old and (i + 1) in self._phi_ckpt:
                        aux[:, 4:] = self._phi_ckpt[i + 1]
                    chi_next = aux[:, :4]
                    phi_old_next = aux[:, 4:] if use_old else None
            phi_next = fwd_new.step(phi, e_new[i])
            for _ in range(cfg.fixed_point_passes):
                g_next = gradient(chi_next, phi_old_next, phi_next)
                de = S[i] / cfg.lambda_a * 0.5 * (g + g_next)
                e_new[i] = e_old[i] + de
                phi_next = fwd_new.step(phi, e_new[i])
            if not np.isfinite(e_new[i]):
                raise KrotovError(f"non-finite control update at time step {i}")
            update_max = max(update_max, abs(de))
            phi = phi_next
            if new_traj is not None:
                new_traj[i + 1] = phi
            elif self.sigma_enabled and (i + 1) % K == 0:
                new_ckpt[i + 1] = phi.copy()
        if self.sigma_enabled and new_traj is None:
            new_ckpt[n] = phi.copy()

        new_field = ControlField(old.dt, e_new)
        U_new = model.gate(phi)
        J_new = self.functional(U_new)
        delta_J = float(J_new.total - self._J.total)
        if self.sigma_enabled:
            next_sigma = compute_sigma(chi_T, phi - self._phi_T, delta_J, cfg.epsilon_A)
        else:
            next_sigma = 0.0

        iteration = len(self.record.rows) + self._first_iteration
        if delta_J > cfg.monotonic_tolerance:
            msg = (f"iteration {iteration}: functional increased by {delta_J:.3e} "
                   f"(lambda_a too small or sigma mis-set)")
            if cfg.strict_monotonic:
                raise KrotovError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

        self._n_props += 2
        self._wall += time.perf_counter() - t0
        metrics = None
        if cfg.metrics_every and iteration % cfg.metrics_every == 0:
            metrics = self._metrics(U_new)
        row = IterationRow(
            iteration=iteration,
            J_T=float(J_new.total),
            parts=dict(J_new.parts),
            delta_J=delta_J,
            sigma=float(sigma),
            n_props=self._n_props,
            wall_s=self._wall,
            update_max=float(update_max),
            metrics=metrics,
        )
        self.record.rows.append(row)
        self.field = new_field
        self._phi_T = phi
        self._J = J_new
        self._sigma = next_sigma
        self._phi_traj = new_traj
        self._phi_ckpt = new_ckpt if new_traj is None else None
        logger.info("krotov iter %d: J_T=%.6e dJ=%.3e sigma=%.3e", iteration,
                    row.J_T, delta_J, sigma)
        return row

    def converged(self, row: IterationRow) -> bool:
        ratio = abs(row.delta_J) / max(row.J_T, 1e-15)
        return ratio < self.config.convergence_ratio

    def run(self, guess: ControlField, callback=None):
        cfg = self.config
        if cfg.max_iterations == 0:
            self.field = guess
            self.record.message = "max_iterations = 0"
            return guess, self.record
        self.start(guess)
        for _ in range(cfg.max_iterations):
            try:
                row = self.iterate()
            except Exception as exc:
                it = len(self.record.rows) + self._first_iteration
                raise KrotovError(f"Krotov iteration {it} failed: {exc}") from exc
            if callback is not None:
                callback(self, row)
            if self.converged(row):
                self.record.converged = True
                self.record.message = (
                    f"converged after {row.iteration} iterations "
                    f"(|dJ|/J < {cfg.convergence_ratio:g})"
                )
                break
        else:
            self.record.message = f"reached max_iterations = {cfg.max_iterations}"
        return self.field, self.record


def krotov_iterate(field_, shape, functional, config, model, optimizer=None):
    """Perform one Krotov iteration starting from ``field_``.

    Returns ``(new_field, row)``. Pass the returned optimizer state via
    ``optimizer`` to carry the second-order prefactor into the next call;
    without it, each call starts fresh (sigma = -epsilon_A).
    """
    if optimizer is None:
        optimizer = KrotovOptimizer(model, functional, config, shape=shape)
        optimizer.start(field_)
    elif optimizer.field is not field_:
        raise KrotovError("optimizer state does not belong to the given field")
    row = optimizer.iterate()
    return optimizer.field, row


def run_krotov(guess, functional, config, model, shape=None, callback=None, metrics_target=None):
    """Iterate until ``|dJ|/J < convergence_ratio`` or ``max_iterations``.

    Returns ``(optimized_field, record)``.
    """
    opt = KrotovOptimizer(model, functional, config, shape=shape, metrics_target=metrics_target)
    return opt.run(guess, callback=callback)
