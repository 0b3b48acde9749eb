"""Nelder-Mead search over the peak amplitude and duration of the sin^2 pulse.

The objective is ``J_diag + J_gamma + T/T0``, which rewards shorter gates in
addition to a diagonal perfect entangler.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .functionals import T0_DEFAULT, eval_splx
from .gate_analysis import nonlocal_phase, population_loss
from .pulse import AnalyticPulseParams, ControlField, sample_analytic
from .propagator import propagate

__all__ = [
    "SimplexConfig",
    "NelderMeadResult",
    "nelder_mead",
    "evaluate_candidate",
    "SimplexResult",
    "run_simplex",
]

logger = logging.getLogger(__name__)


@dataclass
class SimplexConfig:
    initial_params: AnalyticPulseParams = field(
        default_factory=lambda: AnalyticPulseParams(300.0, 200.0)
    )
    #: (dE0 in MHz, dT in ns); ``None`` means (0.1 E0, 0.05 T)
    initial_spread: Optional[tuple] = None
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    max_evaluations: int = 300
    tolerance: float = 1.0e-4
    T0: float = T0_DEFAULT

    def __post_init__(self):
        if not self.reflection > 0:
            raise ValueError("reflection coefficient must be > 0")
        if not self.expansion > 1:
            raise ValueError("expansion coefficient must be > 1")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction coefficient must be in (0, 1)")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink coefficient must be in (0, 1)")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be >= 1")

    def spread(self):
        if self.initial_spread is not None:
            return tuple(float(s) for s in self.initial_spread)
        return 0.1 * self.initial_params.E0, 0.05 * self.initial_params.T

    def initial_simplex(self):
        E0, T = self.initial_params.E0, self.initial_params.T
        dE, dT = self.spread()
        return np.array([[E0, T], [E0 + dE, T], [E0, T + dT]], dtype=float)


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_iterations: int
    converged: bool
    best_history: list


def nelder_mead(func: Callable, simplex, reflection=1.0, expansion=2.0, contraction=0.5,
                shrink=0.5, max_evaluations=300, tolerance=1e-4) -> NelderMeadResult:
    """Minimize ``func`` starting from the given ``(n+1, n)`` simplex.

    Stops once ``max |f_i - f_best| <= tolerance`` over the vertices or after
    ``max_evaluations`` calls. ``best_history`` holds the best value after
    every iteration.
    """
    sim = np.array(simplex, dtype=float)
    n = sim.shape[1]
    if sim.shape != (n + 1, n):
        raise ValueError("simplex must have shape (n+1, n)")
    rho, chi, psi, sigma = reflection, expansion, contraction, shrink
    n_evals = 0

    class _BudgetExhausted(Exception):
        pass

    best = [None, np.inf]

    def f(x):
        nonlocal n_evals
        if n_evals >= max_evaluations:
            raise _BudgetExhausted
        n_evals += 1
        value = float(func(x))
        if value < best[1]:
            best[:] = [np.array(x, dtype=float), value]
        return value

    fsim = np.full(n + 1, np.inf)
    for j in range(n + 1):
        if n_evals >= max_evaluations:
            break
        fsim[j] = f(sim[j])
    order = np.argsort(fsim, kind="stable")
    sim, fsim = sim[order], fsim[order]
    history = [fsim[0]]
    iterations = 0
    converged = False
    while True:
        if np.max(np.abs(fsim[0] - fsim[1:])) <= tolerance:
            converged = True
            break
        if n_evals >= max_evaluations:
            break
        try:
            _nm_step(sim, fsim, f, rho, chi, psi, sigma)
        except _BudgetExhausted:
            break
        iterations += 1
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        history.append(fsim[0])
    # a step cut short by the budget may have found a better point
    if best[0] is not None and best[1] < fsim[0]:
        history.append(best[1])
        return NelderMeadResult(best[0], best[1], n_evals, iterations, converged, history)
    return NelderMeadResult(sim[0].copy(), float(fsim[0]), n_evals, iterations, converged, history)


def _nm_step(sim, fsim, f, rho, chi, psi, sigma):
    """One reflection/expansion/contraction/shrink step, in place."""
    n = sim.shape[1]
    xbar = sim[:-1].mean(axis=0)
    xr = (1 + rho) * xbar - rho * sim[-1]
    fr = f(xr)
    do_shrink = False
    if fr < fsim[0]:
        xe = (1 + rho * chi) * xbar - rho * chi * sim[-1]
        fe = f(xe)
        if fe < fr:
            sim[-1], fsim[-1] = xe, fe
        else:
            sim[-1], fsim[-1] = xr, fr
    elif fr < fsim[-2]:
        sim[-1], fsim[-1] = xr, fr
    elif fr < fsim[-1]:
        xc = (1 + psi * rho) * xbar - psi * rho * sim[-1]
        fc = f(xc)
        if fc <= fr:
            sim[-1], fsim[-1] = xc, fc
        else:
            do_shrink = True
    else:
        xcc = (1 - psi) * xbar + psi * sim[-1]
        fcc = f(xcc)
        if fcc < fsim[-1]:
            sim[-1], fsim[-1] = xcc, fcc
        else:
            do_shrink = True
    if do_shrink:
        for j in range(1, n + 1):
            sim[j] = sim[0] + sigma * (sim[j] - sim[0])
            fsim[j] = f(sim[j])


def evaluate_candidate(params: AnalyticPulseParams, model, dt, T0=T0_DEFAULT, **prop_kwargs):
    """Sample the analytic pulse, propagate the logical states and return
    ``(J_splx, U)``."""
    pulse = sample_analytic(params, dt, envelope=model.params.envelope_factor)
    try:
        final = propagate(model, pulse, **prop_kwargs).final
    except Exception as exc:
        raise RuntimeError(f"propagation failed for E0={params.E0} MHz, T={params.T} ns: {exc}") from exc
    U = model.gate(final)
    return eval_splx(U, pulse.T, T0), U


EVAL_COLUMNS = ["eval", "E0_MHz", "T_ns", "J_splx", "J_diag", "J_gamma", "eps_C", "eps_pop"]


@dataclass
class SimplexResult:
    params: AnalyticPulseParams
    field: ControlField
    J: float
    n_evals: int
    n_props: int
    converged: bool
    evaluations: list
    best_history: list

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EVAL_COLUMNS)
            for row in self.evaluations:
                writer.writerow([row[c] if isinstance(row[c], int) else repr(row[c])
                                 for c in EVAL_COLUMNS])


def run_simplex(config: SimplexConfig, model, dt, callback=None) -> SimplexResult:
    """Nelder-Mead over (E0, T). Candidates with ``E0 <= 0`` or ``T <= dt``
    get ``+inf`` without being propagated."""
    evaluations = []
    cache = {}

    def objective(x):
        E0, T = float(x[0]), float(x[1])
        row = {"eval": len(evaluations) + 1, "E0_MHz": E0, "T_ns": T}
        if E0 <= 0 or T <= dt:
            row.update(J_splx=np.inf, J_diag=np.nan, J_gamma=np.nan, eps_C=np.nan, eps_pop=np.nan)
            evaluations.append(row)
            return np.inf
        key = (E0, T)
        if key not in cache:
            value, U = evaluate_candidate(AnalyticPulseParams(E0, T), model, dt, config.T0)
            try:
                eps_C = float(1.0 - nonlocal_phase(U)[1])
            except ValueError:
                eps_C = np.nan
            cache[key] = (value, eps_C, population_loss(U))
        value, eps_C, eps_pop = cache[key]
        row.update(J_splx=value.total, J_diag=value.parts["J_diag"],
                   J_gamma=value.parts["J_gamma"], eps_C=eps_C, eps_pop=eps_pop)
        evaluations.append(row)
        logger.info("simplex eval %d: E0=%.4f T=%.4f J=%.6f", row["eval"], E0, T, value.total)
        if callback is not None:
            callback(row)
        return value.total

    res = nelder_mead(
        objective, config.initial_simplex(),
        reflection=config.reflection, expansion=config.expansion,
        contraction=config.contraction, shrink=config.shrink,
        max_evaluations=config.max_evaluations, tolerance=config.tolerance,
    )
    best = AnalyticPulseParams(float(res.x[0]), float(res.x[1]))
    pulse = sample_analytic(best, dt, envelope=model.params.envelope_factor)
    if not res.converged:
        logger.warning("simplex stopped after %d evaluations without meeting the tolerance",
                       res.n_evals)
    return SimplexResult(
        params=best,
        field=pulse,
        J=res.fun,
        n_evals=res.n_evals,
        n_props=len(cache),
        converged=res.converged,
        evaluations=evaluations,
        best_history=res.best_history,
    )
