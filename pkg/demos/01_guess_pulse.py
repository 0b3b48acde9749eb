"""
What the sin^2 guess pulse does to two transmons
================================================

A weak drive near the cavity frequency pushes a coherent state into the
cavity. Because the cavity frequency depends on the qubit states, each of the
four logical states picks up a different phase while the photons circulate.
If the cavity returns to vacuum at the end, only a diagonal two-qubit gate
remains.

Run with ``--full`` for the 6x6x70 model (about a minute per propagation);
the default is the small CI model.
"""
import sys

import numpy as np

from qgate_opt import AnalyticPulseParams, build_model, gate_metrics, propagate, sample_analytic
from qgate_opt.gate_analysis import closest_diagonal_pe
from qgate_opt.orchestrator import PRESETS
from qgate_opt.system import SystemParams, expectation_series

preset = PRESETS["full" if "--full" in sys.argv else "reduced"]
model = build_model(SystemParams(**preset["system"]))
dt = preset["dt"]
print(f"Hilbert space dimension {model.dim}, dt = {dt} ns")

# %%
# The analytic guess: peak amplitude E0 (MHz) and duration T (ns).
params = AnalyticPulseParams(**preset["pulse"])
pulse = sample_analytic(params, dt)
print(f"guess: E0 = {params.E0} MHz, T = {params.T} ns, {pulse.n_steps} steps")

# %%
# Propagate the four logical states, keeping every 10th state for the
# photon-number trace.
traj = propagate(model, pulse, store=10)
U = model.gate(traj.final)

np.set_printoptions(precision=3, suppress=True)
print("|U| in the logical basis:")
print(np.abs(U))

# %%
# Photons in the cavity during the gate, starting from |00>.
n_mean, n_std = expectation_series(traj.state(0), model.number_operators["cav"])
times = traj.times
for t, n in zip(times[:: max(1, len(times) // 10)], n_mean[:: max(1, len(times) // 10)]):
    print(f"  t = {t:6.1f} ns   <n> = {n:6.2f}")
print(f"peak <n> = {n_mean.max():.2f} at t = {times[np.argmax(n_mean)]:.1f} ns")

# %%
# Gate quality: the non-local phase gamma decides how entangling the diagonal
# part is (C = 1 for a perfect entangler); the population loss measures what
# leaks out of the logical subspace.
m = gate_metrics(U)
print(f"gamma = {m.gamma:.4f} rad, concurrence C = {m.concurrence:.4f}")
print(f"eps_C = {m.eps_C:.3e}, eps_pop = {m.eps_pop:.3e}, eps_avg = {m.eps_avg:.3e}")

# %%
# The nearest diagonal perfect entangler is the natural target for a
# fidelity-based optimization started from this pulse.
target = closest_diagonal_pe(U)
print("closest diagonal PE, phases / pi:", np.round(np.angle(np.diag(target)) / np.pi, 3))
