"""Run pipeline: configuration, the optimization schemes, run directories and
the comparison table.

A run is described by an INI file with the sections ``[run]``, ``[system]``,
``[pulse]``, ``[krotov]`` and ``[simplex]``::

    [run]
    scheme = hybrid-geo
    preset = reduced
    output_dir = runs

    [pulse]
    E0 = 40
    T = 200

    [krotov]
    lambda_a = 5e-5

    [simplex]
    max_evaluations = 300

Schemes that use Krotov require a ``[krotov]`` section and schemes that use
the simplex require a ``[simplex]`` section, even if empty. Values omitted
from a section fall back to the preset and then to the library defaults.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .functionals import geo_functional, sm_functional
from .gate_analysis import closest_diagonal_pe, diagonal_pe, gate_metrics, write_metrics
from .krotov import KrotovConfig, KrotovOptimizer, OptimizationRecord
from .pulse import AnalyticPulseParams, ControlField, read_pulse, sample_analytic, write_pulse
from .propagator import propagate
from .simplex import SimplexConfig, SimplexResult, run_simplex
from .system import SystemParams, build_model, expectation_series

__all__ = [
    "SCHEMES",
    "PRESETS",
    "ConfigError",
    "StageError",
    "RunConfig",
    "RunSummary",
    "load_config",
    "parse_config",
    "total_propagations",
    "run",
    "resume",
    "analyze",
    "report",
    "load_summary",
]

logger = logging.getLogger(__name__)

SCHEMES = ("propagate", "direct-sm", "direct-geo", "simplex", "hybrid-sm", "hybrid-geo")

#: Named parameter sets. ``full`` is the 6x6x70 model; ``reduced`` is a
#: 3x15 model with the qubits moved closer to the cavity so that a perfect
#: entangler is reachable with few photons.
PRESETS = {
    "full": {
        "system": {},
        "dt": 0.1,
        "pulse": {"E0": 300.0, "T": 200.0},
        "krotov": {"lambda_a": 5.0e-4},
    },
    "reduced": {
        "system": {"qubit_levels": 3, "cavity_levels": 15,
                   "qubit1_freq": 7.45, "qubit2_freq": 7.65},
        "dt": 0.05,
        "pulse": {"E0": 40.0, "T": 200.0},
        "krotov": {"lambda_a": 5.0e-5},
    },
}

SUMMARY_COLUMNS = ["scheme", "T_ns", "total_propagations", "eps_C", "eps_pop", "eps_avg"]


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


class StageError(RuntimeError):
    """A pipeline stage failed. Artifacts written so far stay in ``run_dir``."""

    def __init__(self, stage, run_dir, cause):
        super().__init__(f"stage '{stage}' failed: {cause} (partial results in {run_dir})")
        self.stage = stage
        self.run_dir = run_dir
        self.cause = cause


@dataclass
class RunConfig:
    system: SystemParams = field(default_factory=SystemParams)
    pulse: Optional[AnalyticPulseParams] = None
    pulse_file: Optional[str] = None
    scheme: str = "propagate"
    krotov: Optional[KrotovConfig] = None
    simplex: Optional[SimplexConfig] = None
    dt: float = 0.1
    output_dir: str = "runs"
    seed: int = 0
    preset: Optional[str] = None
    #: sample spacing of the expectation-value dump in ns
    dynamics_every: float = 1.0

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"run.scheme: unknown scheme '{self.scheme}' (choose from {', '.join(SCHEMES)})")
        if (self.pulse is None) == (self.pulse_file is None):
            raise ConfigError("pulse: give either E0 and T or a pulse file, not both or neither")
        if not self.dt > 0:
            raise ConfigError("run.dt: must be positive")
        uses_krotov = self.scheme.startswith(("direct", "hybrid"))
        uses_simplex = self.scheme in ("simplex", "hybrid-sm", "hybrid-geo")
        if uses_krotov and self.krotov is None:
            raise ConfigError(f"krotov: section required for scheme '{self.scheme}'")
        if uses_simplex and self.simplex is None:
            raise ConfigError(f"simplex: section required for scheme '{self.scheme}'")
        if uses_simplex and self.pulse is None:
            raise ConfigError("pulse: the simplex needs analytic parameters E0 and T, not a pulse file")
        if self.pulse is not None and not self.dt < self.pulse.T:
            raise ConfigError("run.dt: must be smaller than pulse.T")
        return self

    def to_ini(self) -> str:
        """Fully resolved configuration in the input format."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["run"] = {"scheme": self.scheme, "dt": repr(self.dt), "output_dir": self.output_dir,
                     "seed": str(self.seed), "dynamics_every": repr(self.dynamics_every)}
        if self.preset:
            cp["run"]["preset"] = self.preset
        cp["system"] = {f.name: str(getattr(self.system, f.name))
                        for f in dataclasses.fields(SystemParams)}
        if self.pulse is not None:
            cp["pulse"] = {"E0": repr(self.pulse.E0), "T": repr(self.pulse.T)}
        else:
            cp["pulse"] = {"file": self.pulse_file}
        if self.krotov is not None:
            cp["krotov"] = {f.name: str(getattr(self.krotov, f.name))
                            for f in dataclasses.fields(KrotovConfig)}
        if self.simplex is not None:
            sc = self.simplex
            cp["simplex"] = {
                f.name: str(getattr(sc, f.name)) for f in dataclasses.fields(SimplexConfig)
                if f.name not in ("initial_params", "initial_spread")
            }
            if sc.initial_spread is not None:
                dE, dT = sc.spread()
                cp["simplex"]["spread_E0"] = repr(dE)
                cp["simplex"]["spread_T"] = repr(dT)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _convert(section, key, raw, typ):
    """Convert a raw option; ``typ`` is a type or the string "Optional[bool]"."""
    low = raw.strip().lower()
    if typ == "Optional[bool]":
        if low in ("none", "auto", ""):
            return None
        typ = bool
    if typ is bool:
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: not a boolean: {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None


_TYPES = {"float": float, "int": int, "bool": bool, "str": str, "Optional[bool]": "Optional[bool]"}


def _typed_fields(cls):
    """Option name -> converter for the scalar fields of a config dataclass."""
    return {f.name: _TYPES[f.type] for f in dataclasses.fields(cls) if f.type in _TYPES}


def _read_section(cp, name, cls, base, skip=()):
    """Merge ``base`` with the section's values, converted to the field types."""
    values = dict(base)
    if not cp.has_section(name):
        return values
    types = _typed_fields(cls)
    for key, raw in cp.items(name):
        if key in skip:
            continue
        if key not in types:
            raise ConfigError(f"{name}.{key}: unknown option")
        values[key] = _convert(name, key, raw, types[key])
    return values


def _build(cls, section, values):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(text, scheme=None, preset=None, output_dir=None, base_dir=None) -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`.

    ``scheme``, ``preset`` and ``output_dir`` override the file's ``[run]``
    values. Relative pulse-file paths are resolved against ``base_dir``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: cannot parse ({exc})") from None
    unknown = set(cp.sections()) - {"run", "system", "pulse", "krotov", "simplex"}
    if unknown:
        raise ConfigError(f"config: unknown section(s) {', '.join(sorted(unknown))}")
    run_sec = cp["run"] if cp.has_section("run") else {}
    preset = preset or run_sec.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"run.preset: unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
    defaults = PRESETS[preset] if preset else PRESETS["full"]

    run_types = {"scheme": str, "preset": str, "dt": float, "output_dir": str, "seed": int,
                 "dynamics_every": float}
    for key in run_sec:
        if key not in run_types:
            raise ConfigError(f"run.{key}: unknown option")
    scheme = scheme or run_sec.get("scheme", "propagate")
    dt = _convert("run", "dt", run_sec["dt"], float) if "dt" in run_sec else defaults["dt"]
    seed = _convert("run", "seed", run_sec["seed"], int) if "seed" in run_sec else 0
    every = (_convert("run", "dynamics_every", run_sec["dynamics_every"], float)
             if "dynamics_every" in run_sec else 1.0)
    output_dir = output_dir or run_sec.get("output_dir", "runs")

    system = _build(SystemParams, "system",
                    _read_section(cp, "system", SystemParams, defaults["system"]))

    pulse = pulse_file = None
    if cp.has_section("pulse"):
        psec = cp["pulse"]
        for key in psec:
            if key not in ("E0", "T", "file"):
                raise ConfigError(f"pulse.{key}: unknown option")
        has_analytic = "E0" in psec or "T" in psec
        if "file" in psec and has_analytic:
            raise ConfigError("pulse: give either E0 and T or a pulse file, not both")
        if "file" in psec:
            pulse_file = psec["file"]
            if base_dir is not None and not os.path.isabs(pulse_file):
                pulse_file = str(Path(base_dir) / pulse_file)
        else:
            if not ("E0" in psec and "T" in psec):
                raise ConfigError("pulse: both E0 and T are required")
            pulse = _build(AnalyticPulseParams, "pulse", {
                "E0": _convert("pulse", "E0", psec["E0"], float),
                "T": _convert("pulse", "T", psec["T"], float),
            })
    else:
        pulse = AnalyticPulseParams(**defaults["pulse"])

    krotov = None
    if cp.has_section("krotov"):
        krotov = _build(KrotovConfig, "krotov",
                        _read_section(cp, "krotov", KrotovConfig, defaults["krotov"]))

    simplex = None
    if cp.has_section("simplex"):
        vals = _read_section(cp, "simplex", SimplexConfig, {}, skip=("spread_E0", "spread_T"))
        ssec = cp["simplex"]
        if pulse is not None:
            vals["initial_params"] = pulse
            if "spread_E0" in ssec or "spread_T" in ssec:
                dE = _convert("simplex", "spread_E0", ssec.get("spread_E0", repr(0.1 * pulse.E0)), float)
                dT = _convert("simplex", "spread_T", ssec.get("spread_T", repr(0.05 * pulse.T)), float)
                vals["initial_spread"] = (dE, dT)
        simplex = _build(SimplexConfig, "simplex", vals)

    cfg = RunConfig(system=system, pulse=pulse, pulse_file=pulse_file, scheme=scheme,
                    krotov=krotov, simplex=simplex, dt=dt, output_dir=output_dir,
                    seed=seed, preset=preset, dynamics_every=every)
    return cfg.validate()


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path} ({exc.strerror})") from None
    return parse_config(text, base_dir=Path(path).parent, **overrides)


@dataclass
class RunSummary:
    scheme: str
    T_ns: float
    total_propagations: int
    eps_C: float
    eps_pop: float
    eps_avg: float
    simplex_evaluations: int = 0
    krotov_iterations: int = 0
    converged: Optional[bool] = None
    run_dir: Optional[str] = None

    def row(self):
        return [self.scheme, self.T_ns, self.total_propagations, self.eps_C, self.eps_pop, self.eps_avg]


def total_propagations(simplex_evaluations=0, krotov_iterations=0, single=False) -> int:
    """Propagation count of a run: one per simplex candidate plus two per
    Krotov iteration; a plain propagation counts as one."""
    if single:
        return 1
    return int(simplex_evaluations) + 2 * int(krotov_iterations)


def _metric_values(U, target=None, seed=0):
    try:
        m = gate_metrics(U, target=target, rng=seed)
    except ValueError:
        return None
    return m


def _dump_dynamics(model, pulse, path, every_ns):
    stride = max(1, int(round(every_ns / pulse.dt)))
    traj = propagate(model, pulse, initial=model.logical[:, :1], store=stride)
    states = traj.states[:, :, 0]
    ops = model.number_operators
    n_cav, s_cav, pop = expectation_series(states, ops["cav"], projector_state=model.logical[:, 0])
    n_q1, s_q1 = expectation_series(states, ops["q1"])
    n_q2, s_q2 = expectation_series(states, ops["q2"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "<n>_cav", "std_cav", "<n>_q1", "std_q1", "<n>_q2", "std_q2", "pop_00"])
        for row in zip(traj.times, n_cav, s_cav, n_q1, s_q1, n_q2, s_q2, pop):
            w.writerow([f"{v:.10g}" for v in row])


def _new_run_dir(output_dir, scheme):
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(output_dir) / f"{scheme}-{stamp}"
    path, k = base, 1
    while path.exists():
        path = Path(f"{base}-{k}")
        k += 1
    path.mkdir(parents=True)
    return path


def _krotov_stage(cfg, model, guess, functional, run_dir, state0, extra_state,
                  metrics_target=None):
    """Krotov with a checkpoint (pulse plus state) dumped after every iteration."""
    kc = cfg.krotov
    done = state0.get("iteration", 0)
    opt = KrotovOptimizer(model, functional, kc, metrics_target=metrics_target)
    opt.start(guess, sigma=state0.get("sigma"), first_iteration=done + 1,
              n_props=state0.get("krotov_props", 0))

    def checkpoint(iteration, props):
        write_pulse(opt.field, run_dir / "pulse_checkpoint.dat")
        state = {"iteration": iteration, "sigma": opt.sigma, "krotov_props": props}
        state.update(extra_state)
        (run_dir / "checkpoint.json").write_text(json.dumps(state))

    log_path = run_dir / "convergence.csv"
    previous = []
    if done == 0:
        checkpoint(0, 0)
    elif log_path.exists():
        # keep the rows of the interrupted run up to the checkpoint
        with open(log_path, newline="") as fh:
            previous = [r for r in csv.reader(fh)][: done + 2]

    def write_log():
        opt.record.write_csv(log_path)
        if previous:
            with open(log_path, newline="") as fh:
                new_rows = list(csv.reader(fh))[2:]
            with open(log_path, "w", newline="") as fh:
                csv.writer(fh).writerows(previous + new_rows)

    for _ in range(max(0, kc.max_iterations - done)):
        row = opt.iterate()
        checkpoint(row.iteration, row.n_props)
        write_log()
        if opt.converged(row):
            opt.record.converged = True
            opt.record.message = f"converged after {row.iteration} iterations"
            break
    else:
        opt.record.message = f"reached max_iterations = {kc.max_iterations}"
    write_log()
    return opt.field, opt.record, done + opt.record.iterations


def run(config: RunConfig, resume_dir=None) -> RunSummary:
    """Execute the configured scheme and write its run directory.

    With ``resume_dir`` an interrupted Krotov stage is continued from the
    checkpoint in that directory instead of starting a new run.
    """
    cfg = config.validate()
    model = build_model(cfg.system)
    run_dir = Path(resume_dir) if resume_dir else _new_run_dir(cfg.output_dir, cfg.scheme)
    if not resume_dir:
        (run_dir / "config.snapshot").write_text(cfg.to_ini())
    envelope = cfg.system.envelope
    stage = "setup"
    state0 = None
    try:
        stage = "pulse"
        if cfg.pulse_file is not None:
            guess = read_pulse(cfg.pulse_file)
        else:
            guess = sample_analytic(cfg.pulse, cfg.dt, envelope=envelope)
        if not resume_dir:
            write_pulse(guess, run_dir / "pulse_initial.dat")

        simplex_res: Optional[SimplexResult] = None
        start = guess
        n_simplex = 0
        if resume_dir:
            state0 = json.loads((run_dir / "checkpoint.json").read_text())
            start = read_pulse(run_dir / "pulse_checkpoint.dat")
            n_simplex = state0.get("simplex_props", 0)
        elif cfg.scheme in ("simplex", "hybrid-sm", "hybrid-geo"):
            stage = "simplex"
            simplex_res = run_simplex(cfg.simplex, model, cfg.dt)
            simplex_res.write_csv(run_dir / ("convergence.csv" if cfg.scheme == "simplex"
                                             else "simplex.csv"))
            write_pulse(simplex_res.field, run_dir / "pulse_simplex.dat")
            start = simplex_res.field
            n_simplex = simplex_res.n_props

        final = start
        record: Optional[OptimizationRecord] = None
        target = None
        n_iter = 0
        if cfg.scheme.startswith(("direct", "hybrid")):
            stage = "krotov"
            state0 = state0 or {}
            if cfg.scheme.endswith("-sm"):
                if "target_phases" in state0:
                    target = diagonal_pe(*state0["target_phases"][:3])
                else:
                    U0 = model.gate(propagate(model, start).final)
                    target = closest_diagonal_pe(U0, rng=cfg.seed)
                functional = sm_functional(target)
            else:
                functional = geo_functional()
            extra_state = {"simplex_props": n_simplex}
            if target is not None:
                extra_state["target_phases"] = [float(p) for p in np.angle(np.diag(target))]
            final, record, n_iter = _krotov_stage(cfg, model, start, functional, run_dir,
                                                  state0, extra_state, metrics_target=target)

        stage = "analysis"
        write_pulse(final, run_dir / "pulse_final.dat")
        U = model.gate(propagate(model, final).final)
        metrics = _metric_values(U, target=target, seed=cfg.seed)
        if cfg.scheme == "propagate":
            n_total = total_propagations(single=True)
            _write_propagate_log(run_dir / "convergence.csv", U)
        else:
            n_total = total_propagations(n_simplex, n_iter)
        summary = RunSummary(
            scheme=cfg.scheme,
            T_ns=float(final.T),
            total_propagations=n_total,
            eps_C=metrics.eps_C if metrics else float("nan"),
            eps_pop=metrics.eps_pop if metrics else float("nan"),
            eps_avg=metrics.eps_avg if metrics else float("nan"),
            simplex_evaluations=n_simplex,
            krotov_iterations=n_iter,
            converged=(record.converged if record is not None
                       else (simplex_res.converged if simplex_res is not None else None)),
            run_dir=str(run_dir),
        )
        extra = {"summary": dataclasses.asdict(summary)}
        if simplex_res is not None:
            extra["simplex"] = {"E0_MHz": simplex_res.params.E0, "T_ns": simplex_res.params.T,
                                "J_splx": simplex_res.J, "evaluations": simplex_res.n_evals,
                                "propagations": simplex_res.n_props,
                                "converged": simplex_res.converged}
        if record is not None:
            extra["krotov"] = {"functional": record.functional, "message": record.message,
                               "initial_J": record.initial_J,
                               "final_J": float(record.J_T[-1]) if record.rows else record.initial_J}
        if metrics is not None:
            write_metrics(metrics, run_dir / "metrics.json", **extra)
        else:
            (run_dir / "metrics.json").write_text(json.dumps(extra, indent=2))
        stage = "dynamics"
        _dump_dynamics(model, final, run_dir / "dynamics_00.csv", cfg.dynamics_every)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise StageError(stage, str(run_dir), exc) from exc
    return summary


def _write_propagate_log(path, U):
    value = geo_functional()(U)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "J_T", "J_diag", "J_gamma", "delta_J", "sigma", "n_props", "wall_s"])
        w.writerow([0, repr(value.total), repr(value.parts["J_diag"]),
                    repr(value.parts["J_gamma"]), "", "", 1, 0.0])


def resume(run_dir, max_iterations=None) -> RunSummary:
    """Continue an interrupted Krotov run from its checkpoint."""
    run_dir = Path(run_dir)
    cfg = parse_config((run_dir / "config.snapshot").read_text())
    if not cfg.scheme.startswith(("direct", "hybrid")):
        raise ConfigError(f"run.scheme: nothing to resume for scheme '{cfg.scheme}'")
    if max_iterations is not None:
        cfg.krotov = dataclasses.replace(cfg.krotov, max_iterations=int(max_iterations))
    return run(cfg, resume_dir=run_dir)


def analyze(pulse_path, config: RunConfig):
    """Propagate a stored pulse with the configured system; returns
    ``(GateMetrics, J_geo)``."""
    model = build_model(config.system)
    pulse = read_pulse(pulse_path)
    U = model.gate(propagate(model, pulse).final)
    return gate_metrics(U, rng=config.seed), geo_functional()(U).total


def load_summary(run_dir) -> RunSummary:
    data = json.loads((Path(run_dir) / "metrics.json").read_text())
    s = data["summary"]
    return RunSummary(**s)


def report(summaries, csv_path=None) -> str:
    """Aligned text table of the summaries, optionally also written as CSV."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no run summaries to report")
    header = ["scheme", "T [ns]", "propagations", "eps_C", "eps_pop", "eps_avg"]
    rows = [[s.scheme, f"{s.T_ns:.1f}", str(s.total_propagations),
             f"{s.eps_C:.2e}", f"{s.eps_pop:.2e}", f"{s.eps_avg:.2e}"] for s in summaries]
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                              for i, (c, w) in enumerate(zip(r, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SUMMARY_COLUMNS)
            for s in summaries:
                w.writerow(s.row())
    return "\n".join(lines)
