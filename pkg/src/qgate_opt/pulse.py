"""Control fields on a uniform time grid, the analytic sin^2 pulse family,
the update shape function, and pulse-file I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .system import ENVELOPE_FACTORS

__all__ = [
    "AnalyticPulseParams",
    "ControlField",
    "ShapeFunction",
    "sample_analytic",
    "default_shape",
    "spectrum",
    "write_pulse",
    "read_pulse",
]

PULSE_HEADER = "# t[ns]  Re(eps)[MHz]  Im(eps)[MHz]"


@dataclass(frozen=True)
class AnalyticPulseParams:
    """Peak amplitude ``E0`` (MHz) and duration ``T`` (ns) of the sin^2 pulse."""

    E0: float
    T: float

    def __post_init__(self):
        if not self.E0 >= 0:
            raise ValueError(f"E0 must be non-negative, got {self.E0}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")


class ControlField:
    """Piecewise-constant complex envelope (MHz) on ``n_steps`` intervals.

    ``samples[i]`` is the value on ``[i dt, (i+1) dt]``, nominally the value
    at the interval midpoint. Instances are immutable.
    """

    __slots__ = ("_dt", "_samples")

    def __init__(self, dt, samples):
        dt = float(dt)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        samples = np.array(samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError(f"samples must be a non-empty 1-d array, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        samples.setflags(write=False)
        self._dt = dt
        self._samples = samples

    @property
    def dt(self) -> float:
        return self._dt

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def n_steps(self) -> int:
        return self._samples.size

    @property
    def T(self) -> float:
        return self._dt * self._samples.size

    @property
    def tgrid(self) -> np.ndarray:
        """Interval boundaries ``t_0 = 0 ... t_N = T``."""
        return np.arange(self.n_steps + 1) * self._dt

    @property
    def tmid(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self._dt

    @property
    def max_amplitude(self) -> float:
        return float(np.max(np.abs(self._samples)))

    def with_samples(self, samples) -> "ControlField":
        """New field on the same time grid."""
        if np.shape(samples) != self._samples.shape:
            raise ValueError("new samples must match the existing grid")
        return ControlField(self._dt, samples)

    def __eq__(self, other):
        if not isinstance(other, ControlField):
            return NotImplemented
        return self._dt == other._dt and np.array_equal(self._samples, other._samples)

    def __repr__(self):
        return (
            f"ControlField(dt={self._dt:g}, n_steps={self.n_steps}, "
            f"max|eps|={self.max_amplitude:.6g} MHz)"
        )


class ShapeFunction:
    """Update weights S(t) in [0, 1] on the grid of a control field."""

    __slots__ = ("_samples",)

    def __init__(self, samples):
        samples = np.array(samples, dtype=float).ravel()
        if np.any(samples < 0) or np.any(samples > 1):
            raise ValueError("shape function values must lie in [0, 1]")
        samples.setflags(write=False)
        self._samples = samples

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    def __len__(self):
        return self._samples.size


def grid_for_duration(T, dt):
    """Number of steps and effective time step covering ``[0, T]`` exactly.

    The step is the one closest to ``dt`` that divides ``T``, so the pulse
    depends continuously on ``T``.
    """
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    n_steps = max(1, int(round(T / dt)))
    return n_steps, T / n_steps


def sample_analytic(params: AnalyticPulseParams, dt: float, envelope="rwa") -> ControlField:
    """Sample ``E0 sin^2(pi t/T)`` at interval midpoints.

    ``envelope`` is either a convention name (``"rwa"``, ``"direct"``) or a
    numeric factor applied to E0. The result is real (zero phase).
    """
    if not dt > 0 or dt >= params.T:
        raise ValueError(f"need 0 < dt < T, got dt={dt}, T={params.T}")
    factor = ENVELOPE_FACTORS[envelope] if isinstance(envelope, str) else float(envelope)
    n_steps, dt_eff = grid_for_duration(params.T, dt)
    t = (np.arange(n_steps) + 0.5) * dt_eff
    return ControlField(dt_eff, factor * params.E0 * np.sin(np.pi * t / params.T) ** 2)


def default_shape(field: ControlField) -> ShapeFunction:
    """``sin^2(pi t/T)`` at the field's interval midpoints."""
    return ShapeFunction(np.sin(np.pi * field.tmid / field.T) ** 2)


def spectrum(field: ControlField):
    """Magnitude of the discrete Fourier transform of the envelope.

    Returns ``(freq, mag)`` with ``freq`` the offset from the drive frequency
    in MHz (ascending) and ``mag`` normalized to a maximum of one.
    """
    if field.n_steps < 2:
        raise ValueError("spectrum needs at least two samples")
    amp = np.fft.fftshift(np.fft.fft(field.samples))
    freq = np.fft.fftshift(np.fft.fftfreq(field.n_steps, d=field.dt)) * 1e3
    mag = np.abs(amp)
    peak = mag.max()
    if peak > 0:
        mag = mag / peak
    return freq, mag


def write_pulse(field: ControlField, path):
    """Write ``t  Re(eps)  Im(eps)`` rows at the interval midpoints."""
    data = np.column_stack([field.tmid, field.samples.real, field.samples.imag])
    np.savetxt(path, data, fmt="%25.17e", header=PULSE_HEADER[2:], comments="# ")


def read_pulse(path) -> ControlField:
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 3:
        raise ValueError(f"{path}: expected 3 columns, found {data.shape[1]}")
    t = data[:, 0]
    # midpoints sit at (i + 1/2) dt
    dt = 2.0 * t[-1] / (2 * t.size - 1)
    if not np.allclose(t, (np.arange(t.size) + 0.5) * dt, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: time grid is not a uniform midpoint grid")
    if not math.isfinite(dt) or dt <= 0:
        raise ValueError(f"{path}: invalid time grid")
    return ControlField(dt, data[:, 1] + 1j * data[:, 2])
