"""
Exact per-mode simulation of the mild OU solution X = Y(W) + J(Z) + B on a hybrid grid.

Each mode follows the exact exponential recursion
    x <- exp(-a Δ) x + b (1 - exp(-a Δ))/a + sqrt(q) ∫ exp(-a(Δ-s)) dβ_s + mark,
so no time-stepping bias enters. Jump times are inserted into the grid exactly.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from errors import InputError
from levy import LevyConfig, MarkedPointSet, sample_compound_poisson
from spectral_core import Generator, SpectralModel, decay_integral

logger = logging.getLogger(__name__)

# Seed arms keep independent Monte Carlo populations apart under one master seed
ARM_SIMULATE = 0
ARM_DIRECT = 1
ARM_WEIGHTED = 2
ARM_RIGIDITY = 3

JUMP_CHANNEL = 0


@dataclass(frozen=True)
class ReplicaStreams:
    """Counter-based random streams for one replica.

    Channel 0 drives the jump process, channel n the Gaussian increments of
    mode n. Every stream is rebuilt from (master_seed, arm, replica, channel),
    so results never depend on execution order.
    """
    master_seed: int
    replica: int
    arm: int = ARM_SIMULATE

    def _rng(self, channel: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.arm, self.replica, channel))
        return np.random.Generator(np.random.Philox(seq))

    def jumps(self) -> np.random.Generator:
        return self._rng(JUMP_CHANNEL)

    def mode(self, n: int) -> np.random.Generator:
        return self._rng(n)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Base grid on [0, T] merged with every jump time of the driving point set"""
    T: float
    base_steps: int
    times: np.ndarray
    points: MarkedPointSet
    jump_steps: np.ndarray

    @classmethod
    def build(cls, T: float, base_steps: int, points: MarkedPointSet) -> "TimeGrid":
        if not T > 0:
            raise InputError(f"horizon must be positive, got {T}")
        if base_steps < 1:
            raise InputError(f"base_steps must be at least 1, got {base_steps}")
        if points.count and points.times[-1] > T:
            raise InputError(f"jump at {points.times[-1]} lies beyond the horizon {T}")
        times = np.union1d(np.linspace(0.0, T, base_steps + 1), points.times)
        positions = np.searchsorted(times, points.times)
        return cls(float(T), int(base_steps), times, points, positions - 1)

    @property
    def steps(self) -> int:
        return int(self.times.size - 1)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def to_dict(self) -> Dict[str, Any]:
        return {"T": self.T, "base_steps": self.base_steps, "times": self.times.tolist()}


@dataclass(frozen=True, eq=False)
class SamplePath:
    """Grid values of one path, with left limits and the driving jump record"""
    grid: TimeGrid
    values: np.ndarray
    jumps: MarkedPointSet
    left_limits: Optional[np.ndarray] = None
    brownian_increments: Optional[np.ndarray] = None
    which: Generator = Generator.A

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, columns=[f"mode_{n}" for n in range(1, self.dim + 1)])
        frame.insert(0, "time", self.times)
        return frame

    def to_dict(self) -> Dict[str, Any]:
        return {
            "which": Generator(self.which).value,
            "T": self.grid.T,
            "base_steps": self.grid.base_steps,
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "left_limits": None if self.left_limits is None else self.left_limits.tolist(),
            "jumps": self.jumps.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SamplePath":
        jumps = MarkedPointSet.from_dict(data["jumps"])
        grid = TimeGrid.build(data["T"], data["base_steps"], jumps)
        values = np.asarray(data["values"], dtype=float)
        if values.shape[0] != grid.times.size:
            raise InputError("stored values do not match the rebuilt grid")
        left = data.get("left_limits")
        return cls(grid, values, jumps, None if left is None else np.asarray(left, dtype=float),
                   which=Generator(data.get("which", "A")))


def _check_dims(model: SpectralModel, grid: TimeGrid, levy: Optional[LevyConfig] = None) -> None:
    if grid.points.dim != model.dim:
        raise InputError(f"grid jumps have {grid.points.dim} modes, model has {model.dim}")
    if levy is not None:
        if levy.dim != model.dim:
            raise InputError(f"Lévy config has {levy.dim} modes, model has {model.dim}")
        if grid.points.count and not levy.has_jumps:
            raise InputError("grid carries jump times but the Lévy config has no jump channel")


def _gaussian_increments(model: SpectralModel, which: Generator, grid: TimeGrid,
                         streams: ReplicaStreams) -> Tuple[np.ndarray, np.ndarray]:
    """Exact OU noise increments and the standard Brownian increments they were built from.

    Per step the pair (∫ exp(-a(Δ-s)) dβ_s, Δβ) is jointly Gaussian; both are
    drawn from the mode's own stream so Girsanov weights see the same noise
    as the path.
    """
    rates = model.rates(which)
    dt = grid.dt
    cov = decay_integral(rates[None, :], dt[:, None])
    var = decay_integral(2.0 * rates[None, :], dt[:, None])
    noise = np.empty((grid.steps, model.dim))
    dbeta = np.empty((grid.steps, model.dim))
    sqrt_dt = np.sqrt(dt)
    for n in range(model.dim):
        z = streams.mode(n + 1).standard_normal((grid.steps, 2))
        db = sqrt_dt * z[:, 0]
        slope = cov[:, n] / dt
        spread = np.sqrt(np.maximum(var[:, n] - cov[:, n] ** 2 / dt, 0.0))
        noise[:, n] = slope * db + spread * z[:, 1]
        dbeta[:, n] = db
    return np.sqrt(model.q) * noise, dbeta


def _propagate(model: SpectralModel, which: Generator, grid: TimeGrid,
               forcing: np.ndarray, marks: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    phi = np.exp(-np.outer(grid.dt, model.rates(which)))
    values = np.zeros((grid.steps + 1, model.dim))
    left = np.zeros_like(values)
    for k in range(grid.steps):
        left[k + 1] = phi[k] * values[k] + forcing[k]
        values[k + 1] = left[k + 1] + marks[k]
    return values, left


def _step_marks(grid: TimeGrid, dim: int) -> np.ndarray:
    marks = np.zeros((grid.steps, dim))
    if grid.points.count:
        marks[grid.jump_steps] = grid.points.marks
    return marks


def simulate_ou_path(model: SpectralModel, which: Generator, levy: LevyConfig, grid: TimeGrid,
                     rng_stream: ReplicaStreams) -> SamplePath:
    """X^B on the grid from all three channels of the Lévy-Itô decomposition"""
    model = model.materialize()
    _check_dims(model, grid, levy)
    rates = model.rates(which)
    forcing = np.zeros((grid.steps, model.dim))
    if levy.has_drift:
        forcing += levy.drift_b * decay_integral(rates[None, :], grid.dt[:, None])
    dbeta = None
    if levy.gaussian_enabled:
        noise, dbeta = _gaussian_increments(model, which, grid, rng_stream)
        forcing += noise
    values, left = _propagate(model, which, grid, forcing, _step_marks(grid, model.dim))
    return SamplePath(grid, values, grid.points, left, dbeta, Generator(which))


def gaussian_convolution(model: SpectralModel, which: Generator, grid: TimeGrid,
                         rng_stream: ReplicaStreams) -> SamplePath:
    """Y_B(W) alone; consumes exactly the Gaussian increments simulate_ou_path would"""
    model = model.materialize()
    _check_dims(model, grid)
    noise, dbeta = _gaussian_increments(model, which, grid, rng_stream)
    values, left = _propagate(model, which, grid, noise, np.zeros((grid.steps, model.dim)))
    return SamplePath(grid, values, MarkedPointSet.empty(model.dim), left, dbeta, Generator(which))


def jump_convolution(model: SpectralModel, which: Generator, points: MarkedPointSet, t: float) -> np.ndarray:
    """J_B(Z)(t) = Σ_{τ_i <= t} S_B(t - τ_i) ξ_i, exact and gridless"""
    if t < 0:
        raise InputError(f"time must be nonnegative, got {t}")
    if points.dim != model.dim:
        raise InputError(f"point set has {points.dim} modes, model has {model.dim}")
    live = points.times <= t
    if not np.any(live):
        return np.zeros(model.dim)
    lags = t - points.times[live]
    return np.sum(np.exp(-np.outer(lags, model.rates(which))) * points.marks[live], axis=0)


def jump_convolution_path(model: SpectralModel, which: Generator, points: MarkedPointSet,
                          times: np.ndarray) -> np.ndarray:
    """jump_convolution evaluated at every time of an array, shape (len(times), N)"""
    times = np.asarray(times, dtype=float)
    out = np.zeros((times.size, model.dim))
    if points.count == 0:
        return out
    rates = model.rates(which)
    for tau, mark in zip(points.times, points.marks):
        live = times >= tau
        out[live] += np.exp(-np.outer(times[live] - tau, rates)) * mark
    return out


def drift_convolution(model: SpectralModel, which: Generator, b, t) -> np.ndarray:
    """B_B(t) = ∫_0^t S_B(t - s) b ds; vectorises over an array of times"""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise InputError("times must be nonnegative")
    b = np.asarray(b, dtype=float)
    if b.shape != (model.dim,):
        raise InputError(f"drift has shape {b.shape}, model has {model.dim} modes")
    rates = model.rates(which)
    return b * decay_integral(rates, t_arr[..., None])


def theoretical_moments(model: SpectralModel, which: Generator, levy: LevyConfig, T: float) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and variance of X(T) per mode (Itō isometry plus Campbell's formula)"""
    rates = model.rates(which)
    mean = levy.drift_b * decay_integral(rates, T)
    var = np.zeros(model.dim)
    if levy.gaussian_enabled:
        var += model.q * decay_integral(2.0 * rates, T)
    if levy.has_jumps:
        mean += levy.rate_lambda * levy.jump_law.mean() * decay_integral(rates, T)
        var += levy.rate_lambda * levy.jump_law.second_moment() * decay_integral(2.0 * rates, T)
    return mean, var


def sample_points(levy: LevyConfig, T: float, streams: ReplicaStreams) -> MarkedPointSet:
    if not levy.has_jumps:
        return MarkedPointSet.empty(levy.dim)
    return sample_compound_poisson(levy.rate_lambda, levy.jump_law, T, streams.jumps())


def sample_path(model: SpectralModel, which: Generator, levy: LevyConfig, T: float, base_steps: int,
                streams: ReplicaStreams) -> SamplePath:
    """Draw Z, build its hybrid grid and simulate one replica"""
    points = sample_points(levy, T, streams)
    grid = TimeGrid.build(T, base_steps, points)
    logger.debug(f"replica {streams.replica}: {points.count} jumps, {grid.steps} steps")
    return simulate_ou_path(model, which, levy, grid, streams)


def moment_table(terminals: np.ndarray, mean: np.ndarray, var: np.ndarray) -> pd.DataFrame:
    """Empirical against theoretical moments of X(T) per mode, with z-scores"""
    terminals = np.atleast_2d(np.asarray(terminals, dtype=float))
    M = terminals.shape[0]
    if M < 2:
        raise InputError("moment table needs at least two replicas")
    emp_mean = terminals.mean(axis=0)
    emp_var = terminals.var(axis=0, ddof=1)
    m4 = np.mean((terminals - emp_mean) ** 4, axis=0)
    mean_se = np.sqrt(emp_var / M)
    var_se = np.sqrt(np.maximum(m4 - emp_var ** 2, 0.0) / M)
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_z = np.where(mean_se > 0, (emp_mean - mean) / mean_se, 0.0)
        var_z = np.where(var_se > 0, (emp_var - var) / var_se, 0.0)
    return pd.DataFrame({
        "mode": np.arange(1, terminals.shape[1] + 1),
        "mean": mean,
        "empirical_mean": emp_mean,
        "mean_z": mean_z,
        "variance": var,
        "empirical_variance": emp_var,
        "variance_z": var_z,
    })
