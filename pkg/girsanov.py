"""
Doléans exponential along simulated paths and the generator-change reweighting experiment.

Paths are simulated under the target generator with their standard Brownian
increments recorded. The weight integrates θ = (r_tgt - r_src) X^tgt / sqrt(q)
against those increments at left endpoints, which splits as the Cameron-Martin
representative of the sampled jumps plus the Gaussian-channel alignment.
Reweighted target statistics then estimate source statistics.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from cameron_martin import Direction, cm_coefficient, cm_norm_for_law, cm_representative
from errors import InputError, PreconditionError
from levy import LevyConfig
from simulate import ARM_DIRECT, ARM_WEIGHTED, ReplicaStreams, SamplePath, TimeGrid, sample_path
from spectral_core import Model, SpectralModel, hs_perturbation_integral

logger = logging.getLogger(__name__)

DEFAULT_NORM_CAP = 25.0
Z_ACCEPT = 3.0

FUNCTIONALS: Dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "coordinate": lambda terminal, cap: terminal[:, 0],
    "squared-norm": lambda terminal, cap: np.minimum(np.sum(terminal ** 2, axis=1), cap),
}


@dataclass
class DensityReport:
    """Direct against reweighted Monte Carlo for one functional of X(T)"""
    replicas: int
    mean_weight: float
    weight_se: float
    ess: float
    functional_direct: Tuple[float, float]
    functional_reweighted: Tuple[float, float]
    z_score: float
    direction: str = Direction.A_TO_A_TILDE.value
    functional: str = "coordinate"
    master_seed: int = 0
    weight_min: float = 1.0
    cm_energy: float = 0.0
    mean_one_z: float = 0.0
    table: Optional[pd.DataFrame] = field(default=None, repr=False)

    def __post_init__(self):
        if self.weight_min < 0:
            raise ValueError("weights must be nonnegative")
        if self.ess > self.replicas * (1 + 1e-9):
            raise ValueError("effective sample size cannot exceed the replica count")

    @property
    def accepted(self) -> bool:
        return abs(self.z_score) < Z_ACCEPT

    def to_dict(self) -> Dict[str, Any]:
        payload = {k: v for k, v in self.__dict__.items() if k != "table"}
        payload["functional_direct"] = {"mean": self.functional_direct[0], "se": self.functional_direct[1]}
        payload["functional_reweighted"] = {"mean": self.functional_reweighted[0], "se": self.functional_reweighted[1]}
        payload["accepted"] = self.accepted
        return payload


def _grid_dt(grid: Union[TimeGrid, np.ndarray]) -> np.ndarray:
    times = grid.times if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise InputError("grid needs at least two times")
    return np.diff(times)


def log_doleans(u_values: np.ndarray, brownian_increments: np.ndarray, grid: Union[TimeGrid, np.ndarray]) -> float:
    """Σ_n Σ_k u_n(t_k) Δβ_{n,k} - ½ Σ_n Σ_k u_n(t_k)^2 Δt_k"""
    dt = _grid_dt(grid)
    increments = np.asarray(brownian_increments, dtype=float)
    u = np.asarray(u_values, dtype=float)
    if increments.ndim == 1:
        increments = increments[:, None]
    if u.ndim == 1:
        u = u[:, None]
    steps = dt.size
    if increments.shape[0] != steps:
        raise InputError(f"{increments.shape[0]} increments for a grid with {steps} steps")
    # values at every grid time are accepted; only left endpoints enter the sum
    if u.shape[0] == steps + 1:
        u = u[:-1]
    if u.shape != increments.shape:
        raise InputError(f"integrand shape {u.shape} does not match increments {increments.shape}")
    return float(np.sum(u * increments) - 0.5 * np.sum(u ** 2 * dt[:, None]))


def doleans_exponential(u_values: np.ndarray, brownian_increments: np.ndarray,
                        grid: Union[TimeGrid, np.ndarray]) -> float:
    return math.exp(log_doleans(u_values, brownian_increments, grid))


def effective_sample_size(weights: np.ndarray = None, log_weights: np.ndarray = None) -> float:
    """(Σw)^2 / Σw^2, evaluated from log weights when given"""
    if log_weights is None:
        w = np.asarray(weights, dtype=float)
        if w.size == 0 or np.any(w < 0):
            raise InputError("weights must be a non-empty nonnegative array")
        if not np.any(w > 0):
            return 0.0
        with np.errstate(divide="ignore"):
            log_weights = np.log(w)
    lw = np.asarray(log_weights, dtype=float)
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


@dataclass
class WeightBatch:
    """Per-replica weights and terminal states of the target-generator population"""
    direction: Direction
    master_seed: int
    log_weights: np.ndarray
    terminals: np.ndarray
    cm_energy: np.ndarray
    paths: List[SamplePath] = field(default_factory=list)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def replicas(self) -> int:
        return int(self.log_weights.size)

    def to_frame(self, values: Optional[np.ndarray] = None) -> pd.DataFrame:
        frame = pd.DataFrame({
            "replica": np.arange(self.replicas),
            "weight": self.weights,
            "log_weight": self.log_weights,
        })
        if values is not None:
            frame["functional"] = values
        return frame


def require_weights_defined(model: Model, direction: Direction, levy: LevyConfig, T: float) -> None:
    """Refuse to build weights when the Gaussian channel is off or the CM norm diverges"""
    if not levy.gaussian_enabled:
        raise PreconditionError("Girsanov weights need the Gaussian channel enabled")
    verdict = cm_norm_for_law(model, direction, levy, T)
    if not verdict.converged:
        raise PreconditionError(
            f"Cameron-Martin norm diverges for {Direction(direction).value}: "
            f"witness n={verdict.witness_index}, term={verdict.witness_term:.3g}", verdict)
    hs = hs_perturbation_integral(model, T)
    if not hs.converged:
        raise PreconditionError(f"HS perturbation integral diverges: witness n={hs.witness_index}", hs)


def _run(fn: Callable[[int], Any], replicas: int, workers: int) -> List[Any]:
    if workers <= 1:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, range(replicas)))


def estimate_density_weights(model: Model, levy: LevyConfig, direction: Direction, M: int, master_seed: int,
                             T: float = 1.0, base_steps: int = 256, workers: int = 1,
                             keep_paths: bool = False) -> WeightBatch:
    """Simulate M target-generator replicas and their density weights against the source generator"""
    direction = Direction(direction)
    if M < 1:
        raise InputError(f"need at least one replica, got {M}")
    require_weights_defined(model, direction, levy, T)
    dense: SpectralModel = model.materialize()
    levy = levy.truncated(dense.dim)
    coef = cm_coefficient(dense.rates(direction.source), dense.rates(direction.target), dense.q)

    def replica(r: int):
        streams = ReplicaStreams(master_seed, r, ARM_WEIGHTED)
        path = sample_path(dense, direction.target, levy, T, base_steps, streams)
        left = path.times[:-1]
        theta = coef * path.values[:-1]
        log_w = log_doleans(theta, path.brownian_increments, path.grid)
        u_cm = cm_representative(dense, direction, path.jumps, levy.drift_b, left)
        energy = float(np.sum(u_cm ** 2 * path.grid.dt[:, None]))
        return log_w, path.terminal, energy, path if keep_paths else None

    logger.info(f"weighting {M} replicas under {direction.target.value} ({workers} worker(s))")
    rows = _run(replica, M, workers)
    return WeightBatch(
        direction=direction,
        master_seed=master_seed,
        log_weights=np.array([row[0] for row in rows]),
        terminals=np.vstack([row[1] for row in rows]),
        cm_energy=np.array([row[2] for row in rows]),
        paths=[row[3] for row in rows] if keep_paths else [],
    )


def direct_terminals(model: Model, levy: LevyConfig, which, M: int, master_seed: int, T: float = 1.0,
                     base_steps: int = 256, workers: int = 1) -> np.ndarray:
    """X(T) for M replicas simulated directly under one generator"""
    dense = model.materialize()
    levy = levy.truncated(dense.dim)

    def replica(r: int) -> np.ndarray:
        return sample_path(dense, which, levy, T, base_steps, ReplicaStreams(master_seed, r, ARM_DIRECT)).terminal

    return np.vstack(_run(replica, M, workers))


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def density_report(batch: WeightBatch, direct: np.ndarray, functional: str,
                   cap: float = DEFAULT_NORM_CAP) -> DensityReport:
    """Score one functional on a weighted batch against directly simulated terminal states"""
    if functional not in FUNCTIONALS:
        raise InputError(f"unknown functional {functional!r}; choose from {sorted(FUNCTIONALS)}")
    M = batch.replicas
    if M < 2 or direct.shape[0] < 2:
        raise InputError("importance test needs at least two replicas per arm")
    f = FUNCTIONALS[functional]
    weights = batch.weights
    target_values = f(batch.terminals, cap)

    direct_stats = _mean_se(f(direct, cap))
    weighted_stats = _mean_se(target_values * weights)
    weight_mean, weight_se = _mean_se(weights)
    spread = math.hypot(direct_stats[1], weighted_stats[1])
    z = 0.0 if spread == 0.0 else (weighted_stats[0] - direct_stats[0]) / spread
    report = DensityReport(
        replicas=M,
        mean_weight=weight_mean,
        weight_se=weight_se,
        ess=effective_sample_size(log_weights=batch.log_weights),
        functional_direct=direct_stats,
        functional_reweighted=weighted_stats,
        z_score=float(z),
        direction=batch.direction.value,
        functional=functional,
        master_seed=batch.master_seed,
        weight_min=float(weights.min()),
        cm_energy=float(batch.cm_energy.mean()),
        mean_one_z=0.0 if weight_se == 0.0 else (weight_mean - 1.0) / weight_se,
        table=batch.to_frame(target_values),
    )
    level = logging.INFO if report.accepted else logging.WARNING
    logger.log(level, f"{functional}: direct {direct_stats[0]:.5f}, reweighted {weighted_stats[0]:.5f}, "
                      f"z = {z:.3f}, ESS = {report.ess:.1f}/{M}")
    return report


def importance_test(model: Model, levy: LevyConfig, functional: str, M: int, master_seed: int,
                    T: float = 1.0, base_steps: int = 256, direction: Direction = Direction.A_TO_A_TILDE,
                    cap: float = DEFAULT_NORM_CAP, workers: int = 1) -> DensityReport:
    """Compare direct source-generator Monte Carlo with reweighted target-generator Monte Carlo"""
    if functional not in FUNCTIONALS:
        raise InputError(f"unknown functional {functional!r}; choose from {sorted(FUNCTIONALS)}")
    direction = Direction(direction)
    batch = estimate_density_weights(model, levy, direction, M, master_seed, T, base_steps, workers)
    direct = direct_terminals(model, levy, direction.source, M, master_seed, T, base_steps, workers)
    return density_report(batch, direct, functional, cap)
