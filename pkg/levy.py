"""
Jump laws, compound Poisson sampling and the Lévy triplet used to drive the OU lab
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Sequence

import numpy as np

from errors import InputError

logger = logging.getLogger(__name__)


class JumpKind(str, Enum):
    DIAGONAL_GAUSSIAN = "diagonal-gaussian"
    DETERMINISTIC_PROFILE = "deterministic-profile"
    STUDENT_T = "scalar-student-t"
    POINT_MASS = "point-mass"


@dataclass(frozen=True, eq=False)
class JumpLaw:
    """Law of a single mark ξ, with analytic exponential-moment metadata.

    The classifier answers whether E exp(c ||Q^{1/2} ξ||^2) is finite; every
    family here has it in closed form, so no Monte Carlo is needed to decide.
    """
    kind: JumpKind
    dim: int
    sigma: Optional[np.ndarray] = None
    profile: Optional[np.ndarray] = None
    nu: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", JumpKind(self.kind))
        if self.dim < 1:
            raise InputError("jump law needs at least one mode")
        if self.kind is JumpKind.DIAGONAL_GAUSSIAN:
            sigma = np.asarray(self.sigma, dtype=float)
            if sigma.shape != (self.dim,) or np.any(sigma < 0):
                raise InputError("diagonal-gaussian law needs one nonnegative sigma per mode")
            object.__setattr__(self, "sigma", sigma)
        elif self.kind in (JumpKind.DETERMINISTIC_PROFILE, JumpKind.POINT_MASS):
            profile = np.asarray(self.profile, dtype=float)
            if profile.shape != (self.dim,):
                raise InputError(f"{self.kind.value} law needs a vector of length {self.dim}")
            object.__setattr__(self, "profile", profile)
        elif self.kind is JumpKind.STUDENT_T:
            if self.nu is None or not self.nu > 2:
                raise InputError("student-t marks need nu > 2 (finite second moment)")

    @classmethod
    def gaussian(cls, sigma: Sequence[float]) -> "JumpLaw":
        sigma = np.asarray(sigma, dtype=float)
        return cls(JumpKind.DIAGONAL_GAUSSIAN, sigma.size, sigma=sigma)

    @classmethod
    def deterministic(cls, xi: Sequence[float]) -> "JumpLaw":
        xi = np.asarray(xi, dtype=float)
        return cls(JumpKind.DETERMINISTIC_PROFILE, xi.size, profile=xi)

    @classmethod
    def point_mass(cls, v: Sequence[float]) -> "JumpLaw":
        v = np.asarray(v, dtype=float)
        return cls(JumpKind.POINT_MASS, v.size, profile=v)

    @classmethod
    def student_t(cls, nu: float, dim: int = 1) -> "JumpLaw":
        return cls(JumpKind.STUDENT_T, dim, nu=float(nu))

    def truncated(self, dim: int) -> "JumpLaw":
        """The law of the first `dim` mark components"""
        if not 1 <= dim <= self.dim:
            raise InputError(f"cannot truncate a {self.dim}-mode jump law to {dim} modes")
        if dim == self.dim:
            return self
        return JumpLaw(self.kind, dim,
                       sigma=None if self.sigma is None else self.sigma[:dim],
                       profile=None if self.profile is None else self.profile[:dim],
                       nu=self.nu)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` i.i.d. marks, shape (size, dim)"""
        if self.kind is JumpKind.DIAGONAL_GAUSSIAN:
            return rng.standard_normal((size, self.dim)) * self.sigma
        if self.kind is JumpKind.STUDENT_T:
            marks = np.zeros((size, self.dim))
            marks[:, 0] = rng.standard_t(self.nu, size)
            return marks
        return np.tile(self.profile, (size, 1))

    def mean(self) -> np.ndarray:
        if self.kind in (JumpKind.DETERMINISTIC_PROFILE, JumpKind.POINT_MASS):
            return self.profile.copy()
        return np.zeros(self.dim)

    def second_moment(self) -> np.ndarray:
        """E[ξ_n^2] per mode"""
        if self.kind is JumpKind.DIAGONAL_GAUSSIAN:
            return self.sigma ** 2
        if self.kind is JumpKind.STUDENT_T:
            moments = np.zeros(self.dim)
            moments[0] = self.nu / (self.nu - 2.0)
            return moments
        return self.profile ** 2

    def moment_threshold(self, q: Sequence[float]) -> float:
        """Supremum c* of the c with E exp(c ||Q^{1/2} ξ||^2) finite (finite exactly for c < c*)"""
        q = self._check_q(q)
        if self.kind is JumpKind.STUDENT_T:
            return 0.0
        if self.kind is JumpKind.DIAGONAL_GAUSSIAN:
            load = q * self.sigma ** 2
            load = load[load > 0]
            return math.inf if load.size == 0 else float(np.min(0.5 / load))
        return math.inf

    def classify(self, c: float, q: Sequence[float]) -> bool:
        """True when the exponential moment at c is finite"""
        return c < self.moment_threshold(q)

    def _check_q(self, q: Sequence[float]) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise InputError(f"covariance has {q.size} modes, jump law has {self.dim}")
        return q

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind.value, "dim": self.dim}
        if self.sigma is not None:
            payload["sigma"] = self.sigma.tolist()
        if self.profile is not None:
            payload["profile"] = self.profile.tolist()
        if self.nu is not None:
            payload["nu"] = self.nu
        return payload


def exp_moment(law: JumpLaw, c: float, q: Sequence[float]) -> float:
    """E exp(c ||Q^{1/2} ξ||^2); math.inf stands for the infinite flag"""
    if not c > 0:
        raise InputError(f"c must be positive, got {c}")
    q = law._check_q(q)
    if not law.classify(c, q):
        return math.inf
    if law.kind is JumpKind.DIAGONAL_GAUSSIAN:
        load = 2.0 * c * q * law.sigma ** 2
        return math.exp(-0.5 * float(np.sum(np.log1p(-load))))
    with np.errstate(over="ignore"):
        return float(np.exp(c * np.sum(q * law.profile ** 2)))


@dataclass(frozen=True, eq=False)
class MarkedPointSet:
    """Jump times in (0, T] with one mark vector per time: a realisation of Z"""
    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        marks = np.asarray(self.marks, dtype=float)
        if marks.ndim != 2 or marks.shape[0] != times.size:
            raise InputError(f"need one mark per jump time: {times.size} times, marks shape {marks.shape}")
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise InputError("jump times must be positive and strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)

    @classmethod
    def empty(cls, dim: int) -> "MarkedPointSet":
        return cls(np.zeros(0), np.zeros((0, dim)))

    @property
    def count(self) -> int:
        return int(self.times.size)

    @property
    def dim(self) -> int:
        return int(self.marks.shape[1])

    def to_dict(self) -> Dict[str, Any]:
        return {"dim": self.dim, "times": self.times.tolist(), "marks": self.marks.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MarkedPointSet":
        marks = np.asarray(data["marks"], dtype=float).reshape(-1, int(data["dim"]))
        return cls(np.asarray(data["times"], dtype=float), marks)


@dataclass(frozen=True, eq=False)
class LevyConfig:
    """Lévy-Itô triplet L_t = b t + W_t + Z_t restricted to the lab's families"""
    drift_b: np.ndarray
    gaussian_enabled: bool = True
    rate_lambda: float = 0.0
    jump_law: Optional[JumpLaw] = None

    def __post_init__(self):
        drift = np.asarray(self.drift_b, dtype=float).reshape(-1)
        object.__setattr__(self, "drift_b", drift)
        if self.rate_lambda < 0:
            raise InputError(f"jump rate must be nonnegative, got {self.rate_lambda}")
        if self.rate_lambda > 0:
            if self.jump_law is None:
                raise InputError("a positive jump rate needs a jump law")
            if self.jump_law.dim != drift.size:
                raise InputError(f"jump law has {self.jump_law.dim} modes, drift has {drift.size}")

    @classmethod
    def silent(cls, dim: int) -> "LevyConfig":
        return cls(np.zeros(dim), gaussian_enabled=False)

    @property
    def dim(self) -> int:
        return int(self.drift_b.size)

    @property
    def has_jumps(self) -> bool:
        return self.rate_lambda > 0

    @property
    def has_drift(self) -> bool:
        return bool(np.any(self.drift_b != 0))

    @property
    def is_pure_jump(self) -> bool:
        return not self.gaussian_enabled and not self.has_drift

    def truncated(self, dim: int) -> "LevyConfig":
        if dim == self.dim:
            return self
        if not 1 <= dim < self.dim:
            raise InputError(f"cannot truncate a {self.dim}-mode Lévy config to {dim} modes")
        law = None if self.jump_law is None else self.jump_law.truncated(dim)
        return LevyConfig(self.drift_b[:dim], self.gaussian_enabled, self.rate_lambda, law)

    def require_pure_jump(self) -> None:
        if not self.is_pure_jump:
            raise InputError("pure-jump mode needs the Gaussian channel off and zero drift")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "drift_b": self.drift_b.tolist(),
            "gaussian_enabled": self.gaussian_enabled,
            "rate_lambda": self.rate_lambda,
            "jump_law": None if self.jump_law is None else self.jump_law.to_dict(),
        }


def sample_compound_poisson(rate: float, law: JumpLaw, T: float, rng: np.random.Generator) -> MarkedPointSet:
    """Poisson(rate*T) jump count, uniform order statistics on (0, T], i.i.d. marks"""
    if not rate > 0:
        raise InputError(f"rate must be positive, got {rate}")
    if not T > 0:
        raise InputError(f"horizon must be positive, got {T}")
    count = int(rng.poisson(rate * T))
    # T - U with U uniform on [0, T) lands in (0, T]
    times = np.sort(T - rng.uniform(0.0, T, size=count))
    marks = law.sample(rng, count)
    return MarkedPointSet(times, marks)
