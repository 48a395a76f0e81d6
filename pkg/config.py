"""
Experiment configuration: TOML or JSON files validated with pydantic.

Model sequences are either explicit lists or restricted expressions in n.
Environment (a `.env` file is honoured): OU_LEVY_THREADS, OU_LEVY_LOG_LEVEL.
"""

import hashlib
import json
import logging
import math
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from errors import ConfigError, InputError
from levy import JumpLaw, LevyConfig
from spectral_core import Model, SequenceModel, SpectralModel, evaluate_sequence, parse_sequence

logger = logging.getLogger(__name__)

SequenceSpec = Union[List[float], str, float]

THREADS_ENV = "OU_LEVY_THREADS"
LOG_LEVEL_ENV = "OU_LEVY_LOG_LEVEL"


def _check_expression(value):
    if isinstance(value, str):
        try:
            parse_sequence(value)
        except InputError as e:
            raise ValueError(str(e)) from e
    return value


def _vector(spec: SequenceSpec, dim: int, name: str) -> np.ndarray:
    if isinstance(spec, list):
        if len(spec) != dim:
            raise InputError(f"{name} has {len(spec)} entries, expected {dim}")
        return np.asarray(spec, dtype=float)
    return evaluate_sequence(spec, dim, name)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    a: SequenceSpec
    a_tilde: SequenceSpec
    q: SequenceSpec
    xi: Optional[SequenceSpec] = None
    dim: Optional[int] = Field(default=None, ge=1)
    symbolic: bool = False
    n_max: Optional[int] = Field(default=None, ge=1)

    @field_validator("a", "a_tilde", "q", "xi")
    @classmethod
    def check_expressions(cls, value):
        return _check_expression(value)

    @model_validator(mode="after")
    def check_shape(self):
        fields = {"a": self.a, "a_tilde": self.a_tilde, "q": self.q, "xi": self.xi}
        lengths = {k: len(v) for k, v in fields.items() if isinstance(v, list)}
        if self.symbolic:
            if lengths:
                raise ValueError(f"symbolic models take expressions, not lists ({', '.join(lengths)})")
            if self.n_max is None:
                raise ValueError("symbolic models need n_max")
            return self
        if len(set(lengths.values())) > 1:
            raise ValueError(f"list lengths disagree: {lengths}")
        if lengths:
            size = next(iter(lengths.values()))
            if self.dim is not None and self.dim != size:
                raise ValueError(f"dim = {self.dim} but lists have length {size}")
        elif self.dim is None and self.n_max is None:
            raise ValueError("expression-only models need dim (or symbolic = true with n_max)")
        return self

    @property
    def size(self) -> int:
        if self.symbolic:
            return int(self.n_max)
        for value in (self.a, self.a_tilde, self.q, self.xi):
            if isinstance(value, list):
                return len(value)
        return int(self.dim or self.n_max)

    def build(self) -> Model:
        if self.symbolic:
            return SequenceModel(self.a, self.a_tilde, self.q, self.n_max, self.xi)
        dim = self.size
        xi = None if self.xi is None else _vector(self.xi, dim, "xi")
        return SpectralModel(a=_vector(self.a, dim, "a"), a_tilde=_vector(self.a_tilde, dim, "a_tilde"),
                             q=_vector(self.q, dim, "q"), xi=xi)


class JumpLawSection(_Section):
    kind: Literal["diagonal-gaussian", "deterministic-profile", "scalar-student-t", "point-mass"]
    sigma: Optional[SequenceSpec] = None
    profile: Optional[SequenceSpec] = None
    nu: Optional[float] = None

    @field_validator("sigma", "profile")
    @classmethod
    def check_expressions(cls, value):
        return _check_expression(value)

    @model_validator(mode="after")
    def check_parameters(self):
        needs = {"diagonal-gaussian": "sigma", "deterministic-profile": "profile", "point-mass": "profile",
                 "scalar-student-t": "nu"}[self.kind]
        if getattr(self, needs) is None:
            raise ValueError(f"{self.kind} law needs {needs}")
        return self

    def build(self, dim: int) -> JumpLaw:
        if self.kind == "diagonal-gaussian":
            return JumpLaw.gaussian(_vector(self.sigma, dim, "sigma"))
        if self.kind == "deterministic-profile":
            return JumpLaw.deterministic(_vector(self.profile, dim, "profile"))
        if self.kind == "point-mass":
            return JumpLaw.point_mass(_vector(self.profile, dim, "profile"))
        return JumpLaw.student_t(self.nu, dim)


class LevySection(_Section):
    drift_b: Union[List[float], float] = 0.0
    gaussian: bool = True
    rate: float = Field(default=0.0, ge=0.0)
    jump_law: Optional[JumpLawSection] = None

    @model_validator(mode="after")
    def check_law_present(self):
        if self.rate > 0 and self.jump_law is None:
            raise ValueError("a positive jump rate needs a [levy.jump_law] table")
        return self

    def build(self, dim: int) -> LevyConfig:
        if isinstance(self.drift_b, list):
            drift = _vector(self.drift_b, dim, "drift_b")
        else:
            drift = np.full(dim, float(self.drift_b))
        law = self.jump_law.build(dim) if self.jump_law is not None and self.rate > 0 else None
        return LevyConfig(drift, gaussian_enabled=self.gaussian, rate_lambda=self.rate, jump_law=law)


class GridSection(_Section):
    T: float = Field(default=1.0, gt=0.0)
    base_steps: int = Field(default=256, ge=1)


class RunSection(_Section):
    master_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    replicas: int = Field(default=1000, ge=1)
    beta: float = Field(default=0.25, gt=0.0, lt=1.0)
    theta: float = Field(default=math.pi / 4, gt=0.0, lt=math.pi / 2)
    rays: int = Field(default=1, ge=1)
    lambda_min: float = Field(default=1e-3, gt=0.0)
    lambda_max: float = Field(default=1e3, gt=0.0)
    lambda_points: int = Field(default=61, ge=1)
    generator: Literal["A", "Atilde"] = "A"
    direction: Literal["A->Atilde", "Atilde->A"] = "A->Atilde"
    functional: Literal["coordinate", "squared-norm", "both"] = "both"
    norm_cap: float = Field(default=25.0, gt=0.0)
    epsilon: Optional[float] = Field(default=None, gt=0.0)
    tolerance: float = Field(default=1e-10, gt=0.0)
    novikov_draws: int = Field(default=0, ge=0)
    write_paths: int = Field(default=10, ge=0)
    example: Optional[str] = None

    @model_validator(mode="after")
    def check_lambda_range(self):
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min must not exceed lambda_max")
        return self


class OutputSection(_Section):
    directory: str = "out"
    formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json"])

    @field_validator("formats")
    @classmethod
    def check_formats(cls, value):
        if not value:
            raise ValueError("at least one output format is required")
        return sorted(set(value))


class ExperimentConfig(_Section):
    """One experiment: model, Lévy triplet, grid, run parameters and output destination"""
    model: ModelSection
    levy: LevySection = Field(default_factory=LevySection)
    grid: GridSection = Field(default_factory=GridSection)
    run: RunSection = Field(default_factory=RunSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def build_model(self) -> Model:
        return self.model.build()

    def build_levy(self, dim: Optional[int] = None) -> LevyConfig:
        return self.levy.build(self.model.size if dim is None else dim)

    def resolved(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def config_hash(self) -> str:
        canonical = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, replicas: Optional[int] = None,
                       out: Optional[str] = None, formats: Optional[List[str]] = None) -> "ExperimentConfig":
        """Apply CLI flags on top of the file values, validating the result"""
        data = self.resolved()
        if seed is not None:
            data["run"]["master_seed"] = seed
        if replicas is not None:
            data["run"]["replicas"] = replicas
        if out is not None:
            data["output"]["directory"] = out
        if formats is not None:
            data["output"]["formats"] = formats
        return validate_config(data)


def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]', re.MULTILINE)
    match = pattern.search(text)
    return None if match is None else text.count("\n", 0, match.start()) + 1


def validate_config(data: Dict[str, Any], text: str = "") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [str(part) for part in first["loc"]]
        path = ".".join(loc) or None
        named = [part for part in loc if not part.isdigit()]
        line = _line_of(text, named[-1]) if text and named else None
        raise ConfigError(first["msg"], field=path, line=line) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse a .toml or .json experiment file"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", field=str(path)) from e
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(e.msg, field=str(path), line=e.lineno) from e
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = re.search(r"line (\d+)", str(e))
            raise ConfigError(str(e), field=str(path), line=int(match.group(1)) if match else None) from e
    config = validate_config(data, text)
    logger.debug(f"loaded {path} (hash {config.config_hash()[:12]})")
    return config


def resolve_workers() -> int:
    """Worker threads from OU_LEVY_THREADS (default 1)"""
    load_dotenv()
    raw = os.getenv(THREADS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError as e:
        raise ConfigError(f"must be a positive integer, got {raw!r}", field=THREADS_ENV) from e
    if workers < 1:
        raise ConfigError(f"must be a positive integer, got {raw!r}", field=THREADS_ENV)
    return workers


def resolve_log_level(verbose: bool = False) -> int:
    if verbose:
        return logging.DEBUG
    load_dotenv()
    name = os.getenv(LOG_LEVEL_ENV, "INFO").upper()
    return getattr(logging, name, logging.INFO)
