#!/usr/bin/env python3
"""
Directional Cameron-Martin representative, its L2 norm, the Novikov bound
and reproducers for the four counterexample families.

For direction A->Ã the jump-drift discrepancy Δ = (J_A - J_Ã) + (B_A - B_Ã)
solves Δ' + ã Δ = (ã - a)(J_A + B_A) mode by mode, so the representative is
u_n = (ã_n - a_n)/sqrt(q_n) * (J_A + B_A)_n. The source generator (A for
A->Ã) supplies the decay inside u; the target carries the translation.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from errors import InputError
from levy import JumpLaw, LevyConfig, MarkedPointSet, exp_moment
from spectral_core import (
    Generator,
    Model,
    ModeBlock,
    SequenceModel,
    SeriesVerdict,
    SpectralModel,
    assess_series,
    decay_integral,
    hs_perturbation_integral,
)
from simulate import drift_convolution, jump_convolution_path

logger = logging.getLogger(__name__)

PRINTED_CONVENTION_FLAG = "source-decay-convention"
QUAD_TOL = 1e-12


class Direction(str, Enum):
    A_TO_A_TILDE = "A->Atilde"
    A_TILDE_TO_A = "Atilde->A"

    @property
    def source(self) -> Generator:
        return Generator.A if self is Direction.A_TO_A_TILDE else Generator.A_TILDE

    @property
    def target(self) -> Generator:
        return Generator.A_TILDE if self is Direction.A_TO_A_TILDE else Generator.A

    @property
    def reverse(self) -> "Direction":
        return Direction.A_TILDE_TO_A if self is Direction.A_TO_A_TILDE else Direction.A_TO_A_TILDE


@dataclass
class NovikovReport:
    """Sufficient exponential-moment bound for the compound Poisson Novikov condition"""
    C_T: float
    required_c: float
    exp_moment_value: float
    bound_value: float
    satisfied: bool
    rate: float = 0.0
    T: float = 0.0
    moment_threshold: float = math.inf
    T_star: float = math.inf

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class CMReport:
    """Cameron-Martin verdict for one direction"""
    direction: Direction
    l2_norm_sq: SeriesVerdict
    per_mode_terms: np.ndarray
    representable: bool
    novikov: Optional[NovikovReport] = None
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.representable != self.l2_norm_sq.converged:
            raise ValueError("representable must match the convergence of the L2 norm")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direction": self.direction.value,
            "l2_norm_sq": self.l2_norm_sq.to_dict(),
            "per_mode_terms": self.per_mode_terms.tolist(),
            "representable": self.representable,
            "novikov": None if self.novikov is None else self.novikov.to_dict(),
            "flags": list(self.flags),
        }


def cm_coefficient(a_src: np.ndarray, a_tgt: np.ndarray, q: np.ndarray) -> np.ndarray:
    """(r_tgt - r_src)/sqrt(q), forced to 0 where the generators agree"""
    diff = a_tgt - a_src
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = diff / np.sqrt(q)
    return np.where(diff == 0.0, 0.0, coef)


def _block_rates(block: ModeBlock, direction: Direction) -> Tuple[np.ndarray, np.ndarray]:
    return block.rates(direction.source), block.rates(direction.target)


def has_profile(model: Model) -> bool:
    """True when the model carries its own single-jump profile xi"""
    return model.expressions.get("xi") is not None if model.symbolic else model.xi is not None


def _check_inputs(model: SpectralModel, points: MarkedPointSet, drift_b) -> np.ndarray:
    if points.dim != model.dim:
        raise InputError(f"point set has {points.dim} modes, model has {model.dim}")
    b = np.zeros(model.dim) if drift_b is None else np.asarray(drift_b, dtype=float)
    if b.shape != (model.dim,):
        raise InputError(f"drift has shape {b.shape}, model has {model.dim} modes")
    return b


def jump_drift_discrepancy(model: Model, direction: Direction, points: MarkedPointSet,
                           drift_b, t: float) -> np.ndarray:
    """Δ^{Jb}(t) = (J_src - J_tgt)(t) + (B_src - B_tgt)(t), computed directly"""
    model = model.materialize()
    b = _check_inputs(model, points, drift_b)
    times = np.array([t], dtype=float)
    total = np.zeros(model.dim)
    for which, sign in ((direction.source, 1.0), (direction.target, -1.0)):
        total += sign * (jump_convolution_path(model, which, points, times)[0]
                         + drift_convolution(model, which, b, t))
    return total


def cm_representative(model: Model, direction: Direction, points: MarkedPointSet, drift_b,
                      t_grid: Sequence[float]) -> np.ndarray:
    """u_n(t) on the grid, shape (len(t_grid), N)"""
    model = model.materialize()
    b = _check_inputs(model, points, drift_b)
    times = np.asarray(t_grid, dtype=float).reshape(-1)
    if np.any(times < 0):
        raise InputError("representative times must be nonnegative")
    src = direction.source
    coef = cm_coefficient(model.rates(src), model.rates(direction.target), model.q)
    driven = jump_convolution_path(model, src, points, times) + drift_convolution(model, src, b, times)
    return coef * driven


def _mode_representative(a_src: float, coef: float, b: float, taus: np.ndarray, marks: np.ndarray):
    def u(s: float) -> float:
        live = taus <= s
        jumps = float(np.sum(np.exp(-a_src * (s - taus[live])) * marks[live]))
        return coef * (jumps + b * decay_integral(a_src, s))
    return u


def cm_reconstruction(model: Model, direction: Direction, points: MarkedPointSet, drift_b,
                      t: float) -> np.ndarray:
    """∫_0^t S_tgt(t-s) Q^{1/2} u(s) ds by adaptive quadrature, jump times as breakpoints"""
    model = model.materialize()
    b = _check_inputs(model, points, drift_b)
    if t < 0:
        raise InputError(f"time must be nonnegative, got {t}")
    out = np.zeros(model.dim)
    if t == 0:
        return out
    a_src, a_tgt = model.rates(direction.source), model.rates(direction.target)
    coef = cm_coefficient(a_src, a_tgt, model.q)
    breaks = [float(tau) for tau in points.times if 0.0 < tau < t] or None
    for n in range(model.dim):
        if coef[n] == 0.0:
            continue
        u = _mode_representative(a_src[n], coef[n], b[n], points.times, points.marks[:, n])
        sqrt_q, rate = math.sqrt(model.q[n]), a_tgt[n]
        out[n], _ = integrate.quad(lambda s: math.exp(-rate * (t - s)) * sqrt_q * u(s), 0.0, t,
                                   points=breaks, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400)
    return out


def _drift_energy(rate, T: float):
    """∫_0^T decay_integral(rate, t)^2 dt"""
    rate = np.asarray(rate, dtype=float)
    x = rate * T
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        exact = (T - 2.0 * decay_integral(rate, T) + decay_integral(2.0 * rate, T)) / rate ** 2
    # cancellation in the closed form below this; leading terms of the series
    return np.where(x < 1e-3, T ** 3 / 3.0 * (1.0 - 0.75 * x), exact)


def _single_jump_terms(block: ModeBlock, direction: Direction, mark_sq: np.ndarray, s: float, T: float) -> np.ndarray:
    a_src, a_tgt = _block_rates(block, direction)
    coef = cm_coefficient(a_src, a_tgt, block.q)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = coef ** 2 * mark_sq * decay_integral(2.0 * a_src, T - s)
    return np.where(coef == 0.0, 0.0, terms)


def _collect(blocks: Iterator[Tuple[np.ndarray, np.ndarray]]) -> Tuple[SeriesVerdict, np.ndarray]:
    seen: List[np.ndarray] = []

    def recording():
        for indices, terms in blocks:
            seen.append(np.asarray(terms, dtype=float))
            yield indices, terms

    verdict = assess_series(recording())
    terms = np.concatenate(seen)[:verdict.terms_examined] if seen else np.zeros(0)
    return verdict, terms


def _quadrature_terms(model: SpectralModel, direction: Direction, points: MarkedPointSet,
                      b: np.ndarray, T: float) -> np.ndarray:
    """Per-mode ∫_0^T u_n(t)^2 dt with every cross-jump interaction included"""
    a_src, a_tgt = model.rates(direction.source), model.rates(direction.target)
    coef = cm_coefficient(a_src, a_tgt, model.q)
    breaks = [float(tau) for tau in points.times if 0.0 < tau < T] or None
    terms = np.zeros(model.dim)
    for n in range(model.dim):
        if coef[n] == 0.0:
            continue
        u = _mode_representative(a_src[n], coef[n], b[n], points.times, points.marks[:, n])
        terms[n], _ = integrate.quad(lambda s: u(s) ** 2, 0.0, T, points=breaks,
                                     epsabs=0.0, epsrel=QUAD_TOL, limit=400)
    return terms


def _cm_norm(model: Model, direction: Direction, points: Optional[MarkedPointSet], drift_b,
             T: float) -> Tuple[SeriesVerdict, np.ndarray]:
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    if points is None:
        # the model's own jump profile, one jump at s = 0
        if not has_profile(model):
            raise InputError("no point set given and the model carries no xi profile")
        return _collect((blk.indices, _single_jump_terms(blk, direction, blk.xi ** 2, 0.0, T))
                        for blk in model.chunks())
    b = None if drift_b is None else np.asarray(drift_b, dtype=float)
    single = points.count == 1 and (b is None or not np.any(b))
    if single:
        if points.dim != model.dim:
            raise InputError(f"point set has {points.dim} modes, model has {model.dim}")
        s, mark = float(points.times[0]), points.marks[0]
        if s > T:
            raise InputError(f"jump at {s} lies beyond the horizon {T}")
        return _collect((blk.indices, _single_jump_terms(blk, direction, mark[blk.indices - 1] ** 2, s, T))
                        for blk in model.chunks())
    dense = model.materialize()
    b = _check_inputs(dense, points, b)
    terms = _quadrature_terms(dense, direction, points, b, T)
    return _collect(iter([(np.arange(1, dense.dim + 1), terms)]))


def cm_l2_norm(model: Model, direction: Direction, points: Optional[MarkedPointSet] = None,
               drift_b=None, T: float = 1.0) -> SeriesVerdict:
    """||U||^2 in L2(0, T; H).

    Closed form for a single jump with the drift off, time quadrature otherwise.
    With points=None the model's xi profile is taken as one jump at s = 0, which
    keeps sequence models lazy.
    """
    verdict, _ = _cm_norm(model, Direction(direction), points, drift_b, T)
    logger.debug(f"CM norm {Direction(direction).value}: {verdict.value} after {verdict.terms_examined} modes")
    return verdict


def _law_terms(model: Model, direction: Direction, levy: LevyConfig, T: float):
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    if levy.dim != model.dim:
        raise InputError(f"Lévy config has {levy.dim} modes, model has {model.dim}")
    mark_sq = levy.jump_law.second_moment() if levy.has_jumps else np.zeros(levy.dim)

    def terms(block: ModeBlock) -> np.ndarray:
        a_src, a_tgt = _block_rates(block, direction)
        coef = cm_coefficient(a_src, a_tgt, block.q)
        idx = block.indices - 1
        with np.errstate(over="ignore", invalid="ignore"):
            energy = mark_sq[idx] * decay_integral(2.0 * a_src, T) + levy.drift_b[idx] ** 2 * _drift_energy(a_src, T)
            out = coef ** 2 * energy
        return np.where((coef == 0.0) | (energy == 0.0), 0.0, out)

    return ((blk.indices, terms(blk)) for blk in model.chunks())


def cm_norm_for_law(model: Model, direction: Direction, levy: LevyConfig, T: float) -> SeriesVerdict:
    """Expected single-jump norm at s = 0 (the worst case) plus the drift representative's norm"""
    return assess_series(_law_terms(model, Direction(direction), levy, T))


def _a_min(model: Model, which: Generator) -> float:
    return min(float(np.min(blk.rates(which))) for blk in model.chunks())


def _q_vector(model: Model) -> np.ndarray:
    return np.concatenate([blk.q for blk in model.chunks()])


def novikov_bound(model: Model, rate: float, law: JumpLaw, T: float,
                  which: Generator = Generator.A) -> NovikovReport:
    """exp(λT(E exp(½ C_T ||Q^{1/2}ξ||^2) - 1)), with the subinterval length T* when the bound fails"""
    if not rate > 0:
        raise InputError(f"jump rate must be positive, got {rate}")
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    a_min = _a_min(model, which)
    c_T = decay_integral(2.0 * a_min, T)
    required = 0.5 * c_T
    q = _q_vector(model)
    moment = exp_moment(law, required, q)
    c_star = law.moment_threshold(q)
    if 4.0 * a_min * c_star >= 1.0:
        t_star = math.inf
    else:
        t_star = -math.log1p(-4.0 * a_min * c_star) / (2.0 * a_min)
    satisfied = math.isfinite(moment)
    if satisfied:
        with np.errstate(over="ignore"):
            bound = float(np.exp(rate * T * (moment - 1.0)))
    else:
        bound = math.inf
        logger.warning(f"Novikov bound infinite for {law.kind.value} marks at c = {required:.4g}; "
                       f"exponential moments finite only below c* = {c_star:.4g}")
    return NovikovReport(c_T, required, moment, bound, satisfied, float(rate), float(T), c_star, t_star)


def novikov_monte_carlo(model: Model, rate: float, law: JumpLaw, T: float, draws: int,
                        rng: np.random.Generator, which: Generator = Generator.A) -> Tuple[float, float]:
    """Mean and standard error of exp(½ C_T Σ_i ||Q^{1/2}ξ_i||^2) over compound Poisson draws"""
    if draws < 2:
        raise InputError("need at least two draws")
    c_T = decay_integral(2.0 * _a_min(model, which), T)
    q = _q_vector(model)
    counts = rng.poisson(rate * T, size=draws)
    marks = law.sample(rng, int(counts.sum()))
    loads = np.sum(q * marks ** 2, axis=1)
    owners = np.repeat(np.arange(draws), counts)
    totals = np.bincount(owners, weights=loads, minlength=draws)
    values = np.exp(0.5 * c_T * totals)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(draws))


def factorisation_check(model: Model, T: float) -> SeriesVerdict:
    """Σ_n (ã_n - a_n)^2 exp(-2 a_n T)/q_n, the naive Q^{-1/2} factorisation diagnostic"""
    if T <= 0:
        raise InputError(f"reference time must be positive, got {T}")

    def terms(block: ModeBlock) -> np.ndarray:
        diff_sq = (block.a_tilde - block.a) ** 2
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = diff_sq * np.exp(-2.0 * block.a * T - np.log(block.q))
        return np.where(diff_sq == 0.0, 0.0, out)

    return assess_series((blk.indices, terms(blk)) for blk in model.chunks())


def cm_report(model: Model, direction: Direction, points: Optional[MarkedPointSet], drift_b, T: float,
              rate: Optional[float] = None, law: Optional[JumpLaw] = None) -> CMReport:
    direction = Direction(direction)
    verdict, terms = _cm_norm(model, direction, points, drift_b, T)
    novikov = novikov_bound(model, rate, law, T) if rate and law is not None else None
    report = CMReport(direction, verdict, terms, verdict.converged, novikov, [PRINTED_CONVENTION_FLAG])
    if not verdict.converged:
        logger.info(f"no L2 representative for {direction.value}: witness {verdict.witness}")
    return report


def cm_report_for_law(model: Model, direction: Direction, levy: LevyConfig, T: float) -> CMReport:
    """CMReport built from the law-expected norm, with the Novikov bound when jumps are on"""
    direction = Direction(direction)
    verdict, terms = _collect(_law_terms(model, direction, levy, T))
    novikov = novikov_bound(model, levy.rate_lambda, levy.jump_law, T) if levy.has_jumps else None
    return CMReport(direction, verdict, terms, verdict.converged, novikov, [PRINTED_CONVENTION_FLAG, "law-expected"])


def equivalence_verdict(forward: CMReport, backward: CMReport, hs: SeriesVerdict,
                        levy: Optional[LevyConfig] = None) -> str:
    """One convergent direction gives one-sided absolute continuity, both give equivalence.

    Without a Gaussian channel there is nothing to shift: the laws are equal
    when the generators agree on every mode the jumps and drift reach, and
    mutually singular otherwise.
    """
    if backward.direction is not forward.direction.reverse:
        raise InputError(f"verdict needs both directions, got {forward.direction.value} twice")
    if levy is not None and not levy.gaussian_enabled:
        untouched = all(r.representable and not np.any(r.per_mode_terms) for r in (forward, backward))
        return "equal" if untouched else "singular"
    if not hs.converged:
        return "undetermined"
    ab = forward if forward.direction is Direction.A_TO_A_TILDE else backward
    ba = backward if ab is forward else forward
    if ab.representable and ba.representable:
        return "mutual"
    if ab.representable:
        return "A<<Atilde"
    if ba.representable:
        return "Atilde<<A"
    return "undetermined"


# Counterexample families, evaluated lazily up to n_max
EXAMPLE_N_MAX = 64
EXAMPLES: Dict[str, Dict[str, Any]] = {
    "no-l2": {"a": "1", "a_tilde": "1 + n^2", "q": "exp(-n^2)", "xi": "exp(-n^2/4)/n"},
    "one-sided": {"a": "n^4", "a_tilde": "1", "q": "n^(-8)", "xi": "n^(-7)"},
    "novikov-fails": {"a": [1.1], "a_tilde": [1.0], "q": [1.0], "nu": 3.0, "rate": 1.0},
    "no-factorisation": {"a": "1", "a_tilde": "1 + n^2", "q": "n^(-6)"},
}
EXAMPLE_T = 1.0


@dataclass
class ExampleVerdict:
    example_id: str
    verdicts: Dict[str, str]
    expected: Dict[str, str]
    witnesses: Dict[str, Optional[Dict[str, Any]]] = field(default_factory=dict)
    companions: Dict[str, Any] = field(default_factory=dict)

    @property
    def reproduced(self) -> bool:
        return self.verdicts == self.expected

    def to_dict(self) -> Dict[str, Any]:
        return {
            "example_id": self.example_id,
            "reproduced": self.reproduced,
            "verdicts": dict(self.verdicts),
            "expected": dict(self.expected),
            "witnesses": dict(self.witnesses),
            "companions": dict(self.companions),
        }

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for criterion, verdict in self.verdicts.items():
            witness = self.witnesses.get(criterion)
            rows.append({
                "example": self.example_id,
                "criterion": criterion,
                "verdict": verdict,
                "expected": self.expected.get(criterion),
                "witness_n": pd.NA if witness is None else witness["index"],
            })
        frame = pd.DataFrame(rows, columns=["example", "criterion", "verdict", "expected", "witness_n"])
        return frame.astype({"witness_n": "Int64"})


def _series_label(verdict: SeriesVerdict) -> str:
    return "convergent" if verdict.converged else "divergent"


def _witness(verdict: SeriesVerdict) -> Optional[Dict[str, Any]]:
    return None if verdict.witness_index is None else {"index": verdict.witness_index, "term": verdict.witness_term}


def example_model(example_id: str) -> Model:
    if example_id not in EXAMPLES:
        raise InputError(f"unknown example {example_id!r}; choose from {sorted(EXAMPLES)}")
    spec = EXAMPLES[example_id]
    if isinstance(spec["a"], list):
        return SpectralModel(a=spec["a"], a_tilde=spec["a_tilde"], q=spec["q"])
    return SequenceModel(spec["a"], spec["a_tilde"], spec["q"], EXAMPLE_N_MAX, spec.get("xi"))


def reproduce_example(example_id: str) -> ExampleVerdict:
    """Instantiate a counterexample family, run its criteria and compare with the stated verdicts"""
    model = example_model(example_id)
    T = EXAMPLE_T
    if example_id == "no-l2":
        cm = cm_l2_norm(model, Direction.A_TO_A_TILDE, T=T)
        hs = hs_perturbation_integral(model, T)
        result = ExampleVerdict(example_id, {"cm": _series_label(cm), "hs": _series_label(hs)},
                                {"cm": "divergent", "hs": "convergent"},
                                {"cm": _witness(cm), "hs": _witness(hs)}, {"hs_value": hs.value})
    elif example_id == "one-sided":
        forward = cm_l2_norm(model, Direction.A_TO_A_TILDE, T=T)
        backward = cm_l2_norm(model, Direction.A_TILDE_TO_A, T=T)
        result = ExampleVerdict(example_id,
                                {"A->Atilde": _series_label(forward), "Atilde->A": _series_label(backward)},
                                {"A->Atilde": "convergent", "Atilde->A": "divergent"},
                                {"A->Atilde": _witness(forward), "Atilde->A": _witness(backward)},
                                {"forward_value": forward.value})
    elif example_id == "novikov-fails":
        spec = EXAMPLES[example_id]
        law = JumpLaw.student_t(spec["nu"])
        levy = LevyConfig(np.zeros(1), gaussian_enabled=True, rate_lambda=spec["rate"], jump_law=law)
        l2 = cm_norm_for_law(model, Direction.A_TO_A_TILDE, levy, T)
        novikov = novikov_bound(model, spec["rate"], law, T)
        result = ExampleVerdict(example_id,
                                {"l2": "finite-in-expectation" if l2.converged else "infinite",
                                 "novikov": "finite" if novikov.satisfied else "infinite"},
                                {"l2": "finite-in-expectation", "novikov": "infinite"},
                                {"l2": _witness(l2), "novikov": None},
                                {"expected_l2": l2.value, "moment_threshold": novikov.moment_threshold,
                                 "required_c": novikov.required_c})
    else:
        diagnostic = factorisation_check(model, T)
        hs = hs_perturbation_integral(model, T)
        result = ExampleVerdict(example_id, {"factorisation": _series_label(diagnostic)},
                                {"factorisation": "divergent"},
                                {"factorisation": _witness(diagnostic)},
                                {"hs": _series_label(hs), "hs_value": hs.value})
    if result.reproduced:
        logger.info(f"example {example_id} reproduced: {result.verdicts}")
    else:
        logger.warning(f"example {example_id} NOT reproduced: got {result.verdicts}, expected {result.expected}")
    return result
