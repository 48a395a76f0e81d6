#!/usr/bin/env python3
"""
Diagonal operator model for the OU lab.

Generators act mode by mode on the spectral basis: S(t)e_n = exp(-a_n t) e_n for A
and exp(-ã_n t) e_n for Ã, with covariance Q e_n = q_n e_n. Everything the lab
needs to decide Gaussian equivalence deterministically lives here: the HS
perturbation integral, fractional boundedness, the resolvent criterion, the
smoothing constant and the Duhamel identity.

Models come in two flavours. SpectralModel stores N explicit eigenvalues.
SequenceModel keeps closed-form expressions in n and evaluates them block by
block up to n_max, so series criteria can stop at the first divergence witness
without materialising the tail.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import sympy as sp
from scipy import integrate
from sympy.parsing.sympy_parser import convert_xor, parse_expr, standard_transformations

from errors import InputError

logger = logging.getLogger(__name__)

# Divergence heuristic for series tails
DIVERGENCE_CAP = 1e12
RUN_START = 16
RUN_LENGTH = 8

# Below this rate*t the decay integral switches to its series branch
SMALL_RATE_TIME = 1e-8

SEQUENCE_BLOCK = 64

N_SYMBOL = sp.Symbol("n", integer=True, positive=True)
_ALLOWED_FUNCTIONS = {"exp": sp.exp, "sqrt": sp.sqrt, "log": sp.log}
_TOKEN = re.compile(
    r"\s*(?:(?P<number>\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*))"
)


class Generator(str, Enum):
    A = "A"
    A_TILDE = "Atilde"


def decay_integral(rate, t):
    """(1 - exp(-rate*t)) / rate, i.e. int_0^t exp(-rate*s) ds, with the rate*t -> 0 limit"""
    rate = np.asarray(rate, dtype=float)
    t = np.asarray(t, dtype=float)
    x = rate * t
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = -np.expm1(-x) / rate
    series = t * (1.0 - 0.5 * x)
    out = np.where(np.abs(x) < SMALL_RATE_TIME, series, exact)
    return float(out) if out.ndim == 0 else out


@dataclass
class SeriesVerdict:
    """Value of a series (or supremum) together with its convergence certificate"""
    value: float
    converged: bool
    terms_examined: int
    witness_index: Optional[int] = None
    witness_term: Optional[float] = None
    attained_at: Optional[int] = None
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.converged != math.isfinite(self.value):
            raise ValueError("SeriesVerdict value must be finite exactly when converged")

    @property
    def witness(self) -> Optional[Tuple[int, float]]:
        if self.witness_index is None:
            return None
        return self.witness_index, self.witness_term

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "converged": self.converged,
            "terms_examined": self.terms_examined,
            "witness": None if self.witness_index is None
            else {"index": self.witness_index, "term": self.witness_term},
            "attained_at": self.attained_at,
            "flags": list(self.flags),
        }


@dataclass
class ModeBlock:
    """A contiguous run of modes (1-based indices) with their eigenvalues"""
    indices: np.ndarray
    a: np.ndarray
    a_tilde: np.ndarray
    q: np.ndarray
    xi: Optional[np.ndarray] = None

    def rates(self, which: Generator) -> np.ndarray:
        return self.a if Generator(which) is Generator.A else self.a_tilde


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InputError(f"{name} must be a non-empty 1-d sequence")
    return arr


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Paired diagonal generators (a, ã) with covariance eigenvalues q on N modes"""
    a: np.ndarray
    a_tilde: np.ndarray
    q: np.ndarray
    xi: Optional[np.ndarray] = None

    symbolic = False

    def __post_init__(self):
        a = _as_vector(self.a, "a")
        a_tilde = _as_vector(self.a_tilde, "a_tilde")
        q = _as_vector(self.q, "q")
        if not (a.size == a_tilde.size == q.size):
            raise InputError(f"a, a_tilde and q must share one length, got {a.size}, {a_tilde.size}, {q.size}")
        if np.any(a <= 0) or np.any(a_tilde <= 0):
            raise InputError("generators must be strictly dissipative: a_n > 0 and ã_n > 0")
        if np.any(q <= 0):
            raise InputError("covariance eigenvalues q_n must be strictly positive")
        # Trace class at truncation; kept as an explicit statement of intent
        if not math.isfinite(float(q.sum())):
            raise InputError("covariance must be trace class")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_tilde", a_tilde)
        object.__setattr__(self, "q", q)
        if self.xi is not None:
            xi = _as_vector(self.xi, "xi")
            if xi.size != a.size:
                raise InputError("xi must have one entry per mode")
            object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return int(self.a.size)

    def rates(self, which: Generator) -> np.ndarray:
        return self.a if Generator(which) is Generator.A else self.a_tilde

    def swapped(self) -> "SpectralModel":
        return SpectralModel(a=self.a_tilde, a_tilde=self.a, q=self.q, xi=self.xi)

    def chunks(self, size: int = SEQUENCE_BLOCK) -> Iterator[ModeBlock]:
        yield ModeBlock(np.arange(1, self.dim + 1), self.a, self.a_tilde, self.q, self.xi)

    def materialize(self) -> "SpectralModel":
        return self

    def to_dict(self) -> Dict[str, Any]:
        payload = {"dim": self.dim, "a": self.a.tolist(), "a_tilde": self.a_tilde.tolist(), "q": self.q.tolist()}
        if self.xi is not None:
            payload["xi"] = self.xi.tolist()
        return payload


def parse_sequence(text: Union[str, float, int]) -> sp.Expr:
    """Parse a restricted arithmetic expression in n.

    Only numbers, n, + - * / ^ ** parentheses and exp/sqrt/log are accepted;
    every other identifier is rejected before sympy sees the string.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return sp.nsimplify(text) if float(text).is_integer() else sp.Float(text)
    if not isinstance(text, str) or not text.strip():
        raise InputError("sequence expression must be a non-empty string")
    pos = 0
    stripped = text.rstrip()
    while pos < len(stripped):
        match = _TOKEN.match(stripped, pos)
        if match is None or match.end() == pos:
            raise InputError(f"unexpected character in expression {text!r} at offset {pos}")
        name = match.group("name")
        if name is not None and name != "n" and name not in _ALLOWED_FUNCTIONS:
            raise InputError(f"identifier {name!r} is not allowed in expression {text!r}")
        pos = match.end()
    local_dict = {"n": N_SYMBOL, **_ALLOWED_FUNCTIONS}
    try:
        expr = parse_expr(stripped, local_dict=local_dict, global_dict={"Integer": sp.Integer, "Float": sp.Float,
                                                                      "Rational": sp.Rational, "Symbol": sp.Symbol},
                          transformations=standard_transformations + (convert_xor,))
    except (SyntaxError, TypeError, NameError) as e:
        raise InputError(f"could not parse expression {text!r}: {e}") from e
    if not isinstance(expr, sp.Expr) or expr.free_symbols - {N_SYMBOL}:
        raise InputError(f"expression {text!r} must depend on n only")
    return expr


class _CompiledSequence:
    """A parsed expression in n, vectorised with lambdify"""

    def __init__(self, source: Union[str, float, int], name: str):
        self.source = source
        self.name = name
        self.expr = parse_sequence(source)
        self.positive = self.expr.is_positive
        self._fn = sp.lambdify(N_SYMBOL, self.expr, modules="numpy")

    def __call__(self, indices: np.ndarray) -> np.ndarray:
        ns = np.asarray(indices, dtype=float)
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            values = np.asarray(self._fn(ns), dtype=float)
        return np.broadcast_to(values, ns.shape).copy()

    def check_positive(self, values: np.ndarray, indices: np.ndarray) -> None:
        if self.positive is False:
            raise InputError(f"{self.name} = {self.source} is not positive")
        # symbolic positivity tolerates floating underflow to 0 in the far tail
        bad = values < 0 if self.positive else values <= 0
        if np.any(bad | np.isnan(values)):
            first = int(indices[np.argmax(bad | np.isnan(values))])
            raise InputError(f"{self.name} = {self.source} is not strictly positive at n = {first}")


def evaluate_sequence(source: Union[str, float, int], n_max: int, name: str = "sequence") -> np.ndarray:
    """Values of a restricted expression at n = 1..n_max"""
    if int(n_max) < 1:
        raise InputError("n_max must be a positive integer")
    return _CompiledSequence(source, name)(np.arange(1, int(n_max) + 1))


class SequenceModel:
    """Closed-form eigenvalue sequences a(n), ã(n), q(n) (and optionally ξ(n)) up to n_max"""

    symbolic = True

    def __init__(self, a: Union[str, float], a_tilde: Union[str, float], q: Union[str, float],
                 n_max: int, xi: Union[str, float, None] = None):
        if int(n_max) < 1:
            raise InputError("n_max must be a positive integer")
        self.n_max = int(n_max)
        self._a = _CompiledSequence(a, "a")
        self._a_tilde = _CompiledSequence(a_tilde, "a_tilde")
        self._q = _CompiledSequence(q, "q")
        self._xi = None if xi is None else _CompiledSequence(xi, "xi")

    @property
    def dim(self) -> int:
        return self.n_max

    @property
    def expressions(self) -> Dict[str, Any]:
        payload = {"a": self._a.source, "a_tilde": self._a_tilde.source, "q": self._q.source, "n_max": self.n_max}
        if self._xi is not None:
            payload["xi"] = self._xi.source
        return payload

    def chunks(self, size: int = SEQUENCE_BLOCK) -> Iterator[ModeBlock]:
        for start in range(1, self.n_max + 1, size):
            indices = np.arange(start, min(start + size, self.n_max + 1))
            block = {}
            for seq in (self._a, self._a_tilde, self._q):
                values = seq(indices)
                seq.check_positive(values, indices)
                block[seq.name] = values
            xi = None if self._xi is None else self._xi(indices)
            yield ModeBlock(indices, block["a"], block["a_tilde"], block["q"], xi)

    def rates(self, which: Generator) -> np.ndarray:
        return np.concatenate([b.rates(which) for b in self.chunks()])

    def swapped(self) -> "SequenceModel":
        return SequenceModel(self._a_tilde.source, self._a.source, self._q.source, self.n_max,
                             None if self._xi is None else self._xi.source)

    def materialize(self, dim: Optional[int] = None) -> SpectralModel:
        if dim is not None and dim != self.n_max:
            return SequenceModel(**{**self.expressions, "n_max": dim}).materialize()
        blocks = list(self.chunks())
        a = np.concatenate([b.a for b in blocks])
        a_tilde = np.concatenate([b.a_tilde for b in blocks])
        q = np.concatenate([b.q for b in blocks])
        xi = None if self._xi is None else np.concatenate([b.xi for b in blocks])
        # positive sequences may still underflow to 0.0 in floating point; keep the modes before that
        dead = (a <= 0) | (a_tilde <= 0) | (q <= 0)
        if np.any(dead):
            keep = int(np.argmax(dead))
            if keep == 0:
                raise InputError("sequences underflow to 0 at n = 1; nothing to materialize")
            logger.warning(f"a, a_tilde or q underflows to 0 at n = {keep + 1}; "
                           f"materializing modes 1..{keep} of {self.n_max}")
            a, a_tilde, q = a[:keep], a_tilde[:keep], q[:keep]
            xi = None if xi is None else xi[:keep]
        return SpectralModel(a=a, a_tilde=a_tilde, q=q, xi=xi)

    def to_dict(self) -> Dict[str, Any]:
        return {"symbolic": True, **self.expressions}


Model = Union[SpectralModel, SequenceModel]


def assess_series(blocks: Iterable[Tuple[np.ndarray, np.ndarray]]) -> SeriesVerdict:
    """Sum nonnegative terms block by block, stopping at the first divergence witness.

    A witness is a term above DIVERGENCE_CAP (or non-finite), or RUN_LENGTH
    consecutive nondecreasing positive terms at indices past RUN_START.
    """
    total = 0.0
    examined = 0
    run = 0
    previous = None
    for indices, terms in blocks:
        for n, term in zip(indices, terms):
            n = int(n)
            term = float(term)
            examined += 1
            if not math.isfinite(term) or term > DIVERGENCE_CAP:
                return SeriesVerdict(math.inf, False, examined, n, term, flags=["term-cap"])
            if n > RUN_START and previous is not None and term >= previous and term > 0:
                run += 1
            else:
                run = 0
            if run >= RUN_LENGTH:
                return SeriesVerdict(math.inf, False, examined, n, term, flags=["nondecreasing-run"])
            total += term
            previous = term
    return SeriesVerdict(total, True, examined)


def assess_supremum(indices: np.ndarray, terms: np.ndarray) -> SeriesVerdict:
    """Supremum over stored modes; unstabilised if still strictly increasing at the last mode"""
    indices = np.asarray(indices)
    terms = np.asarray(terms, dtype=float)
    examined = int(terms.size)
    bad = ~np.isfinite(terms) | (terms > DIVERGENCE_CAP)
    if np.any(bad):
        k = int(np.argmax(bad))
        return SeriesVerdict(math.inf, False, k + 1, int(indices[k]), float(terms[k]), flags=["term-cap"])
    k_max = int(np.argmax(terms))
    value = float(terms[k_max])
    steps = min(RUN_LENGTH, examined - 1)
    if steps > 0 and np.all(np.diff(terms[-(steps + 1):]) > 0):
        return SeriesVerdict(math.inf, False, examined, int(indices[-1]), float(terms[-1]),
                             attained_at=int(indices[k_max]), flags=["still-increasing"])
    flags = [] if examined < 2 or np.all(np.diff(terms[k_max:]) <= 0) else ["not-monotone-after-sup"]
    return SeriesVerdict(value, True, examined, attained_at=int(indices[k_max]), flags=flags)


def _series(model: Model, term_fn: Callable[[ModeBlock], np.ndarray]) -> SeriesVerdict:
    return assess_series((block.indices, term_fn(block)) for block in model.chunks())


def semigroup_apply(model: SpectralModel, which: Generator, t: float, x: Sequence[float]) -> np.ndarray:
    """S(t)x (or S̃(t)x) for the diagonal generator"""
    if t < 0:
        raise InputError(f"time must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise InputError(f"vector has shape {x.shape}, model has {model.dim} modes")
    return np.exp(-model.rates(which) * t) * x


def _hs_terms(block: ModeBlock, T: float) -> np.ndarray:
    return (block.a_tilde - block.a) ** 2 * block.q * decay_integral(2.0 * block.a, T)


def hs_perturbation_integral(model: Model, T: float) -> SeriesVerdict:
    """int_0^T ||K S(t) Q^{1/2}||_HS^2 dt in closed form, mode by mode"""
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    verdict = _series(model, lambda block: _hs_terms(block, T))
    logger.debug(f"HS perturbation integral on [0, {T}]: {verdict.value} ({verdict.terms_examined} modes)")
    return verdict


def hs_quadrature(model: Model, T: float) -> float:
    """Time quadrature of the same integrand, one adaptive integral per mode"""
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    total = 0.0
    for block in model.chunks():
        for a, a_tilde, q in zip(block.a, block.a_tilde, block.q):
            weight = (a_tilde - a) ** 2 * q
            if weight == 0.0:
                continue
            value, _ = integrate.quad(lambda t, a=a: math.exp(-2.0 * a * t), 0.0, T,
                                      epsabs=0.0, epsrel=1e-13, limit=200)
            total += weight * value
    return total


def fractional_bound(model: Model, beta: float) -> SeriesVerdict:
    """||K A^{-beta}|| = sup_n |ã_n - a_n| a_n^{-beta} over stored modes"""
    if not 0.0 < beta < 1.0:
        raise InputError(f"beta must lie in (0, 1), got {beta}")
    blocks = list(model.chunks())
    indices = np.concatenate([b.indices for b in blocks])
    terms = np.concatenate([np.abs(b.a_tilde - b.a) * b.a ** (-beta) for b in blocks])
    verdict = assess_supremum(indices, terms)
    if not verdict.converged:
        logger.warning(f"K A^-{beta} sup not stabilised: witness n={verdict.witness_index}, term={verdict.witness_term:.3g}")
    return verdict


def hs_bound_from_fractional(model: Model, beta: float, T: float) -> float:
    """||K A^-beta||^2 C_beta^2 tr(Q) T^(1-2beta)/(1-2beta), which dominates the HS integral for beta < 1/2"""
    if not 0.0 < beta < 0.5:
        raise InputError(f"beta must lie in (0, 1/2), got {beta}")
    if T <= 0:
        raise InputError(f"horizon must be positive, got {T}")
    frac = fractional_bound(model, beta)
    if not frac.converged:
        return math.inf
    trace_q = sum(float(b.q.sum()) for b in model.chunks())
    c_beta = (beta / math.e) ** beta
    return frac.value ** 2 * c_beta ** 2 * trace_q * T ** (1.0 - 2.0 * beta) / (1.0 - 2.0 * beta)


def sector_grid(theta: float, rays: int = 1, lambda_min: float = 1e-3, lambda_max: float = 1e3,
                points: int = 61) -> np.ndarray:
    """Log-spaced radii on rays strictly inside the sector |arg λ| < theta"""
    if not 0.0 < theta < math.pi / 2:
        raise InputError(f"theta must lie in (0, pi/2), got {theta}")
    if rays < 1 or points < 1 or not 0 < lambda_min <= lambda_max:
        raise InputError("sector grid needs rays >= 1, points >= 1 and 0 < lambda_min <= lambda_max")
    angles = np.zeros(1) if rays == 1 else np.linspace(-theta, theta, rays + 2)[1:-1]
    radii = np.logspace(math.log10(lambda_min), math.log10(lambda_max), points)
    return (radii[None, :] * np.exp(1j * angles[:, None])).ravel()


def resolvent_criterion(model: Model, beta: float, theta: float, lambda_grid: Sequence[complex]) -> float:
    """max over the grid of |λ|^beta ||K (λ + A)^{-1}||; a sampled estimate of the sector sup"""
    if not 0.0 < beta < 1.0:
        raise InputError(f"beta must lie in (0, 1), got {beta}")
    lam = np.asarray(lambda_grid, dtype=complex).ravel()
    if lam.size == 0:
        raise InputError("lambda grid is empty")
    if np.any(lam == 0) or np.any(np.abs(np.angle(lam)) >= theta):
        raise InputError(f"every grid point must satisfy |arg λ| < {theta} and λ != 0")
    best = 0.0
    for block in model.chunks():
        diff = np.abs(block.a_tilde - block.a)
        norms = np.max(diff[None, :] / np.abs(lam[:, None] + block.a[None, :]), axis=1)
        best = max(best, float(np.max(np.abs(lam) ** beta * norms)))
    return best


def smoothing_constant(model: Model, beta: float, t_grid: Sequence[float]) -> float:
    """max over the grid of t^beta ||A^beta S(t)||; never above (beta/e)^beta"""
    if not 0.0 < beta < 1.0:
        raise InputError(f"beta must lie in (0, 1), got {beta}")
    times = np.asarray(t_grid, dtype=float).ravel()
    if times.size == 0 or np.any(times <= 0) or np.any(times > 1):
        raise InputError("t grid must be non-empty with times in (0, 1]")
    best = 0.0
    for block in model.chunks():
        # a^beta exp(-a t) evaluated in log space so large a never overflows
        log_norm = beta * np.log(block.a)[None, :] - block.a[None, :] * times[:, None]
        values = times ** beta * np.exp(np.max(log_norm, axis=1))
        best = max(best, float(np.max(values)))
    return best


def duhamel_residual(model: Model, n: int, t: float) -> float:
    """|(S̃(t) - S(t)) e_n - int_0^t S̃(t-s) K S(s) e_n ds| by adaptive quadrature"""
    if not 1 <= n <= model.dim:
        raise InputError(f"mode index {n} outside 1..{model.dim}")
    if t <= 0:
        raise InputError(f"time must be positive, got {t}")
    block = next(b for b in model.chunks() if b.indices[0] <= n <= b.indices[-1])
    k = n - int(block.indices[0])
    a, a_tilde = float(block.a[k]), float(block.a_tilde[k])
    lhs = math.exp(-a_tilde * t) - math.exp(-a * t)
    if a == a_tilde:
        return abs(lhs)
    integral, _ = integrate.quad(lambda s: math.exp(-a_tilde * (t - s)) * (a - a_tilde) * math.exp(-a * s),
                                 0.0, t, epsabs=1e-15, epsrel=1e-13, limit=200)
    return abs(lhs - integral)
