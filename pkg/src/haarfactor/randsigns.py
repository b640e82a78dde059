"""Random sign-block vectors and their first two moments.

For a set ``B`` of dyadic intervals at a common level ``N`` and a host copy
``M``, a sign pattern ``theta in {-1,+1}^B`` defines the block vector

    b(theta) = sum_K theta_K h_K  on copy M.

Three scalar random variables drive every construction downstream:

    Y(theta) = <f, b(theta)>                  (linear in theta),
    W(theta) = <b(theta), x>                  (linear in theta),
    Z(theta) = <b(theta), T b(theta)> - sum_K <h_K, T h_K>
             = sum_{K != L} theta_K theta_L <h_K, T h_L>.

All three are mean zero.  Their variances have closed forms --

    Var(Y) = sum_K <f, h_K>^2,
    Var(Z) = sum_{K != L} <h_K,Th_L><h_L,Th_K> + sum_{K != L} <h_K,Th_L>^2

-- and are dominated by norm bounds that decay in the block level:

    Var(Y) <= |f|_q^2  |U B|^{1/p} 2^{-N/p},
    Var(W) <= |x|_p^2  |U B|^{1/q} 2^{-N/q},
    Var(Z) <= 2 |T|^2  |U B|^{1/p + 1} 2^{-N/q},

with U B the union of the intervals.  `exact_moments` enumerates all
2^{|B|} patterns and cross-checks both the closed forms and the bounds;
`monte_carlo_moments` estimates them when enumeration is out of reach.

`sign_search` then looks for a single pattern driving several such
variables below given tolerances at once.  Enumeration is vectorised over
patterns; the winner is deterministic (smallest pattern index in exhaustive
mode, earliest draw in sampled mode), so concurrent evaluation cannot
change the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import DyadicInterval, OmegaIndex
from .errors import ResourceLimitError
from .grids import GridFunction, as_exponent, pairing
from .haarsys import BasisRegistry
from .operators import OperatorMatrix, opnorm_upper_unconditional

ENUMERATION_CAP = 20

__all__ = [
    "ENUMERATION_CAP",
    "SignVector",
    "RandomBlockSpec",
    "MomentReport",
    "SignSearchFailure",
    "eval_Y",
    "eval_W",
    "eval_Z",
    "exact_moments",
    "monte_carlo_moments",
    "condition_star",
    "sign_search",
]


@dataclass(frozen=True)
class SignVector:
    """A total assignment of +-1 signs to a tuple of intervals."""

    intervals: tuple[DyadicInterval, ...]
    signs: tuple[int, ...]

    def __post_init__(self):
        if len(self.intervals) != len(self.signs):
            raise ValueError("one sign per interval")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError("signs must be -1 or +1")
        if len(set(self.intervals)) != len(self.intervals):
            raise ValueError("intervals must be distinct")

    @classmethod
    def from_index(cls, intervals, pattern_index: int) -> "SignVector":
        """Pattern ``i``: bit ``j`` of ``i`` flips interval ``j`` (0 = all +1)."""
        intervals = tuple(intervals)
        signs = tuple(1 - 2 * ((pattern_index >> j) & 1) for j in range(len(intervals)))
        return cls(intervals, signs)

    def __getitem__(self, interval: DyadicInterval) -> int:
        try:
            return self.signs[self.intervals.index(interval)]
        except ValueError:
            raise KeyError(f"{interval} is not in this sign vector") from None

    def as_array(self) -> np.ndarray:
        return np.array(self.signs, dtype=np.int8)


class RandomBlockSpec:
    """A block population: intervals at one level, hosted on one copy.

    The intervals must share a level ``N`` resolvable on the host copy of
    the registry; any sign pattern then realizes a single integer-valued
    block function, so pairings against it are exact.
    """

    def __init__(self, registry: BasisRegistry, host_copy: int, intervals):
        intervals = tuple(intervals)
        if not intervals:
            raise ValueError("need at least one interval")
        level = intervals[0].level
        if any(k.level != level for k in intervals):
            raise ValueError("all intervals must sit at one common level")
        if len(set(intervals)) != len(intervals):
            raise ValueError("intervals must be distinct")
        if host_copy not in registry.depths:
            raise ValueError(f"copy {host_copy} is not in the registry")
        if level > registry.depths[host_copy]:
            raise ValueError(
                f"level {level} exceeds the depth {registry.depths[host_copy]} "
                f"of copy {host_copy}"
            )
        self.registry = registry
        self.host_copy = host_copy
        self.intervals = tuple(sorted(intervals, key=lambda k: k.sort_key()))
        self.level = level

    @property
    def size(self) -> int:
        return len(self.intervals)

    @property
    def union_measure(self) -> Fraction:
        return Fraction(len(self.intervals), 2**self.level)

    def omega_indices(self) -> tuple[OmegaIndex, ...]:
        return tuple(OmegaIndex(self.host_copy, k) for k in self.intervals)

    def sign_array(self, theta: SignVector | Sequence[int]) -> np.ndarray:
        """Signs aligned to this spec's interval order."""
        if isinstance(theta, SignVector):
            if theta.intervals == self.intervals:
                return theta.as_array()
            return np.array([theta[k] for k in self.intervals], dtype=np.int8)
        arr = np.asarray(theta)
        if arr.shape != (self.size,):
            raise ValueError("sign count must match the interval count")
        if not np.all(np.abs(arr) == 1):
            raise ValueError("signs must be -1 or +1")
        return arr.astype(np.int8)

    def block(self, theta: SignVector | Sequence[int]) -> GridFunction:
        """Realize ``sum_K theta_K h_K`` as one integer summand."""
        signs = self.sign_array(theta)
        res = self.registry.resolution_of(self.host_copy)
        vals = np.zeros(2**res, dtype=np.int64)
        for s, k in zip(signs, self.intervals):
            vals += int(s) * k.haar_values(res).astype(np.int64)
        return GridFunction.from_summands(
            self.registry.grid, [(self.host_copy, vals)]
        )

    def pairings(self, g: GridFunction) -> np.ndarray:
        """The vector ``(<g, h_K>)_K`` of pairings against the member Haars."""
        return np.array(
            [
                float(pairing(g, self.registry.haar(t)))
                for t in self.omega_indices()
            ]
        )

    def interaction_matrix(self, T: OperatorMatrix) -> np.ndarray:
        """``C[a, b] = <h_{K_a}, T h_{K_b}>`` through the coefficient Gram."""
        rows = [self.registry.index_of[t] for t in self.omega_indices()]
        meas = float(self.intervals[0].measure)
        return T.entries[np.ix_(rows, rows)] * meas


def eval_Y(spec: RandomBlockSpec, f: GridFunction, theta) -> float:
    """``<f, b(theta)>``."""
    return float(np.dot(spec.sign_array(theta).astype(float), spec.pairings(f)))


def eval_W(spec: RandomBlockSpec, x: GridFunction, theta) -> float:
    """``<b(theta), x>``."""
    return float(np.dot(spec.sign_array(theta).astype(float), spec.pairings(x)))


def eval_Z(spec: RandomBlockSpec, T: OperatorMatrix, theta) -> float:
    """``<b, Tb> -`` its diagonal part, via the coefficient Gram."""
    th = spec.sign_array(theta).astype(float)
    C = spec.interaction_matrix(T)
    return float(th @ C @ th - np.trace(C))


@dataclass(frozen=True)
class MomentReport:
    kind: str
    mode: str  # "exact" | "monte-carlo"
    mean: float
    variance: float
    closed_form: float | None
    bound: float
    bound_passed: bool
    count: int  # enumerated patterns, or drawn samples
    standard_error: float | None = None

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "mean": self.mean,
            "variance": self.variance,
            "closed_form": self.closed_form,
            "bound": self.bound,
            "bound_passed": self.bound_passed,
            "count": self.count,
            "standard_error": self.standard_error,
        }


def sign_matrix(n: int) -> np.ndarray:
    """All ``2^n`` sign rows; row ``i`` is ``SignVector.from_index(-, i)``."""
    idx = np.arange(2**n, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)


def _norm_sq(f: GridFunction, r: float) -> float:
    # (mean |f|^r)^{2/r} evaluated in one power: for r = 2 the exponent is
    # exactly 1.0, keeping the tight bound comparisons honest
    return float(np.mean(np.abs(np.asarray(f.dense, dtype=float)) ** r) ** (2.0 / r))


def _values_and_bound(kind, spec, data, exponent, t_norm_upper):
    """Per-pattern value computer, closed-form variance, and lemma bound."""
    e = as_exponent(exponent)
    union = float(spec.union_measure)
    two_N = 2.0 ** (-spec.level)
    if kind in ("Y", "W"):
        if not isinstance(data, GridFunction):
            raise TypeError(f"{kind} pairs the block against a GridFunction")
        c = spec.pairings(data)
        closed = math.fsum(x * x for x in c)
        if kind == "Y":
            bound = _norm_sq(data, e.q) * union ** (1.0 / e.p) * two_N ** (1.0 / e.p)
        else:
            bound = _norm_sq(data, e.p) * union ** (1.0 / e.q) * two_N ** (1.0 / e.q)
        return (lambda S: S.astype(float) @ c), closed, bound
    if kind != "Z":
        raise ValueError(f"unknown kind {kind!r}; expected 'Y', 'W' or 'Z'")
    if not isinstance(data, OperatorMatrix):
        raise TypeError("Z pairs the block against an operator matrix")
    if t_norm_upper is None:
        if data.is_diagonal():
            t_norm_upper = opnorm_upper_unconditional(data)
        else:
            raise ValueError(
                "Z bound needs a certified operator norm upper bound "
                "(t_norm_upper) for a non-diagonal operator"
            )
    C = spec.interaction_matrix(data)
    off = C - np.diag(np.diag(C))
    closed = float(np.sum(off * off.T) + np.sum(off * off))
    bound = (
        2.0 * t_norm_upper**2 * union ** (1.0 / e.p + 1.0) * two_N ** (1.0 / e.q)
    )

    def values(S):
        Sf = S.astype(float)
        return np.einsum("ij,jk,ik->i", Sf, C, Sf) - np.trace(C)

    return values, closed, bound


def exact_moments(
    kind: str,
    spec: RandomBlockSpec,
    data,
    *,
    exponent=2.0,
    t_norm_upper: float | None = None,
    cap: int = ENUMERATION_CAP,
) -> MomentReport:
    """Enumerate all sign patterns; report exact mean/variance and checks.

    The report's ``closed_form`` repeats the variance through its proof
    identity; callers comparing the two at 1e-10 get an independent check
    of the enumeration.  ``bound_passed`` compares the enumerated variance
    against the norm bound with no tolerance.
    """
    if spec.size > cap:
        raise ResourceLimitError(
            f"2^{spec.size} patterns exceed the enumeration cap 2^{cap}; "
            "use monte_carlo_moments"
        )
    values, closed, bound = _values_and_bound(kind, spec, data, exponent, t_norm_upper)
    v = np.asarray(values(sign_matrix(spec.size)), dtype=float)
    n = len(v)
    mean = math.fsum(v) / n
    variance = math.fsum((x - mean) ** 2 for x in v) / n
    return MomentReport(
        kind=kind,
        mode="exact",
        mean=mean,
        variance=variance,
        closed_form=closed,
        bound=bound,
        bound_passed=variance <= bound,
        count=n,
    )


def monte_carlo_moments(
    kind: str,
    spec: RandomBlockSpec,
    data,
    *,
    samples: int = 4096,
    seed: int = 0,
    exponent=2.0,
    t_norm_upper: float | None = None,
) -> MomentReport:
    """Estimate the moments from uniform sign draws (seeded)."""
    if samples < 2:
        raise ValueError("need at least two samples")
    values, closed, bound = _values_and_bound(kind, spec, data, exponent, t_norm_upper)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    S = rng.choice(np.array([-1, 1], dtype=np.int8), size=(samples, spec.size))
    v = np.asarray(values(S), dtype=float)
    mean = float(v.mean())
    variance = float(v.var(ddof=1))
    # spread of the squared deviations gives the variance estimate its own
    # standard error
    sq = (v - mean) ** 2
    stderr = float(sq.std(ddof=1) / math.sqrt(samples))
    return MomentReport(
        kind=kind,
        mode="monte-carlo",
        mean=mean,
        variance=variance,
        closed_form=closed,
        bound=bound,
        bound_passed=variance <= bound,
        count=samples,
        standard_error=stderr,
    )


def condition_star(
    n: int,
    t_norm_upper: float,
    eta: float,
    eta_list: Sequence[float],
    p,
) -> int:
    """Smallest block level making the union of Chebyshev failures improbable.

    Returns the least integer strictly exceeding

        p^* ( 2 log2 |T| + log2( 2^{2n+3} / eta^2 + sum eta_j^{-2} ) )

    where ``eta`` budgets the quadratic and same-tolerance linear targets
    and ``eta_list`` the remaining per-target tolerances.  Base-2 logs: the
    variance bounds decay like powers of 2 in the level, so this base is
    the one that makes the failure probability drop below 1.
    """
    e = as_exponent(p)
    if t_norm_upper <= 0:
        raise ValueError("operator norm bound must be positive")
    if eta <= 0 or any(x <= 0 for x in eta_list):
        raise ValueError("tolerances must be positive")
    rhs = e.p_star * (
        2 * math.log2(t_norm_upper)
        + math.log2(2.0 ** (2 * n + 3) / eta**2 + math.fsum(x**-2 for x in eta_list))
    )
    return math.floor(rhs) + 1


@dataclass(frozen=True)
class SignSearchFailure:
    """No pattern met every target; carries the least-bad candidate."""

    best: SignVector
    violations: tuple[tuple[int, float, float], ...]  # (target, |value|, tol)
    evaluated: int

    @property
    def worst_ratio(self) -> float:
        return max(abs(v) / t for _, v, t in self.violations) if self.violations else 0.0


TargetValue = np.ndarray | Callable


def _target_values(rv: TargetValue, S: np.ndarray) -> np.ndarray:
    """Evaluate one target on every sign row: linear, quadratic or callable."""
    if callable(rv):
        return np.array([float(rv(row)) for row in S])
    arr = np.asarray(rv, dtype=float)
    Sf = S.astype(float)
    if arr.ndim == 1:
        return Sf @ arr
    if arr.ndim == 2:
        return np.einsum("ij,jk,ik->i", Sf, arr, Sf) - np.trace(arr)
    raise ValueError("target must be a vector, a matrix or a callable")


def sign_search(
    spec: RandomBlockSpec,
    targets: Sequence[tuple[TargetValue, float]],
    mode: str = "exhaustive",
    *,
    budget: int | None = None,
    seed: int = 0,
    fail_probability_bound: float | None = None,
) -> SignVector | SignSearchFailure:
    """Find one sign pattern with ``|value| < tol`` for every target.

    Targets are pairs ``(rv, tol)`` where ``rv`` is a coefficient vector
    (linear form ``theta . c``), a square matrix ``C`` (off-diagonal
    quadratic form), or a callable on a sign row.  Exhaustive mode scans
    pattern indices in order and returns the smallest satisfying index, so
    it is complete: a `SignSearchFailure` means no pattern exists.  Sampled
    mode draws i.i.d. uniform patterns from the seed and returns the first
    hit; its default budget is 64 times the expected number of draws
    implied by a caller-supplied Chebyshev failure probability.
    """
    tols = [t for _, t in targets]
    if any(t <= 0 for t in tols):
        raise ValueError("tolerances must be positive")
    n = spec.size
    if mode == "exhaustive":
        if budget is not None and 2**n > budget:
            raise ResourceLimitError(
                f"2^{n} patterns exceed the search budget {budget}; "
                "use sampled mode"
            )
        S = sign_matrix(n)
    elif mode == "sampled":
        if budget is None:
            if fail_probability_bound is not None and fail_probability_bound < 1:
                expected = 1.0 / (1.0 - fail_probability_bound)
                budget = 64 * math.ceil(expected)
            else:
                budget = 4096
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        S = rng.choice(np.array([-1, 1], dtype=np.int8), size=(budget, n))
    else:
        raise ValueError(f"unknown mode {mode!r}; expected exhaustive or sampled")

    ok = np.ones(len(S), dtype=bool)
    worst = np.zeros(len(S))
    for rv, tol in targets:
        vals = np.abs(_target_values(rv, S))
        ok &= vals < tol
        np.maximum(worst, vals / tol, out=worst)
    hits = np.flatnonzero(ok)
    if len(hits):
        row = S[hits[0]]
        return SignVector(spec.intervals, tuple(int(s) for s in row))
    best_row = S[int(np.argmin(worst))]
    best = SignVector(spec.intervals, tuple(int(s) for s in best_row))
    violations = []
    arr = best.as_array()[None, :]
    for i, (rv, tol) in enumerate(targets):
        val = float(_target_values(rv, arr)[0])
        if not abs(val) < tol:
            violations.append((i, abs(val), tol))
    return SignSearchFailure(best, tuple(violations), evaluated=len(S))
