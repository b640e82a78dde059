"""Weighted sequence space with a two-norm maximum, and its block game.

The space puts on finitely supported sequences the norm
``max(||x||_p, ||(x_n w_n)||_2)`` for a positive weight sequence ``w`` and
``p > 2``.  Disjoint index blocks ``E`` carry canonical block vectors

    b = sum_{n in E} w_n^{2/(p-2)} e_n,
    beta = (sum_{n in E} w_n^{2p/(p-2)})^{(p-2)/2p},

whose normalized versions span a 1-complemented subspace; the projection
onto it and a round-based block-building game against an adversary are
implemented here.  Per-round game bookkeeping is exact: the quantity
``S = sum_{n in E} w_n^{2p/(p-2)}`` (the round's *budget*) is a rational
number for the supported weight families, and the required window
``w_k <= beta <= sqrt(1+eps) w_k`` is equivalent, through the strictly
monotone map ``beta = S^{(p-2)/2p}``, to the rational-interval condition
``t_k <= S <= (1+eps)^{p/(p-2)} t_k`` with ``t_k`` the budget of the
singleton ``{k}``.  All transcript invariants are decided in ``Fraction``
arithmetic, never in floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ResourceLimitError

__all__ = [
    "WeightSequence",
    "StarReport",
    "star_property",
    "XpwVector",
    "xpw_norm",
    "Block",
    "block_data",
    "block_span_project",
    "FixedScheduleAdversary",
    "RandomAdversary",
    "GreedyMaxAdversary",
    "GameRound",
    "GameTranscript",
    "play_game",
    "ImpartialEstimate",
    "impartial_equivalence",
]


class WeightSequence:
    """Positive weights ``w_n`` with exponent ``p > 2``.

    Two kinds: ``power`` (``w_n = n^{-a}``, ``a`` rational) and ``explicit``
    (a finite list).  ``budget(n)`` returns ``w_n^{2p/(p-2)}`` as an exact
    ``Fraction`` when the family supports it, which is what the game's
    round audits require; ``weight(n)`` is the float value.
    """

    def __init__(self, p, *, decay=None, values=None) -> None:
        p = Fraction(p)
        if p <= 2:
            raise ValueError("the two-norm maximum space needs p > 2")
        if (decay is None) == (values is None):
            raise ValueError("give exactly one of decay= or values=")
        self.p = p
        self.budget_exponent = 2 * p / (p - 2)
        if decay is not None:
            self.kind = "power"
            self.decay = Fraction(decay)
            self.values = None
        else:
            self.kind = "explicit"
            self.decay = None
            self.values = tuple(Fraction(v) for v in values)
            if any(v <= 0 for v in self.values):
                raise ValueError("weights must be positive")

    @classmethod
    def power(cls, p, decay) -> "WeightSequence":
        return cls(p, decay=decay)

    @classmethod
    def explicit(cls, p, values) -> "WeightSequence":
        return cls(p, values=values)

    def __len__(self) -> int:
        if self.kind == "explicit":
            return len(self.values)
        raise TypeError("a power weight family has no finite length")

    def weight(self, n: int) -> float:
        if n < 1:
            raise ValueError("weight indices start at 1")
        if self.kind == "power":
            return float(n) ** (-float(self.decay))
        if n > len(self.values):
            raise ValueError(
                f"index {n} beyond the {len(self.values)} explicit weights"
            )
        return float(self.values[n - 1])

    def weights(self, count: int) -> np.ndarray:
        return np.array([self.weight(n) for n in range(1, count + 1)])

    def budget(self, n: int) -> Fraction:
        """``w_n^{2p/(p-2)}`` exactly, or a ValueError when not rational."""
        if n < 1:
            raise ValueError("weight indices start at 1")
        if self.kind == "power":
            e = self.decay * self.budget_exponent
            if e.denominator != 1:
                raise ValueError(
                    "budget exponent "
                    f"{e} is not an integer; exact round audits need "
                    "decay * 2p/(p-2) integral"
                )
            if e >= 0:
                return Fraction(1, n ** e.numerator)
            return Fraction(n ** (-e.numerator))
        q = self.budget_exponent
        if q.denominator != 1:
            raise ValueError(
                f"budget exponent {q} is not an integer; exact round audits "
                "for explicit weights need 2p/(p-2) integral"
            )
        if n > len(self.values):
            raise ValueError(
                f"index {n} beyond the {len(self.values)} explicit weights"
            )
        return self.values[n - 1] ** q.numerator

    def __repr__(self) -> str:
        if self.kind == "power":
            return f"WeightSequence(p={self.p}, decay={self.decay})"
        return f"WeightSequence(p={self.p}, {len(self.values)} explicit weights)"


@dataclass(frozen=True)
class StarReport:
    """Outcome of the weight-decay divergence criterion.

    ``holds`` is True/False when decidable and None for finite data, where
    divergence of the budget series cannot be read off finitely many terms;
    ``detail`` carries the decision basis (the series exponent, or partial
    sums for the undecidable case).
    """

    holds: bool | None
    reason: str
    detail: dict


def star_property(w: WeightSequence) -> StarReport:
    """Decide ``w_n -> 0`` and divergence of ``sum w_n^{2p/(p-2)}``.

    For the power family the series is a p-series: it diverges exactly when
    its exponent ``decay * 2p/(p-2)`` is at most one.  Explicit finite
    families get a three-valued answer with the partial sums reported.
    """
    if w.kind == "power":
        series_exponent = w.decay * w.budget_exponent
        if w.decay <= 0:
            return StarReport(
                holds=False,
                reason="weights do not tend to zero",
                detail={"decay": w.decay},
            )
        holds = series_exponent <= 1
        reason = (
            f"series exponent {series_exponent} "
            + ("<= 1: budget series diverges" if holds else "> 1: budget series converges")
        )
        return StarReport(holds=holds, reason=reason, detail={
            "decay": w.decay, "series_exponent": series_exponent,
        })
    partial = []
    total = Fraction(0)
    for n in range(1, len(w.values) + 1):
        total += w.budget(n)
        partial.append(total)
    return StarReport(
        holds=None,
        reason="divergence is undecidable from finitely many weights",
        detail={"partial_budget_sums": tuple(partial)},
    )


@dataclass(frozen=True, eq=False)
class XpwVector:
    """Finitely supported coefficients (entry ``j`` is the coefficient of
    index ``j + 1``) together with their weight family."""

    coeffs: np.ndarray
    weights: WeightSequence

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "coeffs", np.asarray(self.coeffs, dtype=float)
        )
        if self.coeffs.ndim != 1:
            raise ValueError("coefficients must form a one-dimensional array")

    def norm(self) -> float:
        return xpw_norm(self)

    def padded(self, size: int) -> "XpwVector":
        if size < len(self.coeffs):
            raise ValueError("cannot pad to a smaller size")
        out = np.zeros(size)
        out[: len(self.coeffs)] = self.coeffs
        return XpwVector(out, self.weights)


def xpw_norm(x: XpwVector) -> float:
    """``max(||x||_p, ||(x_n w_n)||_2)`` for sequence coefficients."""
    c = x.coeffs
    if c.size == 0:
        return 0.0
    p = float(x.weights.p)
    lp = float(np.sum(np.abs(c) ** p)) ** (1.0 / p)
    l2w = float(np.sqrt(np.sum((c * x.weights.weights(c.size)) ** 2)))
    return max(lp, l2w)


@dataclass(frozen=True, eq=False)
class Block:
    """The canonical block vector on an index set.

    ``coeffs[i]`` is the coefficient ``w_n^{2/(p-2)}`` at ``indices[i]``;
    ``budget`` is the exact rational ``sum w_n^{2p/(p-2)}``, whose
    ``(p-2)/2p`` power is ``beta``.  ``p_norm ** p == budget`` (the
    coefficient exponents collapse), so the normalization constants come
    from the same exact descriptor.
    """

    indices: tuple[int, ...]
    coeffs: np.ndarray
    beta: float
    budget: Fraction
    weights: WeightSequence

    @property
    def p_norm(self) -> float:
        return float(self.budget) ** (1.0 / float(self.weights.p))

    @property
    def two_norm_sq(self) -> float:
        return float(np.sum(self.coeffs**2))

    @property
    def functional_scale(self) -> float:
        """``||b||_p / ||b||_2^2``, the projection functional's scale."""
        return self.p_norm / self.two_norm_sq

    def normalized(self) -> np.ndarray:
        """Coefficients of ``b / ||b||_p`` over ``indices``."""
        return self.coeffs / self.p_norm

    def functional(self) -> np.ndarray:
        """Coefficients of the biorthogonal functional over ``indices``."""
        return self.functional_scale * self.coeffs

    def vector(self, size: int | None = None) -> XpwVector:
        """The normalized block as a dense vector of the given size."""
        top = max(self.indices)
        if size is None:
            size = top
        if size < top:
            raise ValueError("size does not cover the block's support")
        out = np.zeros(size)
        out[np.array(self.indices) - 1] = self.normalized()
        return XpwVector(out, self.weights)


def block_data(E: Sequence[int], w: WeightSequence) -> Block:
    """Block vector, its normalization, and the window quantity ``beta``.

    For a singleton the exponents cancel (``beta = w_n`` identically), so
    the float value is taken straight from the weight rather than through
    a power round trip.
    """
    indices = tuple(sorted(set(int(n) for n in E)))
    if not indices:
        raise ValueError("a block needs at least one index")
    if len(indices) != len(list(E)):
        raise ValueError("block indices must be distinct")
    if indices[0] < 1:
        raise ValueError("weight indices start at 1")
    p = float(w.p)
    coeffs = np.array([w.weight(n) ** (2.0 / (p - 2.0)) for n in indices])
    budget = sum(w.budget(n) for n in indices)
    if len(indices) == 1:
        beta = w.weight(indices[0])
    else:
        beta = float(budget) ** ((p - 2.0) / (2.0 * p))
    return Block(
        indices=indices, coeffs=coeffs, beta=beta, budget=budget, weights=w
    )


def block_span_project(x: XpwVector, blocks: Sequence[Block]) -> XpwVector:
    """Project onto the span of the normalized blocks.

    ``P(x) = sum_k <||b_k||_p ||b_k||_2^{-2} b_k, x> (b_k / ||b_k||_p)``;
    requires pairwise disjoint supports (that is what makes it a norm-one
    projection).
    """
    seen: dict[int, int] = {}
    for j, b in enumerate(blocks):
        for n in b.indices:
            if n in seen:
                raise ValueError(
                    f"blocks {seen[n]} and {j} overlap at index {n}"
                )
            seen[n] = j
    out = np.zeros(len(x.coeffs))
    for b in blocks:
        pos = np.array(b.indices) - 1
        inside = pos[pos < len(x.coeffs)]
        if inside.size == 0:
            continue
        pad = np.zeros(len(b.indices))
        pad[: inside.size] = x.coeffs[inside]  # indices are sorted ascending
        weight = b.functional_scale * float(np.dot(b.coeffs, pad))
        out[inside] += weight * b.normalized()[: inside.size]
    return XpwVector(out, x.weights)


# -- the block-building game ------------------------------------------------


class FixedScheduleAdversary:
    """Plays a preset list of moves, then keeps repeating the last one."""

    def __init__(self, moves: Sequence[int]) -> None:
        self.moves = [int(m) for m in moves]
        if not self.moves or any(m < 1 for m in self.moves):
            raise ValueError("moves must be positive integers")

    def __call__(self, round_index: int, frontier: int) -> int:
        if round_index <= len(self.moves):
            return self.moves[round_index - 1]
        return self.moves[-1]


class RandomAdversary:
    """Plays seeded uniform moves within a window past the frontier."""

    def __init__(self, seed: int, reach: int = 16) -> None:
        self.rng = np.random.default_rng(seed)
        self.reach = int(reach)

    def __call__(self, round_index: int, frontier: int) -> int:
        return int(self.rng.integers(1, frontier + self.reach + 1))

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)


class GreedyMaxAdversary:
    """Always demands far past the frontier (multiplicative pressure)."""

    def __init__(self, factor: int = 2, offset: int = 1) -> None:
        if factor < 1:
            raise ValueError("factor must be at least 1")
        self.factor = int(factor)
        self.offset = int(offset)

    def __call__(self, round_index: int, frontier: int) -> int:
        return self.factor * max(frontier, 1) + self.offset


@dataclass(frozen=True, eq=False)
class GameRound:
    """One completed round: the move, the chosen block, and its audit data."""

    move: int
    block: Block
    budget_target: Fraction
    budget_cap_ok: bool

    @property
    def indices(self) -> tuple[int, ...]:
        return self.block.indices

    @property
    def beta(self) -> float:
        return self.block.beta


@dataclass(frozen=True, eq=False)
class GameTranscript:
    """All rounds of one game, with exact invariant verification."""

    weights: WeightSequence
    eps: Fraction
    rounds: tuple[GameRound, ...]
    index_budget: int

    def blocks(self) -> list[Block]:
        return [r.block for r in self.rounds]

    def ambient_size(self) -> int:
        return max(max(r.indices) for r in self.rounds)

    def block_vectors(self, size: int | None = None) -> list[XpwVector]:
        if size is None:
            size = self.ambient_size()
        return [r.block.vector(size) for r in self.rounds]

    def verify(self) -> dict:
        """Recheck every transcript invariant in exact arithmetic.

        Ordering and disjointness are integer facts; the window
        ``w_k <= beta_k <= sqrt(1+eps) w_k`` is decided on the rational
        budgets (see the module docstring for the monotone equivalence);
        biorthogonality is exact because off-diagonal pairs have disjoint
        supports (no common term at all) and each diagonal pair's
        normalizations cancel over one shared descriptor; the check
        confirms the stored arrays are those derivations.
        """
        w = self.weights
        q = w.p / (w.p - 2)
        cap_base = 1 + self.eps
        ordering = []
        windows = []
        derivations = []
        prev_max = 0
        for k, r in enumerate(self.rounds, start=1):
            ordering.append(min(r.indices) > r.move and min(r.indices) > prev_max)
            prev_max = max(r.indices)
            S = sum(w.budget(n) for n in r.indices)
            t_k = w.budget(k)
            low = S >= t_k
            high = (S / t_k) ** q.denominator <= cap_base**q.numerator
            windows.append(S == r.block.budget and low and high)
            derivations.append(
                np.array_equal(r.block.functional(),
                               r.block.functional_scale * r.block.coeffs)
                and np.array_equal(r.block.normalized(),
                                   r.block.coeffs / r.block.p_norm)
            )
        supports = [set(r.indices) for r in self.rounds]
        disjoint = all(
            not (supports[i] & supports[j])
            for i in range(len(supports))
            for j in range(i + 1, len(supports))
        )
        report = {
            "ordering": all(ordering),
            "budget_window": all(windows),
            "disjoint_supports": disjoint,
            "biorthogonal": disjoint and all(derivations),
            "rounds": len(self.rounds),
        }
        report["ok"] = all(
            v for key, v in report.items() if isinstance(v, bool)
        )
        return report


def play_game(
    adversary: Callable[[int, int], int],
    rounds: int,
    w: WeightSequence,
    eps,
    *,
    index_budget: int = 100_000,
) -> GameTranscript:
    """Build one block per round against the adversary's moves.

    After the round's move ``n_k``, indices past ``max(n_k, frontier)`` are
    accumulated greedily until the exact budget reaches the target
    ``t_k = w_k^{2p/(p-2)}``; an index whose term would push the budget past
    the cap ``(1+eps)^{p/(p-2)} t_k`` is skipped (later terms are smaller,
    and a divergent budget series keeps supplying them), which is what makes
    the strategy total rather than existence-only.  Exhausting
    ``index_budget`` indices without filling the window is an explicit
    per-round failure.
    """
    if rounds < 1:
        raise ValueError("need at least one round")
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    q = w.p / (w.p - 2)
    cap_base = 1 + eps
    out: list[GameRound] = []
    frontier = 0
    for k in range(1, rounds + 1):
        move = int(adversary(k, frontier))
        if move < 1:
            raise ValueError(f"round {k}: adversary move must be positive")
        t_k = w.budget(k)
        cap_num = cap_base**q.numerator  # compare (S/t)^den <= this, exactly
        chosen: list[int] = []
        S = Fraction(0)
        n = max(move, frontier) + 1
        scanned = 0
        while S < t_k:
            if scanned >= index_budget:
                raise ResourceLimitError(
                    f"round {k}: scanned {index_budget} indices past "
                    f"{max(move, frontier)} without filling the budget window"
                )
            candidate = S + w.budget(n)
            if (candidate / t_k) ** q.denominator <= cap_num:
                S = candidate
                chosen.append(n)
            n += 1
            scanned += 1
        block = block_data(chosen, w)
        within_cap = (S / t_k) ** q.denominator <= cap_num
        out.append(
            GameRound(
                move=move, block=block, budget_target=t_k,
                budget_cap_ok=within_cap,
            )
        )
        frontier = max(block.indices)
    return GameTranscript(
        weights=w, eps=eps, rounds=tuple(out), index_budget=index_budget
    )


# -- equivalence estimation ---------------------------------------------------


@dataclass(frozen=True)
class ImpartialEstimate:
    """Sampled lower estimate of an impartial equivalence constant.

    ``forward`` is ``(max ratio)^2`` and ``backward`` ``(1 / min ratio)^2``
    over sampled coefficient vectors, with ratio ``norm_x / norm_y``; the
    constant is their maximum.  Being sampled, it can only falsify a
    claimed constant, never certify one.
    """

    constant: float
    forward: float
    backward: float
    samples: int


def impartial_equivalence(
    xs: Sequence[np.ndarray],
    ys: Sequence[np.ndarray],
    norm_x: Callable[[np.ndarray], float],
    norm_y: Callable[[np.ndarray], float],
    *,
    samples: int = 1000,
    seed: int = 0,
) -> ImpartialEstimate:
    """Estimate the two-sided equivalence constant of two finite families."""
    if len(xs) != len(ys):
        raise ValueError("families must have equal length")
    if not xs:
        raise ValueError("families must be non-empty")
    X = np.column_stack([np.asarray(x, dtype=float) for x in xs])
    Y = np.column_stack([np.asarray(y, dtype=float) for y in ys])
    rng = np.random.default_rng(seed)
    hi = 0.0
    lo = math.inf
    for _ in range(samples):
        a = rng.standard_normal(len(xs))
        r = norm_x(X @ a) / norm_y(Y @ a)
        hi = max(hi, r)
        lo = min(lo, r)
    return ImpartialEstimate(
        constant=max(hi, 1.0 / lo) ** 2,
        forward=hi**2,
        backward=(1.0 / lo) ** 2,
        samples=samples,
    )
