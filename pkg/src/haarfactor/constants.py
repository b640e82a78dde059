"""Named constants of the factorization theory, as functions of the exponent.

All of these are increasing in ``p* = max(p, p/(p-1))`` and equal their
minimal value at ``p = 2``.  They are *sound upper bounds* used by
certificates; nothing here is estimated numerically.
"""

from __future__ import annotations

import math

from .grids import as_exponent

__all__ = [
    "burkholder_constant",
    "diagonal_multiplier_bound",
    "complementation_constant",
    "large_diagonal_constant",
    "dichotomy_constant",
    "subspace_growth_constant",
    "constants_report",
]


def burkholder_constant(p) -> float:
    """Unconditionality constant ``p* - 1`` of the Haar martingale differences."""
    return as_exponent(p).p_star - 1.0


def diagonal_multiplier_bound(p, max_entry: float = 1.0) -> float:
    """Norm bound ``(p*-1)^2 * max|d|`` for a diagonal Haar multiplier."""
    return burkholder_constant(p) ** 2 * abs(max_entry)


def complementation_constant(p) -> float:
    """Orthogonal-complementation bound ``2 (p*-1)^2 (p*/2)^(3/2)``.

    Bounds the norm of the natural projection onto the span of any
    distributional copy of the Haar system inside the model.
    """
    e = as_exponent(p)
    return 2.0 * (e.p_star - 1.0) ** 2 * (e.p_star / 2.0) ** 1.5


def projection_core_constant(p) -> float:
    """``(p*-1)^2 (p*/2)^(3/2)`` — half the complementation constant."""
    return complementation_constant(p) / 2.0


def large_diagonal_constant(p, delta: float, eps: float) -> float:
    """Factorization constant for operators with diagonal bounded below by
    ``delta``: ``2 (p*-1)^4 / (delta (1-eps)) * (p*/2)^(3/2)``."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    e = as_exponent(p)
    return 2.0 * (e.p_star - 1.0) ** 4 / (delta * (1.0 - eps)) * (e.p_star / 2.0) ** 1.5


def dichotomy_constant(p, eps: float) -> float:
    """Factorization constant of the two-sided alternative:
    ``4 / (1-eps) * (p*-1)^2 (p*/2)^(3/2)``."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    e = as_exponent(p)
    return 4.0 / (1.0 - eps) * (e.p_star - 1.0) ** 2 * (e.p_star / 2.0) ** 1.5


def subspace_growth_constant(p) -> dict:
    """The ``7.35 p / log p`` bound on complemented-subspace growth.

    The source states the constant without fixing the logarithm's base; we
    evaluate with the natural logarithm and flag the ambiguity explicitly.
    """
    p = as_exponent(p).p
    return {
        "value": 7.35 * p / math.log(p),
        "log_base": "e",
        "log_base_ambiguous": True,
    }


def constants_report(p, delta: float = 1.0, eps: float = 0.25) -> dict:
    """All named constants at one exponent, for reports and the CLI."""
    e = as_exponent(p)
    return {
        "p": e.p,
        "q": e.q,
        "p_star": e.p_star,
        "burkholder": burkholder_constant(e),
        "diagonal_multiplier": diagonal_multiplier_bound(e),
        "projection_core": projection_core_constant(e),
        "complementation": complementation_constant(e),
        "large_diagonal": {
            "delta": delta,
            "eps": eps,
            "value": large_diagonal_constant(e, delta, eps),
        },
        "dichotomy": {"eps": eps, "value": dichotomy_constant(e, eps)},
        "subspace_growth": subspace_growth_constant(e),
    }
