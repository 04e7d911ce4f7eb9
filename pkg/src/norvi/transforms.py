"""Variational transforms for noisy-OR conditionals.

A positive finding with activation x = leak + sum_j theta_j d_j has
conditional log-probability f(x) = log(1 - exp(-x)).  f is concave and
increasing on (0, inf), which admits two linear-in-d surrogates:

* upper: by conjugate duality, f(x) <= xi*x - fire_conjugate(xi) for every
  slope xi > 0, with equality at xi = tangent_xi(x);
* lower: by Jensen's inequality, spreading the activation over the parents
  with a mixture q gives a bound that is exact when q concentrates in
  proportion to the active parents' weights.

Replacing the conditional by either surrogate turns the finding into a
constant plus one independent multiplier per parent disease, removing the
finding's couplings from the graph.  All algebra here stays in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import FindingCPD, q_to_theta

__all__ = [
    "DEFAULT_LEAK_FLOOR",
    "FactorizedEvidence",
    "fire_logprob",
    "fire_logprob_grad",
    "fire_conjugate",
    "tangent_xi",
    "upper_factor",
    "lower_factor",
]

_LN2 = math.log(2.0)

# Lower transforms need a strictly positive leak (f(0) = -inf); zero-leak
# findings are evaluated at this floor instead.  Equals q_to_theta(1e-6).
DEFAULT_LEAK_FLOOR = q_to_theta(1e-6)


def _as_positive(x, what: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0.0):
        raise ValueError(f"{what} must be strictly positive, got {x!r}")
    return arr


def _maybe_scalar(out: np.ndarray, template) -> float | np.ndarray:
    return float(out) if np.ndim(template) == 0 else out


def fire_logprob(x):
    """log(1 - exp(-x)) for activation x > 0, accurate across the whole domain.

    Uses log(-expm1(-x)) below log 2 and log1p(-exp(-x)) above, which keeps
    the relative error at float rounding level for x from 1e-12 up to where
    the result underflows.
    """
    arr = _as_positive(x, "activation")
    small = np.log(-np.expm1(-np.minimum(arr, _LN2)))
    large = np.log1p(-np.exp(-np.maximum(arr, _LN2)))
    return _maybe_scalar(np.where(arr < _LN2, small, large), x)


def fire_logprob_grad(x):
    """Derivative of fire_logprob: exp(-x) / (1 - exp(-x)), overflow-free."""
    arr = _as_positive(x, "activation")
    return _maybe_scalar(np.exp(-arr) / (-np.expm1(-arr)), x)


def fire_conjugate(xi):
    """Conjugate of fire_logprob: -xi*log(xi) + (xi+1)*log(xi+1).

    Computed as xi*log1p(1/xi) + log1p(xi); the continuous extension at
    xi -> 0+ is 0.
    """
    arr = _as_positive(xi, "variational slope")
    return _maybe_scalar(arr * np.log1p(1.0 / arr) + np.log1p(arr), xi)


def tangent_xi(x):
    """Slope at which the conjugate bound touches fire_logprob at x.

    With xi = tangent_xi(x), xi*x - fire_conjugate(xi) == fire_logprob(x).
    """
    return fire_logprob_grad(x)


@dataclass(frozen=True)
class FactorizedEvidence:
    """A finding's evidence reduced to log_const + sum_j multipliers[j] * d_j.

    Multipliers appear only on the source finding's parents; absent parents
    implicitly multiply by 1.
    """

    log_const: float
    multipliers: Mapping[int, float]

    def __post_init__(self):
        object.__setattr__(self, "multipliers", {int(j): float(m) for j, m in sorted(self.multipliers.items())})

    def log_value(self, d: Mapping[int, int] | np.ndarray) -> float:
        """Evaluate the surrogate's log value at a disease configuration."""
        total = self.log_const
        for j, m in self.multipliers.items():
            total += m * float(d[j])
        return total


def upper_factor(finding: FindingCPD, xi: float) -> FactorizedEvidence:
    """Conjugate upper bound for one positive finding at slope xi > 0.

    exp(log_value(d)) >= P(finding fires | d) for every binary configuration,
    with equality where the tangent touches.
    """
    if not xi > 0.0:
        raise ValueError(f"variational slope must be strictly positive, got {xi!r}")
    log_const = xi * finding.leak - fire_conjugate(xi)
    multipliers = {j: xi * t for j, t in finding.parents.items()}
    return FactorizedEvidence(float(log_const), multipliers)


def lower_factor(
    finding: FindingCPD,
    q: Mapping[int, float],
    leak_floor: float = DEFAULT_LEAK_FLOOR,
) -> FactorizedEvidence:
    """Jensen lower bound for one positive finding under mixture q.

    q maps a subset of the finding's parents to nonnegative weights summing
    to 1 (within 1e-12); a zero weight contributes a zero multiplier (the
    limit of the bound as the weight vanishes), so simplex boundary points
    are valid.  exp(log_value(d)) <= P(finding fires | d) everywhere.

    Zero-leak findings are evaluated at ``leak_floor`` because the bound
    needs a finite log-probability at the all-off configuration; the result
    then bounds the floored model, which differs from the true one only when
    the true leak is below the floor.
    """
    bad = set(q) - set(finding.parents)
    if bad:
        raise ValueError(f"mixture weights on non-parents {sorted(bad)} of finding {finding.id}")
    weights = {int(j): float(w) for j, w in q.items()}
    if any(w < 0.0 for w in weights.values()):
        raise ValueError(f"negative mixture weight in {weights}")
    total = math.fsum(weights.values())
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"mixture weights sum to {total!r}, expected 1")
    leak = max(finding.leak, leak_floor)
    if leak <= 0.0:
        raise ValueError(
            f"finding {finding.id} has zero leak and the leak floor is disabled; "
            "the lower transform is undefined at zero activation"
        )
    f0 = fire_logprob(leak)
    multipliers: dict[int, float] = {}
    for j, w in weights.items():
        if w == 0.0:
            multipliers[j] = 0.0
        else:
            multipliers[j] = w * (fire_logprob(leak + finding.parents[j] / w) - f0)
    return FactorizedEvidence(float(f0), multipliers)
