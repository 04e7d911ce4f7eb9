"""Posterior marginals and rigorous interval brackets from tuned transforms.

The tuned transformed model doubles as an inference engine: clamping a
disease inside it and taking likelihood ratios yields approximate posterior
marginals (point estimates, not bounds).  Pairing the upper and lower
transformed models on the same exact set does give guarantees: the clamped
upper/lower evaluations bracket the true joints, and the ratio combination

    lower(on) / (upper(off) + lower(on))  <=  P(d_j = 1 | evidence)
                                          <=  upper(on) / (upper(on) + lower(off))

brackets every posterior marginal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exact import QUICKSCORE_CAP
from .network import NoisyOrNetwork
from .optimizer import TransformPlan, _scan_tilted, _tilt, transformed_posterior_moments

__all__ = [
    "PosteriorEstimate",
    "JointBounds",
    "IntervalBounds",
    "approximate_marginals",
    "joint_bounds",
    "interval_posteriors",
    "interval_histogram",
]

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class PosteriorEstimate:
    """Per-disease posterior point estimates and the bound family that produced them."""

    values: np.ndarray
    family: str


def approximate_marginals(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    max_exact: int = QUICKSCORE_CAP,
) -> PosteriorEstimate:
    """Posterior marginals of the transformed model (exact when the plan is all-exact)."""
    mom = transformed_posterior_moments(network, priors, plan, findings=[], want_variance=False, max_exact=max_exact)
    return PosteriorEstimate(mom.marginals, plan.family)


def _clamped_log_joints(network, priors, plan, max_exact):
    """log mass of (positives, d_j = v) under the transformed model, for all j and both v."""
    tm = _tilt(network, priors, plan, max_exact)
    total, const, res = _scan_tilted(tm, want_joints=True)
    n = network.n_diseases
    if res is not None and res.degenerate:
        return np.full(n, _NEG_INF), np.full(n, _NEG_INF)
    log_z = np.logaddexp(tm.log_w0, tm.log_w1)
    on = total - log_z + tm.log_w1
    off = total - log_z + tm.log_w0
    if res is not None:
        on[tm.scan_ids] = const + res.log_joint(True)
        off[tm.scan_ids] = const + res.log_joint(False)
    return on, off


@dataclass(frozen=True)
class JointBounds:
    """Bracketing values for P(positives, d_j = v), in log space."""

    disease: int
    log_lower_on: float
    log_upper_on: float
    log_lower_off: float
    log_upper_off: float


def joint_bounds(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    upper_plan: TransformPlan,
    lower_plan: TransformPlan,
    disease: int,
    max_exact: int = QUICKSCORE_CAP,
) -> JointBounds:
    """Clamped evaluations of both transformed models for one disease.

    Requires the two plans to share the exact set, so the brackets refer to
    the same partition of the evidence.
    """
    _check_paired(upper_plan, lower_plan)
    u_on, u_off = _clamped_log_joints(network, priors, upper_plan, max_exact)
    l_on, l_off = _clamped_log_joints(network, priors, lower_plan, max_exact)
    j = int(disease)
    return JointBounds(j, float(l_on[j]), float(u_on[j]), float(l_off[j]), float(u_off[j]))


def _check_paired(upper: TransformPlan, lower: TransformPlan) -> None:
    if upper.family == "lower" or lower.family == "upper":
        raise ValueError("pass the upper-family plan first and the lower-family plan second")
    if upper.exact != lower.exact:
        raise ValueError("interval construction requires coinciding exact sets")
    if set(upper.positive) != set(lower.positive):
        raise ValueError("the two plans cover different positive findings")


@dataclass
class IntervalBounds:
    """Per-disease posterior brackets [lo, hi].

    ``degenerate`` marks diseases where both joint evaluations vanished and
    the bracket fell back to the vacuous [0, 1].
    """

    lo: np.ndarray
    hi: np.ndarray
    degenerate: np.ndarray

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def vacuous(self, threshold: float = 0.9) -> np.ndarray:
        """Brackets too wide to be informative."""
        return self.width >= threshold


def interval_posteriors(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    upper_plan: TransformPlan,
    lower_plan: TransformPlan,
    max_exact: int = QUICKSCORE_CAP,
) -> IntervalBounds:
    """Rigorous [lo, hi] brackets on every posterior marginal.

    lo_j = L(on) / (U(off) + L(on)) and hi_j = U(on) / (U(on) + L(off)); a
    vanished lower joint makes the corresponding side collapse to 0 or 1.
    """
    _check_paired(upper_plan, lower_plan)
    u_on, u_off = _clamped_log_joints(network, priors, upper_plan, max_exact)
    l_on, l_off = _clamped_log_joints(network, priors, lower_plan, max_exact)

    n = network.n_diseases
    lo = np.zeros(n)
    hi = np.ones(n)
    degenerate = np.zeros(n, dtype=bool)
    for j in range(n):
        if l_on[j] == _NEG_INF and u_off[j] == _NEG_INF:
            degenerate[j] = True
        elif l_on[j] == _NEG_INF:
            lo[j] = 0.0
        elif u_off[j] == _NEG_INF:
            lo[j] = 1.0
        else:
            lo[j] = float(expit(l_on[j] - u_off[j]))
        if u_on[j] == _NEG_INF and l_off[j] == _NEG_INF:
            degenerate[j] = True
        elif u_on[j] == _NEG_INF:
            hi[j] = 0.0
        elif l_off[j] == _NEG_INF:
            hi[j] = 1.0
        else:
            hi[j] = float(expit(u_on[j] - l_off[j]))
    lo[degenerate] = 0.0
    hi[degenerate] = 1.0
    return IntervalBounds(lo, hi, degenerate)


def interval_histogram(intervals: IntervalBounds, bin_edges=None) -> np.ndarray:
    """Counts of bracket widths per bin; defaults to ten equal bins over [0, 1]."""
    if bin_edges is None:
        bin_edges = np.linspace(0.0, 1.0, 11)
    counts, _ = np.histogram(intervals.width, bins=bin_edges)
    return counts
