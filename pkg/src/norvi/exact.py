"""Exact inference: negative-evidence absorption, brute force, and Quickscore.

Negative findings factorize over the diseases, so they fold into the priors
in linear time.  Positive findings couple their parents; the two exact
engines here are

* brute force, a sum over all free disease configurations (the test oracle,
  exponential in the number of diseases), and
* an inclusion-exclusion expansion over subsets of the positive findings in
  the style of Heckerman's Quickscore algorithm, exponential in the number
  of positive findings but linear in the diseases per term.

The subset expansion alternates signs and is known to lose precision as the
positive set grows; terms are accumulated with exact compensated summation
and results carry a cancellation warning flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import expit, logit

from ._scan import config_scan, subset_scan
from .network import NoisyOrNetwork

__all__ = [
    "CapExceeded",
    "Clamp",
    "QuickscoreResult",
    "absorb_negative",
    "brute_force_likelihood",
    "brute_force_posteriors",
    "quickscore",
    "quickscore_likelihood",
    "quickscore_posteriors",
]

BRUTE_FORCE_CAP = 22
QUICKSCORE_CAP = 24


class CapExceeded(RuntimeError):
    """The instance is too large for the requested exponential-time routine."""


class Clamp(NamedTuple):
    """Fix one disease to a value; likelihoods then include its prior factor."""

    disease: int
    value: int


def _check_finding_ids(network: NoisyOrNetwork, ids: Iterable[int]) -> list[int]:
    out = sorted(set(int(i) for i in ids))
    m = network.n_findings
    bad = [i for i in out if not (0 <= i < m)]
    if bad:
        raise ValueError(f"unknown finding ids: {bad}")
    return out


def _check_priors(network: NoisyOrNetwork, priors: np.ndarray) -> np.ndarray:
    p = np.asarray(priors, dtype=float)
    if p.shape != (network.n_diseases,):
        raise ValueError(f"priors shape {p.shape} does not match {network.n_diseases} diseases")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("priors must lie strictly inside (0, 1)")
    return p


def _check_clamps(network: NoisyOrNetwork, clamps: Sequence[Clamp]) -> dict[int, int]:
    fixed: dict[int, int] = {}
    for c in clamps:
        j, v = int(c[0]), int(c[1])
        if not (0 <= j < network.n_diseases):
            raise ValueError(f"clamp on unknown disease {j}")
        if v not in (0, 1):
            raise ValueError(f"clamp value must be 0 or 1, got {v}")
        if j in fixed:
            raise ValueError(f"disease {j} clamped twice")
        fixed[j] = v
    return fixed


def absorb_negative(network: NoisyOrNetwork, negative: Iterable[int]) -> np.ndarray:
    """Fold negative findings into per-disease posteriors P(d_j | negatives).

    Each negative finding multiplies the odds of its parents by exp(-theta);
    leak factors are constant across configurations and cancel in the
    normalization.  Runs in time linear in the touched edges.
    """
    neg = _check_finding_ids(network, negative)
    penalty = np.zeros(network.n_diseases)
    for i in neg:
        f = network.findings[i]
        penalty[f.parent_ids] += f.thetas
    p = network.prior_vector()
    return expit(logit(p) - penalty)


def _brute_setup(network, priors, positive, clamps, max_free):
    priors = _check_priors(network, priors)
    pos = _check_finding_ids(network, positive)
    fixed = _check_clamps(network, clamps)
    free = np.array([j for j in range(network.n_diseases) if j not in fixed], dtype=np.int64)
    if free.size > max_free:
        raise CapExceeded(f"{free.size} free diseases exceed the brute-force cap {max_free}")
    const = 0.0
    for j, v in fixed.items():
        const += math.log(priors[j]) if v == 1 else math.log1p(-priors[j])
    pos_idx = {int(j): k for k, j in enumerate(free)}
    m = len(pos)
    theta = np.zeros((m, free.size))
    offsets = np.zeros(m)
    for row, i in enumerate(pos):
        f = network.findings[i]
        offsets[row] = f.leak
        for j, t in f.parents.items():
            if j in fixed:
                offsets[row] += t * fixed[j]
            else:
                theta[row, pos_idx[j]] = t
    return priors, free, const, theta, offsets


def brute_force_likelihood(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    clamps: Sequence[Clamp] = (),
    max_free: int = BRUTE_FORCE_CAP,
) -> float:
    """log P(positives, clamped values) by summing over all free configurations.

    The oracle: cost 2^(free diseases), refused above ``max_free``.
    """
    priors, free, const, theta, offsets = _brute_setup(network, priors, positive, clamps, max_free)
    res = config_scan(np.log(priors[free]), np.log1p(-priors[free]), offsets, theta)
    return const + res.log_total


def brute_force_posteriors(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    max_free: int = BRUTE_FORCE_CAP,
) -> np.ndarray:
    """Per-disease P(d_j = 1 | positives) from the same configuration sum."""
    priors, free, _, theta, offsets = _brute_setup(network, priors, positive, (), max_free)
    res = config_scan(np.log(priors[free]), np.log1p(-priors[free]), offsets, theta, want_joints=True)
    if res.log_total == float("-inf"):
        raise ValueError("evidence has probability zero under this network")
    return expit(res.joint_on_log - res.joint_off_log)


@dataclass
class QuickscoreResult:
    """Inclusion-exclusion result with numerical diagnostics.

    ``cancellation`` flags that the signed subset terms nearly cancelled
    (result magnitude under 1e-3 of the largest running partial sum), in
    which case trailing digits of ``log_likelihood`` are suspect.
    ``degenerate`` means the signed sum rounded to <= 0 and the log is -inf.
    """

    log_likelihood: float
    cancellation: bool
    degenerate: bool
    posteriors: np.ndarray | None = None
    log_joint_on: np.ndarray | None = None
    log_joint_off: np.ndarray | None = None


def quickscore(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    clamps: Sequence[Clamp] = (),
    *,
    want_posteriors: bool = False,
    max_positive: int = QUICKSCORE_CAP,
) -> QuickscoreResult:
    """Exact likelihood (and optionally posteriors) in 2^|positives| signed terms.

    Expanding prod_i (1 - exp(-x_i)) over the positive findings gives, for
    each subset S, a product over diseases of (1-p_j) + p_j exp(-t_j(S))
    with t_j(S) the summed weights of S's findings on disease j.  Clamped
    diseases contribute their fixed factor instead.
    """
    priors = _check_priors(network, priors)
    pos = _check_finding_ids(network, positive)
    fixed = _check_clamps(network, clamps)
    if len(pos) > max_positive:
        raise CapExceeded(f"{len(pos)} positive findings exceed the subset-expansion cap {max_positive}")

    scan_ids = sorted({j for i in pos for j in network.findings[i].parents} - {j for j, v in fixed.items() if v == 0})
    col = {j: c for c, j in enumerate(scan_ids)}
    nd = len(scan_ids)
    k = len(pos)
    leak = np.array([network.findings[i].leak for i in pos])
    theta = np.zeros((k, nd))
    for row, i in enumerate(pos):
        for j, t in network.findings[i].parents.items():
            if j in col:
                theta[row, col[j]] = t

    # extended precision from the start: the signed expansion amplifies any
    # rounding of these logs when its terms cancel
    scan_p = priors[scan_ids].astype(np.longdouble)
    log_w1 = np.log(scan_p)
    log_w0 = np.log1p(-scan_p)
    clamp_on = np.array([fixed.get(j) == 1 for j in scan_ids], dtype=bool)
    const = 0.0
    for j, v in fixed.items():
        if j not in col:  # off-clamped parents were dropped from the scan set above
            const += math.log(priors[j]) if v == 1 else math.log1p(-priors[j])

    res = subset_scan(leak, theta, log_w0, log_w1, clamp_on,
                      want_joints=want_posteriors)
    out = QuickscoreResult(const + res.log_total, res.cancellation, res.degenerate)
    if want_posteriors:
        posteriors = priors.copy()  # diseases untouched by the evidence keep their prior
        log_on = np.full(network.n_diseases, float("-inf"))
        log_off = np.full(network.n_diseases, float("-inf"))
        alive = ~np.isinf(out.log_likelihood)
        if alive:
            log_on[:] = out.log_likelihood + np.log(priors)
            log_off[:] = out.log_likelihood + np.log1p(-priors)
        if nd:
            posteriors[scan_ids] = res.marginals()
            log_on[scan_ids] = const + res.log_joint(True)
            log_off[scan_ids] = const + res.log_joint(False)
        for j, v in fixed.items():
            posteriors[j] = float(v)
            log_on[j] = out.log_likelihood if v == 1 else float("-inf")
            log_off[j] = out.log_likelihood if v == 0 else float("-inf")
        out.posteriors = posteriors
        out.log_joint_on = log_on
        out.log_joint_off = log_off
    return out


def quickscore_likelihood(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    clamps: Sequence[Clamp] = (),
    max_positive: int = QUICKSCORE_CAP,
) -> float:
    """log P(positives, clamped values) via the subset expansion."""
    return quickscore(network, priors, positive, clamps, max_positive=max_positive).log_likelihood


def quickscore_posteriors(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    max_positive: int = QUICKSCORE_CAP,
) -> np.ndarray:
    """Per-disease P(d_j = 1 | positives), sharing one subset sweep for all diseases."""
    res = quickscore(network, priors, positive, want_posteriors=True, max_positive=max_positive)
    if res.degenerate:
        raise ValueError("signed subset sum collapsed to zero; instance is numerically degenerate")
    return res.posteriors
