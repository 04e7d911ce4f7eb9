"""Likelihood-weighted sampling baseline.

Forward-samples disease vectors from an importance distribution (initially
the negative-conditioned priors) and weights each sample by the probability
of the positive findings, with the usual prior/importance correction.  Two
standard enhancements:

* Markov-blanket scoring: instead of averaging the sampled 0/1 value of a
  disease, average its conditional probability given the rest of the sample
  and the evidence (a per-sample Rao-Blackwellization);
* self-importance sampling: periodically move the importance distribution
  toward the current smoothed marginal estimates, with floors keeping it
  away from 0 and 1.

All weight arithmetic is in log space.  Runs are deterministic for a fixed
sample-count budget; wall-clock budgets exist for time-matched comparisons
and are naturally not reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .network import NoisyOrNetwork

__all__ = ["SamplerConfig", "SamplerEstimate", "run_sampler", "bound_filter"]

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings; exactly one of n_samples / time_limit may stay None."""

    seed: int
    n_samples: int | None = None
    time_limit: float | None = None
    markov_blanket_scoring: bool = True
    self_importance: bool = True
    si_update_period: int = 1000
    si_smoothing: float = 0.5
    prob_floor: float = 1e-4

    def __post_init__(self):
        if self.n_samples is None and self.time_limit is None:
            raise ValueError("set a sample-count or wall-clock budget")
        if self.n_samples is not None and self.n_samples <= 0:
            raise ValueError("sample budget must be positive")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time budget must be positive")
        if self.si_update_period < 1:
            raise ValueError("importance-update period must be >= 1")
        if not 0.0 < self.prob_floor < 0.5:
            raise ValueError("probability floor must lie in (0, 0.5)")
        if not 0.0 <= self.si_smoothing <= 1.0:
            raise ValueError("smoothing factor must lie in [0, 1]")


@dataclass
class SamplerEstimate:
    """Weighted-sample summary: marginals, log-likelihood, and effective sample size."""

    marginals: np.ndarray
    log_likelihood: float
    samples_used: int
    ess: float
    degenerate: bool


class _WeightedAccumulator:
    """Running weighted sums with a shared log-space shift."""

    def __init__(self, n: int):
        self.shift = _NEG_INF
        self.w_sum = 0.0
        self.w2_sum = 0.0
        self.score_sum = np.zeros(n)

    def add(self, log_w: np.ndarray, scores: np.ndarray) -> None:
        alive = log_w > _NEG_INF   # zero-weight samples may carry undefined scores
        if not alive.any():
            return
        log_w = log_w[alive]
        scores = scores[alive]
        top = float(log_w.max())
        if top > self.shift:
            if self.shift > _NEG_INF:
                scale = math.exp(self.shift - top)
                self.w_sum *= scale
                self.w2_sum *= scale * scale
                self.score_sum *= scale
            self.shift = top
        w = np.exp(log_w - self.shift)
        self.w_sum += float(w.sum())
        self.w2_sum += float(np.dot(w, w))
        self.score_sum += w @ scores

    def marginals(self) -> np.ndarray | None:
        if self.w_sum <= 0.0:
            return None
        return self.score_sum / self.w_sum

    def log_mean_weight(self, count: int) -> float:
        if self.w_sum <= 0.0 or count == 0:
            return _NEG_INF
        return self.shift + math.log(self.w_sum) - math.log(count)

    def ess(self) -> float:
        if self.w2_sum <= 0.0:
            return 0.0
        return self.w_sum * self.w_sum / self.w2_sum


def _fire_logprob_or_neginf(x: np.ndarray) -> np.ndarray:
    out = np.full(x.shape, _NEG_INF)
    alive = x > 0.0
    xa = x[alive]
    small = xa < math.log(2.0)
    vals = np.empty_like(xa)
    vals[small] = np.log(-np.expm1(-xa[small]))
    vals[~small] = np.log1p(-np.exp(-xa[~small]))
    out[alive] = vals
    return out


def run_sampler(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive,
    config: SamplerConfig,
) -> SamplerEstimate:
    """Estimate the likelihood and posterior marginals of the positive findings."""
    priors = np.asarray(priors, dtype=float)
    pos = sorted(set(int(i) for i in positive))
    bad = [i for i in pos if not (0 <= i < network.n_findings)]
    if bad:
        raise ValueError(f"unknown finding ids: {bad}")
    n = network.n_diseases
    m = len(pos)
    theta = np.zeros((n, m))
    leak = np.zeros(m)
    for c, i in enumerate(pos):
        f = network.findings[i]
        leak[c] = f.leak
        theta[f.parent_ids, c] = f.thetas
    log_p1 = np.log(priors)
    log_p0 = np.log1p(-priors)

    rng = np.random.default_rng(config.seed)
    q = priors.copy()
    acc = _WeightedAccumulator(n)
    drawn = 0
    start = time.perf_counter()
    floor, ceil = config.prob_floor, 1.0 - config.prob_floor

    while True:
        if config.n_samples is not None:
            batch = min(config.si_update_period, config.n_samples - drawn)
            if batch == 0:
                break
        else:
            if time.perf_counter() - start >= config.time_limit:
                break
            batch = config.si_update_period
        d = (rng.random((batch, n)) < q[None, :]).astype(np.float64)
        x = d @ theta + leak[None, :]
        loglik = _fire_logprob_or_neginf(x)
        log_w = loglik.sum(axis=1)
        log_w += d @ (log_p1 - np.log(q)) + (1.0 - d) @ (log_p0 - np.log1p(-q))

        if config.markov_blanket_scoring and m:
            scores = np.empty((batch, n))
            sub = max(1, int(4e6 // max(n * m, 1)))   # keeps the (sub, n, m) temporary small
            for a in range(0, batch, sub):
                b = min(a + sub, batch)
                base = x[a:b, None, :] - d[a:b, :, None] * theta.T[None, :, :]   # x with disease j off
                on = _fire_logprob_or_neginf(base + theta.T[None, :, :]).sum(axis=2)
                off = _fire_logprob_or_neginf(base).sum(axis=2)
                with np.errstate(invalid="ignore"):   # zero-weight samples may hit -inf - -inf
                    scores[a:b] = expit(logit(priors)[None, :] + on - off)
        else:
            scores = d
        acc.add(log_w, scores)
        drawn += batch

        if config.self_importance:
            est = acc.marginals()
            if est is not None:
                q = np.clip((1.0 - config.si_smoothing) * q + config.si_smoothing * est, floor, ceil)

    marg = acc.marginals()
    degenerate = marg is None
    if degenerate:
        marg = priors.copy()
    return SamplerEstimate(
        marginals=np.clip(marg, 0.0, 1.0),
        log_likelihood=acc.log_mean_weight(drawn),
        samples_used=drawn,
        ess=acc.ess(),
        degenerate=degenerate,
    )


def bound_filter(
    estimate_log_likelihood: float,
    upper_log_bound: float,
    lower_log_bound: float,
    slack: float = 0.5,
) -> bool:
    """Accept a sampling run whose likelihood estimate sits between the bounds.

    ``slack`` (in nats, on both sides) absorbs Monte Carlo noise around the
    rigorous bracket.
    """
    if not upper_log_bound >= lower_log_bound:
        raise ValueError("upper bound below lower bound; check the inputs")
    return lower_log_bound - slack <= estimate_log_likelihood <= upper_log_bound + slack
