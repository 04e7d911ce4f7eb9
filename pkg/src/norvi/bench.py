"""Benchmark machinery: case reports, ranking metrics, and comparison experiments.

The quality measures follow standard diagnostic-ranking practice: rank
diseases by reference posterior, rank them by the approximate posterior, and
ask how deep into the approximate list one must go to recover the top-N
reference diseases (false positives), or how many of the reference top N are
missing from the approximate top N (false negatives).  Ties break toward the
smaller disease id in both rankings so results are reproducible.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exact import QUICKSCORE_CAP, quickscore, quickscore_posteriors
from .network import Evidence, NoisyOrNetwork, check_evidence
from .optimizer import bound_value, upper_plan
from .pipeline import solve_case
from .posteriors import PosteriorEstimate, approximate_marginals, interval_posteriors
from .sampler import SamplerConfig, run_sampler
from .scheduler import random_ordering

__all__ = [
    "CaseSpec",
    "RankingCurve",
    "run_case",
    "report_json",
    "ranking_curve",
    "false_positive_area",
    "correlation",
    "figure2_experiment",
    "figure2_csv",
    "partially_exact_baseline",
]


@dataclass(frozen=True)
class CaseSpec:
    """Everything needed to reproduce one case run."""

    budget: int
    scheduler: str = "delta"
    order_seed: int = 0
    mode: str = "staged"
    family: str = "both"
    tol: float = 1e-8
    max_iter: int = 200
    sampler: SamplerConfig | None = None
    deterministic: bool = True
    exact_cap: int = QUICKSCORE_CAP
    compute_exact: bool = True


def _ranking(values: np.ndarray) -> np.ndarray:
    """Disease ids from most to least probable; ties toward the smaller id."""
    values = np.asarray(values, dtype=float)
    return np.lexsort((np.arange(values.size), -values))


@dataclass(frozen=True)
class RankingCurve:
    """Approximate-versus-reference ranking curve.

    For each N (1-based), ``required`` is the shortest approximate-list
    prefix containing the reference top N; ``false_positives`` is
    required - N; ``false_negatives`` counts reference top-N diseases absent
    from the approximate top N.
    """

    true_positives: np.ndarray
    required: np.ndarray
    false_positives: np.ndarray
    false_negatives: np.ndarray


def ranking_curve(reference: np.ndarray, approx: np.ndarray, n_max: int | None = None) -> RankingCurve:
    reference = np.asarray(reference, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if reference.shape != approx.shape:
        raise ValueError("posterior vectors cover different diseases")
    n = reference.size
    if n_max is None:
        n_max = n
    if not 1 <= n_max <= n:
        raise ValueError(f"n_max {n_max} outside [1, {n}]")
    ref_order = _ranking(reference)
    approx_pos = np.empty(n, dtype=np.int64)
    approx_pos[_ranking(approx)] = np.arange(n)
    pos_of_ref = approx_pos[ref_order][:n_max]
    required = np.maximum.accumulate(pos_of_ref) + 1
    ns = np.arange(1, n_max + 1)
    # a reference disease at 0-based approximate position p is in the approximate top N iff p < N
    false_neg = np.array([int(np.sum(pos_of_ref[:N] >= N)) for N in ns])
    return RankingCurve(ns, required, required - ns, false_neg)


def false_positive_area(curve: RankingCurve) -> int:
    """Total false positives across the curve (area under the staircase)."""
    return int(curve.false_positives.sum())


def correlation(reference: np.ndarray, approx: np.ndarray, top_k: int) -> float:
    """Pearson correlation over the top_k reference-ranked diseases.

    Returns nan when either restricted vector has zero variance (undefined).
    """
    reference = np.asarray(reference, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if not 1 <= top_k <= reference.size:
        raise ValueError(f"top_k {top_k} outside [1, {reference.size}]")
    idx = _ranking(reference)[:top_k]
    a, b = reference[idx], approx[idx]
    if np.std(a) == 0.0 or np.std(b) == 0.0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def partially_exact_baseline(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    exact_set: Iterable[int],
    max_positive: int = QUICKSCORE_CAP,
) -> PosteriorEstimate:
    """Posteriors using only the exactly-treated findings, dropping the rest."""
    values = quickscore_posteriors(network, priors, sorted(set(exact_set)), max_positive=max_positive)
    return PosteriorEstimate(values, "partially-exact")


def figure2_experiment(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    budgets: Sequence[int],
    n_random_orders: int = 20,
    seed: int = 0,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> list[dict]:
    """Upper bound under drop-ranked versus random exact-set orderings.

    Slopes are tuned once on the fully transformed model and frozen; each
    ordering then reinstates exact conditionals budget by budget at those
    frozen slopes.  Random orderings are summarized by the mean and standard
    deviation of the log bound.
    """
    from .scheduler import delta_ordering, score_deltas, _frozen_all_transformed

    positive = sorted(set(int(i) for i in positive))
    frozen = _frozen_all_transformed(network, priors, positive, tol, max_iter)
    xi = frozen.params.upper_params
    scores = score_deltas(network, priors, positive, _frozen=frozen)
    ranked = delta_ordering(scores)

    def bound_at(exact: frozenset[int]) -> float:
        params = {i: xi[i] for i in positive if i not in exact}
        return bound_value(network, priors, upper_plan(network, priors, positive, exact, params))

    rows = []
    for budget in budgets:
        if not 0 <= budget <= len(positive):
            raise ValueError(f"budget {budget} outside [0, {len(positive)}]")
        ranked_bound = bound_at(frozenset(ranked[:budget]))
        randoms = []
        for r in range(n_random_orders):
            order = random_ordering(positive, seed=seed * 100003 + r)
            randoms.append(bound_at(frozenset(order[:budget])))
        randoms = np.array(randoms)
        rows.append(
            {
                "budget": budget,
                "ranked_log_bound": ranked_bound,
                "random_mean_log_bound": float(randoms.mean()),
                "random_sd_log_bound": float(randoms.std(ddof=1)) if len(randoms) > 1 else 0.0,
                "n_random_orders": n_random_orders,
            }
        )
    return rows


def figure2_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def run_case(
    network: NoisyOrNetwork,
    evidence: Evidence,
    spec: CaseSpec,
    network_label: str = "inline",
) -> dict:
    """Full pipeline on one case; returns a JSON-ready report.

    Absorbs negatives, ranks and optimizes under the requested budget, adds
    approximate marginals, interval brackets, the exact reference when the
    instance is small enough, and optionally a sampler run.  When the exact
    value is computed it must land inside the bounds; a violation raises.
    In deterministic mode the report omits wall-clock fields and is
    byte-for-byte reproducible from (spec, seed).
    """
    from .exact import absorb_negative

    check_evidence(network, evidence)
    t0 = time.perf_counter()
    priors = absorb_negative(network, evidence.negative)
    positive = sorted(evidence.positive)
    solution = solve_case(
        network,
        priors,
        positive,
        spec.budget,
        scheduler=spec.scheduler,
        order_seed=spec.order_seed,
        mode=spec.mode,
        tol=spec.tol,
        max_iter=spec.max_iter,
    )
    upper, lower = solution.upper, solution.lower

    report: dict = {
        "case": {"positive": positive, "negative": sorted(evidence.negative)},
        "network": {"label": network_label, "n_diseases": network.n_diseases, "n_findings": network.n_findings},
        "config": {
            "budget": spec.budget,
            "scheduler": spec.scheduler,
            "order_seed": spec.order_seed,
            "mode": spec.mode,
            "family": spec.family,
            "tol": spec.tol,
            "max_iter": spec.max_iter,
            "deterministic": spec.deterministic,
            "exact_cap": spec.exact_cap,
        },
        "exact_set": sorted(solution.exact_set),
        "ordering": solution.order,
        "bounds": {"log_upper": upper.log_bound, "log_lower": lower.log_bound, "log_exact": None},
        "convergence": {
            "upper": {"iterations": upper.iterations, "converged": upper.converged},
            "lower": {"iterations": lower.iterations, "converged": lower.converged},
        },
    }
    if solution.deltas is not None:
        report["delta_scores"] = [
            {"finding": s.finding, "delta": s.delta, "log_drop": s.log_drop} for s in solution.deltas
        ]

    marginals: dict = {}
    if spec.family in ("upper", "both"):
        marginals["upper"] = approximate_marginals(network, priors, upper.params).values.tolist()
    if spec.family in ("lower", "both"):
        marginals["lower"] = approximate_marginals(network, priors, lower.params).values.tolist()
    report["marginals"] = marginals

    intervals = interval_posteriors(network, priors, upper.params, lower.params)
    report["intervals"] = {
        "lo": intervals.lo.tolist(),
        "hi": intervals.hi.tolist(),
        "degenerate": intervals.degenerate.astype(int).tolist(),
        "vacuous_count": int(intervals.vacuous().sum()),
    }

    if spec.compute_exact and len(positive) <= spec.exact_cap:
        qs = quickscore(network, priors, positive, want_posteriors=True, max_positive=spec.exact_cap)
        log_exact = qs.log_likelihood
        report["bounds"]["log_exact"] = log_exact
        report["bounds"]["cancellation_warning"] = qs.cancellation
        report["exact_posteriors"] = qs.posteriors.tolist()
        if not (lower.log_bound - 1e-9 <= log_exact <= upper.log_bound + 1e-9):
            raise AssertionError(
                f"exact log-likelihood {log_exact} escaped the bounds "
                f"[{lower.log_bound}, {upper.log_bound}]"
            )
        ref = qs.posteriors
        for fam, vals in marginals.items():
            top = min(50, network.n_diseases)
            report.setdefault("quality", {})[fam] = {
                "correlation_top50": correlation(ref, np.array(vals), top),
                "false_positive_area": false_positive_area(ranking_curve(ref, np.array(vals))),
            }

    if spec.sampler is not None:
        est = run_sampler(network, priors, positive, spec.sampler)
        report["sampler"] = {
            "seed": spec.sampler.seed,
            "samples_used": est.samples_used,
            "log_likelihood": est.log_likelihood,
            "ess": est.ess,
            "degenerate": est.degenerate,
            "marginals": est.marginals.tolist(),
        }
    if not spec.deterministic:
        report["timings"] = {"total_s": time.perf_counter() - t0}
    return report


def report_json(report: dict) -> bytes:
    """Canonical serialization: sorted keys, stable float repr."""
    return (json.dumps(report, sort_keys=True, indent=1) + "\n").encode("utf-8")
