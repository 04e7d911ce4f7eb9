"""Transform plans, likelihood bounds, and their optimizers.

A TransformPlan splits the positive findings into an exactly-treated set and
a transformed remainder (upper or lower family, never both).  Transformed
findings factorize, so they tilt each disease's prior multiplicatively; what
remains is an exact subset expansion over the (hopefully small) exact set
under the tilted priors.  That reduction powers everything here:

* bound values: transform constants + tilted-prior subset expansion;
* posterior moments of the transformed model (marginals, and activation
  variances via pairwise double-clamping);
* the upper-bound optimizer: cyclic fixed-point coordinate updates on the
  slopes xi (the objective is convex in xi, see the convexity property
  tests), safeguarded by a log-space backtracking step so the bound trace
  is monotone non-increasing;
* the lower-bound optimizer: EM on the mixtures q, with the multiplicative
  inner update for the M step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from ._scan import subset_scan
from .exact import CapExceeded, Clamp, QUICKSCORE_CAP, _check_clamps, _check_priors
from .network import NoisyOrNetwork
from .transforms import (
    DEFAULT_LEAK_FLOOR,
    FactorizedEvidence,
    fire_logprob,
    fire_logprob_grad,
    lower_factor,
    tangent_xi,
    upper_factor,
)

__all__ = [
    "TransformPlan",
    "BoundResult",
    "Moments",
    "upper_plan",
    "lower_plan",
    "exact_plan",
    "default_upper_params",
    "uniform_lower_params",
    "bound_value",
    "upper_bound_value",
    "lower_bound_value",
    "transformed_posterior_moments",
    "upper_gradient",
    "optimize_upper",
    "optimize_lower",
    "certify_upper_minimum",
]

_NEG_INF = float("-inf")


@dataclass(frozen=True)
class TransformPlan:
    """Partition of the positive findings into exact and transformed treatment.

    Exactly one family of parameters may be populated: ``upper_params`` maps
    a transformed finding to its slope xi > 0, ``lower_params`` maps it to a
    mixture over its parents.  Positive findings are ``exact`` plus the
    transformed keys.
    """

    exact: frozenset[int]
    upper_params: Mapping[int, float] = field(default_factory=dict)
    lower_params: Mapping[int, Mapping[int, float]] = field(default_factory=dict)
    leak_floor: float = DEFAULT_LEAK_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "exact", frozenset(int(i) for i in self.exact))
        object.__setattr__(self, "upper_params", {int(i): float(x) for i, x in sorted(self.upper_params.items())})
        object.__setattr__(
            self, "lower_params", {int(i): dict(q) for i, q in sorted(self.lower_params.items())}
        )
        if self.upper_params and self.lower_params:
            raise ValueError("a plan carries upper or lower parameters, not both")
        both = self.exact & (set(self.upper_params) | set(self.lower_params))
        if both:
            raise ValueError(f"findings {sorted(both)} are both exact and transformed")

    @property
    def family(self) -> str:
        if self.upper_params:
            return "upper"
        if self.lower_params:
            return "lower"
        return "exact"

    @property
    def transformed(self) -> tuple[int, ...]:
        return tuple(sorted(self.upper_params or self.lower_params))

    @property
    def positive(self) -> tuple[int, ...]:
        return tuple(sorted(self.exact | set(self.transformed)))

    def with_upper(self, xi: Mapping[int, float]) -> "TransformPlan":
        return TransformPlan(self.exact, dict(xi), {}, self.leak_floor)

    def with_lower(self, q: Mapping[int, Mapping[int, float]]) -> "TransformPlan":
        return TransformPlan(self.exact, {}, {i: dict(w) for i, w in q.items()}, self.leak_floor)


def default_upper_params(network: NoisyOrNetwork, priors: np.ndarray, findings: Iterable[int]) -> dict[int, float]:
    """Slopes tangent at each finding's prior-mean activation."""
    priors = np.asarray(priors, dtype=float)
    out = {}
    for i in sorted(set(findings)):
        f = network.findings[i]
        xbar = f.leak + float(np.dot(f.thetas, priors[f.parent_ids]))
        out[i] = float(tangent_xi(xbar))
    return out


def uniform_lower_params(network: NoisyOrNetwork, findings: Iterable[int]) -> dict[int, dict[int, float]]:
    """Uniform mixture over each finding's parents."""
    out = {}
    for i in sorted(set(findings)):
        ids = network.findings[i].parent_ids
        out[i] = {int(j): 1.0 / ids.size for j in ids}
    return out


def upper_plan(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    positive: Iterable[int],
    exact: Iterable[int],
    xi: Mapping[int, float] | None = None,
    leak_floor: float = DEFAULT_LEAK_FLOOR,
) -> TransformPlan:
    """Upper-family plan for the given positive findings; xi defaults to tangent init."""
    positive = frozenset(int(i) for i in positive)
    exact = frozenset(int(i) for i in exact)
    if not exact <= positive:
        raise ValueError("exact set must be a subset of the positive findings")
    transformed = positive - exact
    if xi is None:
        xi = default_upper_params(network, priors, transformed)
    if set(xi) != transformed:
        raise ValueError("xi keys must be exactly the transformed findings")
    return TransformPlan(exact, dict(xi), {}, leak_floor)


def lower_plan(
    network: NoisyOrNetwork,
    positive: Iterable[int],
    exact: Iterable[int],
    q: Mapping[int, Mapping[int, float]] | None = None,
    leak_floor: float = DEFAULT_LEAK_FLOOR,
) -> TransformPlan:
    """Lower-family plan; mixtures default to uniform over parents."""
    positive = frozenset(int(i) for i in positive)
    exact = frozenset(int(i) for i in exact)
    if not exact <= positive:
        raise ValueError("exact set must be a subset of the positive findings")
    transformed = positive - exact
    if q is None:
        q = uniform_lower_params(network, transformed)
    if set(q) != transformed:
        raise ValueError("q keys must be exactly the transformed findings")
    return TransformPlan(exact, {}, {i: dict(w) for i, w in q.items()}, leak_floor)


def exact_plan(positive: Iterable[int]) -> TransformPlan:
    """Degenerate plan treating every positive finding exactly."""
    return TransformPlan(frozenset(int(i) for i in positive))


def _factors(network: NoisyOrNetwork, plan: TransformPlan) -> dict[int, FactorizedEvidence]:
    if plan.family == "upper":
        return {i: upper_factor(network.findings[i], xi) for i, xi in plan.upper_params.items()}
    if plan.family == "lower":
        return {i: lower_factor(network.findings[i], q, plan.leak_floor) for i, q in plan.lower_params.items()}
    return {}


@dataclass
class _Tilted:
    """The transformed model reduced to tilted weights plus an exact core.

    The log weights are long double: the subset expansion over the exact
    core is signed and cancellation amplifies any rounding in them.
    """

    log_const: float          # sum of transform constants
    tilt: np.ndarray          # per-disease multiplier sum M_j
    log_w1: np.ndarray        # log p_j + M_j
    log_w0: np.ndarray        # log (1 - p_j)
    exact_ids: list[int]
    scan_ids: list[int]
    leak: np.ndarray
    theta: np.ndarray         # (k, len(scan_ids))


def _tilt(network: NoisyOrNetwork, priors: np.ndarray, plan: TransformPlan, max_exact: int) -> _Tilted:
    priors = _check_priors(network, priors)
    exact_ids = sorted(plan.exact)
    if len(exact_ids) > max_exact:
        raise CapExceeded(f"{len(exact_ids)} exact findings exceed the subset-expansion cap {max_exact}")
    n = network.n_diseases
    tilt = np.zeros(n)
    log_const = 0.0
    for fac in _factors(network, plan).values():
        log_const += fac.log_const
        for j, m in fac.multipliers.items():
            tilt[j] += m
    scan_ids = sorted({j for i in exact_ids for j in network.findings[i].parents})
    k = len(exact_ids)
    theta = np.zeros((k, len(scan_ids)))
    col = {j: c for c, j in enumerate(scan_ids)}
    for row, i in enumerate(exact_ids):
        for j, t in network.findings[i].parents.items():
            theta[row, col[j]] = t
    leak = np.array([network.findings[i].leak for i in exact_ids])
    p_ext = priors.astype(np.longdouble)
    return _Tilted(log_const, tilt, np.log(p_ext) + tilt, np.log1p(-p_ext), exact_ids, scan_ids, leak, theta)


def _scan_tilted(tm: _Tilted, fixed: Mapping[int, int] | None = None, *, want_joints=False, want_pairs=False):
    """Run the subset expansion of the tilted model.

    Returns (log_value, log_const_outside_scan, scan result or None).
    ``fixed`` clamps diseases (value folded in, prior weight included).
    """
    fixed = fixed or {}
    n = tm.log_w1.size
    in_scan = np.zeros(n, dtype=bool)
    in_scan[tm.scan_ids] = True
    log_z = np.logaddexp(tm.log_w0, tm.log_w1)
    const = np.longdouble(tm.log_const)
    for j in range(n):
        if j in fixed:
            const += tm.log_w1[j] if fixed[j] == 1 else tm.log_w0[j]
        elif not in_scan[j]:
            const += log_z[j]
    const = float(const)
    if not tm.exact_ids:
        return const, const, None
    keep = [j for j in tm.scan_ids if fixed.get(j, 1) == 1]   # off-clamped columns drop out
    cols = [c for c, j in enumerate(tm.scan_ids) if fixed.get(j, 1) == 1]
    clamp_on = np.array([j in fixed for j in keep], dtype=bool)
    # clamped scan columns already contributed their prior weight via `const`;
    # hand the kernel weight 0 for those so it is not double counted
    log_w1 = tm.log_w1[keep].copy()
    log_w1[clamp_on] = 0.0
    res = subset_scan(tm.leak, tm.theta[:, cols], tm.log_w0[keep], log_w1, clamp_on,
                      want_joints=want_joints, want_pairs=want_pairs)
    return const + res.log_total, const, res


def bound_value(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    clamps: Sequence[Clamp] = (),
    max_exact: int = QUICKSCORE_CAP,
) -> float:
    """log of the transformed model's mass on (positives, clamped values).

    An upper bound on the true log-likelihood for upper plans, a lower bound
    for lower plans, and the exact value for all-exact plans, at any
    parameter values.
    """
    fixed = _check_clamps(network, clamps)
    tm = _tilt(network, priors, plan, max_exact)
    value, _, _ = _scan_tilted(tm, fixed)
    return value


def upper_bound_value(network, priors, plan, clamps=(), max_exact=QUICKSCORE_CAP) -> float:
    if plan.family == "lower":
        raise ValueError("plan carries lower-family parameters")
    return bound_value(network, priors, plan, clamps, max_exact)


def lower_bound_value(network, priors, plan, clamps=(), max_exact=QUICKSCORE_CAP) -> float:
    if plan.family == "upper":
        raise ValueError("plan carries upper-family parameters")
    return bound_value(network, priors, plan, clamps, max_exact)


@dataclass
class Moments:
    """Posterior moments of the transformed model.

    marginals: per-disease mean of d_j.
    activation_mean / activation_variance: mean and variance of each
    requested finding's parent load sum_j theta_kj d_j.
    """

    marginals: np.ndarray
    activation_mean: dict[int, float]
    activation_variance: dict[int, float]


def transformed_posterior_moments(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    findings: Iterable[int] | None = None,
    *,
    want_variance: bool = True,
    max_exact: int = QUICKSCORE_CAP,
) -> Moments:
    """Marginals and per-finding activation moments under the transformed posterior.

    Diseases outside the exact core are independent tilted Bernoullis in
    closed form; the core is handled by the subset expansion, with pairwise
    second moments obtained by double-clamping inside the same sweep.
    """
    if findings is None:
        findings = plan.transformed
    findings = sorted(set(int(i) for i in findings))
    tm = _tilt(network, priors, plan, max_exact)
    need_pairs = want_variance and bool(tm.exact_ids)
    _, _, res = _scan_tilted(tm, want_joints=True, want_pairs=need_pairs)

    marginals = expit((tm.log_w1 - tm.log_w0).astype(float))
    if res is not None:
        if res.degenerate:
            raise ValueError("transformed subset sum collapsed to zero; cannot form moments")
        marginals = marginals.copy()
        marginals[tm.scan_ids] = res.marginals()

    mean = {}
    var = {}
    col = {j: c for c, j in enumerate(tm.scan_ids)}
    if need_pairs:
        second = res.pair_on_raw / res.raw_total
        core_marg = marginals[tm.scan_ids]
        np.fill_diagonal(second, core_marg)
        cov_core = second - np.outer(core_marg, core_marg)
    for i in findings:
        f = network.findings[i]
        ids, th = f.parent_ids, f.thetas
        mean[i] = float(np.dot(th, marginals[ids]))
        if not want_variance:
            continue
        in_core = np.array([j in col for j in ids])
        v = float(np.dot(th[~in_core] ** 2, (marginals[ids[~in_core]] * (1.0 - marginals[ids[~in_core]]))))
        if need_pairs and in_core.any():
            rows = [col[j] for j in ids[in_core]]
            tc = th[in_core]
            v += float(tc @ cov_core[np.ix_(rows, rows)] @ tc)
        var[i] = max(v, 0.0)
    return Moments(marginals, mean, var)


@dataclass
class BoundResult:
    """Outcome of a bound optimization.

    ``trace`` holds the bound after each outer iteration (the initial value
    first); upper traces are non-increasing, lower traces non-decreasing up
    to the documented slack.  ``warnings`` collects non-fatal diagnostics.
    """

    log_bound: float
    params: TransformPlan
    iterations: int
    converged: bool
    trace: list[float]
    warnings: tuple[str, ...] = ()


def upper_gradient(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    max_exact: int = QUICKSCORE_CAP,
) -> dict[int, float]:
    """Partial derivatives of the upper log-bound with respect to each slope xi_k.

    d/dxi_k = leak_k + log(xi_k / (1 + xi_k)) + E{sum_j theta_kj d_j}, the
    expectation under the transformed posterior.
    """
    if plan.family != "upper":
        raise ValueError("gradient defined for upper-family plans")
    mom = transformed_posterior_moments(network, priors, plan, want_variance=False, max_exact=max_exact)
    out = {}
    for k, xi in plan.upper_params.items():
        f = network.findings[k]
        out[k] = float(f.leak - math.log1p(1.0 / xi) + mom.activation_mean[k])
    return out


def optimize_upper(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
    grad_tol: float | None = None,
    max_backtracks: int = 40,
    max_exact: int = QUICKSCORE_CAP,
) -> BoundResult:
    """Minimize the upper bound over the slopes xi (convex, no local minima).

    Each coordinate move solves the stationarity condition at the current
    posterior: xi_k <- tangent_xi(leak_k + E{sum_j theta_kj d_j}).  The raw
    fixed point can overshoot the coordinate minimum, so steps backtrack in
    log space until the bound does not increase; the returned trace is
    therefore monotone non-increasing.  Stops when the relative bound change
    drops below ``tol`` (and, if ``grad_tol`` is set, the gradient inf-norm
    below it) or at ``max_iter`` sweeps.
    """
    if plan.family == "lower":
        raise ValueError("plan carries lower-family parameters")
    xi = dict(plan.upper_params)
    order = sorted(xi)
    priors = _check_priors(network, priors)

    def value(params):
        return bound_value(network, priors, plan.with_upper(params), max_exact=max_exact)

    current = value(xi)
    trace = [current]
    warnings: list[str] = []
    if not order:
        return BoundResult(current, plan.with_upper(xi), 0, True, trace)

    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        for k in order:
            mom = transformed_posterior_moments(
                network, priors, plan.with_upper(xi), findings=[k], want_variance=False, max_exact=max_exact
            )
            xbar = network.findings[k].leak + mom.activation_mean[k]
            cand = float(tangent_xi(xbar))
            if cand == xi[k]:
                continue
            old = xi[k]
            step = math.log(cand) - math.log(old)
            accepted = False
            for _ in range(max_backtracks):
                trial = dict(xi, **{k: old * math.exp(step)})
                trial_value = value(trial)
                if trial_value <= current:
                    xi = trial
                    current = trial_value
                    accepted = True
                    break
                step *= 0.5
            if not accepted and "coordinate step stalled" not in warnings:
                warnings.append("coordinate step stalled")
        trace.append(current)
        rel = abs(trace[-2] - trace[-1]) / max(1.0, abs(trace[-2]))
        if rel < tol:
            if grad_tol is None:
                converged = True
                break
            grad = upper_gradient(network, priors, plan.with_upper(xi), max_exact=max_exact)
            if max(abs(g) for g in grad.values()) < grad_tol:
                converged = True
                break
    return BoundResult(current, plan.with_upper(xi), sweeps, converged, trace, tuple(warnings))


def optimize_lower(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    plan: TransformPlan,
    *,
    tol: float = 1e-8,
    max_iter: int = 200,
    inner_tol: float = 1e-10,
    max_inner: int = 50,
    max_exact: int = QUICKSCORE_CAP,
) -> BoundResult:
    """Maximize the lower bound over the mixtures q by EM.

    E step: disease marginals under the current transformed posterior.
    M step, per finding: the multiplicative update
    q_j <- E{d_j} [q_j f(b_j) - theta_j f'(b_j) - q_j f(leak)] with
    b_j = leak + theta_j / q_j, normalized over the parents, iterated to
    ``inner_tol``.  Each factor is nonnegative by concavity of f; a
    materially negative value means a broken invariant and raises.
    The outer bound trace is monotone non-decreasing up to 1e-10; slack
    violations are recorded in ``warnings``.
    """
    if plan.family == "upper":
        raise ValueError("plan carries upper-family parameters")
    q = {i: dict(w) for i, w in plan.lower_params.items()}
    order = sorted(q)
    priors = _check_priors(network, priors)

    def value(params):
        return bound_value(network, priors, plan.with_lower(params), max_exact=max_exact)

    current = value(q)
    trace = [current]
    warnings: list[str] = []
    if not order:
        return BoundResult(current, plan.with_lower(q), 0, True, trace)

    converged = False
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        mom = transformed_posterior_moments(
            network, priors, plan.with_lower(q), findings=[], want_variance=False, max_exact=max_exact
        )
        for i in order:
            f = network.findings[i]
            leak = max(f.leak, plan.leak_floor)
            ids, th = f.parent_ids, f.thetas
            e_d = mom.marginals[ids]
            w = np.array([q[i][int(j)] for j in ids])
            f0 = fire_logprob(leak)
            for _ in range(max_inner):
                upd = np.zeros_like(w)
                live = w > 0.0
                if live.any():
                    b = leak + th[live] / w[live]
                    upd[live] = e_d[live] * (
                        w[live] * fire_logprob(b) - th[live] * fire_logprob_grad(b) - w[live] * f0
                    )
                if np.any(upd < -1e-12 * (1.0 + abs(f0))):
                    raise RuntimeError(
                        f"negative pre-normalization mixture update for finding {i}: {upd.min()!r}"
                    )
                np.clip(upd, 0.0, None, out=upd)
                total = upd.sum()
                if total <= 0.0:
                    break
                new_w = upd / total
                delta = float(np.max(np.abs(new_w - w)))
                w = new_w
                if delta < inner_tol:
                    break
            q[i] = {int(j): float(v) for j, v in zip(ids, w)}
        new_value = value(q)
        if new_value < current - 1e-10:
            warnings.append(f"bound decreased by {current - new_value:.3e} at iteration {sweeps}")
        trace.append(new_value)
        rel = abs(new_value - current) / max(1.0, abs(current))
        current = new_value
        if rel < tol:
            converged = True
            break
    return BoundResult(current, plan.with_lower(q), sweeps, converged, trace, tuple(warnings))


def certify_upper_minimum(
    network: NoisyOrNetwork,
    priors: np.ndarray,
    result: BoundResult,
    *,
    n_perturbations: int = 50,
    magnitude: float = 1e-3,
    grad_tol: float = 1e-6,
    decrease_tol: float = 1e-9,
    seed: int = 0,
    max_exact: int = QUICKSCORE_CAP,
) -> dict:
    """Post-hoc global-minimum certificate for an optimized upper bound.

    Checks the analytic gradient inf-norm and that random log-space
    perturbations of the slopes never decrease the bound materially (the
    objective is convex, so stationarity certifies global optimality).
    """
    plan = result.params
    grad = upper_gradient(network, priors, plan, max_exact=max_exact)
    grad_inf = max((abs(g) for g in grad.values()), default=0.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    keys = sorted(plan.upper_params)
    for _ in range(n_perturbations):
        noise = rng.uniform(-magnitude, magnitude, size=len(keys))
        xi = {k: plan.upper_params[k] * math.exp(e) for k, e in zip(keys, noise)}
        val = bound_value(network, priors, plan.with_upper(xi), max_exact=max_exact)
        worst = min(worst, val - result.log_bound)
    certified = grad_inf < grad_tol and worst >= -decrease_tol
    return {"certified": certified, "grad_inf_norm": grad_inf, "worst_decrease": -worst}
