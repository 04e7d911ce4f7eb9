"""Exact and variational probabilistic inference for two-level noisy-OR networks.

The package splits along the inference pipeline:

* ``network``: model types, validation, synthetic generation, JSON formats.
* ``exact``: negative-finding absorption plus two exact engines, a
  brute-force configuration sum and an inclusion-exclusion subset expansion.
* ``transforms``: upper (conjugate) and lower (Jensen) surrogates for a
  single noisy-OR conditional.
* ``optimizer``: transform plans, likelihood bounds, convex slope
  minimization and EM mixture maximization.
* ``scheduler``: which findings to treat exactly (bound-drop ranking).
* ``posteriors``: approximate marginals and rigorous interval brackets.
* ``sampler``: likelihood-weighted sampling baseline with Markov-blanket
  scoring and self-importance updates.
* ``bench``: ranking metrics, comparison experiments, case reports.
"""

from .network import (
    DiseaseNode,
    Evidence,
    FindingCPD,
    NetworkFormatError,
    NoisyOrNetwork,
    SyntheticSpec,
    generate_synthetic,
    load_case,
    load_network,
    q_to_theta,
    save_case,
    save_network,
    theta_to_q,
    validate,
)
from .exact import (
    CapExceeded,
    Clamp,
    absorb_negative,
    brute_force_likelihood,
    brute_force_posteriors,
    quickscore,
    quickscore_likelihood,
    quickscore_posteriors,
)
from .transforms import (
    DEFAULT_LEAK_FLOOR,
    FactorizedEvidence,
    fire_conjugate,
    fire_logprob,
    fire_logprob_grad,
    lower_factor,
    tangent_xi,
    upper_factor,
)
from .optimizer import (
    BoundResult,
    Moments,
    TransformPlan,
    bound_value,
    certify_upper_minimum,
    default_upper_params,
    exact_plan,
    lower_bound_value,
    lower_plan,
    optimize_lower,
    optimize_upper,
    transformed_posterior_moments,
    uniform_lower_params,
    upper_bound_value,
    upper_gradient,
    upper_plan,
)
from .scheduler import DeltaScore, delta_ordering, random_ordering, score_deltas, select_exact_set
from .pipeline import CaseSolution, solve_case
from .posteriors import (
    IntervalBounds,
    JointBounds,
    PosteriorEstimate,
    approximate_marginals,
    interval_histogram,
    interval_posteriors,
    joint_bounds,
)
from .sampler import SamplerConfig, SamplerEstimate, bound_filter, run_sampler
from .bench import (
    CaseSpec,
    RankingCurve,
    correlation,
    false_positive_area,
    figure2_experiment,
    partially_exact_baseline,
    ranking_curve,
    run_case,
)

__version__ = "0.1.0"
