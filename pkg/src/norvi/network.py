"""Two-level noisy-OR belief networks.

A network is a bipartite graph: independent binary diseases on top, binary
findings below, each finding wired to its parent diseases through a noisy-OR
gate.  The gate is stored in exponential form: a finding with leak weight
``leak`` and parent weights ``theta_j`` stays off with probability
``exp(-leak - sum_j theta_j * d_j)``.  Weights relate to single-cause
activation probabilities by ``theta = -log(1 - q)``.

This module holds the model types, their validation, a synthetic-network
generator, and the JSON file formats for networks and evidence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "DiseaseNode",
    "FindingCPD",
    "NoisyOrNetwork",
    "Evidence",
    "NetworkFormatError",
    "SyntheticSpec",
    "q_to_theta",
    "theta_to_q",
    "validate",
    "check_evidence",
    "generate_synthetic",
    "save_network",
    "load_network",
    "save_case",
    "load_case",
]


class NetworkFormatError(ValueError):
    """Raised when a network or case file cannot be parsed or violates invariants."""


def q_to_theta(q):
    """Convert activation probabilities q in [0, 1) to noisy-OR weights -log(1-q)."""
    arr = np.asarray(q, dtype=float)
    if np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise ValueError(f"activation probability must lie in [0, 1), got {q!r}")
    out = -np.log1p(-arr)
    return float(out) if arr.ndim == 0 else out


def theta_to_q(theta):
    """Inverse of q_to_theta: 1 - exp(-theta) for weights theta >= 0."""
    arr = np.asarray(theta, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError(f"noisy-OR weight must be nonnegative, got {theta!r}")
    out = -np.expm1(-arr)
    return float(out) if arr.ndim == 0 else out


@dataclass(frozen=True)
class DiseaseNode:
    """A binary disease with marginal prior P(d = 1) strictly inside (0, 1)."""

    id: int
    prior: float


@dataclass(frozen=True)
class FindingCPD:
    """Noisy-OR gate for one finding.

    ``parents`` maps disease id to the weight theta > 0; a zero weight is the
    same as no edge and must be stored as absence.  ``leak`` >= 0 covers causes
    outside the modeled diseases.
    """

    id: int
    leak: float
    parents: Mapping[int, float]

    def __post_init__(self):
        ordered = {int(j): float(t) for j, t in sorted(self.parents.items())}
        object.__setattr__(self, "parents", ordered)

    @property
    def parent_ids(self) -> np.ndarray:
        return np.fromiter(self.parents.keys(), dtype=np.int64, count=len(self.parents))

    @property
    def thetas(self) -> np.ndarray:
        return np.fromiter(self.parents.values(), dtype=float, count=len(self.parents))

    def activation(self, d: np.ndarray) -> float:
        """leak + sum of weights of active parents for a full disease vector d."""
        ids = self.parent_ids
        return float(self.leak + np.dot(self.thetas, np.asarray(d, dtype=float)[ids]))


@dataclass(frozen=True)
class NoisyOrNetwork:
    """Bipartite noisy-OR network with dense ids 0..n-1 (diseases) and 0..m-1 (findings)."""

    diseases: tuple[DiseaseNode, ...]
    findings: tuple[FindingCPD, ...]

    def __post_init__(self):
        object.__setattr__(self, "diseases", tuple(self.diseases))
        object.__setattr__(self, "findings", tuple(self.findings))

    @classmethod
    def from_parts(cls, priors: Iterable[float], findings: Iterable[tuple[float, Mapping[int, float]]]):
        """Build from a prior list and (leak, {disease: theta}) pairs, ids assigned in order."""
        ds = tuple(DiseaseNode(j, float(p)) for j, p in enumerate(priors))
        fs = tuple(FindingCPD(i, float(leak), dict(parents)) for i, (leak, parents) in enumerate(findings))
        return cls(ds, fs)

    @property
    def n_diseases(self) -> int:
        return len(self.diseases)

    @property
    def n_findings(self) -> int:
        return len(self.findings)

    def prior_vector(self) -> np.ndarray:
        return np.array([d.prior for d in self.diseases], dtype=float)


@dataclass(frozen=True)
class Evidence:
    """Observed findings: ids seen positive and ids seen negative, disjoint sets."""

    positive: frozenset[int] = field(default_factory=frozenset)
    negative: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "positive", frozenset(int(i) for i in self.positive))
        object.__setattr__(self, "negative", frozenset(int(i) for i in self.negative))


def validate(network: NoisyOrNetwork) -> list[str]:
    """Check every model invariant; returns one message per violation (empty list if clean).

    Violations are data, not errors: callers decide whether to raise.
    """
    problems: list[str] = []
    n = network.n_diseases
    for pos, d in enumerate(network.diseases):
        if d.id != pos:
            problems.append(f"disease at position {pos} has id {d.id}; ids must be dense 0..{n - 1}")
        if not (0.0 < d.prior < 1.0) or not math.isfinite(d.prior):
            problems.append(f"disease {d.id}: prior {d.prior!r} outside open interval (0, 1)")
    for pos, f in enumerate(network.findings):
        if f.id != pos:
            problems.append(f"finding at position {pos} has id {f.id}; ids must be dense 0..{network.n_findings - 1}")
        if not (f.leak >= 0.0 and math.isfinite(f.leak)):
            problems.append(f"finding {f.id}: leak weight {f.leak!r} must be finite and >= 0")
        if not f.parents:
            problems.append(f"finding {f.id}: no parents (every finding needs at least one)")
        for j, theta in f.parents.items():
            if not (0 <= j < n):
                problems.append(f"finding {f.id}: parent disease {j} does not exist")
            if theta == 0.0:
                problems.append(f"finding {f.id}: edge to disease {j} has weight 0 (store absence instead)")
            elif not (theta > 0.0 and math.isfinite(theta)):
                problems.append(f"finding {f.id}: edge to disease {j} has weight {theta!r}, must be finite and > 0")
    return problems


def check_evidence(network: NoisyOrNetwork, evidence: Evidence) -> None:
    """Raise ValueError unless evidence ids exist and positive/negative are disjoint."""
    overlap = evidence.positive & evidence.negative
    if overlap:
        raise ValueError(f"findings observed both positive and negative: {sorted(overlap)}")
    m = network.n_findings
    bad = [i for i in (evidence.positive | evidence.negative) if not (0 <= i < m)]
    if bad:
        raise ValueError(f"evidence references unknown findings: {sorted(bad)}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the synthetic generator.

    Defaults target the scale regime of large diagnostic networks (hundreds of
    rare diseases, thousands of findings): priors log-uniform on
    [1e-4, 1e-1], activation probabilities uniform on [0.2, 0.95], leak
    probabilities uniform on [0, 0.15].  All ranges overridable.
    """

    n_diseases: int = 600
    n_findings: int = 4000
    edges_per_finding: tuple[int, int] = (1, 10)
    prior_range: tuple[float, float] = (1e-4, 1e-1)
    q_range: tuple[float, float] = (0.2, 0.95)
    leak_range: tuple[float, float] = (0.0, 0.15)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> NoisyOrNetwork:
    """Draw a random network, a pure function of (spec, seed).

    Parent sets are sampled uniformly without replacement per finding; the
    result always passes validate().
    """
    if spec.n_diseases < 1:
        raise ValueError("need at least one disease")
    if spec.n_findings < 0:
        raise ValueError("negative finding count")
    lo_e, hi_e = spec.edges_per_finding
    if not (1 <= lo_e <= hi_e):
        raise ValueError(f"edges_per_finding range {spec.edges_per_finding} must satisfy 1 <= lo <= hi")
    if hi_e > spec.n_diseases:
        raise ValueError(f"edges_per_finding upper bound {hi_e} exceeds {spec.n_diseases} diseases")
    for name, (lo, hi), dlo, dhi in [
        ("prior_range", spec.prior_range, 0.0, 1.0),
        ("q_range", spec.q_range, 0.0, 1.0),
        ("leak_range", spec.leak_range, 0.0, 1.0),
    ]:
        if not (dlo <= lo <= hi) or hi >= dhi:
            raise ValueError(f"{name} {(lo, hi)} is not a valid sub-interval of [{dlo}, {dhi})")
    if spec.prior_range[0] <= 0.0:
        raise ValueError("prior_range lower bound must be > 0")
    if spec.q_range[0] <= 0.0:
        raise ValueError("q_range lower bound must be > 0 (zero weight means no edge)")

    rng = np.random.default_rng(seed)
    priors = np.exp(rng.uniform(math.log(spec.prior_range[0]), math.log(spec.prior_range[1]), size=spec.n_diseases))
    findings = []
    for i in range(spec.n_findings):
        k = int(rng.integers(lo_e, hi_e + 1))
        ids = np.sort(rng.choice(spec.n_diseases, size=k, replace=False))
        qs = rng.uniform(spec.q_range[0], spec.q_range[1], size=k)
        leak_q = float(rng.uniform(spec.leak_range[0], spec.leak_range[1]))
        parents = {int(j): float(q_to_theta(q)) for j, q in zip(ids, qs)}
        findings.append(FindingCPD(i, float(q_to_theta(leak_q)), parents))
    diseases = tuple(DiseaseNode(j, float(p)) for j, p in enumerate(priors))
    return NoisyOrNetwork(diseases, tuple(findings))


# ---------------------------------------------------------------------------
# JSON file formats
#
# network: {"diseases": [{"id": int, "prior": float}...],
#           "findings": [{"id": int, "leak_theta": float,
#                         "parents": [{"disease": int, "theta": float}...]}...]}
# case:    {"positive": [int...], "negative": [int...]}
#
# Floats use Python repr (shortest exact round trip); unknown fields are
# rejected with the offending JSON path.
# ---------------------------------------------------------------------------


def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, dict):
        raise NetworkFormatError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise NetworkFormatError(f"{where}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise NetworkFormatError(f"{where}: missing fields {sorted(missing)}")


def _num(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise NetworkFormatError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise NetworkFormatError(f"{where}: expected an integer, got {value!r}")
    return value


def save_network(network: NoisyOrNetwork) -> bytes:
    doc = {
        "diseases": [{"id": d.id, "prior": d.prior} for d in network.diseases],
        "findings": [
            {
                "id": f.id,
                "leak_theta": f.leak,
                "parents": [{"disease": j, "theta": t} for j, t in f.parents.items()],
            }
            for f in network.findings
        ],
    }
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def load_network(data: bytes | str) -> NoisyOrNetwork:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"malformed JSON: {exc}") from None
    _require_keys(doc, {"diseases", "findings"}, {"diseases", "findings"}, "top level")
    if not isinstance(doc["diseases"], list) or not isinstance(doc["findings"], list):
        raise NetworkFormatError("top level: 'diseases' and 'findings' must be arrays")

    diseases = []
    for pos, entry in enumerate(doc["diseases"]):
        where = f"diseases[{pos}]"
        _require_keys(entry, {"id", "prior"}, {"id", "prior"}, where)
        diseases.append(DiseaseNode(_int(entry["id"], where + ".id"), _num(entry["prior"], where + ".prior")))

    findings = []
    for pos, entry in enumerate(doc["findings"]):
        where = f"findings[{pos}]"
        _require_keys(entry, {"id", "leak_theta", "parents"}, {"id", "leak_theta", "parents"}, where)
        if not isinstance(entry["parents"], list):
            raise NetworkFormatError(f"{where}.parents: expected an array")
        parents: dict[int, float] = {}
        for epos, edge in enumerate(entry["parents"]):
            ewhere = f"{where}.parents[{epos}]"
            _require_keys(edge, {"disease", "theta"}, {"disease", "theta"}, ewhere)
            j = _int(edge["disease"], ewhere + ".disease")
            if j in parents:
                raise NetworkFormatError(f"{ewhere}: duplicate parent disease {j} in finding {entry['id']}")
            parents[j] = _num(edge["theta"], ewhere + ".theta")
        findings.append(FindingCPD(_int(entry["id"], where + ".id"), _num(entry["leak_theta"], where + ".leak_theta"), parents))

    network = NoisyOrNetwork(tuple(diseases), tuple(findings))
    problems = validate(network)
    if problems:
        raise NetworkFormatError("invalid network: " + "; ".join(problems))
    return network


def save_case(evidence: Evidence) -> bytes:
    doc = {"positive": sorted(evidence.positive), "negative": sorted(evidence.negative)}
    return (json.dumps(doc, indent=1) + "\n").encode("utf-8")


def load_case(data: bytes | str, network: NoisyOrNetwork | None = None) -> Evidence:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"malformed JSON: {exc}") from None
    _require_keys(doc, {"positive", "negative"}, {"positive", "negative"}, "top level")
    for key in ("positive", "negative"):
        if not isinstance(doc[key], list):
            raise NetworkFormatError(f"top level.{key}: expected an array")
        for pos, v in enumerate(doc[key]):
            _int(v, f"{key}[{pos}]")
    evidence = Evidence(frozenset(doc["positive"]), frozenset(doc["negative"]))
    if network is not None:
        try:
            check_evidence(network, evidence)
        except ValueError as exc:
            raise NetworkFormatError(str(exc)) from None
    return evidence
