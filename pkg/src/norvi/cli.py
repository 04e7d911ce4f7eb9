"""Command-line front end.

Subcommands: generate (networks and cases), infer (one case report), bench
(seeded sweeps over synthetic instances), rank (curves from two posterior
files), sample (likelihood-weighted sampling), filter (accept/reject a
sampler run against variational bounds).

Exit codes: 0 success, 2 validation error, 3 exponential-cap exceeded,
4 optimizer failed to converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .exact import CapExceeded, absorb_negative
from .network import (
    Evidence,
    NetworkFormatError,
    SyntheticSpec,
    generate_synthetic,
    load_case,
    load_network,
    save_case,
    save_network,
    validate,
)
from .sampler import SamplerConfig, bound_filter, run_sampler

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAP = 3
EXIT_NO_CONVERGENCE = 4


def _write(path: str | None, data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.write(data.decode("utf-8"))
    else:
        Path(path).write_bytes(data)


def _read(path: str) -> bytes:
    return Path(path).read_bytes()


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--format", choices=["json", "csv"], default="json")
    parser.add_argument("--deterministic", action="store_true", default=True,
                        help="omit wall-clock fields so output is byte-reproducible (default)")
    parser.add_argument("--timings", dest="deterministic", action="store_false",
                        help="include wall-clock fields")


def _case_from_network(network, seed: int, n_positive: int | None, n_negative: int | None) -> Evidence:
    """Forward-sample one diagnostic case; counts are trimmed to the sampled pools."""
    rng = np.random.default_rng(seed)
    for _ in range(64):
        d = (rng.random(network.n_diseases) < network.prior_vector()).astype(float)
        fired = []
        silent = []
        for f in network.findings:
            x = f.activation(d)
            p = -np.expm1(-x) if x > 0 else 0.0
            (fired if rng.random() < p else silent).append(f.id)
        if fired:
            break
    if not fired:
        raise ValueError("sampled 64 cases without a single positive finding; check the network")
    want_pos = len(fired) if n_positive is None else min(n_positive, len(fired))
    want_neg = min(len(silent), 33 if n_negative is None else n_negative)
    pos = rng.choice(len(fired), size=want_pos, replace=False)
    neg = rng.choice(len(silent), size=want_neg, replace=False)
    return Evidence(frozenset(fired[i] for i in pos), frozenset(silent[i] for i in neg))


def _cmd_generate(args) -> int:
    if args.kind == "network":
        spec = SyntheticSpec(
            n_diseases=args.diseases,
            n_findings=args.findings,
            edges_per_finding=(args.edges_min, args.edges_max),
            prior_range=(args.prior_min, args.prior_max),
            q_range=(args.q_min, args.q_max),
            leak_range=(args.leak_min, args.leak_max),
        )
        network = generate_synthetic(spec, args.seed)
        _write(args.out, save_network(network))
    else:
        network = load_network(_read(args.network))
        evidence = _case_from_network(network, args.seed, args.positives, args.negatives)
        _write(args.out, save_case(evidence))
    return EXIT_OK


def _spec_from_args(args, sampler: SamplerConfig | None = None) -> bench.CaseSpec:
    return bench.CaseSpec(
        budget=args.budget,
        scheduler=args.scheduler,
        order_seed=args.seed,
        mode=args.mode,
        family=args.family,
        tol=args.tol,
        max_iter=args.max_iter,
        sampler=sampler,
        deterministic=args.deterministic,
    )


def _cmd_infer(args) -> int:
    network = load_network(_read(args.network))
    evidence = load_case(_read(args.case), network)
    sampler = None
    if args.samples:
        sampler = SamplerConfig(seed=args.seed, n_samples=args.samples)
    spec = _spec_from_args(args, sampler)
    report = bench.run_case(network, evidence, spec, network_label=args.network)
    _write(args.out, bench.report_json(report))
    if args.marginals_out:
        family = "upper" if args.family == "both" else args.family
        doc = {"posteriors": report["marginals"][family]}
        _write(args.marginals_out, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode())
    conv = report["convergence"]
    if not (conv["upper"]["converged"] and conv["lower"]["converged"]):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def _cmd_bench(args) -> int:
    rows = []
    for case_idx in range(args.instances):
        seed = args.seed * 1000003 + case_idx
        spec = SyntheticSpec(
            n_diseases=args.diseases,
            n_findings=args.findings,
            edges_per_finding=(args.edges_min, args.edges_max),
        )
        network = generate_synthetic(spec, seed)
        evidence = _case_from_network(network, seed + 1, args.positives, args.negatives)
        t0 = time.perf_counter()
        report = bench.run_case(network, evidence, _spec_from_args(args), network_label=f"synthetic-{seed}")
        elapsed = time.perf_counter() - t0
        row = {
            "case": case_idx,
            "seed": seed,
            "n_positive": len(report["case"]["positive"]),
            "n_negative": len(report["case"]["negative"]),
            "budget": args.budget,
            "log_upper": report["bounds"]["log_upper"],
            "log_lower": report["bounds"]["log_lower"],
            "log_exact": report["bounds"]["log_exact"],
            "vacuous_intervals": report["intervals"]["vacuous_count"],
        }
        if "quality" in report:
            fam = "upper" if args.family == "both" else args.family
            row["correlation_top50"] = report["quality"][fam]["correlation_top50"]
            row["false_positive_area"] = report["quality"][fam]["false_positive_area"]
        if not args.deterministic:
            row["elapsed_s"] = elapsed
        rows.append(row)
    if args.format == "csv":
        names = list(rows[0].keys())
        writer = csv.DictWriter(sys.stdout if args.out in (None, "-") else open(args.out, "w", newline=""),
                                fieldnames=names, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        _write(args.out, (json.dumps(rows, sort_keys=True, indent=1) + "\n").encode())
    return EXIT_OK


def _load_posteriors(path: str) -> np.ndarray:
    doc = json.loads(_read(path))
    if isinstance(doc, dict):
        if "posteriors" not in doc:
            raise NetworkFormatError(f"{path}: expected a 'posteriors' array")
        doc = doc["posteriors"]
    return np.asarray(doc, dtype=float)


def _cmd_rank(args) -> int:
    reference = _load_posteriors(args.reference)
    approx = _load_posteriors(args.approx)
    curve = bench.ranking_curve(reference, approx, args.n_max)
    rows = [
        {
            "true_positives": int(tp),
            "required": int(rq),
            "false_positives": int(fp),
            "false_negatives": int(fn),
        }
        for tp, rq, fp, fn in zip(curve.true_positives, curve.required, curve.false_positives, curve.false_negatives)
    ]
    if args.format == "csv":
        out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
        writer = csv.DictWriter(out, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    else:
        _write(args.out, (json.dumps(rows, sort_keys=True, indent=1) + "\n").encode())
    return EXIT_OK


def _cmd_sample(args) -> int:
    network = load_network(_read(args.network))
    evidence = load_case(_read(args.case), network)
    priors = absorb_negative(network, evidence.negative)
    config = SamplerConfig(
        seed=args.seed,
        n_samples=args.samples,
        time_limit=args.time_limit,
        markov_blanket_scoring=not args.no_markov_blanket,
        self_importance=not args.no_self_importance,
        si_update_period=args.update_period,
    )
    est = run_sampler(network, priors, sorted(evidence.positive), config)
    doc = {
        "log_likelihood": est.log_likelihood,
        "samples_used": est.samples_used,
        "ess": est.ess,
        "degenerate": est.degenerate,
        "posteriors": est.marginals.tolist(),
    }
    _write(args.out, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode())
    return EXIT_OK


def _cmd_filter(args) -> int:
    est = json.loads(_read(args.estimate))
    report = json.loads(_read(args.report))
    accepted = bound_filter(
        est["log_likelihood"],
        report["bounds"]["log_upper"],
        report["bounds"]["log_lower"],
        slack=args.slack,
    )
    doc = {
        "accepted": bool(accepted),
        "estimate_log_likelihood": est["log_likelihood"],
        "log_upper": report["bounds"]["log_upper"],
        "log_lower": report["bounds"]["log_lower"],
        "slack": args.slack,
    }
    _write(args.out, (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="norvi", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="synthesize a network or a case")
    gen.add_argument("kind", choices=["network", "case"])
    gen.add_argument("--out", default="-")
    gen.add_argument("--network", help="network file (for case generation)")
    gen.add_argument("--diseases", type=int, default=600)
    gen.add_argument("--findings", type=int, default=4000)
    gen.add_argument("--edges-min", type=int, default=1)
    gen.add_argument("--edges-max", type=int, default=10)
    gen.add_argument("--prior-min", type=float, default=1e-4)
    gen.add_argument("--prior-max", type=float, default=1e-1)
    gen.add_argument("--q-min", type=float, default=0.2)
    gen.add_argument("--q-max", type=float, default=0.95)
    gen.add_argument("--leak-min", type=float, default=0.0)
    gen.add_argument("--leak-max", type=float, default=0.15)
    gen.add_argument("--positives", type=int, default=None)
    gen.add_argument("--negatives", type=int, default=None)
    _add_common(gen)
    gen.set_defaults(func=_cmd_generate)

    inf = sub.add_parser("infer", help="run the full pipeline on one case")
    inf.add_argument("--network", required=True)
    inf.add_argument("--case", required=True)
    inf.add_argument("--out", default="-")
    inf.add_argument("--marginals-out", default=None,
                     help="also write {'posteriors': [...]} for the chosen family")
    inf.add_argument("--budget", type=int, required=True)
    inf.add_argument("--family", choices=["upper", "lower", "both"], default="both")
    inf.add_argument("--scheduler", choices=["delta", "random"], default="delta")
    inf.add_argument("--mode", choices=["staged", "full"], default="staged")
    inf.add_argument("--tol", type=float, default=1e-8)
    inf.add_argument("--max-iter", type=int, default=200)
    inf.add_argument("--samples", type=int, default=0, help="optional sampler run")
    _add_common(inf)
    inf.set_defaults(func=_cmd_infer)

    ben = sub.add_parser("bench", help="seeded sweep over synthetic instances")
    ben.add_argument("--out", default="-")
    ben.add_argument("--instances", type=int, default=10)
    ben.add_argument("--diseases", type=int, default=12)
    ben.add_argument("--findings", type=int, default=30)
    ben.add_argument("--edges-min", type=int, default=1)
    ben.add_argument("--edges-max", type=int, default=4)
    ben.add_argument("--positives", type=int, default=8)
    ben.add_argument("--negatives", type=int, default=6)
    ben.add_argument("--budget", type=int, default=4)
    ben.add_argument("--family", choices=["upper", "lower", "both"], default="both")
    ben.add_argument("--scheduler", choices=["delta", "random"], default="delta")
    ben.add_argument("--mode", choices=["staged", "full"], default="staged")
    ben.add_argument("--tol", type=float, default=1e-8)
    ben.add_argument("--max-iter", type=int, default=200)
    _add_common(ben)
    ben.set_defaults(func=_cmd_bench)

    rnk = sub.add_parser("rank", help="ranking curve from two posterior files")
    rnk.add_argument("--reference", required=True)
    rnk.add_argument("--approx", required=True)
    rnk.add_argument("--n-max", type=int, default=None)
    rnk.add_argument("--out", default="-")
    _add_common(rnk)
    rnk.set_defaults(func=_cmd_rank)

    smp = sub.add_parser("sample", help="likelihood-weighted sampling run")
    smp.add_argument("--network", required=True)
    smp.add_argument("--case", required=True)
    smp.add_argument("--out", default="-")
    smp.add_argument("--samples", type=int, default=None)
    smp.add_argument("--time-limit", type=float, default=None)
    smp.add_argument("--update-period", type=int, default=1000)
    smp.add_argument("--no-markov-blanket", action="store_true")
    smp.add_argument("--no-self-importance", action="store_true")
    _add_common(smp)
    smp.set_defaults(func=_cmd_sample)

    flt = sub.add_parser("filter", help="accept/reject a sampler estimate against bounds")
    flt.add_argument("--estimate", required=True, help="sample subcommand output")
    flt.add_argument("--report", required=True, help="infer subcommand output")
    flt.add_argument("--slack", type=float, default=0.5)
    flt.add_argument("--out", default="-")
    _add_common(flt)
    flt.set_defaults(func=_cmd_filter)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (NetworkFormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
