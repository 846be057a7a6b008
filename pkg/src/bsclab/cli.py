"""Reproducible experiment runner.

Every subcommand takes an explicit seed (there is no wall-clock entropy
anywhere), prints a short summary, optionally writes a canonical JSON report
and a per-trial CSV, and exits 0 exactly when every check in the report
passed.  Trial batches honor BSCLAB_WORKERS for process fan-out where the
work is seed-partitionable.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import compressor, energy, infotheory, suite, verify
from .compressor import ChunkParams, minimal_t
from .core import CostLedger, RandomSource, load_spec, spec_from_dict
from .infotheory import external_info_cost, kl_bernoulli, uniform_inputs


@dataclass
class ReportDocument:
    """Experiment record: parameters, seeds, metrics and verdicts.

    Rerunning with the same seeds reproduces every field except the wall
    clock.  `trials` feeds the CSV writer only and never enters the JSON.
    """

    experiment: str
    parameters: dict
    seeds: dict
    metrics: dict = field(default_factory=dict)
    tests: list = field(default_factory=list)
    trials: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "parameters": self.parameters,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "tests": self.tests,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    @property
    def all_passed(self) -> bool:
        return all(t.get("passed", False) for t in self.tests)


def emit_report(doc: ReportDocument, path: str | None, fmt: str = "json") -> None:
    """Write the report; JSON uses canonical key order, CSV one row per trial."""
    if path is None:
        return
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    elif fmt == "csv":
        rows = doc.trials or [
            {"metric": k, "value": v}
            for k, v in doc.metrics.items()
            if isinstance(v, (int, float, str, bool))
        ]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            if not rows:
                return
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("BSCLAB_WORKERS", "1")))
    except ValueError:
        return 1


def _print_tests(doc: ReportDocument) -> None:
    for t in doc.tests:
        verdict = "PASS" if t["passed"] else "FAIL"
        print(f"  [{verdict}] {t['name']}")


# ---------------------------------------------------------------------------
# chunk-verify
# ---------------------------------------------------------------------------


def _mc_slice(args: tuple) -> verify.MonteCarloChunkResult:
    spec_doc, params_fields, x, y, n, base_seed = args
    spec = spec_from_dict(spec_doc)
    params = ChunkParams(*params_fields)
    return verify.monte_carlo_chunk(params, spec, x, y, n, base_seed)


def _run_mc(
    spec_doc: dict, params: ChunkParams, x, y, samples: int, seed: int
) -> verify.MonteCarloChunkResult:
    workers = _workers()
    if workers == 1:
        return _mc_slice((spec_doc, _params_fields(params), x, y, samples, seed))
    bounds = np.linspace(0, samples, workers + 1, dtype=int)
    jobs = [
        (spec_doc, _params_fields(params), x, y, int(hi - lo), seed + int(lo))
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_mc_slice, jobs))
    counts = sum(p.counts for p in parts)
    bits = np.concatenate([p.bits for p in parts])
    failures = [f for p in parts for f in p.failures]
    hists: dict[int, np.ndarray] = {}
    for p in parts:
        for b, h in p.rejection_rounds.items():
            cur = hists.get(b, np.zeros(0, dtype=np.int64))
            n = max(cur.size, h.size)
            merged = np.zeros(n, dtype=np.int64)
            merged[: cur.size] += cur
            merged[: h.size] += h
            hists[b] = merged
    branch_trials = {b: int(h.sum()) for b, h in hists.items()}
    branch_mean = {
        b: (float((np.arange(h.size) * h).sum() / h.sum()) if h.sum() else 0.0)
        for b, h in hists.items()
    }
    used = int(bits.size)
    thr = sum(p.mean_threshold_rounds * p.n_trials for p in parts)
    return verify.MonteCarloChunkResult(
        counts=counts,
        n_trials=used,
        mean_bits=float(bits.mean()) if used else 0.0,
        p95_bits=float(np.percentile(bits, 95)) if used else 0.0,
        branch_trials=branch_trials,
        branch_mean_rounds=branch_mean,
        rejection_rounds=hists,
        mean_threshold_rounds=thr / used if used else 0.0,
        bits=bits,
        failures=failures,
    )


def _params_fields(params: ChunkParams) -> tuple:
    return (params.gamma, params.epsilon, params.theta, params.t, params.beta)


def cmd_chunk_verify(args: argparse.Namespace) -> ReportDocument:
    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            spec_doc = json.load(fh)
    else:
        spec_doc = {
            "rounds": args.gamma,
            "alice_inputs": [0, 1],
            "bob_inputs": [0, 1],
            "kind": "seeded",
            "seed": args.spec_seed,
        }
    spec = spec_from_dict(spec_doc)
    theta = args.theta if args.theta is not None else args.gamma * (0.5 - 3 * args.epsilon)
    if args.t == "minimal":
        t = minimal_t(args.gamma, args.epsilon, theta)
    elif args.t == "default":
        t = compressor.default_t(args.epsilon, args.t_cap)
    else:
        t = float(args.t)
    params = ChunkParams(args.gamma, args.epsilon, theta, t, args.beta)
    violations = compressor.validate_params(params)
    if violations:
        raise SystemExit("parameter validation failed: " + "; ".join(violations))

    exact = verify.exact_chunk_distribution(params)
    expected = verify.class_law(params.half, params.epsilon)
    max_diff = float(np.max(np.abs(exact - expected)))

    mc = _run_mc(spec_doc, params, 0, 1, args.samples, args.seed)
    gof = verify.chi_square_gof(mc.counts, exact)

    doc = ReportDocument(
        experiment="chunk-verify",
        parameters={
            "gamma": params.gamma,
            "epsilon": params.epsilon,
            "theta": params.theta,
            "t": params.t,
            "beta": params.beta,
            "samples": args.samples,
        },
        seeds={"base": args.seed, "spec": args.spec_seed},
        metrics={
            "exact_max_abs_diff": max_diff,
            "chi2_statistic": gof.statistic,
            "chi2_p_value": gof.p_value,
            "mean_bits": mc.mean_bits,
            "p95_bits": mc.p95_bits,
            "branch_trials": mc.branch_trials,
            "branch_mean_rounds": mc.branch_mean_rounds,
            "mean_threshold_rounds": mc.mean_threshold_rounds,
            "failed_trials": len(mc.failures),
        },
        tests=[
            {"name": "exact law matches product binomial (1e-10)", "passed": max_diff <= 1e-10},
            {"name": "chi-square fit at 0.001", "passed": gof.passed},
            {"name": "no aborted trials", "passed": not mc.failures},
        ],
        trials=[{"trial": i, "bits": int(b)} for i, b in enumerate(mc.bits)],
    )
    return doc


# ---------------------------------------------------------------------------
# compress
# ---------------------------------------------------------------------------


def cmd_compress(args: argparse.Namespace) -> ReportDocument:
    if args.spec:
        spec = load_spec(args.spec)
    else:
        spec = spec_from_dict(
            {
                "rounds": args.rounds,
                "alice_inputs": [0],
                "bob_inputs": [0],
                "kind": "constant",
                "bit": 1,
            }
        )
    x = spec.alice_inputs[0]
    y = spec.bob_inputs[0]
    bits = np.zeros(args.trials, dtype=np.int64)
    for i in range(args.trials):
        rng = RandomSource.for_trial(args.seed, i)
        _, ledger = compressor.simulate_noiseless(
            spec, x, y, args.epsilon, rng, beta=args.beta, t_cap=args.t_cap
        )
        bits[i] = ledger.bits_sent
    g = compressor.default_gamma(args.epsilon)
    n_chunks = math.ceil(spec.rounds / g) if args.epsilon < args.beta else 1
    doc = ReportDocument(
        experiment="compress",
        parameters={
            "rounds": spec.rounds,
            "epsilon": args.epsilon,
            "beta": args.beta,
            "t_cap": args.t_cap,
            "trials": args.trials,
        },
        seeds={"base": args.seed},
        metrics={
            "mean_bits": float(bits.mean()),
            "p95_bits": float(np.percentile(bits, 95)),
            "mean_bits_per_chunk": float(bits.mean()) / n_chunks,
            "chunks": n_chunks,
        },
        tests=[{"name": "all trials completed", "passed": True}],
        trials=[{"trial": i, "bits": int(b)} for i, b in enumerate(bits)],
    )
    return doc


# ---------------------------------------------------------------------------
# walk
# ---------------------------------------------------------------------------


def cmd_walk(args: argparse.Namespace) -> ReportDocument:
    rng = RandomSource(args.seed)
    ends = []
    energies = []
    steps = []
    for _ in range(args.trials):
        ledger = CostLedger()
        if args.mode == "brw":
            out = energy.brw_to_top(args.a, args.b, rng, ledger)
        else:
            out = energy.unbiased_walk(args.a, args.a + args.b, rng, ledger)
        ends.append(out.end_index)
        energies.append(out.energy)
        steps.append(out.steps)
    ends_arr = np.array(ends)
    mean_energy = float(np.mean(energies))
    top = args.a + args.b
    tests = []
    if args.mode == "brw":
        tests.append(
            {"name": "absorbed at a+b in every run", "passed": bool(np.all(ends_arr == top))}
        )
        tests.append({"name": "mean energy <= 48", "passed": mean_energy <= 48.0})
    else:
        freq = float(np.mean(ends_arr == top))
        target = args.a / top
        sigma = math.sqrt(target * (1 - target) / args.trials) if 0 < target < 1 else 0.0
        tests.append(
            {
                "name": "top frequency within 3 sigma of a/(a+b)",
                "passed": abs(freq - target) <= 3 * sigma + 1e-12,
            }
        )
        tests.append({"name": "zero energy", "passed": float(np.sum(energies)) == 0.0})
    doc = ReportDocument(
        experiment=f"walk-{args.mode}",
        parameters={"a": args.a, "b": args.b, "trials": args.trials},
        seeds={"base": args.seed},
        metrics={
            "top_fraction": float(np.mean(ends_arr == top)),
            "mean_energy": mean_energy,
            "mean_steps": float(np.mean(steps)),
        },
        tests=tests,
        trials=[
            {"trial": i, "end": int(e), "energy": float(v), "steps": int(s)}
            for i, (e, v, s) in enumerate(zip(ends, energies, steps))
        ],
    )
    return doc


# ---------------------------------------------------------------------------
# sample-prior
# ---------------------------------------------------------------------------


def cmd_sample_prior(args: argparse.Namespace) -> ReportDocument:
    if args.pairs:
        pairs = [tuple(float(v) for v in chunk.split(":")) for chunk in args.pairs.split(",")]
    else:
        pairs = [(args.p, args.q)]
    eps_i = 1.0 / (2 * args.grid_n)
    rows = []
    tests = []
    for idx, (p, q) in enumerate(pairs):
        rng = RandomSource(args.seed + idx)
        ledger = CostLedger()
        ones = 0
        for _ in range(args.samples):
            ones += energy.sample_with_prior(p, q, args.grid_n, rng, ledger)
        mean = ones / args.samples
        sigma = math.sqrt(p * (1 - p) / args.samples) if 0 < p < 1 else 0.0
        divergence = kl_bernoulli(p, q)
        ratio = (ledger.energy / args.samples) / (divergence + eps_i)
        rows.append(
            {
                "p": p,
                "q": q,
                "mean": mean,
                "mean_energy": ledger.energy / args.samples,
                "divergence_bits": divergence,
                "energy_ratio": ratio,
            }
        )
        tests.append(
            {
                "name": f"mean within 3 sigma at p={p}, q={q}",
                "passed": abs(mean - p) <= 3 * sigma + 1e-12,
            }
        )
    doc = ReportDocument(
        experiment="sample-prior",
        parameters={"grid_n": args.grid_n, "samples": args.samples},
        seeds={"base": args.seed},
        metrics={"grid": rows, "max_energy_ratio": max(r["energy_ratio"] for r in rows)},
        tests=tests,
        trials=rows,
    )
    return doc


# ---------------------------------------------------------------------------
# icost / equiv
# ---------------------------------------------------------------------------


def _load_mu(arg: str, spec) -> dict:
    if arg == "uniform":
        return uniform_inputs(spec)
    with open(arg, encoding="utf-8") as fh:
        doc = json.load(fh)
    mu = {}
    for row in doc["pairs"]:
        mu[(row["x"], row["y"])] = float(row["w"])
    total = sum(mu.values())
    if abs(total - 1.0) > 1e-9:
        raise SystemExit(f"input distribution sums to {total}, not 1")
    return mu


def cmd_icost(args: argparse.Namespace) -> ReportDocument:
    spec = load_spec(args.spec)
    mu = _load_mu(args.mu, spec)
    res = external_info_cost(spec, mu)
    spread = max(res.bits, res.chain_bits, res.divergence_bits) - min(
        res.bits, res.chain_bits, res.divergence_bits
    )
    doc = ReportDocument(
        experiment="icost",
        parameters={"spec": args.spec, "mu": args.mu, "rounds": spec.rounds},
        seeds={},
        metrics={
            "external_info_cost_bits": res.bits,
            "chain_rule_bits": res.chain_bits,
            "divergence_form_bits": res.divergence_bits,
            "per_round_bits": list(res.per_round),
        },
        tests=[{"name": "three routes agree (1e-9)", "passed": spread <= 1e-9}],
    )
    return doc


def cmd_equiv(args: argparse.Namespace) -> ReportDocument:
    tests = []
    metrics = {}
    if args.mode in ("eclb", "both"):
        worst = -math.inf
        holds = True
        for k in range(args.instances):
            gen = np.random.default_rng(args.seed + k)
            rounds = int(gen.integers(1, 4))
            pi = suite.random_variable_noise_spec(gen, rounds)
            mu = suite.random_mu(gen, pi)
            phi = energy.noiseless_from_noisy(pi, mu)
            slack = external_info_cost(phi, mu).bits - energy.expected_energy_cost(pi, mu) / infotheory.LN2
            worst = max(worst, slack)
            holds = holds and slack <= 1e-9
        metrics["eclb_worst_slack_bits"] = worst
        tests.append({"name": "info cost <= energy / ln 2 on all instances", "passed": holds})
    if args.mode in ("ecub", "both"):
        battery = []
        passed = True
        for idx, (name, phi) in enumerate(suite.ecub_battery()):
            mu = uniform_inputs(phi)
            sim = energy.noisy_from_noiseless(phi, mu, args.grid_n)
            joint = infotheory.FiniteJoint.from_protocol(phi, mu)
            leaves = sorted({t for (_, _, t) in joint.table})
            expected = np.array(
                [
                    sum(pr for (x, y, t), pr in joint.table.items() if t == leaf)
                    for leaf in leaves
                ]
            )
            pair_list = list(mu.keys())
            weights = np.array([mu[p] for p in pair_list])
            gen = np.random.default_rng(args.seed + 50 + idx)
            draws = gen.choice(len(pair_list), size=args.samples, p=weights)
            rng = RandomSource(args.seed + 60 + idx)
            counts = np.zeros(len(leaves), dtype=np.int64)
            total_energy = 0.0
            for d in draws:
                x, y = pair_list[d]
                transcript, ledger = sim.run(x, y, rng)
                counts[leaves.index(transcript)] += 1
                total_energy += ledger.energy
            gof = verify.chi_square_gof(counts, expected)
            ic = external_info_cost(phi, mu).bits
            ratio = (total_energy / args.samples) / (ic + 1.0 / (2 * args.grid_n))
            battery.append(
                {
                    "protocol": name,
                    "p_value": gof.p_value,
                    "mean_energy": total_energy / args.samples,
                    "energy_ratio": ratio,
                }
            )
            passed = passed and gof.passed
        metrics["ecub_battery"] = battery
        tests.append({"name": "noisy replay transcript law fits", "passed": passed})
    doc = ReportDocument(
        experiment="equiv",
        parameters={
            "mode": args.mode,
            "instances": args.instances,
            "samples": args.samples,
            "grid_n": args.grid_n,
        },
        seeds={"base": args.seed},
        metrics=metrics,
        tests=tests,
    )
    return doc


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def cmd_suite(args: argparse.Namespace) -> ReportDocument:
    numbers = None
    if args.criteria:
        numbers = [int(v) for v in args.criteria.split(",")]
    results = suite.run_suite(seed=args.seed, numbers=numbers)
    for res in results:
        print(res.line())
    doc = ReportDocument(
        experiment="suite",
        parameters={"criteria": numbers or [n for n, _ in suite.CRITERIA]},
        seeds={"base": args.seed},
        metrics={
            f"criterion_{res.number:02d}": {"name": res.name, **_jsonable(res.metrics)}
            for res in results
        },
        tests=[
            {"name": f"criterion {res.number:02d}: {res.name}", "passed": res.passed}
            for res in results
        ],
    )
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bsclab",
        description="Seeded experiments for channel-simulation protocols",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=7, help="base seed (deterministic)")
        p.add_argument("--out", type=str, default=None, help="write JSON report here")
        p.add_argument("--csv", type=str, default=None, help="write per-trial CSV here")

    p = sub.add_parser("chunk-verify", help="exact and sampled single-chunk oracles")
    p.add_argument("--gamma", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--t", default="minimal", help='"minimal", "default" or a number')
    p.add_argument("--t-cap", type=float, default=compressor.DEFAULT_T_CAP)
    p.add_argument("--beta", type=float, default=compressor.DEFAULT_BETA)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--spec", type=str, default=None, help="protocol spec JSON file")
    p.add_argument("--spec-seed", type=int, default=41)
    common(p)
    p.set_defaults(func=cmd_chunk_verify)

    p = sub.add_parser("compress", help="whole-protocol compression cost sweep")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--beta", type=float, default=compressor.DEFAULT_BETA)
    p.add_argument("--t-cap", type=float, default=compressor.DEFAULT_T_CAP)
    p.add_argument("--spec", type=str, default=None)
    common(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("walk", help="absorbing-walk batteries")
    p.add_argument("--mode", choices=("brw", "ubrw"), required=True)
    p.add_argument("--a", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    common(p)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("sample-prior", help="Bernoulli sampling against a prior")
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--q", type=float, default=0.2)
    p.add_argument("--pairs", type=str, default=None, help='"p:q,p:q,..." overrides --p/--q')
    p.add_argument("--grid-n", type=int, default=512)
    p.add_argument("--samples", type=int, default=50_000)
    common(p)
    p.set_defaults(func=cmd_sample_prior)

    p = sub.add_parser("icost", help="exact external information cost of a spec file")
    p.add_argument("--spec", type=str, required=True)
    p.add_argument("--mu", type=str, default="uniform")
    common(p)
    p.set_defaults(func=cmd_icost)

    p = sub.add_parser("equiv", help="energy / information equivalence checks")
    p.add_argument("--mode", choices=("eclb", "ecub", "both"), default="both")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--samples", type=int, default=50_000)
    p.add_argument("--grid-n", type=int, default=256)
    common(p)
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("suite", help="full acceptance battery")
    p.add_argument("--criteria", type=str, default=None, help="comma list, e.g. 1,5,11")
    common(p)
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        doc: ReportDocument = args.func(args)
    except (ValueError, OSError, SystemExit) as exc:
        if isinstance(exc, SystemExit) and exc.code in (0, None):
            raise
        print(f"error: {exc}", file=sys.stderr)
        return 2
    doc.wall_clock_seconds = time.perf_counter() - start
    doc.metrics = _jsonable(doc.metrics)

    print(f"experiment: {doc.experiment}")
    for key, value in doc.metrics.items():
        if isinstance(value, float):
            print(f"  {key} = {value:.6g}")
        elif isinstance(value, (int, str, bool)):
            print(f"  {key} = {value}")
    _print_tests(doc)
    emit_report(doc, args.out, "json")
    if args.csv:
        emit_report(doc, args.csv, "csv")
    if args.out:
        print(f"report written to {args.out}")
    return 0 if doc.all_passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
