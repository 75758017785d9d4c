"""Command-line entry point: ``isqed audit|active|prune|attribution|experiment``.

Exit codes: 0 success, 2 validation error, 1 any other runtime error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .active import LinearEcosystem, required_repetitions, run_noisy_audit, true_margin
from .attribution import AttributionConfig, coverage_game, divergence_report
from .core import EcosystemAudit, FitConfig, ValidationError
from .disco import router_complexity, run_disco
from .experiments import EXPERIMENTS, run_experiment
from .governance import POLICIES, greedy_prune
from .io import AuditRunConfig, align_labels, ingest_responses, write_report, write_rows
from .synth import TARGET_KINDS, make_linear_ecosystem


def _peers(text: Optional[str]):
    return None if text is None else tuple(p.strip() for p in text.split(",") if p.strip())


def cmd_audit(args) -> dict:
    cfg = AuditRunConfig(
        input_path=args.input, target_id=args.target, output_path=args.output, peer_ids=_peers(args.peers),
        fit_fraction=args.fit_fraction, alpha=args.alpha, n_boot=args.n_boot, lambda0=args.lambda0,
        lambda_exponent=args.lambda_exponent, seed=args.seed,
    )
    matrix = ingest_responses(cfg.input_path)
    fit_cfg = FitConfig(lambda0=cfg.lambda0, lambda_exponent=cfg.lambda_exponent, rng_seed=cfg.seed)
    audit = EcosystemAudit.from_matrix(matrix, cfg.target_id, cfg.peer_ids, cfg.fit_fraction, cfg.seed, fit_cfg)
    sol, rpt = run_disco(audit, cfg.alpha, cfg.n_boot, cfg.seed, refit=args.refit)
    k = min(args.top_k, len(audit.peers))
    result = {
        "target": audit.target.id,
        "peers": [p.id for p in audit.peers],
        "pier": rpt.to_dict(),
        "router_complexity": router_complexity(rpt.weights, k).to_dict(),
        "solver": {
            "objective": sol.objective, "kkt_residual": sol.kkt_residual, "iterations": sol.iterations,
            "gram_condition": sol.gram_condition,
        },
        "eval_points": [list(p) for p in audit.eval.sample.points],
    }
    out = Path(cfg.output_path)
    write_report(out, "audit", result, dict(cfg.to_dict(), refit=args.refit, top_k=k), cfg.seed)
    write_rows(out.with_suffix(".csv"), ("input_id", "dose", "pier"),
               [(i, d, r) for (i, d), r in zip(audit.eval.sample.points, rpt.residuals)])
    if args.plot:
        from .plotting import line_plot

        order = np.argsort(rpt.residuals)
        line_plot(out.with_suffix(".png"), {"PIER": (list(range(len(order))), rpt.residuals[order].tolist())},
                  "eval point (sorted)", "PIER", f"{audit.target.id}: uniqueness {rpt.uniqueness:.4g}",
                  hline=0.0)
    return result


def cmd_active(args) -> dict:
    if args.ecosystem:
        with open(args.ecosystem, encoding="utf-8") as fh:
            eco = LinearEcosystem.from_dict(json.load(fh))
    else:
        eco = make_linear_ecosystem(
            args.d, args.n_models, args.target_kind, args.sigma, args.seed, gamma=args.gamma
        ).ecosystem
    gamma_p = args.gamma_presumed if args.gamma_presumed is not None else args.gamma
    plan = None
    r = args.repetitions
    if r is None:
        plan = required_repetitions(eco.sigma, gamma_p, eco.n_models, eco.d, args.delta, args.constant_c)
        r = plan.r_required
    dec = run_noisy_audit(eco, gamma_p, r, args.seed, args.delta)
    result = {
        "decision": dec.to_dict(),
        "true_margin": true_margin(eco),
        "plan": None if plan is None else plan.to_dict(),
        "condition_number": eco.condition_number,
    }
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_report(args.output, "active", result, config, args.seed)
    return result


def _labels(matrix, path):
    return align_labels(matrix, ingest_responses(path))


def cmd_prune(args) -> dict:
    matrix = ingest_responses(args.input)
    labels = _labels(matrix, args.labels)
    budget = math.inf if args.budget is None else args.budget
    trace = greedy_prune(matrix, labels, args.policy, budget, args.seed, fit_fraction=args.fit_fraction, band=args.band)
    result = trace.to_dict()
    config = {k: v for k, v in vars(args).items() if k != "func"}
    out = Path(args.output)
    write_report(out, "prune", result, config, args.seed)
    write_rows(out.with_suffix(".csv"), ("fraction_pruned", "increase", "worst_excess", "p80_excess"),
               [(c[0], c[1], t[1], t[2]) for c, t in zip(trace.curve, trace.tail)])
    if args.plot:
        from .plotting import line_plot

        line_plot(out.with_suffix(".png"), {args.policy: tuple(zip(*trace.curve))}, "fraction pruned",
                  "system error increase (MAE)", "greedy pruning")
    return result


def cmd_attribution(args) -> dict:
    matrix = ingest_responses(args.input)
    labels = _labels(matrix, args.labels)
    if labels.ndim != 1:
        raise ValidationError("attribution needs a single label column")
    game = coverage_game(matrix, labels, args.band)
    rpt = divergence_report(matrix, game, AttributionConfig(tol=args.tol, fit_fraction=args.fit_fraction, seed=args.seed))
    result = rpt.to_dict()
    config = {k: v for k, v in vars(args).items() if k != "func"}
    write_report(args.output, "attribution", result, config, args.seed)
    return result


def cmd_experiment(args) -> dict:
    result, paths = run_experiment(args.name, args.config, args.output_dir, args.seed, figure=not args.no_figure)
    for p in paths.values():
        print(p)
    return result


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="isqed", description="Audit model ecosystems for functional redundancy.")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="uniqueness of one target against its peers from a response CSV")
    a.add_argument("--input", required=True, help="CSV with header input_id,dose,<model>,...")
    a.add_argument("--target", required=True)
    a.add_argument("--peers", help="comma-separated peer ids (default: all other models)")
    a.add_argument("--fit-fraction", type=float, default=0.5)
    a.add_argument("--alpha", type=float, default=0.10)
    a.add_argument("--n-boot", type=int, default=1000)
    a.add_argument("--lambda0", type=float, default=1e-3)
    a.add_argument("--lambda-exponent", type=float, default=1.5)
    a.add_argument("--refit", action="store_true", help="refit weights inside each bootstrap replicate")
    a.add_argument("--top-k", type=int, default=3)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--output", required=True, help="JSON report path; residual CSV is written next to it")
    a.add_argument("--plot", action="store_true", help="also render a PNG of sorted residuals")
    a.set_defaults(func=cmd_audit)

    ac = sub.add_parser("active", help="noisy active audit in the local linear model")
    ac.add_argument("--ecosystem", help="JSON with feature_matrix, betas, target_index, sigma")
    ac.add_argument("--d", type=int, default=5)
    ac.add_argument("--n-models", type=int, default=6)
    ac.add_argument("--target-kind", choices=TARGET_KINDS, default="margin")
    ac.add_argument("--gamma", type=float, default=1.0, help="margin of a generated target")
    ac.add_argument("--gamma-presumed", type=float, help="margin used for the decision (default --gamma)")
    ac.add_argument("--sigma", type=float, default=0.5)
    ac.add_argument("--delta", type=float, default=0.05)
    ac.add_argument("--constant-c", type=float, default=64.0)
    ac.add_argument("--repetitions", type=int, help="default: required_repetitions")
    ac.add_argument("--seed", type=int, default=0)
    ac.add_argument("--output", required=True)
    ac.set_defaults(func=cmd_active)

    p = sub.add_parser("prune", help="greedy pruning with convex-router substitution")
    p.add_argument("--input", required=True)
    p.add_argument("--labels", required=True, help="CSV input_id,dose,<label column(s)>")
    p.add_argument("--policy", choices=POLICIES, default="pier_guided")
    p.add_argument("--budget", type=float, help="maximal system error increase (default: none)")
    p.add_argument("--fit-fraction", type=float, default=0.5)
    p.add_argument("--band", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_prune)

    at = sub.add_parser("attribution", help="Shapley credit versus uniqueness")
    at.add_argument("--input", required=True)
    at.add_argument("--labels", required=True)
    at.add_argument("--band", type=float, required=True, help="a response within band of the label counts as correct")
    at.add_argument("--tol", type=float, default=1e-6)
    at.add_argument("--fit-fraction", type=float, default=0.5)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--output", required=True)
    at.set_defaults(func=cmd_attribution)

    e = sub.add_parser("experiment", help=f"run a named experiment: {', '.join(EXPERIMENTS)}")
    e.add_argument("name")
    e.add_argument("--config", help="JSON object overriding default settings")
    e.add_argument("--output-dir", default=".")
    e.add_argument("--seed", type=int)
    e.add_argument("--no-figure", action="store_true")
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "experiment" and args.name not in EXPERIMENTS:
        parser.error(f"unknown experiment {args.name!r}; valid names: {', '.join(EXPERIMENTS)}")
    try:
        args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
