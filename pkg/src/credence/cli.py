"""Command-line front end: data generation, training, queries, experiments.

Every command takes an optional JSON config file plus flag overrides, echoes
the effective configuration into its output directory, and is deterministic
given its seeds.  Reports are plain text plus a machine-readable JSON
summary.

Exit codes: 0 success, 1 usage or parse errors, 2 domain errors (total
conflict, zero-plausibility conditions), 3 acceptance failures in the
self-checking commands.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import serialize
from .dempster import TotalConflictError, ZeroPlausibilityError
from .engine import (
    BENCHMARK_QUERIES,
    NbrModel,
    QueryParseError,
    UniformPrior,
    generate_samples,
    ideal_synthetic_model,
    parse_query,
)
from .training import (
    AutoencoderHyper,
    AutoencoderNbr,
    ObservationSet,
    SyntheticWorldConfig,
    TrainHyper,
    generate_world,
    train_autoencoder_variant,
    train_synthetic,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_ACCEPTANCE = 3

TABLE1_TOLERANCE = 0.05


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_USAGE) from exc
    if not isinstance(payload, dict):
        raise CliError("config file must hold a JSON object", EXIT_USAGE)
    return payload


def _merged(config_path, overrides: dict, defaults: dict) -> dict:
    merged = dict(defaults)
    merged.update(_load_config(config_path))
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def _prepare_out(out, effective: dict) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(effective, sort_keys=True, indent=2) + "\n")
    return out_dir


def _write_report(out_dir: Path, name: str, lines: list, summary: dict) -> None:
    (out_dir / f"{name}.txt").write_text("\n".join(lines) + "\n")
    (out_dir / f"{name}.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _query_model(model):
    """The model view queries run against."""
    if isinstance(model, AutoencoderNbr):
        return model.composed_model()
    return model


def cmd_gen_data(args) -> int:
    effective = _merged(
        args.config,
        {
            "count": args.count,
            "seed": args.seed,
            "first_fraction": args.first_fraction,
            "first_inversion": args.first_inversion,
            "last_inversion": args.last_inversion,
        },
        {k: getattr(SyntheticWorldConfig(), k) for k in
         ("count", "first_fraction", "first_inversion", "last_inversion", "seed")},
    )
    out_dir = _prepare_out(args.out, effective)
    config = SyntheticWorldConfig(**effective)
    data = generate_world(config)
    data.write(out_dir / "observations.txt")
    lines = [f"observations: {len(data)}", f"file: {out_dir / 'observations.txt'}"]
    _write_report(out_dir, "gen-data", lines, {"observations": len(data), **effective})
    print("\n".join(lines))
    return EXIT_OK


def _train_config(args):
    world_defaults = {k: getattr(SyntheticWorldConfig(), k) for k in
                      ("count", "first_fraction", "first_inversion", "last_inversion", "seed")}
    hyper_defaults = {k: getattr(TrainHyper(), k) for k in
                      ("learning_rate", "batch_size", "prior_batch", "alpha_refresh_period",
                       "max_steps", "hidden_width")}
    effective = _merged(
        args.config,
        {
            "count": args.count,
            "seed": args.seed,
            "max_steps": args.max_steps,
            "variant": args.variant,
        },
        {**world_defaults, **hyper_defaults, "variant": "identity"},
    )
    world = SyntheticWorldConfig(
        count=effective["count"],
        first_fraction=effective["first_fraction"],
        first_inversion=effective["first_inversion"],
        last_inversion=effective["last_inversion"],
        seed=effective["seed"],
    )
    hyper = TrainHyper(
        learning_rate=effective["learning_rate"],
        batch_size=effective["batch_size"],
        prior_batch=effective["prior_batch"],
        alpha_refresh_period=effective["alpha_refresh_period"],
        max_steps=effective["max_steps"],
        hidden_width=effective["hidden_width"],
        seed=effective["seed"],
    )
    return effective, world, hyper


def cmd_train(args) -> int:
    effective, world, hyper = _train_config(args)
    out_dir = _prepare_out(args.out, effective)
    if effective["variant"] == "autoencoder":
        model, report = train_autoencoder_variant(world, hyper)
    else:
        model, report = train_synthetic(world, hyper)
    serialize.save(out_dir / "model.json", model)
    lines = [
        f"variant: {effective['variant']}",
        f"steps: {report.steps}",
        f"final loss: {report.final_loss:.6f}",
        f"rule weights: {np.round(report.beliefs, 4).tolist()}",
        f"model: {out_dir / 'model.json'}",
    ]
    summary = {
        "steps": report.steps,
        "final_loss": report.final_loss,
        "weights": report.beliefs.tolist(),
        "alpha": report.alpha,
        **{k: v for k, v in report.extras.items() if not isinstance(v, np.ndarray)},
    }
    _write_report(out_dir, "train", lines, summary)
    print("\n".join(lines))
    return EXIT_OK


def cmd_query(args) -> int:
    try:
        model = serialize.load(args.model)
    except (OSError, serialize.DocumentError) as exc:
        raise CliError(f"cannot load model: {exc}", EXIT_USAGE) from exc
    try:
        condition, proposition = parse_query(args.query)
    except QueryParseError as exc:
        raise CliError(f"bad query: {exc}", EXIT_USAGE) from exc
    try:
        result = _query_model(model).query(condition, proposition)
    except (ZeroPlausibilityError, TotalConflictError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    except QueryParseError as exc:
        raise CliError(f"bad query: {exc}", EXIT_USAGE) from exc
    print(f"bel={result.bel:.4f} pl={result.pl:.4f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    try:
        model = serialize.load(args.model)
    except (OSError, serialize.DocumentError) as exc:
        raise CliError(f"cannot load model: {exc}", EXIT_USAGE) from exc
    if args.prior != "uniform":
        raise CliError(f"unknown prior {args.prior!r}", EXIT_USAGE)
    target = model.latent_model() if isinstance(model, AutoencoderNbr) else model
    prior = UniformPrior(target.observation_dim)
    try:
        samples = generate_samples(target, prior, args.count, seed=args.seed)
    except (TotalConflictError, ZeroPlausibilityError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for row in samples:
            fh.write("".join(str(int(v)) for v in row) + "\n")
    print(f"wrote {len(samples)} samples to {out_path}")
    return EXIT_OK


def _run_benchmark_queries(model) -> list:
    rows = []
    queryable = _query_model(model)
    for text, expected_bel, expected_pl in BENCHMARK_QUERIES:
        condition, proposition = parse_query(text)
        result = queryable.query(condition, proposition)
        rows.append(
            {
                "query": text,
                "bel": result.bel,
                "pl": result.pl,
                "expected_bel": expected_bel,
                "expected_pl": expected_pl,
                "bel_error": abs(result.bel - expected_bel),
                "pl_error": abs(result.pl - expected_pl),
            }
        )
    return rows


def cmd_table1(args) -> int:
    effective, world, hyper = _train_config(args)
    effective["tolerance"] = args.tolerance
    out_dir = _prepare_out(args.out, effective)
    if effective["variant"] == "autoencoder":
        model, report = train_autoencoder_variant(world, hyper)
    else:
        model, report = train_synthetic(world, hyper)
    serialize.save(out_dir / "model.json", model)
    rows = _run_benchmark_queries(model)
    lines = [f"trained {report.steps} steps; weights {np.round(report.beliefs, 4).tolist()}"]
    all_ok = True
    for row in rows:
        ok = row["bel_error"] <= args.tolerance and row["pl_error"] <= args.tolerance
        all_ok &= ok
        lines.append(
            f"{'PASS' if ok else 'FAIL'}  {row['query']:<66} "
            f"bel={row['bel']:.4f} ({row['expected_bel']:.2f})  "
            f"pl={row['pl']:.4f} ({row['expected_pl']:.2f})"
        )
    lines.append(f"overall: {'PASS' if all_ok else 'FAIL'} at tolerance {args.tolerance}")
    summary = {"rows": rows, "pass": bool(all_ok), "tolerance": args.tolerance,
               "steps": report.steps, "weights": report.beliefs.tolist()}
    _write_report(out_dir, "table1", lines, summary)
    print("\n".join(lines))
    return EXIT_OK if all_ok else EXIT_ACCEPTANCE


def cmd_classify(args) -> int:
    from .classifier import (
        AdvConfig,
        ToyDataConfig,
        make_two_arcs,
        pgd_attack_l2_batch,
        train_toy_classifier,
    )

    defaults = {
        "seed": 0,
        "points_per_class": 500,
        "epsilons": [0.1, 0.2, 0.3],
        "heldout_seed": 1,
    }
    effective = _merged(args.config, {"seed": args.seed}, defaults)
    out_dir = _prepare_out(args.out, effective)
    data_config = ToyDataConfig(
        points_per_class=effective["points_per_class"], seed=effective["seed"]
    )
    adv = AdvConfig(seed=effective["seed"])
    classifier = train_toy_classifier(data_config, adv)
    serialize.save(out_dir / "rule_bank.json", classifier)
    train_acc = classifier.accuracy(classifier.train_points, classifier.train_labels)
    heldout_points, heldout_labels, _ = make_two_arcs(
        ToyDataConfig(points_per_class=effective["points_per_class"], seed=effective["heldout_seed"])
    )
    heldout_acc = classifier.accuracy(heldout_points, heldout_labels)
    lines = [
        f"rules: {len(classifier.rules)} "
        f"(memorization {sum(r.kind == 'memorization' for r in classifier.rules)})",
        f"training accuracy: {train_acc:.4f}",
        f"held-out accuracy: {heldout_acc:.4f}",
    ]
    sweep = {}
    for eps in effective["epsilons"]:
        adv_points = pgd_attack_l2_batch(
            classifier.rules, classifier.train_points, classifier.train_labels, eps
        )
        still = classifier.predict(adv_points) == classifier.train_labels
        protected = classifier.beta_t >= eps
        violations = int(np.sum(protected & ~still))
        sweep[str(eps)] = {
            "surviving_fraction": float(still.mean()),
            "protected_fraction": float(protected.mean()),
            "protected_violations": violations,
        }
        lines.append(
            f"eps={eps}: survive {still.mean():.4f}, "
            f"margin-protected {protected.mean():.4f}, violations {violations}"
        )
    summary = {
        "train_accuracy": train_acc,
        "heldout_accuracy": heldout_acc,
        "rule_count": len(classifier.rules),
        "pgd": sweep,
    }
    _write_report(out_dir, "classify", lines, summary)
    print("\n".join(lines))
    return EXIT_OK


def cmd_oracle_stats(args) -> int:
    from .classifier import load_mnist_training_matrix, oracle_robustness_stats

    try:
        points, labels = load_mnist_training_matrix(args.images, args.labels)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load image data: {exc}", EXIT_USAGE) from exc
    stats = oracle_robustness_stats(points, labels)
    for line in stats.lines():
        print(line)
    if args.out:
        out_dir = _prepare_out(args.out, {"images": args.images, "labels": args.labels})
        _write_report(
            out_dir,
            "oracle-stats",
            stats.lines(),
            {
                "count": stats.count,
                "thresholds": list(stats.thresholds),
                "fractions": list(stats.fractions),
                "single_class": stats.single_class,
            },
        )
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    report = run_selftest(seed=args.seed)
    for line in report.lines:
        print(line)
    if args.out:
        out_dir = _prepare_out(args.out, {"seed": args.seed})
        _write_report(out_dir, "selftest", report.lines, report.summary)
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="credence",
        description="Belief-function reasoning with weighted fuzzy rules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic-world observations")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--first-fraction", dest="first_fraction", type=float)
    p.add_argument("--first-inversion", dest="first_inversion", type=float)
    p.add_argument("--last-inversion", dest="last_inversion", type=float)
    p.set_defaults(fn=cmd_gen_data)

    for name, fn in (("train", cmd_train), ("table1", cmd_table1)):
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        p.add_argument("--count", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--variant", choices=["identity", "autoencoder"])
        if name == "table1":
            p.add_argument("--tolerance", type=float, default=TABLE1_TOLERANCE)
        p.set_defaults(fn=fn)

    p = sub.add_parser("query", help="answer a bit-constraint query")
    p.add_argument("--model", required=True)
    p.add_argument("--query", required=True)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("sample", help="draw observations from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--prior", default="uniform")
    p.add_argument("-n", "--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("classify", help="train and audit the toy robust classifier")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("oracle-stats", help="nearest-other-label robustness statistic")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle_stats)

    p = sub.add_parser("selftest", help="run the built-in invariant suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
