"""Command-line surface: synth, score, select, analyze, inspect,
validate-pack.

Exit codes: 0 success, 2 usage, 3 format/invariant violation,
4 inapplicable validator.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .datapack import read_pack, validate_pack, write_pack
from .errors import DavalidError, InapplicableValidatorError, PackFormatError
from .pipeline import (
    UsageError,
    compute_scores,
    load_specs,
    read_scores_csv,
    read_selections_csv,
    run_analysis,
    run_selection,
    write_scores_csv,
    write_selections_csv,
)
from .synth import SynthConfig, gen_pack

EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_INAPPLICABLE = 4


def _default_seed() -> int:
    return int(os.environ.get("DAVALID_SEED", "0"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="davalid",
        description="Unsupervised checkpoint selection for domain adaptation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark pack")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n", type=int, default=600, help="samples per domain")
    p.add_argument("--shift", type=float, default=4.0)
    p.add_argument("--cov-scale", type=float, default=1.0)
    p.add_argument("--algos", type=int, default=3)
    p.add_argument("--hyperparams", type=int, default=10)
    p.add_argument("--checkpoints", type=int, default=20)
    p.add_argument("--profile", choices=("ramp", "monotone"), default="ramp")
    p.add_argument("--collapse-rate", type=float, default=0.0)
    p.add_argument("--setting", choices=("UDA", "SFDA", "TTA"), default="UDA")
    p.add_argument("--batch-size", type=int, default=64, help="TTA batch size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="score every checkpoint under every validator")
    p.add_argument("--pack", required=True)
    p.add_argument("--out", required=True, help="scores CSV path")
    p.add_argument("--specs", default=None, help="JSON validator spec list "
                   "(default: the standard versions for the pack setting)")
    p.add_argument("--validators", default=None,
                   help="comma-separated validator ids to keep")
    p.add_argument("--parallel", type=int, default=1)

    p = sub.add_parser("select", help="pick the best checkpoint per pool")
    p.add_argument("--pack", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True, help="selections CSV path")
    p.add_argument("--include-source-only", action="store_true")
    p.add_argument("--episodic", action="store_true",
                   help="per-batch selection (TTA packs)")

    p = sub.add_parser("analyze", help="validator-quality report")
    p.add_argument("--pack", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--selections", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--weight-exponent", type=float, default=2.0)
    p.add_argument("--pooled-correlation", action="store_true")

    p = sub.add_parser("inspect", help="print a pack summary")
    p.add_argument("pack")

    p = sub.add_parser("validate-pack", help="lint a pack directory")
    p.add_argument("pack")

    return parser


def _cmd_synth(args) -> int:
    cfg = SynthConfig(
        num_classes=args.classes,
        dim=args.dim,
        samples_per_domain=args.n,
        shift=args.shift,
        cov_scale=args.cov_scale,
        algorithms=args.algos,
        hyperparams=args.hyperparams,
        checkpoints=args.checkpoints,
        quality_profile=args.profile,
        collapse_rate=args.collapse_rate,
        setting=args.setting,
        tta_batch_size=args.batch_size,
        seed=args.seed if args.seed is not None else _default_seed(),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest, records = gen_pack(cfg)
    write_pack(manifest, records, Path(args.out))
    print(f"pack: {args.out}")
    print(f"setting: {manifest.setting}  classes: {manifest.num_classes}  "
          f"domains: {','.join(manifest.domains)}")
    print(f"checkpoints: {len(manifest.checkpoints)} "
          f"(source-only: {sum(r.is_source_only for r in manifest.checkpoints)})")
    return 0


def _cmd_score(args) -> int:
    manifest, _ = read_pack(Path(args.pack))
    only = args.validators.split(",") if args.validators else None
    specs = load_specs(manifest,
                       Path(args.specs) if args.specs else None, only)
    rows = compute_scores(Path(args.pack), specs, parallel=args.parallel)
    write_scores_csv(rows, Path(args.out))
    print(f"scored {len(manifest.checkpoints)} checkpoints x {len(specs)} "
          f"validators -> {args.out}")
    return 0


def _cmd_select(args) -> int:
    scores = read_scores_csv(Path(args.scores))
    rows = run_selection(Path(args.pack), scores,
                         include_source_only=args.include_source_only,
                         episodic=args.episodic)
    write_selections_csv(rows, Path(args.out))
    print(f"wrote {len(rows)} selection rows -> {args.out}")
    return 0


def _cmd_analyze(args) -> int:
    scores = read_scores_csv(Path(args.scores))
    selections = read_selections_csv(Path(args.selections))
    report = run_analysis(Path(args.pack), scores, selections, Path(args.out),
                          weight_exponent=args.weight_exponent,
                          pooled_correlation=args.pooled_correlation)
    ranks = report.avg_rank_row()
    best = min(ranks, key=lambda name: (ranks[name], name))
    print(f"report -> {args.out} (best avg rank: {best} {ranks[best]:.2f})")
    return 0


def _cmd_inspect(args) -> int:
    manifest, reader = read_pack(Path(args.pack))
    print(f"setting: {manifest.setting}")
    print(f"classes: {manifest.num_classes}")
    print(f"domains: {', '.join(manifest.domains)}")
    for domain, assignment in manifest.splits.items():
        sizes = {tag: assignment.tags.count(tag) for tag in ("train", "val", "test")}
        print(f"splits[{domain}]: {sizes}")
    algos = sorted({r.algorithm_id for r in manifest.checkpoints if not r.is_source_only})
    print(f"algorithms: {', '.join(algos)}")
    print(f"checkpoints: {len(manifest.checkpoints)} "
          f"(source-only: {sum(r.is_source_only for r in manifest.checkpoints)})")
    if manifest.setting == "TTA" and manifest.checkpoints:
        print(f"batches: {len(reader.batches(manifest.checkpoints[0]))}")
    print(f"oracle: {json.dumps(manifest.oracle_ref, sort_keys=True)}")
    return 0


def _cmd_validate_pack(args) -> int:
    problems = validate_pack(Path(args.pack))
    if problems:
        for problem in problems:
            print(f"FAIL {problem}", file=sys.stderr)
        return EXIT_FORMAT
    print("pack OK")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "score": _cmd_score,
    "select": _cmd_select,
    "analyze": _cmd_analyze,
    "inspect": _cmd_inspect,
    "validate-pack": _cmd_validate_pack,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InapplicableValidatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INAPPLICABLE
    except PackFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DavalidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
