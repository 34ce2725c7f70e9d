"""Command-line interface.

Subcommands: generate, train, eval, sinkhorn-solve, gradcheck, report.
Exit codes: 0 success, 1 validation error (bad arguments, shapes, files,
configs), 2 numeric failure (non-finite values, failed gradient checks).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_from_dict, load_config
from .data import dataset_spec_from_dict, generate_dataset, load_dataset, save_dataset
from .errors import NumericError, OtalignError
from .fileio import read_fmat, write_fmat
from .gradcheck import run_full_suite
from .report import render_run_figures
from .sinkhorn import SinkhornConfig, sinkhorn_solve
from .training import evaluate, load_model_checkpoint, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def _with_seed(config: ExperimentConfig, seed) -> ExperimentConfig:
    if seed is None:
        return config
    dataset = dataclasses.replace(config.dataset, seed=seed)
    return dataclasses.replace(config, seed=seed, dataset=dataset)


def _load_spec_or_config(path: Path):
    """Accept either a full experiment config or a bare dataset spec."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise OtalignError(f"{path}: expected a JSON object")
    if "dataset" in data or not data:
        return config_from_dict(data).dataset
    if any(key in data for key in ("n_samples", "n_latent_tokens", "seed")):
        return dataset_spec_from_dict(data)
    return config_from_dict(data).dataset


def cmd_generate(args) -> int:
    spec = _load_spec_or_config(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    samples = generate_dataset(spec)
    save_dataset(args.out, samples, spec)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _with_seed(load_config(args.config), args.seed)
    metrics = train(config, quiet=args.quiet)
    print(f"run directory: {config.output_dir}")
    for key, value in metrics.to_dict().items():
        print(f"{key}: {value:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    state, config_dict = load_model_checkpoint(args.checkpoint)
    if config_dict is None:
        raise OtalignError(f"checkpoint {args.checkpoint} carries no config")
    config = config_from_dict(config_dict)
    _, samples = load_dataset(args.data)
    metrics = evaluate(state, samples, config)
    for key, value in metrics.to_dict().items():
        print(f"{key}: {value:.6f}")
    return EXIT_OK


def cmd_sinkhorn_solve(args) -> int:
    s = read_fmat(args.matrix)
    config = SinkhornConfig(
        epsilon=args.epsilon, tolerance=args.tolerance, max_iters=args.max_iters
    )
    result = sinkhorn_solve(s, config)
    write_fmat(args.out, result.plan)
    print(f"iterations: {result.iterations}")
    print(f"residual: {result.residual:.3e}")
    print(f"converged: {str(result.converged).lower()}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        config = _with_seed(load_config(args.config), args.seed)
        sinkhorn_cfg = config.sinkhorn
        tau = config.weights.tau
    else:
        sinkhorn_cfg = SinkhornConfig()
        tau = 0.07
    records = run_full_suite(
        seed=args.seed if args.seed is not None else 7,
        sinkhorn_cfg=sinkhorn_cfg,
        tau=tau,
    )
    failures = 0
    for record in records:
        status = "ok" if record.passed else "FAIL"
        print(f"[{status}] {record.name}: rel_error={record.rel_error:.3e}")
        failures += 0 if record.passed else 1
    print(f"{len(records) - failures}/{len(records)} gradient checks passed")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


def cmd_report(args) -> int:
    written = render_run_figures(args.run, args.out)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("no metrics files found; nothing rendered")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otalign",
        description="Cross-modal alignment and fusion with entropic optimal transport.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--spec", required=True, type=Path, help="config file (dataset section or bare spec)")
    p.add_argument("--out", required=True, type=Path, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run an experiment")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true", help="suppress per-eval progress lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sinkhorn-solve", help="solve one transport problem from an FMAT file")
    p.add_argument("--matrix", required=True, type=Path)
    p.add_argument("--epsilon", required=True, type=float)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sinkhorn_solve)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="render figures from a run directory")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OtalignError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
