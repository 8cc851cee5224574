"""``supctrl`` command line.

Exit codes: 0 success (fig1: converged), 1 fig1 stopped without converging,
2 a checked numerical claim failed, 3 bad configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .experiments import (
    FINE_SCALE,
    ConfigError,
    ExperimentAssertion,
    RunConfig,
    converged,
    default_config,
    load_config,
    run_fig1,
    run_gradcheck,
    run_k_convergence,
    run_nonexistence,
)

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_ASSERTION = 2
EXIT_CONFIG = 3

COMMANDS = ("fig1", "nonexistence", "kconv", "gradcheck")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supctrl", description="Optimal control with windowed state maxima.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "fig1": "optimise the tracking problem and write solution/jump files",
        "nonexistence": "objectives of chattering controls approaching the unattained infimum",
        "kconv": "regularized versus hard-max state for increasing k",
        "gradcheck": "adjoint gradient against central differences",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--k", type=float, help="sharpness of the smoothed maximum")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--paper-scale", action="store_true", help="dt=1e-4, k=1e6 (slow)")
        p.add_argument("--seed", type=int, help="seed for randomized checks")
        p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then ``--paper-scale``, then explicit flags."""
    cfg = default_config(args.command)
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    if args.paper_scale:
        cfg = replace(cfg, **FINE_SCALE)
    flags = {"dt": args.dt, "k": args.k, "output_dir": args.out, "seed": args.seed}
    cfg = replace(cfg, **{key: val for key, val in flags.items() if val is not None})
    cfg.build()
    return cfg


def _run(cfg: RunConfig, command: str) -> int:
    if command == "fig1":
        report = run_fig1(cfg)
        print((Path(cfg.output_dir) / "summary.txt").read_text(), end="")
        return EXIT_OK if converged(report) else EXIT_NOT_CONVERGED
    if command == "nonexistence":
        table = run_nonexistence(cfg)
        print("kappa,objective")
        for kap, J in zip(table.frequencies, table.objectives):
            print(f"{kap},{J:.12g}")
        print(f"u=1,{table.reference_u1:.12g}")
        print(f"u=3,{table.reference_u3:.12g}")
        return EXIT_OK
    if command == "kconv":
        print("k,state_gap,lie_gap,envelope")
        for r in run_k_convergence(cfg):
            print(f"{r.k:g},{r.state_gap:.6e},{r.lie_gap:.6e},{r.envelope:.6e}")
        return EXIT_OK
    errors = run_gradcheck(cfg)
    print(f"{len(errors)} checks, worst relative error {errors.max():.3e}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return _run(cfg, args.command)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentAssertion as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
