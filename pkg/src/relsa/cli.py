"""Command line front end.

    relsa run --config study.ini [--seed S] [--out-dir D] [--replications R] [--threads T] [--quiet]
    relsa models

Exit codes: 0 success, 1 configuration error, 2 runtime or solver error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from relsa.config import ConfigError, load_config
from relsa.distributions import to_literal
from relsa.models import REGISTRY, get_model
from relsa.report import write_outputs
from relsa.study import run_study

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relsa", description="Density-perturbation reliability sensitivity studies.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a study from a config file")
    run.add_argument("--config", required=True, help="study config (INI)")
    run.add_argument("--seed", type=int, help="override [study] seed")
    run.add_argument("--out-dir", help="override [study] output_dir")
    run.add_argument("--replications", type=int, help="override [study] replications")
    run.add_argument("--threads", type=int, help="override [study] threads")
    run.add_argument("--quiet", action="store_true", help="only report errors")
    sub.add_parser("models", help="list the registered models")
    return p


def _models() -> int:
    for name in sorted(REGISTRY):
        m = get_model(name)
        laws = ", ".join(f"{n} ~ {to_literal(d)}" for n, d in zip(m.input_names, m.marginals))
        print(f"{name}\t{m.dim}\t{laws}")
    return EXIT_OK


def _run(args) -> int:
    try:
        cfg = load_config(args.config)
        for key in ("seed", "replications", "threads"):
            v = getattr(args, key)
            if v is not None and v < (0 if key == "seed" else 1):
                raise ConfigError(f"--{key} must be >= {0 if key == 'seed' else 1}, got {v}")
        cfg = cfg.with_overrides(
            seed=args.seed, replications=args.replications, threads=args.threads, output_dir=args.out_dir
        )
    except (ConfigError, OSError) as exc:
        print(f"relsa: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_study(cfg)
        files = write_outputs(result, cfg.output_dir)
    except Exception as exc:  # noqa: BLE001 - any failure past validation is a runtime error
        print(f"relsa: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for msg in result.failures:
        print(f"relsa: skipped point: {msg}", file=sys.stderr)
    if not args.quiet:
        p = result.probability
        print(f"{cfg.model}: p_hat={p.p_hat:.6g} CI=({p.ci[0]:.6g}, {p.ci[1]:.6g}) n={p.n}")
        if result.form is not None:
            dp = result.form
            print(f"FORM: beta={dp.beta_hl:.6g} pf={dp.pf_form:.6g} converged={dp.converged}")
        print(f"model calls: {result.calls}")
        for f in files:
            print(f"wrote {f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if getattr(args, "quiet", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "models":
        return _models()
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
