"""``graphcnn`` command line: generate, train, evaluate, benchmark, selftest.

Exit codes: 0 success, 1 configuration error, 2 numerical abort or failed
selftest, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from graphcnn import experiment, selftest
from graphcnn.config import ARCHITECTURES, SAMPLINGS, ConfigError, ExperimentConfig, load_config
from graphcnn.data import ContainerError
from graphcnn.graph import ConvergenceError, GraphError
from graphcnn.nn.optim import NumericalError
from graphcnn.sampling import SamplingError

log = logging.getLogger("graphcnn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file (defaults apply when omitted)")
    common.add_argument("--seed-graph", type=int)
    common.add_argument("--seed-data", type=int)
    common.add_argument("--seed-init", type=int)
    common.add_argument("--out", help="output directory (default: the config's out)")
    common.add_argument("--arch", choices=ARCHITECTURES)
    common.add_argument("--sampling", choices=SAMPLINGS)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="graphcnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write graph, sources and dataset splits")
    sub.add_parser("train", parents=[common], help="train on a generated directory")
    ev = sub.add_parser("evaluate", parents=[common], help="test accuracy of a checkpoint")
    ev.add_argument("--checkpoint", help="checkpoint path (default: <out>/model.ckpt)")
    bench = sub.add_parser("benchmark", parents=[common], help="graphs x realizations accuracy table")
    bench.add_argument("--graphs", type=int)
    bench.add_argument("--realizations", type=int)
    bench.add_argument("--workers", type=int)
    st = sub.add_parser("selftest", help="run the oracle and property checks")
    st.add_argument("--quick", action="store_true", help="fewer random draws per check")
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    seeds = dataclasses.replace(
        cfg.seeds,
        **{k: v for k, v in (("graph", args.seed_graph), ("data", args.seed_data), ("init", args.seed_init))
           if v is not None})
    model = dataclasses.replace(
        cfg.model,
        **{k: v for k, v in (("architecture", args.arch), ("sampling", args.sampling)) if v is not None})
    cfg = dataclasses.replace(cfg, seeds=seeds, model=model, out=args.out or cfg.out)
    return cfg.validate()


def _run(args) -> int:
    if args.command == "selftest":
        results = selftest.run_all(quick=args.quick)
        for r in results:
            print(r.line())
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed}/{len(results)} checks passed")
        return EXIT_OK if not failed else EXIT_NUMERICAL

    cfg = resolve_config(args)
    if args.command == "generate":
        out = experiment.cmd_generate(cfg, cfg.out)
        print(f"wrote graph and {cfg.data.n_train}/{cfg.data.n_validation}/{cfg.data.n_test} samples to {out}")
    elif args.command == "train":
        trace = experiment.cmd_train(cfg, cfg.out)
        first = trace.train_loss[0] if trace.train_loss else float("nan")
        last = trace.train_loss[-1] if trace.train_loss else float("nan")
        print(f"trained {trace.epochs_completed} epochs, loss {first:.4f} -> {last:.4f}")
    elif args.command == "evaluate":
        report = experiment.cmd_evaluate(cfg, cfg.out, args.checkpoint)
        print(report.to_text(), end="")
    elif args.command == "benchmark":
        report = experiment.cmd_benchmark(cfg, cfg.out, args.graphs, args.realizations, args.workers)
        print(report.to_text(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (ConfigError, GraphError, SamplingError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError) as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERICAL
    except (OSError, ContainerError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        # e.g. a checkpoint whose shapes do not fit the configured model
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
