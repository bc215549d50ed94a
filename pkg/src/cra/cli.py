"""Command-line front end: validate machines, test acceptors, run
experiment configs, report machine complexity, plot curves, aggregate
results.

Exit codes: 0 success, 1 domain failure (invalid machine, failed seeds,
empty plot), 2 usage or I/O errors.
"""

import argparse
import sys

from . import experiments, plotting
from .deep import BadCheckpoint, evaluate_net, load_checkpoint
from .envs import BadConfig
from .experiments import ConfigError
from .formats import DfaImportError, ParseError, ValidationError, parse_machine
from .machines import AcceptorMachine


def _read(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def cmd_validate(args):
    text = _read(args.path)
    try:
        m = parse_machine(text)
    except ValidationError as exc:
        for line in exc.report:
            print(f"invalid: {line}")
        return 1
    inner = m.automaton if isinstance(m, AcceptorMachine) else m
    print(f"ok: {type(m).__name__} with {len(inner.states)} non-terminal states")
    return 0


def cmd_accept(args):
    from .machines import accept

    m = parse_machine(_read(args.path))
    if not isinstance(m, AcceptorMachine):
        print("error: not an acceptor (no ACCEPTING header)", file=sys.stderr)
        return 1
    word = tuple(args.input) if args.input else ()
    print("ACCEPT" if accept(m, word) else "REJECT")
    return 0


def cmd_run(args):
    cfg = experiments.load_experiment_config(args.config)
    if args.eval_checkpoint is not None:
        return _eval_checkpoint(cfg, args)
    result = experiments.run_experiment(cfg)
    experiments.write_outputs(result, cfg.output)
    print(f"wrote {len(result.rows)} rows to {cfg.output}")
    if result.failures:
        for series, seed, error in result.failures:
            print(f"failed: {series} seed {seed}: {error}", file=sys.stderr)
        return 1
    return 0


def _eval_checkpoint(cfg, args):
    from .deep import FeatureEncoder

    lanes = experiments.resolve_lanes(cfg)
    lane = lanes[0]
    env = experiments._make_env(cfg, lane)
    m = experiments._as_cra(lane.machine)
    net = load_checkpoint(args.eval_checkpoint)
    machine_features = cfg.algorithm != "dqn"
    encoder = FeatureEncoder(env, m, machine=machine_features, dtype=net.dtype)
    if encoder.dim != net.input_dim:
        print(
            f"error: checkpoint expects input dim {net.input_dim},"
            f" config produces {encoder.dim}",
            file=sys.stderr,
        )
        return 1
    res = evaluate_net(net, env, m, encoder, args.episodes, seed=cfg.seeds[0])
    print(
        f"episodes {res.episodes}  mean_return {res.mean_return:.6f}"
        f"  success_rate {res.success_rate:.3f}"
    )
    return 0


def cmd_complexity(args):
    sys.stdout.write(experiments.render_complexity(args.task, args.n_max))
    return 0


def cmd_plot(args):
    curves = plotting.curves_from_files(args.csv)
    svg = plotting.render_plot(curves, title=args.title)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(f"wrote {args.output}")
    return 0


def cmd_report(args):
    rows = []
    for path in args.csv:
        rows.extend(experiments.read_rows(path))
    if not rows:
        print("error: no data rows", file=sys.stderr)
        return 1
    sys.stdout.write(
        experiments.render_report(rows, threshold=args.threshold,
                                  patience=args.patience)
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cra",
        description="Counter-machine reward specifications for RL:"
        " validation, experiments, and reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a machine file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("accept", help="run an acceptor on a word")
    p.add_argument("path")
    p.add_argument("--input", default="", help="word, one letter per symbol")
    p.set_defaults(func=cmd_accept)

    p = sub.add_parser("run", help="execute an experiment config")
    p.add_argument("config")
    p.add_argument(
        "--eval-checkpoint",
        metavar="PATH",
        help="evaluate a saved network instead of training",
    )
    p.add_argument("--episodes", type=int, default=100,
                   help="evaluation episodes for --eval-checkpoint")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("complexity", help="machine size vs task length")
    p.add_argument("--task", choices=("letter", "office"), required=True)
    p.add_argument("--n-max", type=int, default=10)
    p.set_defaults(func=cmd_complexity)

    p = sub.add_parser("plot", help="render learning curves to SVG")
    p.add_argument("csv", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--title", default="")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="aggregate CSV results")
    p.add_argument("csv", nargs="+")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "n_max", 1) < 1:
        parser.error("--n-max must be >= 1")
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, DfaImportError, ConfigError, ValidationError,
            BadConfig, BadCheckpoint, plotting.EmptyPlot) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
