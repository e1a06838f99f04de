"""Command-line interface: config-driven runs of the simulation pipeline.

Each subcommand runs the pipeline up to the corresponding stage and writes a
manifest; `plot` re-renders SVG figures from an existing output directory.
Exit code is 0 on success, 2 for configuration problems, and 1 with a
stage-tagged message when a pipeline stage fails.
"""

import argparse
import sys

from .errors import ChronoflowError, StageError
from .pipeline import emit_plots, load_config, load_manifest, run_pipeline

_STAGE_OF = {
    "run": "plots",
    "bo": "bo",
    "propagate": "propagate",
    "factorize": "factorize",
    "residuals": "residuals",
    "trajectories": "trajectories",
}

PLOT_KINDS = ("potentials", "snapshots", "trajectories", "residuals")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chronoflow",
        description=(
            "Grid-based simulator for clock-dependent quantum hydrodynamics: "
            "propagation, factorization, residual verification, trajectories."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "full pipeline: model through plots",
        "bo": "model and Born-Oppenheimer surfaces only",
        "propagate": "pipeline through wavefunction propagation",
        "factorize": "pipeline through snapshot factorization",
        "residuals": "pipeline through residual evaluation",
        "trajectories": "pipeline through trajectory integration",
        "plot": "re-render plots from an existing output directory",
    }
    for name in (*_STAGE_OF, "plot"):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="JSON config file (defaults built in)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="dotted config override, e.g. propagation.t_max=10",
        )
        if name == "plot":
            p.add_argument(
                "--which", nargs="*", choices=PLOT_KINDS, default=PLOT_KINDS,
                help="plot families to render",
            )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            config = load_config(args.config, args.override, args.out)
            out = args.out or config["output_dir"]
            manifest = load_manifest(out)
            written = emit_plots(manifest, which=tuple(args.which), out_dir=out)
            for path in written:
                print(path)
            return 0
        config = load_config(args.config, args.override, args.out)
        skip = ("residuals",) if args.command == "trajectories" else ()
        manifest = run_pipeline(
            config, out_dir=args.out, until=_STAGE_OF[args.command], skip=skip
        )
        print(f"status: {manifest['status']}")
        print(f"artifacts: {len(manifest['artifacts'])}")
        return 0
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return 1
    except ChronoflowError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
