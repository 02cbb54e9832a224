"""Command line interface: ``attnlimit <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .attention import AttentionConfig, ScalingRule, sample_output_batch, sample_score_batch
from .errors import AttnLimitError
from .experiments import EXPERIMENTS, default_config, load_config, run_experiment
from .io import IoFailure, read_samples, write_json, write_samples
from .limitlaw import build_limit_spec, sample_limit
from .parallel import default_workers
from .plotting import emit_svg
from .selfcheck import format_report, run_selfcheck
from .stats import SampleSet, compare, kde, moments

_MOMENT_KEYS = ("count", "mean", "variance", "skewness", "ex_kurtosis", "se_mean", "se_variance", "se_kurtosis")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _add_attention_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("layer")
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--heads", type=int, default=1)
    g.add_argument("--spatial-dim", type=int, default=4)
    g.add_argument("--scaling", choices=[r.value for r in ScalingRule], default=ScalingRule.INV_SQRT_WIDTH.value)
    g.add_argument("--head-dim", type=int, default=None)
    g.add_argument("--clip-C", type=float, default=100.0)
    for name in ("q", "k", "v", "o", "input"):
        g.add_argument(f"--sigma-{name}-sq", type=float, default=1.0)


def _attention_config(args) -> AttentionConfig:
    return AttentionConfig(
        width=args.width, spatial_dim=args.spatial_dim, heads=args.heads, scaling=args.scaling,
        head_dim=args.head_dim, clip_C=args.clip_C,
        sigma_q_sq=args.sigma_q_sq, sigma_k_sq=args.sigma_k_sq, sigma_v_sq=args.sigma_v_sq,
        sigma_o_sq=args.sigma_o_sq, sigma_input_sq=args.sigma_input_sq,
    )


def _print_rows(rows: list[dict], columns, out=None):
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r.get(c, "") for c in columns])


def _print_moments(label: str, samples):
    m = moments(samples).to_dict()
    _print_rows([{"sample": label, **m}], ("sample",) + _MOMENT_KEYS)


def cmd_simulate_finite(args) -> int:
    cfg = _attention_config(args)
    if args.score is not None:
        s = sample_score_batch(cfg, args.seed, args.samples, tuple(args.score), workers=args.workers)
    else:
        s = sample_output_batch(cfg, args.seed, args.samples, tuple(args.coord), workers=args.workers)
    if args.out:
        write_samples(args.out, s)
    _print_moments(s.provenance.source, s)
    return 0


def cmd_sample_limit(args) -> int:
    spec = build_limit_spec(_attention_config(args))
    s = sample_limit(spec, args.seed, args.samples, args.index, workers=args.workers)
    if args.out:
        write_samples(args.out, s)
    _print_moments(s.provenance.source, s)
    return 0


def _load(path) -> SampleSet:
    return SampleSet.from_values(read_samples(path), source=Path(path).stem)


def cmd_compare(args) -> int:
    a, b = _load(args.a), _load(args.b)
    rep = compare(a, b, args.grid_points)
    row = {"a": Path(args.a).name, "b": Path(args.b).name, "kl": rep.kl, "log_kl": rep.log_kl, "ks": rep.ks_statistic}
    _print_rows([row], ("a", "b", "kl", "log_kl", "ks"))
    if args.json:
        write_json(args.json, rep.to_dict())
    return 0


def cmd_plot(args) -> int:
    labels = args.labels or [Path(f).stem for f in args.files]
    if len(labels) != len(args.files):
        raise SystemExit("--labels must match the number of files")
    curves = [kde(_load(f), args.grid_points, label=lab) for f, lab in zip(args.files, labels)]
    emit_svg(curves, args.out, title=args.title)
    print(args.out)
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(
        samples_per_run=args.samples, trials=args.trials, master_seed=args.seed,
        widths=args.widths, heads=args.heads, head_dim=args.head_dim,
        scalings=[args.scaling] if args.scaling else None,
        grid_points=args.grid_points, output_dir=args.out_dir, workers=args.workers,
        emit_svg=False if args.no_svg else None, save_samples=True if args.save_samples else None,
    )
    if args.config:
        cfg = load_config(args.config, experiment=args.name, **overrides)
    else:
        cfg = default_config(args.name, full_scale=args.paper_scale, **overrides)
    rec = run_experiment(cfg)
    if "log_kl" in rec.aggregates:
        _print_rows(rec.aggregates["log_kl"], ("width", "heads", "trials", "mean_log_kl", "std_log_kl", "mean_ks"))
    if "score_variance" in rec.aggregates:
        _print_rows(rec.aggregates["score_variance"], ("scaling", "width", "trial", "variance", "se_variance", "mean"))
    print(f"# wrote {', '.join(rec.files)} to {cfg.output_dir}", file=sys.stderr)
    return 0


def cmd_selfcheck(args) -> int:
    checks = run_selfcheck()
    print(format_report(checks))
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnlimit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=default_workers(),
                        help="worker processes (default: available cores); never changes results")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-finite", parents=[common], help="draw finite-width outputs or scores")
    _add_attention_args(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coord", type=int, nargs=2, default=(0, 0), metavar=("I", "ALPHA"),
                   help="0-based output coordinate (default 0 0, i.e. y_1^1)")
    p.add_argument("--score", type=int, nargs=3, default=None, metavar=("A", "I", "J"),
                   help="draw the score p[a, i, j] instead of an output")
    p.add_argument("--out", help="write raw samples (AWLS binary)")
    p.set_defaults(func=cmd_simulate_finite)

    p = sub.add_parser("sample-limit", parents=[common], help="draw from the infinite-width law")
    _add_attention_args(p)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--index", type=int, default=0, help="0-based position i of z_y[i]")
    p.add_argument("--out", help="write raw samples (AWLS binary)")
    p.set_defaults(func=cmd_sample_limit)

    p = sub.add_parser("compare", help="KL, KS and moments of two AWLS sample files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--grid-points", type=int, default=2048)
    p.add_argument("--json", help="also write the full report as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    p.add_argument("name", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--samples", type=int)
    p.add_argument("--paper-scale", action="store_true", help="50,000 samples per run")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--widths", type=_int_list)
    p.add_argument("--heads", type=_int_list)
    p.add_argument("--head-dim", type=int)
    p.add_argument("--scaling", choices=[r.value for r in ScalingRule])
    p.add_argument("--grid-points", type=int)
    p.add_argument("--out-dir", default="results")
    p.add_argument("--no-svg", action="store_true")
    p.add_argument("--save-samples", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("selfcheck", help="run the oracle suite")
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser("plot", help="overlay KDEs of AWLS sample files in an SVG")
    p.add_argument("files", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--title", default="")
    p.add_argument("--grid-points", type=int, default=2048)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (AttnLimitError, IoFailure, ValueError) as exc:
        print(f"attnlimit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
