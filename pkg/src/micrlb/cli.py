"""``micrlb`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 computation failure.
``MICRLB_THREADS`` sets the worker count when ``--threads`` is not given.
"""
import argparse
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from ._parallel import ENV_THREADS, resolve_threads
from .config import ConfigError, RunConfig, format_defaults, load_config, preset_names
from .deployment import build_measurement_graph, format_deployment, generate_deployment, read_deployment
from .experiments import efficiency_study, emit_csv, emit_plotdata, format_efficiency, run_sweep
from .fim import (
    DEFAULT_COND_THRESHOLD,
    compare_modes,
    compute_fim,
    crlb_standard,
    dump_matrix,
    write_report_csv,
)

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2
CLI_FIM_MODES = {"standard": "standard", "paper": "paper", "oracle-mc": "oracle_mc", "oracle-fd": "oracle_fd"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v):
    return format(float(v), ".9g")


def _load(path):
    try:
        return load_config(path)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None


def _slug(label):
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_").lower() or "series"


# --- subcommands --------------------------------------------------------------------

def cmd_generate(args):
    cfg = _load(args.config) if args.config else RunConfig()
    seed = args.seed if args.seed is not None else cfg.get("scenario", "seed")
    scenario_cfg = cfg.scenario_config()
    dep = generate_deployment(scenario_cfg, seed)
    graph = build_measurement_graph(dep, scenario_cfg, cfg.radio_config())
    text = format_deployment(dep, graph)
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
        print(f"wrote {args.out}: {dep.n_anchors} anchors, {dep.n_things} things, {graph.n_edges} links")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_crlb(args):
    try:
        dep, graph = read_deployment(args.deployment)
    except FileNotFoundError:
        raise UsageError(f"deployment file not found: {args.deployment}") from None
    mode = CLI_FIM_MODES[args.fim_mode]
    kwargs = {}
    if mode in ("oracle_mc", "oracle_fd"):
        kwargs = {"seed": args.seed, "threads": args.threads}
        if args.samples is not None:
            kwargs["n_samples"] = args.samples
        if args.step is not None:
            kwargs["step"] = args.step
    fim = compute_fim(graph, dep.things, mode, **kwargs)
    rep = crlb_standard(fim, args.cond_threshold, pinv=args.pinv)
    out = [f"fim_mode={args.fim_mode}", f"things={dep.n_things}", f"anchors={dep.n_anchors}",
           f"links={graph.n_edges}"]
    if fim.n_samples:
        out.append(f"samples={fim.n_samples}")
    for i, b in enumerate(rep.per_node_bound):
        out.append(f"crlb[t{i}]={_fmt(b)}")
    out += [
        f"aggregate={_fmt(rep.aggregate_bound)}",
        f"block_inverse_bound={_fmt(rep.paper_formula_bound)}",
        f"condition_number={_fmt(rep.condition_number)}",
        f"singular={'true' if rep.singular else 'false'}",
        f"pseudo_inverse={'true' if rep.pseudo_inverse else 'false'}",
    ]
    out += [f"note={n}" for n in rep.notes]
    print("\n".join(out))
    if args.compare_modes:
        print(compare_modes(graph, dep.things, args.cond_threshold).format())
    if args.dump_fim:
        dump_matrix(fim, args.dump_fim)
    if args.out_report:
        write_report_csv(rep, args.out_report)
    return EXIT_OK


def cmd_sweep(args):
    cfg = _load(args.config)
    out_dir = Path(args.out_dir or cfg.get("output", "dir"))
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg.get("output", "stem")
    sweeps = cfg.sweep_configs()
    results = []
    for sc in sweeps:
        if args.trials is not None:
            sc = replace(sc, trials=args.trials)
        if args.seed is not None:
            sc = replace(sc, seed=args.seed)
        res = run_sweep(sc, threads=args.threads)
        name = f"{stem}.csv" if len(sweeps) == 1 else f"{stem}_{_slug(sc.label)}.csv"
        emit_csv(res, out_dir / name)
        results.append(res)
        print(f"# {sc.label or sc.parameter} -> {out_dir / name}")
        for r in res.rows:
            print(f"{_fmt(r.param)} mean={_fmt(r.mean_crlb)} std={_fmt(r.std_crlb)} "
                  f"trials={r.trials} singular={r.singular} status={r.status}")
    if cfg.get("output", "plot") and not args.no_plot:
        dat, svg = emit_plotdata(results, str(out_dir / stem), cfg.get("sweep", "title"),
                                 sweeps[0].parameter)
        print(f"# plot data -> {dat}, {svg}")
    ok = any(r.status == "ok" for res in results for r in res.rows)
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_efficiency(args):
    cfg = _load(args.config)
    trials = args.trials if args.trials is not None else cfg.get("estimator", "trials")
    seed = args.seed if args.seed is not None else cfg.get("estimator", "seed")
    rows = efficiency_study(cfg.scenario(), cfg.get("estimator", "sigmas"), trials, seed,
                            threads=args.threads, options=cfg.solver_options())
    table = format_efficiency(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="ascii")
    bad = [r for r in rows if not r.respects_bound(args.n_se)]
    for r in bad:
        print(f"bound violated at sigma={_fmt(r.sigma)}: rmse {_fmt(r.rmse)} < "
              f"sqrt(crlb) {_fmt(r.sqrt_bound)} - {args.n_se:g} se", file=sys.stderr)
    return EXIT_FAILURE if bad else EXIT_OK


def cmd_config(args):
    if args.defaults:
        sys.stdout.write(format_defaults())
        return EXIT_OK
    if args.list_presets:
        print("\n".join(preset_names()))
        return EXIT_OK
    if not args.config:
        raise UsageError("config needs --defaults, --list-presets or a config file to check")
    cfg = _load(args.config)
    for (section, name), value in sorted(cfg.values.items()):
        print(f"{section}.{name} = {value!r}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _threads(text):
    try:
        return resolve_threads(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = _Parser(prog="micrlb", description="CRLB toolkit for magnetic-induction underground localization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    threads_help = f"worker threads (default: ${ENV_THREADS} or 1)"

    g = sub.add_parser("generate", help="write a random deployment and its measurement graph")
    g.add_argument("config", nargs="?", help="config file or preset name (default: built-in defaults)")
    g.add_argument("--seed", type=int, help="deployment seed (default: scenario.seed)")
    g.add_argument("--out", help="output file (default: standard output)")
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("crlb", help="Fisher information and CRLB for a deployment file")
    c.add_argument("deployment", help="deployment file written by 'generate'")
    c.add_argument("--fim-mode", choices=list(CLI_FIM_MODES), default="standard")
    c.add_argument("--compare-modes", action="store_true",
                   help="also print the standard vs published-element discrepancy table")
    c.add_argument("--pinv", action="store_true", help="use the pseudo-inverse when the FIM is singular")
    c.add_argument("--cond-threshold", type=float, default=DEFAULT_COND_THRESHOLD,
                   help="condition number above which the FIM counts as singular")
    c.add_argument("--dump-fim", metavar="PATH", help="write the dense FIM (axis-major order)")
    c.add_argument("--out-report", metavar="PATH", help="write per-node bounds as CSV")
    c.add_argument("--samples", type=int, help="oracle sample count")
    c.add_argument("--step", type=float, help="oracle finite-difference step (m)")
    c.add_argument("--seed", type=int, default=0, help="oracle seed")
    c.add_argument("--threads", type=_threads, help=threads_help)
    c.set_defaults(func=cmd_crlb)

    s = sub.add_parser("sweep", help="Monte-Carlo CRLB sweep; writes CSV and plot data")
    s.add_argument("config", help="config file or preset name (fig4 ... fig7)")
    s.add_argument("--out-dir", help="output directory (default: output.dir)")
    s.add_argument("--trials", type=int, help="override sweep.trials")
    s.add_argument("--seed", type=int, help="override sweep.seed")
    s.add_argument("--no-plot", action="store_true", help="skip .dat/.svg output")
    s.add_argument("--threads", type=_threads, help=threads_help)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("efficiency", help="ML estimator RMSE against the CRLB")
    e.add_argument("config", help="config file or preset name (efficiency)")
    e.add_argument("--trials", type=int, help="override estimator.trials")
    e.add_argument("--seed", type=int, help="override estimator.seed")
    e.add_argument("--n-se", type=float, default=3.0,
                   help="allowed shortfall below sqrt(CRLB), in standard errors (default 3)")
    e.add_argument("--out", help="also write the table to this file")
    e.add_argument("--threads", type=_threads, help=threads_help)
    e.set_defaults(func=cmd_efficiency)

    k = sub.add_parser("config", help="print or check configuration")
    k.add_argument("config", nargs="?", help="config file to check")
    k.add_argument("--defaults", action="store_true", help="print every key with its default")
    k.add_argument("--list-presets", action="store_true", help="list shipped preset configs")
    k.set_defaults(func=cmd_config)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("trials", "samples"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name} must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"micrlb: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"micrlb: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
