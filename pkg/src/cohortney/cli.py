"""Command-line front end.

Exit status: 0 success, 1 validation error, 2 I/O error, 3 internal invariant
violation. Errors go to stderr as ``cohortney: error[<category>]: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from typing import Sequence

from . import __version__
from .cohorts import BelowGridWarning, GridConfig, build_cohorts, load_index, save_index
from .errors import CohortneyError, ConfigError, InvariantError
from .forecast import PenaltyConfig, QuantileConfig, predict
from .harness import (
    DEFAULT_SCHEDULE_HOURS,
    GeneratorSpec,
    PolicyConfig,
    aggregate_sweep,
    deterministic_rows,
    generate,
    model_from_dict,
    run_cohort_policy,
    three_component_mixture,
    write_metrics_csv,
    write_traces_jsonl,
)
from .sequences import ObservationContext, read_jsonl, write_jsonl
from .spectrum import build_spectrum, similarity_matrix, split_spectrum

log = logging.getLogger("cohortney")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3


def parse_sweep(text: str) -> list[float]:
    """``lo:hi:step`` -> values from lo up to and including hi. A bare number is one value."""
    if ":" not in text:
        try:
            return [float(text)]
        except ValueError:
            raise ConfigError(f"not a number: {text!r}") from None
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"sweep must look like lo:hi:step, got {text!r}") from None
    if not (lo < hi and step > 0):
        raise ConfigError(f"sweep needs lo < hi and step > 0, got {text!r}")
    out = []
    k = 0
    while lo + k * step < hi + step / 2:
        out.append(round(lo + k * step, 12))
        k += 1
    return out


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _grid_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("grid")
    g.add_argument("--t-base", type=float, default=86400.0, help="grid base node T_b (s)")
    g.add_argument("--gamma", type=float, default=1.04, help="grid ratio")
    g.add_argument("--t-h", type=float, default=15 * 86400.0, help="grid horizon T_h (s)")
    g.add_argument("--t-min", type=float, default=None, help="smallest grid node (default: delta)")
    g.add_argument("--delta", type=float, default=600.0, help="minimum partition cell width (s)")
    g.add_argument("--min-cluster", type=int, default=100, help="minimum cohort size N")


def _rule_args(p: argparse.ArgumentParser, sweep: bool = False) -> None:
    kinds = ["quantile", "linear", "tanh", "rational"]
    if sweep:
        p.add_argument("--policy", choices=kinds + ["deterministic"], default="quantile")
        p.add_argument("--alphas", default="0.05:0.5:0.05", help="alpha sweep lo:hi:step")
    else:
        p.add_argument("--rule", choices=kinds, default="quantile")
        p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--c", type=float, default=1.0, help="delay importance constant")
    p.add_argument("--beta", type=float, default=1.0, help="bounded penalty shape")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cohortney", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="key = value file; flags override its values")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="build a cohort index from training sequences")
    p.add_argument("--input", required=False)
    p.add_argument("--out", required=False)
    _grid_args(p)

    p = sub.add_parser("predict", help="forecast the next peek time")
    p.add_argument("--index")
    p.add_argument("--sequence", help="JSONL file; one forecast per record")
    p.add_argument("--now", type=float, help="present moment in seconds after start")
    p.add_argument("--out", help="write records here instead of stdout")
    _rule_args(p)

    p = sub.add_parser("simulate", help="generate synthetic sequences")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--horizon", type=float, default=15 * 86400.0)
    p.add_argument("--model-file", help="JSON generator model (default: three-component preset)")
    p.add_argument("--out")
    p.add_argument("--test-out", help="also draw a test half of equal size into this file")

    p = sub.add_parser("evaluate", help="run a polling policy over test sequences")
    p.add_argument("--index")
    p.add_argument("--test")
    p.add_argument("--out")
    p.add_argument("--horizon", type=float, default=15 * 86400.0)
    p.add_argument("--schedule", default=",".join(str(h) for h in DEFAULT_SCHEDULE_HOURS),
                   help="deterministic schedule in hours")
    p.add_argument("--no-reset", action="store_true", help="deterministic: single pass")
    p.add_argument("--traces", help="debug JSONL dump of peek traces (first alpha)")
    p.add_argument("--seed", type=int, default=0)
    _rule_args(p, sweep=True)

    p = sub.add_parser("spectrum", help="greedy spectrum ordering and split")
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--groups", type=int, default=2)
    p.add_argument("--rule", choices=["rule1", "rule2"], default="rule1")
    p.add_argument("--sigma", type=float, default=None, help="similarity scale (default: median DTW)")
    p.add_argument("--limit", type=int, default=None, help="use only the first N sequences")

    parser._subparser_map = sub.choices  # type: ignore[attr-defined]
    return parser


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config_file(args.config)
        sp = parser._subparser_map[args.command]  # type: ignore[attr-defined]
        actions = {a.dest: a for a in sp._actions}
        for key, value in cfg.items():
            if key not in actions or key == "help":
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if isinstance(actions[key], argparse._StoreTrueAction):
                cfg[key] = _bool(value)
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + m.replace("_", "-") for m in missing)
        raise ConfigError(f"{args.command} needs {flags}")


def _grid_config(args) -> GridConfig:
    return GridConfig(args.t_base, args.gamma, args.t_h, args.t_min, args.delta, args.min_cluster)


def _rule(args):
    if args.rule == "quantile":
        return QuantileConfig(args.alpha)
    return PenaltyConfig(args.rule, args.c, args.beta)


def _fmt_time(x: float):
    return "never" if math.isinf(x) else x


def cmd_cluster(args) -> int:
    _need(args, "input", "out")
    cfg = _grid_config(args)
    index = build_cohorts(read_jsonl(args.input), cfg)
    save_index(index, args.out)
    levels = {}
    for c in index.cohorts.values():
        levels[c.key.level] = levels.get(c.key.level, 0) + 1
    print(f"grid_nodes={len(index.grid)} cohorts={len(index)}")
    for lvl in sorted(levels):
        print(f"level={lvl} cohorts={levels[lvl]}")
    return EXIT_OK


def cmd_predict(args) -> int:
    _need(args, "index", "sequence", "now")
    index = load_index(args.index)
    rule = _rule(args)
    records = []
    for seq in read_jsonl(args.sequence):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BelowGridWarning)
            res = predict(index, ObservationContext(seq.truncated(args.now), args.now), rule)
        records.append({
            "id": seq.id,
            "node": res.key.node if res.key else None,
            "level": res.key.level if res.key else None,
            "rule": args.rule,
            "c": args.c if args.rule != "quantile" else None,
            "beta": args.beta if args.rule in ("tanh", "rational") else None,
            "alpha": args.alpha if args.rule == "quantile" else None,
            "tau_star": _fmt_time(res.tau_star),
            "risk": res.risk,
            "below_grid": any(issubclass(w.category, BelowGridWarning) for w in caught),
        })
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for r in records:
            out.write(json.dumps(r) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    _need(args, "out")
    if args.model_file:
        with open(args.model_file, encoding="utf-8") as fh:
            model = model_from_dict(json.load(fh))
    else:
        model = three_component_mixture(args.horizon)
    spec = GeneratorSpec(model, args.horizon, args.seed)
    if args.test_out:
        seqs = generate(spec, 2 * args.count)
        write_jsonl(args.out, seqs[: args.count])
        write_jsonl(args.test_out, seqs[args.count :])
    else:
        write_jsonl(args.out, generate(spec, args.count))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _need(args, "test", "out")
    test = read_jsonl(args.test)
    if args.policy == "deterministic":
        schedule = [float(h) for h in args.schedule.split(",")]
        rows = deterministic_rows(test, schedule, reset=not args.no_reset)
    else:
        _need(args, "index")
        index = load_index(args.index)
        alphas = parse_sweep(args.alphas)
        policy = PolicyConfig(args.policy, args.c, args.beta, args.horizon)
        rows = aggregate_sweep(test, index, alphas, policy)
        if args.traces:
            rule = policy.rule(alphas[0])
            write_traces_jsonl(args.traces, (
                (s.id, run_cohort_policy(index, s, rule, args.horizon, sparse_alpha=alphas[0]))
                for s in test
            ))
        expected = 5 * len(alphas)
        if len(rows) != expected:
            raise InvariantError(f"sweep produced {len(rows)} rows, expected {expected}")
    write_metrics_csv(rows, args.out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    _need(args, "input", "out")
    seqs = read_jsonl(args.input)
    if args.limit is not None:
        seqs = seqs[: args.limit]
    matrix = similarity_matrix(seqs, args.sigma)
    ordering = build_spectrum(matrix, args.start)
    groups = split_spectrum(ordering, args.groups, args.rule)
    group_of = {e: g for g, members in enumerate(groups) for e in members}
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "element", "id", "k_value", "group"])
        for pos, e in enumerate(ordering.order):
            k = "" if pos == 0 else repr(ordering.spectrum[pos - 1])
            w.writerow([pos, e, seqs[e].id, k, group_of[e]])
    return EXIT_OK


COMMANDS = {
    "cluster": cmd_cluster,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "spectrum": cmd_spectrum,
}


def _fail(category: str, msg: str, code: int) -> int:
    print(f"cohortney: error[{category}]: {msg}", file=sys.stderr)
    return code


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except CohortneyError as exc:
        return _fail("validation", str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CohortneyError as exc:
        code = {"validation": EXIT_VALIDATION, "io": EXIT_IO}.get(exc.category, EXIT_INTERNAL)
        return _fail(exc.category, str(exc), code)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
