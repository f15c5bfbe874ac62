"""Command-line entry point: ``mgw <command> ...``.

Exit codes: 0 on success, 2 when inputs fail validation (one JSON line on
stderr), 64 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .laws import LawError, c_theta, classify, load_law, tilt, tilted_mean
from .trees import MarkedTree, TreeError, parse_word

SCHEMA = 1
EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 2, 64
log = logging.getLogger("mgw")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, np.generic):
        return _finite(x.item())
    return x


def _dump(obj) -> str:
    return json.dumps(_finite(obj), separators=(",", ":"))


class Output:
    """``--out`` is either a format name (written to stdout) or a file path."""

    def __init__(self, target: str | None, default: str):
        self.path = None
        if target is None or target in ("json", "jsonl", "csv"):
            self.fmt = target or default
        else:
            self.path = Path(target)
            ext = self.path.suffix.lstrip(".").lower()
            self.fmt = ext if ext in ("json", "jsonl", "csv") else default

    def write(self, text: str) -> None:
        if self.path is None:
            sys.stdout.write(text)
        else:
            self.path.write_text(text)


# ---------------------------------------------------------------- commands
def cmd_classify(args) -> dict:
    law = load_law(args.law)
    return {"schema": SCHEMA, **classify(law).to_json_obj()}


def cmd_tilt(args) -> dict:
    law = load_law(args.law)
    c = c_theta(law, args.theta)
    tl = tilt(law, args.theta)
    out = {"schema": SCHEMA, "theta": args.theta, "c_theta": c, "mean": tilted_mean(law, args.theta),
           "law": tl.to_json_obj(), "mark_limit": tl.mark_limit}
    if args.upto is not None:
        ks = np.arange(args.upto + 1)
        out["p"] = np.asarray(tl.prob(ks)).tolist()
        out["q"] = np.asarray(tl.mark_prob(ks)).tolist()
    return out


def _target_pmf(tables, target: str):
    if target.startswith("Sn:"):
        return tables.walk_pmf(int(target[3:]))
    if target.startswith("W:"):
        return tables.W_pmf(int(target[2:]))
    table = {
        "L": lambda: tables.pmf_L,
        "N": lambda: tables.pmf_N,
        "X0": lambda: tables.pmf_X0,
        "X1": lambda: tables.pmf_X1,
        "Z0": lambda: tables.pmf_Z0,
        "Z1": lambda: tables.pmf_Z1,
        "M": lambda: tables.mark_count_pmf,
    }
    if target not in table:
        raise UsageError(f"unknown target {target!r}")
    return table[target]()


def cmd_pmf(args):
    from .decomposition import DecompositionTables

    law = load_law(args.law)
    if args.upto < 0:
        raise UsageError("--upto must be nonnegative")
    tables = DecompositionTables(law, max(args.upto, 8))
    if args.target == "M" and args.upto == 0:
        w, tail = [tables.h0], 1.0 - tables.h0
    else:
        pmf = _target_pmf(tables, args.target)
        w = pmf.weights[: args.upto + 1].tolist()
        tail = max(0.0, 1.0 - math.fsum(w))
    rows = [{"index": i, "probability": p, "tail_mass": tail} for i, p in enumerate(w)]
    return {"schema": SCHEMA, "target": args.target, "rows": rows, "_rows": True}


def cmd_sample(args):
    from .samplers import (
        LimitTreeSampler,
        Overflow,
        SamplerConfig,
        make_rng,
        sample_conditioned,
        sample_mgw,
    )

    law = load_law(args.law)
    cfg = SamplerConfig(seed=args.seed, node_cap=args.node_cap, attempt_cap=args.attempt_cap,
                        tilt=args.tilt, workers=args.workers)
    mode, _, param = args.mode.partition(":")
    lines = []
    stats = {}
    if mode == "mgw":
        for t in sample_mgw(law, cfg, args.count):
            lines.append({"overflow": True, "nodes_seen": t.nodes_seen} if isinstance(t, Overflow) else t.to_json_obj())
    elif mode == "cond":
        res = sample_conditioned(law, _int_param(param, "cond"), cfg, args.count)
        lines = [t.to_json_obj() for t in res.trees]
        stats = {"attempts": res.attempts, "acceptance_rate": res.acceptance_rate, "overflows": res.overflows}
    elif mode in ("kesten", "condens"):
        h = _int_param(param, mode)
        kind = "kesten" if mode == "kesten" else "condensation"
        sampler = LimitTreeSampler(law, kind, h)
        rng = make_rng(args.seed, 0)
        lines = [sampler.sample(rng).to_json_obj() for _ in range(args.count)]
    else:
        raise UsageError(f"unknown mode {args.mode!r}")
    if stats:
        log.info("sampling statistics: %s", _dump(stats))
    return {"schema": SCHEMA, "trees": lines, "_trees": True, "stats": stats}


def _int_param(param: str, mode: str) -> int:
    try:
        v = int(param)
    except ValueError:
        raise UsageError(f"mode {mode} needs an integer parameter, e.g. {mode}:3") from None
    if v < 0:
        raise UsageError("mode parameters must be nonnegative")
    return v


def _load_tree(source: str) -> MarkedTree:
    """Read a tree from a file, or parse ``source`` itself when no such file exists."""
    path = Path(source)
    text = path.read_text() if path.is_file() else source
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return MarkedTree.from_text(text.strip())
    if isinstance(obj, dict) and "tree" in obj:
        obj = obj["tree"]
    return MarkedTree.from_json_obj(obj)


def cmd_limitprob(args) -> dict:
    from .limit_laws import GraftQuery, condensation_graft_prob, kesten_graft_prob

    law = load_law(args.law)
    query = GraftQuery(_load_tree(args.tree), parse_word(args.x), args.k)
    if args.kind == "kesten":
        p = kesten_graft_prob(query, law)
    else:
        p = condensation_graft_prob(query, law)
    return {"schema": SCHEMA, "kind": args.kind, "x": args.x, "k": args.k, "probability": p}


def _grid(text: str) -> list[int]:
    try:
        grid = [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise UsageError("grids must be strictly increasing positive integers")
    return grid


def cmd_converge(args) -> dict:
    from .convergence import tv_convergence_experiment

    law = load_law(args.law)
    rep = tv_convergence_experiment(law, args.h, _grid(args.grid), int(float(args.samples)), args.seed, args.workers)
    return {"schema": SCHEMA, "report": rep.to_json_obj()}


def cmd_diagnose(args) -> dict:
    from .convergence import diagnostic_report, strong_ratio_check, tail_check, tail_constants
    from .decomposition import DecompositionTables

    law = load_law(args.law)
    grid = _grid(args.grid)
    size = max(grid) + max(args.m, 0) + 1
    tables = DecompositionTables(law, size)
    if args.kind in ("delta", "a", "B"):
        kw = {"delta": {"m": args.m}, "a": {"j": args.j, "i": args.i}, "B": {"l": args.l, "eta": args.eta}}[args.kind]
        rep = diagnostic_report(args.kind, tables, grid, **kw)
        return {"schema": SCHEMA, "report": rep.to_json_obj()}
    if args.kind == "strong-ratio":
        rep = strong_ratio_check(tables, grid, args.m, args.u)
        return {"schema": SCHEMA, "report": rep.to_json_obj()}
    if args.kind == "tail":
        tc = tail_constants(law, tables)
        reports = {}
        for name, pmf in (("N", tables.pmf_N), ("Z1", tables.pmf_Z1), ("Z0", tables.pmf_Z0)):
            tgt = getattr(tc, name)
            reports[name] = tail_check(pmf, tgt.exponent, tgt.constant, grid, tgt.scale).to_json_obj()
        return {"schema": SCHEMA, "constants": tc.to_json_obj(), "reports": reports}
    raise UsageError(f"unknown diagnostic {args.kind!r}")


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    from .samplers import default_workers

    p = _Parser(prog="mgw", description="Marked Galton-Watson trees conditioned on their number of marks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def law_cmd(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--law", required=True, help="law file (JSON)")
        sp.add_argument("--out", default=None, help="json, jsonl, csv, or an output path")
        return sp

    law_cmd("classify", "critical / generic / non-generic classification")
    sp = law_cmd("tilt", "the tilted pair at theta")
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--upto", type=int, default=None, help="also list p_theta(k), q_theta(k) for k <= upto")

    sp = law_cmd("pmf", "exact pmfs of the decomposition")
    sp.add_argument("--target", required=True, help="L, N, X0, X1, Z0, Z1, M, Sn:<n> or W:<j>")
    sp.add_argument("--upto", type=int, required=True)

    sp = law_cmd("sample", "random trees")
    sp.add_argument("--mode", required=True, help="mgw, cond:<n>, kesten:<h> or condens:<h>")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tilt", type=float, default=None)
    sp.add_argument("--node-cap", type=int, default=1_000_000)
    sp.add_argument("--attempt-cap", type=int, default=10_000_000)
    sp.add_argument("--workers", type=int, default=default_workers())

    sp = law_cmd("limitprob", "graft-set probability under a limit tree")
    sp.add_argument("--tree", required=True, help="base tree file, or an inline JSON / text tree")
    sp.add_argument("--x", required=True, help="node word, e.g. root, 1.2 or 12")
    sp.add_argument("--k", type=int, default=0)
    sp.add_argument("--kind", choices=["kesten", "condensation"], required=True)

    sp = law_cmd("converge", "Monte Carlo total variation against the limit tree")
    sp.add_argument("--h", type=int, required=True)
    sp.add_argument("--grid", required=True, help="comma-separated n values")
    sp.add_argument("--samples", default="1e6")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--workers", type=int, default=default_workers())

    sp = law_cmd("diagnose", "exact ratio diagnostics and tail constants")
    sp.add_argument("--kind", choices=["delta", "a", "B", "strong-ratio", "tail"], required=True)
    sp.add_argument("--grid", required=True)
    sp.add_argument("--m", type=int, default=0)
    sp.add_argument("--u", type=int, default=0)
    sp.add_argument("--j", type=int, default=1)
    sp.add_argument("--i", type=int, default=0)
    sp.add_argument("--l", type=int, default=0)
    sp.add_argument("--eta", type=int, choices=[0, 1], default=0)
    return p


COMMANDS = {
    "classify": cmd_classify,
    "tilt": cmd_tilt,
    "pmf": cmd_pmf,
    "sample": cmd_sample,
    "limitprob": cmd_limitprob,
    "converge": cmd_converge,
    "diagnose": cmd_diagnose,
}


def _render(result: dict, out: Output) -> str:
    if result.pop("_rows", False):
        rows = result["rows"]
        if out.fmt == "csv":
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["index", "probability", "tail_mass"])
            for r in rows:
                w.writerow([r["index"], repr(r["probability"]), repr(r["tail_mass"])])
            return buf.getvalue()
        if out.fmt == "jsonl":
            return "".join(_dump({"schema": SCHEMA, **r}) + "\n" for r in rows)
        return _dump(result) + "\n"
    if result.pop("_trees", False):
        if out.fmt == "json":
            return _dump(result) + "\n"
        return "".join(_dump(t) + "\n" for t in result["trees"])
    return _dump(result) + "\n"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(name)s: %(message)s")
    default = {"pmf": "csv", "sample": "jsonl"}.get(args.command, "json")
    out = Output(args.out, default)
    try:
        result = COMMANDS[args.command](args)
        out.write(_render(result, out))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"mgw: error: {exc}\n")
        return EXIT_USAGE
    except LawError as exc:
        sys.stderr.write(_dump({"error": str(exc), "condition": exc.condition}) + "\n")
        return EXIT_INVALID
    except (TreeError, ValueError, KeyError, OSError, RuntimeError) as exc:
        sys.stderr.write(_dump({"error": str(exc), "condition": type(exc).__name__}) + "\n")
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
