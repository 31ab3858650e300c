"""Command-line entry points: plan routes, evaluate models, serve the mock.

Configuration precedence: command-line flags, then ``RETROROUTE_*``
environment variables, then the ``--config`` file (flat JSON mirroring the
flag names), then built-in defaults. Defaults match the planner's standard
operating point (retro beams 15, auto-accept 0.6, gap 0.2, forward top-3,
10 evaluation predictions).

Exit codes: 0 success, 2 configuration error, 3 no route found, 4 empty
evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .errors import ConfigError, EmptyEvaluation, IoError, NotCanonicalizable, RetroRouteError
from .expand import ExpansionConfig
from .graph import HyperGraph
from .metrics import evaluate
from .models import ModelManifest
from .search import (
    HeavyTokenScorer,
    Pathway,
    SearchConfig,
    SOLVED,
    beam_search,
)
from .smiles import ToyNormalizer
from .stock import load_stocks
from .toy import ToyOracle, load_templates
from .wire import build_models, serve_http, serve_stdio

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NO_ROUTE = 3
EXIT_EMPTY_EVAL = 4

ENV_PREFIX = "RETROROUTE_"

DEFAULTS: Dict[str, Any] = {
    "max_steps": 6,
    "beams": 10,
    "retro_beams": 15,
    "theta_hi": 0.6,
    "gap": 0.2,
    "forward_topk": 3,
    "concurrency": 1,
    "eval_beams": 10,
    "bins": 50,
    "log_base": "e",
}


def resolve(name: str, flag_value: Any, file_config: Dict[str, Any]) -> Any:
    """flags > environment > config file > defaults."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        default = DEFAULTS.get(name)
        if isinstance(default, int):
            return int(env)
        if isinstance(default, float):
            return float(env)
        return env
    if name in file_config:
        return file_config[name]
    return DEFAULTS.get(name)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a flat JSON object")
    return data


def route_to_json(graph: HyperGraph, p: Pathway) -> dict:
    steps = []
    for arc_id in p.arcs:
        arc = graph.arcs[arc_id]
        steps.append(
            {
                "product": graph.node(arc.product).smiles,
                "precursors": [
                    graph.node(n).smiles
                    for n in arc.precursors
                    if n not in arc.reagents
                ],
                "reagents": sorted(graph.node(n).smiles for n in arc.reagents),
                "likelihood": arc.forward_likelihood,
                "class": arc.reaction_class.code,
                "arc_score": arc.arc_score,
            }
        )
    return {
        "steps": steps,
        "cumulative_score": p.cumulative_score,
        "n_steps": len(p.arcs),
        "status": p.status,
    }


def cmd_plan(args: argparse.Namespace) -> int:
    file_config = load_config_file(args.config)
    stock_paths = args.stock or file_config.get("stock") or []
    manifest_path = args.models or file_config.get("models")
    if not manifest_path:
        raise ConfigError("a model manifest is required (--models)")
    if not stock_paths:
        raise ConfigError("at least one stock file is required (--stock)")
    manifest = ModelManifest.load(manifest_path)
    models = build_models(manifest)
    normalizer = ToyNormalizer()
    stock = load_stocks(stock_paths, normalizer)
    scorer = HeavyTokenScorer()
    cfg = SearchConfig(
        n_beams=int(resolve("beams", args.beams, file_config)),
        max_steps=int(resolve("max_steps", args.max_steps, file_config)),
        expansion=ExpansionConfig(
            retro_beams=int(resolve("retro_beams", args.retro_beams, file_config)),
            auto_accept_likelihood=float(resolve("theta_hi", args.theta_hi, file_config)),
            selectivity_gap=float(resolve("gap", args.gap, file_config)),
            forward_topk=int(resolve("forward_topk", args.forward_topk, file_config)),
            max_concurrency=int(resolve("concurrency", args.concurrency, file_config)),
        ),
    )

    trace: Optional[List[dict]] = [] if args.trace else None
    try:
        outcome = beam_search(
            args.target, cfg, models, stock, normalizer=normalizer, scorer=scorer,
            trace=trace,
        )
    except NotCanonicalizable as exc:
        raise ConfigError(f"target is not canonicalizable: {exc}") from exc

    payload = {
        "metadata": {
            "target": args.target,
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
            "config": {
                "beams": cfg.n_beams,
                "max_steps": cfg.max_steps,
                "retro_beams": cfg.expansion.retro_beams,
                "theta_hi": cfg.expansion.auto_accept_likelihood,
                "gap": cfg.expansion.selectivity_gap,
                "forward_topk": cfg.expansion.forward_topk,
            },
            "stock_size": len(stock),
        },
        "routes": [route_to_json(outcome.graph, p) for p in outcome.pathways],
    }
    out_path = Path(args.out)
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    if args.graph_out:
        Path(args.graph_out).write_text(outcome.graph.dumps() + "\n", "utf-8")
    if args.dot_out:
        best = outcome.solved[0] if outcome.solved else None
        arcs = best.arcs if best is not None else None
        Path(args.dot_out).write_text(outcome.graph.to_dot(arcs), "utf-8")
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for record in trace or []:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    print(f"target: {args.target}")
    print(f"{'rank':>4}  {'status':<9} {'steps':>5}  {'score':>12}")
    for i, p in enumerate(outcome.pathways[:20], 1):
        print(f"{i:>4}  {p.status:<9} {len(p.arcs):>5}  {p.cumulative_score:>12.6g}")
    solved = [p for p in outcome.pathways if p.status == SOLVED]
    print(f"{len(solved)} solved route(s) of {len(outcome.pathways)} pathways -> {out_path}")
    return EXIT_OK if solved else EXIT_NO_ROUTE


def read_targets(path: str) -> List[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    targets = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("{"):
            try:
                targets.append(json.loads(line)["target"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"bad JSONL test line {line!r}: {exc}") from exc
        else:
            targets.append(line)
    return targets


def cmd_eval(args: argparse.Namespace) -> int:
    file_config = load_config_file(args.config)
    manifest_path = args.models or file_config.get("models")
    if not manifest_path:
        raise ConfigError("a model manifest is required (--models)")
    models = build_models(ModelManifest.load(manifest_path))
    normalizer = ToyNormalizer()
    targets = read_targets(args.test)
    base_label = str(resolve("log_base", args.log_base, file_config))
    log_base = None if base_label == "e" else float(base_label)
    report, records = evaluate(
        targets,
        models,
        normalizer,
        beams=int(resolve("eval_beams", args.beams, file_config)),
        bins=int(resolve("bins", args.bins, file_config)),
        log_base=log_base,
        include_unrecognized=args.include_unrecognized,
    )

    Path(args.report).write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", "utf-8"
    )
    if args.audit:
        with open(args.audit, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    if args.hist_csv:
        with open(args.hist_csv, "w", encoding="utf-8") as fh:
            fh.write("superclass,bin,count\n")
            for h in report.histograms:
                for i, c in enumerate(h.counts):
                    fh.write(f"{h.superclass},{i},{c}\n")

    inv = "inf" if report.jsd == 0.0 else (
        f"{report.inv_jsd:.1f}" if report.inv_jsd is not None else "n/a"
    )
    print(f"{'RT [%]':>8} {'Cov. [%]':>9} {'CD':>6} {'1/JSD':>8} {'invalid smi [%]':>16}")
    print(
        f"{report.round_trip:>8.1f} {report.coverage:>9.1f} "
        f"{report.class_diversity:>6.2f} {inv:>8} {report.invalid_smiles:>16.2f}"
    )
    print(f"(log base {report.log_base}, {report.bins} bins, "
          f"classes {report.participating_classes}) -> {args.report}")
    return EXIT_OK


def cmd_mock_serve(args: argparse.Namespace) -> int:
    templates = load_templates(args.templates)
    oracle = ToyOracle(templates)
    if args.transport == "stdio":
        serve_stdio(oracle, sys.stdin, sys.stdout)
        return EXIT_OK
    server = serve_http(oracle, args.host, args.port)
    print(f"serving {len(templates)} templates on http://{args.host}:{server.server_port}/")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    try:
        graph = HyperGraph.loads(Path(args.graph).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load graph snapshot {args.graph}: {exc}") from exc
    dot = graph.to_dot()
    if args.out:
        Path(args.out).write_text(dot, "utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retroroute",
        description="Hypergraph beam-search route planner and model evaluator.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="plan retrosynthetic routes for a target")
    plan.add_argument("target")
    plan.add_argument("--models", help="model manifest JSON")
    plan.add_argument("--stock", action="append", help="stock file (repeatable, union)")
    plan.add_argument("--max-steps", type=int, dest="max_steps")
    plan.add_argument("--beams", type=int, help="pathway beam width")
    plan.add_argument("--retro-beams", type=int, dest="retro_beams")
    plan.add_argument("--theta-hi", type=float, dest="theta_hi")
    plan.add_argument("--gap", type=float)
    plan.add_argument("--forward-topk", type=int, dest="forward_topk")
    plan.add_argument("--concurrency", type=int)
    plan.add_argument("--config")
    plan.add_argument("--out", default="routes.json")
    plan.add_argument("--graph-out", dest="graph_out")
    plan.add_argument("--dot-out", dest="dot_out")
    plan.add_argument("--trace", help="write the expansion audit trail (JSONL)")
    plan.set_defaults(func=cmd_plan)

    ev = sub.add_parser("eval", help="evaluate a single-step retro model")
    ev.add_argument("--test", required=True, help="targets: text or JSONL file")
    ev.add_argument("--models")
    ev.add_argument("--beams", type=int)
    ev.add_argument("--bins", type=int)
    ev.add_argument("--log-base", dest="log_base")
    ev.add_argument("--include-unrecognized", action="store_true")
    ev.add_argument("--config")
    ev.add_argument("--report", default="metrics.json")
    ev.add_argument("--audit", help="per-suggestion audit JSONL")
    ev.add_argument("--hist-csv", dest="hist_csv")
    ev.set_defaults(func=cmd_eval)

    mock = sub.add_parser("mock-serve", help="serve the toy oracle over the wire protocol")
    mock.add_argument("templates")
    mock.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    mock.add_argument("--host", default="127.0.0.1")
    mock.add_argument("--port", type=int, default=0)
    mock.set_defaults(func=cmd_mock_serve)

    export = sub.add_parser("export", help="render a graph snapshot as DOT")
    export.add_argument("graph")
    export.add_argument("--out")
    export.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except EmptyEvaluation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_EVAL
    except (ConfigError, IoError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RetroRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
