"""Command-line entry points: build-graph, generate, execute, evaluate, stats,
plus baseline and synth helpers.

Options come from flags, optionally backed by a JSON file given with
``--config``; a flag always beats the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

from . import __version__
from .evaluation import (EvaluationError, Prediction, evaluate, oracle_predictions,
                         qtype_mode_baseline, read_predictions, triplets_from_trace,
                         write_predictions, UNKNOWN_ANSWER)
from .executor import DEFAULT_MAX_PAIRS, ExecError, GroundingMode, justify, run
from .kgraph import (IngestError, IngestReport, load_bundle, load_knowledge_base,
                     load_scene_graphs, merge, save_bundle)
from .qgen import (DEFAULT_ANSWER_CAP, DEFAULT_RATIOS, GenerationConfig, dataset_stats,
                   generate, read_dataset, write_dataset)
from .query import QueryError, parse_layout, parse_question
from .templates import TemplateError, default_templates, load_templates

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGEST = 3
EXIT_PARSE = 4
EXIT_EMPTY = 5
EXIT_MISMATCH = 6


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    kb: Optional[str] = None
    scenes: Optional[str] = None
    bundle: Optional[str] = None
    templates: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    ratios: tuple = DEFAULT_RATIOS
    answer_cap: int = DEFAULT_ANSWER_CAP
    max_pairs: int = DEFAULT_MAX_PAIRS
    grounded: bool = True
    max_chains: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def check(self, *required_paths: str) -> "RunConfig":
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9 or min(self.ratios) < 0:
            raise UsageError(f"--ratios must be three non-negative numbers summing to 1, got {list(self.ratios)}")
        if self.answer_cap < 1 or self.max_pairs < 1:
            raise UsageError("--answer-cap and --max-pairs must be positive")
        for name in required_paths:
            path = getattr(self, name)
            if path is None:
                raise UsageError(f"--{name.replace('_', '-')} is required")
            if not os.access(path, os.R_OK) or not os.path.isfile(path):
                raise UsageError(f"--{name.replace('_', '-')}: cannot read {path}")
        return self

    def generation(self) -> GenerationConfig:
        return GenerationConfig(seed=self.seed, ratios=tuple(self.ratios), answer_cap=self.answer_cap,
                                max_pairs=self.max_pairs, grounded=self.grounded,
                                max_chains=self.max_chains)


_CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"extra"}


def _ratios(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.replace("/", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad ratios {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("ratios need three values, e.g. 0.6,0.2,0.2")
    return vals


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("--config must hold a JSON object")
        unknown = set(loaded) - _CONFIG_KEYS
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        values.update(loaded)
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "ratios" in values:
        values["ratios"] = tuple(float(x) for x in values["ratios"])
    return RunConfig(**values)


# -- shared loading -----------------------------------------------------------------

def _load_graphs(cfg: RunConfig, report: Optional[IngestReport] = None):
    if cfg.bundle:
        cfg.check("bundle")
        kb, scenes = load_bundle(cfg.bundle)
    else:
        cfg.check("kb", "scenes")
        kb = load_knowledge_base(cfg.kb)
        scenes = load_scene_graphs(cfg.scenes, report)
    return kb, scenes, {sc.image_id: merge(sc, kb) for sc in scenes}


def _templates(cfg: RunConfig):
    if cfg.templates:
        cfg.check("templates")
        return load_templates(cfg.templates)
    return default_templates()


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


# -- commands -----------------------------------------------------------------------

def cmd_build_graph(cfg: RunConfig) -> int:
    report = IngestReport()
    kb, scenes, _ = _load_graphs(RunConfig(kb=cfg.kb, scenes=cfg.scenes), report)
    out = cfg.out or "graph_bundle.json"
    save_bundle(out, kb, scenes, report)
    print(json.dumps({"bundle": out, "kb_facts": len(kb), **report.to_dict()}, sort_keys=True))
    return EXIT_OK


def cmd_generate(cfg: RunConfig) -> int:
    _, _, graphs = _load_graphs(cfg)
    templates = _templates(cfg)
    result = generate(graphs.values(), templates, cfg.generation())
    out = cfg.out or "dataset.jsonl"
    write_dataset(result.records, out)
    stats = dataset_stats(result.records)
    print(stats.render())
    print(f"candidates {result.candidates:,}; rejected {dict(sorted(result.rejections.items()))}; "
          f"dropped {dict(sorted(result.ledger.drops.items()))}")
    if cfg.extra.get("stats_out"):
        _emit(json.dumps(stats.to_dict(), indent=1, sort_keys=True), cfg.extra["stats_out"])
    if not result.records:
        print("warning: no records survived validation and constraints", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_execute(cfg: RunConfig) -> int:
    _, _, graphs = _load_graphs(cfg)
    layout_text = cfg.extra.get("layout")
    if layout_text is not None:
        image = cfg.extra.get("image")
        if image is None:
            image = next(iter(sorted(graphs))) if len(graphs) == 1 else None
        if image not in graphs:
            raise UsageError("--image must name an image in the graph data")
        try:
            layout = parse_layout(layout_text)
        except QueryError as exc:
            print(f"parse error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        mode = GroundingMode.GROUNDED if cfg.extra.get("grounded_root") else GroundingMode.PLAIN
        try:
            result = run(layout, graphs[image], mode, cfg.max_pairs)
        except ExecError as exc:
            print(f"execution error: {exc}", file=sys.stderr)
            return EXIT_PARSE
        _emit(result.to_json(), cfg.out)
        return EXIT_OK

    dataset = cfg.extra.get("dataset")
    if dataset is None:
        raise UsageError("execute needs --layout or --dataset")
    records = _read_records(dataset)
    query_mode = cfg.extra.get("mode", "full") == "query"
    templates = _templates(cfg) if query_mode else None
    preds, agree, failures = [], 0, []
    for r in records:
        graph = graphs.get(r.image_id)
        try:
            if graph is None:
                raise ExecError(f"image {r.image_id} not in graph data")
            layout = parse_question(r.question, templates, graph.entry_table) if query_mode else r.layout
            mode = r.grounding_mode if cfg.grounded else GroundingMode.PLAIN
            result = run(layout, graph, mode, cfg.max_pairs)
        except (QueryError, ExecError) as exc:
            failures.append(f"{r.record_id}: {exc}")
            preds.append(Prediction(r.record_id, UNKNOWN_ANSWER, frozenset()))
            continue
        ans = result.answers[0].name if len(result.answers) == 1 else UNKNOWN_ANSWER
        if ans == r.answer:
            agree += 1
        else:
            failures.append(f"{r.record_id}: expected {r.answer!r}, got {[e.name for e in result.answers]}")
        preds.append(Prediction(r.record_id, ans, frozenset(triplets_from_trace(justify(result)))))
    for line in failures[:20]:
        print(line, file=sys.stderr)
    n = len(records)
    print(f"{'QUERY' if query_mode else 'FULL'} agreement: {agree}/{n} ({100 * agree / n if n else 0:.2f}%)")
    if cfg.out:
        write_predictions(preds, cfg.out)
    return EXIT_OK


def _read_records(path):
    try:
        return read_dataset(path)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise DatasetError(str(exc)) from None


class DatasetError(Exception):
    pass


def _select(records, split: Optional[str]):
    return [r for r in records if split is None or r.split == split]


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.extra.get("predictions") or not cfg.extra.get("dataset"):
        raise UsageError("evaluate needs --predictions and --dataset")
    gold = _select(_read_records(cfg.extra["dataset"]), cfg.extra.get("split"))
    try:
        preds = read_predictions(cfg.extra["predictions"])
    except OSError as exc:
        raise UsageError(str(exc)) from None
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{cfg.extra['predictions']}: {exc}") from None
    try:
        report = evaluate(preds, gold)
    except EvaluationError as exc:
        print(f"evaluation mismatch: {exc}", file=sys.stderr)
        for i in exc.ids[:10]:
            print(f"  {i}", file=sys.stderr)
        return EXIT_MISMATCH
    print(report.render(cfg.extra.get("method") or os.path.basename(cfg.extra["predictions"])))
    if report.missing:
        print(f"{report.missing} gold records have no prediction (scored wrong)")
    if cfg.out:
        _emit(json.dumps(report.to_dict(), indent=1, sort_keys=True), cfg.out)
    return EXIT_OK


def cmd_stats(cfg: RunConfig) -> int:
    if not cfg.extra.get("dataset"):
        raise UsageError("stats needs --dataset")
    stats = dataset_stats(_read_records(cfg.extra["dataset"]))
    print(stats.render())
    if cfg.out:
        _emit(json.dumps(stats.to_dict(), indent=1, sort_keys=True), cfg.out)
    return EXIT_OK


def cmd_baseline(cfg: RunConfig) -> int:
    if not cfg.extra.get("dataset"):
        raise UsageError("baseline needs --dataset")
    records = _read_records(cfg.extra["dataset"])
    split = cfg.extra.get("split") or "test"
    preds = qtype_mode_baseline(_select(records, "train"), _select(records, split))
    out = cfg.out or "baseline_predictions.jsonl"
    write_predictions(preds, out)
    print(f"wrote {len(preds)} Q-type-mode predictions for split {split!r} to {out}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    """Executor-as-answerer predictions (answers plus justified triplets)."""
    if not cfg.extra.get("dataset"):
        raise UsageError("oracle needs --dataset")
    _, _, graphs = _load_graphs(cfg)
    records = _select(_read_records(cfg.extra["dataset"]), cfg.extra.get("split"))
    preds = oracle_predictions(records, graphs, cfg.max_pairs)
    out = cfg.out or "oracle_predictions.jsonl"
    write_predictions(preds, out)
    print(f"wrote {len(preds)} oracle predictions to {out}")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    from .synth import make_constraint_corpus, make_corpus

    if cfg.extra.get("kind") == "constraints":
        corpus = make_constraint_corpus(cfg.extra.get("images") or 300)
    else:
        corpus = make_corpus(n_images=cfg.extra.get("images") or 240,
                             kb_facts=cfg.extra.get("kb_facts") or 5200, seed=cfg.seed)
    kb_path, scenes_path = corpus.write(cfg.out or "corpus")
    print(json.dumps({"kb": kb_path, "scenes": scenes_path, "kb_facts": len(corpus.kb_rows),
                      "images": len(corpus.scenes)}))
    return EXIT_OK


COMMANDS = {
    "build-graph": cmd_build_graph,
    "generate": cmd_generate,
    "execute": cmd_execute,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
    "baseline": cmd_baseline,
    "oracle": cmd_oracle,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("common options")
    g.add_argument("--config", help="JSON file of option defaults; flags win")
    g.add_argument("--kb", help="knowledge-base TSV (subject, relation, object[, provenance])")
    g.add_argument("--scenes", help="scene-graph JSON or JSON-lines document")
    g.add_argument("--bundle", help="graph bundle from build-graph (instead of --kb/--scenes)")
    g.add_argument("--templates", help="template JSON (default: bundled templates)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output path")
    g.add_argument("--ratios", type=_ratios, help="train,val,test fractions (default 0.6,0.2,0.2)")
    g.add_argument("--answer-cap", dest="answer_cap", type=int,
                   help="max KB-related questions per (qtype, answer); default 100")
    g.add_argument("--max-pairs", dest="max_pairs", type=int,
                   help="cross-product cap per query node; default 10000")
    g.add_argument("--grounded", dest="grounded", action=argparse.BooleanOptionalAction, default=None,
                   help="intersect first-order KB answers with image entities (default on)")
    g.add_argument("--max-chains", dest="max_chains", type=int, help="chains sampled per image and order")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kgvqa", description="Knowledge-graph question generation, execution and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("build-graph", parents=[common], help="ingest KB + scene graphs into a bundle")
    p = sub.add_parser("generate", parents=[common], help="generate a QA dataset")
    p.add_argument("--stats-out", help="write the stats report as JSON")
    p = sub.add_parser("execute", parents=[common], help="run a layout or re-answer a dataset")
    p.add_argument("--layout", help="layout string, e.g. '(Q_ab_I boy frisbee)'")
    p.add_argument("--image", help="image id for --layout")
    p.add_argument("--grounded-root", action="store_true", help="ground a KB root in the image (--layout only)")
    p.add_argument("--dataset", help="dataset JSONL to re-answer")
    p.add_argument("--mode", choices=("full", "query"), default="full",
                   help="full: stored layouts; query: layouts parsed back from question text")
    p = sub.add_parser("evaluate", parents=[common], help="score predictions against a dataset")
    p.add_argument("--predictions", help="predictions JSONL")
    p.add_argument("--dataset", help="gold dataset JSONL")
    p.add_argument("--split", choices=("train", "val", "test"), help="restrict gold to one split")
    p.add_argument("--method", help="row label in the rendered table")
    p = sub.add_parser("stats", parents=[common], help="dataset statistics")
    p.add_argument("--dataset")
    p = sub.add_parser("baseline", parents=[common], help="Q-type-mode baseline predictions")
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "val", "test"))
    p = sub.add_parser("oracle", parents=[common], help="executor-as-answerer predictions")
    p.add_argument("--dataset")
    p.add_argument("--split", choices=("train", "val", "test"))
    p = sub.add_parser("synth", parents=[common], help="write a synthetic KB + scene-graph corpus")
    p.add_argument("--kind", choices=("random", "constraints"), default="random")
    p.add_argument("--images", type=int)
    p.add_argument("--kb-facts", dest="kb_facts", type=int)
    return parser


_EXTRA_KEYS = ("stats_out", "layout", "image", "grounded_root", "dataset", "mode", "predictions",
               "split", "method", "kind", "images", "kb_facts")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        cfg.extra = {k: getattr(args, k) for k in _EXTRA_KEYS if hasattr(args, k)}
        cfg.check()
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"kgvqa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (TemplateError, DatasetError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
