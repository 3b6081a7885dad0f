"""Command-line entry point: ``bugscribe <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .annotation import classify_sentences, parse_labeled
from .context import build_catalog, describe_all, descriptions_to_json, localize_buggy_screen, parse_descriptions
from .errors import BugscribeError
from .evaluation import (
    aggregate,
    agreement,
    align_labels,
    evaluate_report,
    load_labels,
    parse_scorecard,
    step_table_csv,
    totals,
)
from .execution_model import TRACE_ADAPTERS, build_model, deserialize_model, serialize_model
from .gateway import MODES, Gateway
from .generation import CONFIG_PRESETS, run_pipeline
from .jsonio import atomic_write_text, pretty_json, read_json, write_json
from .report_model import parse_ground_truth, parse_markdown, parse_report, render_markdown

logger = logging.getLogger("bugscribe")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


@dataclass
class RunManifest:
    command: str
    inputs: dict[str, str] = field(default_factory=dict)
    config: dict[str, str] | None = None
    mode: str | None = None
    started: str = ""
    finished: str = ""
    exit_status: int | None = None
    warnings: list[str] = field(default_factory=list)
    live_calls: int = 0
    fixture_hits: int = 0

    def to_json(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # route usage errors through main's exit code
        self.print_usage(sys.stderr)
        raise _Usage(f"{self.prog}: error: {message}")


def _sample_dir() -> Path:
    from .data import sample_root

    return sample_root()


def _gateway(args) -> Gateway:
    return Gateway(
        mode=args.mode,
        fixtures=args.fixtures or (_sample_dir() / "fixtures"),
        templates_dir=args.templates,
        force=args.force,
    )


def _load_model(path):
    return deserialize_model(read_json(path))


# ---------------------------------------------------------------- commands


def cmd_build_model(args, manifest: RunManifest) -> None:
    adapter = TRACE_ADAPTERS[args.format]
    files = sorted(Path(args.traces).glob("*.json"))
    if not files:
        raise BugscribeError(f"no trace files in {args.traces}")
    traces = [adapter(read_json(f)) for f in files]
    app_id = args.app_id or traces[0].app_id
    model = build_model(app_id, traces)
    atomic_write_text(args.out, serialize_model(model))
    logger.info("model %s: %d screens, %d interactions", app_id, len(model.screens), len(model.interactions))


def cmd_annotate(args, manifest: RunManifest) -> None:
    gw = _gateway(args)
    try:
        labeled = classify_sentences(parse_report(read_json(args.report)), gw)
        write_json(args.out, labeled.to_json())
    finally:
        _count(manifest, gw)


def cmd_describe(args, manifest: RunManifest) -> None:
    gw = _gateway(args)
    try:
        model = _load_model(args.model)
        write_json(args.out, descriptions_to_json(model.app_id, describe_all(model, gw, args.jobs)))
    finally:
        _count(manifest, gw)


def cmd_localize(args, manifest: RunManifest) -> None:
    gw = _gateway(args)
    try:
        model = _load_model(args.model)
        labeled = parse_labeled(read_json(args.labeled))
        descriptions = parse_descriptions(read_json(args.descriptions), model)
        ranking = localize_buggy_screen(labeled, descriptions, build_catalog(model), gw)
        manifest.warnings.extend(ranking.warnings)
        write_json(args.out, ranking.to_json(labeled.report.report_id))
    finally:
        _count(manifest, gw)


def cmd_generate(args, manifest: RunManifest) -> None:
    config = CONFIG_PRESETS[args.config]
    manifest.config = config.to_json()
    gw = _gateway(args)
    try:
        report = parse_report(read_json(args.report))
        generated, trace = run_pipeline(report, _load_model(args.model), config, gw, jobs=args.jobs)
        manifest.warnings.extend(trace.warnings)
        atomic_write_text(args.out, render_markdown(generated))
        if args.trace:
            write_json(args.trace, trace.to_json())
    finally:
        _count(manifest, gw)


def cmd_evaluate(args, manifest: RunManifest) -> None:
    model = _load_model(args.model) if args.model else None
    gt = parse_ground_truth(read_json(args.ground_truth), model)
    generated = parse_markdown(Path(args.generated).read_text(encoding="utf-8"))
    gw = _gateway(args) if args.judge == "llm" else None
    try:
        card = evaluate_report(
            generated,
            gt,
            model,
            args.judge,
            assessment=read_json(args.assessment) if args.assessment else None,
            gateway=gw,
        )
        write_json(args.out, card.to_json())
    finally:
        if gw is not None:
            _count(manifest, gw)


def cmd_agree(args, manifest: RunManifest) -> None:
    a, b = align_labels(load_labels(read_json(args.a)), load_labels(read_json(args.b)))
    result = agreement(a, b)
    text = pretty_json(result.to_json())
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def write_aggregate(cards, out: Path, approach: str) -> dict[str, Any]:
    """Step-quality and element-quality CSVs with matching PNG figures."""
    from .plotting import plot_element_quality, plot_step_quality

    cards = sorted(cards, key=lambda c: c.report_id)
    rows = {approach: totals(cards)}
    table = aggregate([c.elements for c in cards])
    atomic_write_text(out / "step_quality.csv", step_table_csv(rows))
    atomic_write_text(out / "element_quality.csv", table.to_csv(approach))
    plot_step_quality(rows, out / "step_quality.png")
    if table.rows:
        plot_element_quality(table, out / "element_quality.png")
    summary = {
        "approach": approach,
        "reports": len(cards),
        "steps": dict(zip(("cs", "es", "ms"), rows[approach])),
        "elements": table.to_json(),
    }
    write_json(out / "summary.json", summary)
    return summary


def cmd_aggregate(args, manifest: RunManifest) -> None:
    cards = [parse_scorecard(read_json(p)) for p in sorted(Path(args.scorecards).glob("*.json"))]
    write_aggregate(cards, Path(args.out), args.approach)


def cmd_pipeline_all(args, manifest: RunManifest) -> None:
    data = Path(args.data) if args.data else _sample_dir()
    out = Path(args.out)
    config = CONFIG_PRESETS[args.config]
    manifest.config = config.to_json()
    if args.fixtures is None:
        args.fixtures = str(data / "fixtures")
    assessments = Path(args.assessments) if args.assessments else data / "assessments"
    gw = _gateway(args)
    models: dict[str, Any] = {}
    lock = threading.Lock()

    def model_for(app_id: str):
        with lock:
            if app_id not in models:
                models[app_id] = _load_model(data / "apps" / app_id / "model.json")
            return models[app_id]

    def one(path: Path):
        report = parse_report(read_json(path))
        model = model_for(report.app_id)
        generated, trace = run_pipeline(report, model, config, gw, jobs=1)
        markdown = render_markdown(generated)
        atomic_write_text(out / "reports" / f"{report.report_id}.md", markdown)
        write_json(out / "traces" / f"{report.report_id}.json", trace.to_json())
        gt_path = data / "apps" / report.app_id / "ground_truth" / f"{report.report_id}.json"
        if not gt_path.is_file():
            return None, trace.warnings
        gt = parse_ground_truth(read_json(gt_path), model)
        a_path = assessments / f"{report.report_id}.json"
        card = evaluate_report(
            parse_markdown(markdown),
            gt,
            model,
            args.judge,
            assessment=read_json(a_path) if args.judge == "manual-file" else None,
            gateway=gw,
        )
        write_json(out / "scorecards" / f"{report.report_id}.json", card.to_json())
        return card, trace.warnings

    paths = sorted((data / "reports").glob("*.json"))
    if not paths:
        raise BugscribeError(f"no reports under {data / 'reports'}")
    try:
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            results = list(pool.map(one, paths))
    finally:
        _count(manifest, gw)
    cards = [c for c, _ in results if c is not None]
    for _, warnings in results:
        manifest.warnings.extend(warnings)
    if cards:
        write_aggregate(cards, out, args.approach)
    logger.info("pipeline-all: %d reports, %d scored", len(paths), len(cards))


def _count(manifest: RunManifest, gw: Gateway) -> None:
    manifest.live_calls += gw.live_calls
    manifest.fixture_hits += gw.fixture_hits


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bugscribe", description="Generate and evaluate structured Android bug reports.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gw = _Parser(add_help=False)
    gw.add_argument("--mode", choices=MODES, default="replay")
    gw.add_argument("--fixtures", help="fixture root (default: bundled sample fixtures)")
    gw.add_argument("--templates", help="prompt template directory override")
    gw.add_argument("--force", action="store_true", help="re-record fixtures that already exist")
    common = _Parser(add_help=False)
    common.add_argument("--manifest", help="run manifest path (default: next to --out)")

    def add(name: str, fn: Callable, help_text: str, parents=(common,)):
        p = sub.add_parser(name, help=help_text, description=help_text, parents=list(parents))
        p.set_defaults(func=fn)
        return p

    p = add("build-model", cmd_build_model, "Build an execution model from a directory of traces.")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--app-id")
    p.add_argument("--format", choices=sorted(TRACE_ADAPTERS), default="bugscribe")

    p = add("annotate", cmd_annotate, "Label report sentences as OB, EB, S2R or OTHER.", (common, gw))
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)

    p = add("describe-screens", cmd_describe, "Describe every screen of a model.", (common, gw))
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=4)

    p = add("localize", cmd_localize, "Rank candidate buggy screens for a labeled report.", (common, gw))
    p.add_argument("--labeled", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--descriptions", required=True)
    p.add_argument("--out", required=True)

    p = add("generate", cmd_generate, "Run the full generation pipeline for one report.", (common, gw))
    p.add_argument("--report", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--config", choices=sorted(CONFIG_PRESETS), default="default")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--jobs", type=int, default=4)

    p = add("evaluate", cmd_evaluate, "Score a generated report against its ground truth.", (common, gw))
    p.add_argument("--generated", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--model")
    p.add_argument("--judge", choices=("manual-file", "llm"), default="manual-file")
    p.add_argument("--assessment")
    p.add_argument("--out", required=True)

    p = add("agree", cmd_agree, "Observed agreement, Cohen's kappa and Krippendorff's alpha for two annotators.")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")

    p = add("aggregate", cmd_aggregate, "Summarize scorecards into CSV tables and figures.")
    p.add_argument("--scorecards", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--approach", default="bugscribe")

    p = add("pipeline-all", cmd_pipeline_all, "Generate and evaluate every report in a dataset directory.", (common, gw))
    p.add_argument("--data", help="dataset root (default: bundled sample)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", choices=sorted(CONFIG_PRESETS), default="default")
    p.add_argument("--judge", choices=("manual-file", "llm"), default="manual-file")
    p.add_argument("--assessments")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--approach", default="bugscribe")
    return parser


def _manifest_path(args) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    out = getattr(args, "out", None)
    if not out:
        return None
    if args.command in ("pipeline-all", "aggregate"):
        return Path(out) / "run_manifest.json"
    return Path(out).with_name(Path(out).name + ".manifest.json")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    manifest = RunManifest(args.command, started=_now(), mode=getattr(args, "mode", None))
    for key in ("traces", "report", "model", "labeled", "descriptions", "generated", "ground_truth", "a", "b", "data", "scorecards"):
        value = getattr(args, key, None)
        if value:
            manifest.inputs[key] = str(value)
    status = EXIT_OK
    try:
        args.func(args, manifest)
    except BugscribeError as exc:
        print(f"bugscribe {args.command}: {exc}", file=sys.stderr)
        status = EXIT_DOMAIN
    except OSError as exc:
        print(f"bugscribe {args.command}: {exc}", file=sys.stderr)
        status = EXIT_DOMAIN
    except Exception:
        status = EXIT_DOMAIN
        raise
    finally:
        manifest.finished = _now()
        manifest.exit_status = status
        path = _manifest_path(args)
        if path is not None:
            try:
                write_json(path, manifest.to_json())
            except OSError as exc:
                print(f"bugscribe: could not write manifest {path}: {exc}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
