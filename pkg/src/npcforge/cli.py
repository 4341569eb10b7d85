"""Command line entry point.

    npcforge eval    score a corpus through the pipeline
    npcforge chat    talk to an NPC on stdin/stdout
    npcforge serve   run the HTTP service for the playground
    npcforge index   build a retrieval index from a corpus
    npcforge datagen synthesize corpus instances with a backend
    npcforge stats   print corpus composition counts

Every command takes --config <json> whose keys mirror RunConfig; flags
override the file. Typed errors exit nonzero with one line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Any, Sequence

from . import gateway, memory
from .corpus import (
    Corpus,
    GenerationKind,
    GenerationSpec,
    corpus_stats,
    generate_instances,
    load_corpus,
    save_corpus,
)
from .errors import NpcForgeError
from .metrics import DISPLAY_NAMES, EvalReport
from .runner import (
    BACKEND_CHOICES,
    RunConfig,
    chat_backend,
    config_from_file,
    index_from_corpus,
    load_registries,
    registry_for,
    run_chat,
    run_eval,
)
from .world import load_world


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with RunConfig fields")
    parser.add_argument("--world", dest="world_file")
    parser.add_argument("--corpus", dest="corpus_file")
    parser.add_argument(
        "--registry",
        dest="registry_files",
        action="append",
        help="registry file; repeat for more roles",
    )
    parser.add_argument("--track", choices=("api", "gpu"))
    parser.add_argument(
        "--strategies",
        help="comma-separated strategy names, e.g. 'D,RW,F'; empty string for none",
    )
    parser.add_argument("--backend", choices=BACKEND_CHOICES)
    parser.add_argument("--mock-script", dest="mock_script")
    parser.add_argument("--model")
    parser.add_argument("--npc", dest="npc_id")
    parser.add_argument("--scene")
    parser.add_argument("--index", dest="index_file")
    parser.add_argument("--embed-dim", dest="embed_dim", type=int)
    parser.add_argument("--retrieval-k", dest="retrieval_k", type=int)
    parser.add_argument("--retrieval-min-sim", dest="retrieval_min_sim", type=float)
    parser.add_argument("--refine", action="store_true", default=None)
    parser.add_argument("--refine-threshold", dest="refine_threshold", type=float)
    parser.add_argument("--history-window", dest="history_window", type=int)
    parser.add_argument("--max-output-tokens", dest="max_output_tokens", type=int)
    parser.add_argument("--template-dir", dest="template_dir")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--weights", dest="weights_file")
    parser.add_argument("--report-out", dest="report_out")
    parser.add_argument("--transcript-out", dest="transcript_out")
    parser.add_argument("--event-log", dest="event_log")
    parser.add_argument("--verbose", action="store_true", default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config = config_from_file(args.config) if args.config else RunConfig()
    overrides: dict[str, Any] = {}
    for field in dataclasses.fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is None:
            continue
        if field.name == "registry_files":
            value = tuple(value)
        if field.name == "strategies":
            value = tuple(s for s in (part.strip() for part in value.split(",")) if s)
        overrides[field.name] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def _print_report(report: EvalReport, out=None) -> None:
    out = out if out is not None else sys.stdout
    rows: list[tuple[str, float]] = []
    for key, value in report.corpus.items():
        rows.append((DISPLAY_NAMES.get(key, key), value))
    rows.append(("Aggregate", report.aggregate))
    width = max(len(name) for name, _ in rows)
    out.write(f"{'Metric'.ljust(width)}  Score\n")
    out.write(f"{'-' * width}  -----\n")
    for name, value in rows:
        out.write(f"{name.ljust(width)}  {value:.3f}\n")


def cmd_eval(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    report = run_eval(config)
    _print_report(report)
    if config.report_out:
        sys.stdout.write(f"report written to {config.report_out}\n")
    return 0


def _interactive_config(args: argparse.Namespace) -> RunConfig:
    """Chat and serve default to the looping mock script, not eval backends."""
    config = _resolve_config(args)
    if args.backend is None and (args.config is None or config.backend == "mock-gold"):
        config = dataclasses.replace(config, backend="mock")
    return config


def cmd_chat(args: argparse.Namespace) -> int:
    config = _interactive_config(args)
    run_chat(config, sys.stdin, sys.stdout)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import ServiceSettings, serve

    config = _interactive_config(args)
    settings = ServiceSettings.from_run_config(
        config, persist_dir=args.persist_dir, static_dir=args.static_dir
    )
    serve(settings, host=args.host, port=args.port)
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    corpus = load_corpus(config.corpus_file)
    provider = memory.HashEmbeddingProvider(dim=config.embed_dim)
    index = index_from_corpus(corpus, provider, source=Path(config.corpus_file).name)
    memory.save_index(index, args.out)
    sys.stdout.write(f"indexed {len(index)} interactions into {args.out}\n")
    return 0


def cmd_datagen(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    world = load_world(config.world_file)
    registries = load_registries(config.registry_files)
    npc = world.npc(config.npc_id)
    scene = world.scene(config.scene)
    kind = GenerationKind.parse(args.kind)
    spec = GenerationSpec(kind=kind, count=args.count, npc=npc, world=scene)
    backend = chat_backend(config)
    registry = registry_for(npc, registries)
    instances = generate_instances(
        spec,
        backend,
        registry=registry if kind is GenerationKind.FUNCTION_CALLING else None,
        knowledge=world.npc_knowledge(npc),
        profile=gateway.profile_for(config.track),
        template_dir=config.template_dir,
    )
    task = 1 if kind is GenerationKind.FUNCTION_CALLING else 2
    save_corpus(Corpus(task=task, instances=tuple(instances)), args.out)
    sys.stdout.write(f"wrote {len(instances)} instances to {args.out}\n")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    stats = corpus_stats(load_corpus(config.corpus_file))
    text = json.dumps(stats, indent=2, ensure_ascii=False, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        sys.stdout.write(f"stats written to {args.out}\n")
    else:
        sys.stdout.write(text + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="npcforge", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="score a corpus through the pipeline")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_chat = sub.add_parser("chat", help="interactive NPC chat on stdin/stdout")
    _add_config_flags(p_chat)
    p_chat.set_defaults(func=cmd_chat)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    _add_config_flags(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--persist-dir", dest="persist_dir")
    p_serve.add_argument("--static-dir", dest="static_dir")
    p_serve.set_defaults(func=cmd_serve)

    p_index = sub.add_parser("index", help="build a retrieval index from a corpus")
    _add_config_flags(p_index)
    p_index.add_argument("--out", required=True)
    p_index.set_defaults(func=cmd_index)

    p_datagen = sub.add_parser("datagen", help="synthesize corpus instances")
    _add_config_flags(p_datagen)
    p_datagen.add_argument(
        "--kind",
        required=True,
        choices=[k.value for k in GenerationKind],
    )
    p_datagen.add_argument("--count", type=int, default=5)
    p_datagen.add_argument("--out", required=True)
    p_datagen.set_defaults(func=cmd_datagen)

    p_stats = sub.add_parser("stats", help="print corpus composition counts")
    _add_config_flags(p_stats)
    p_stats.add_argument("--out")
    p_stats.set_defaults(func=cmd_stats)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NpcForgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
