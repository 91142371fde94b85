"""Command-line interface for the embedding exporter."""
from __future__ import annotations

import argparse
import os
import sys

from .export import ExportError, ExportJob, export_embeddings


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llm-embed-export",
        description="Export one embedding per vocab label into the provider file format.",
    )
    parser.add_argument("--entities", required=True, help="entities.tsv (id<TAB>name)")
    parser.add_argument("--relations", required=True, help="relations.tsv (id<TAB>name)")
    parser.add_argument("--out", required=True, help="output embedding file")
    parser.add_argument("--stub", action="store_true",
                        help="offline deterministic vectors instead of a backend")
    parser.add_argument("--dim", type=int, default=384, help="stub vector width")
    parser.add_argument("--endpoint", default=os.environ.get("LLM_EMBED_ENDPOINT", ""),
                        help="embedding backend URL (POST {'texts': [...]})")
    parser.add_argument("--model", default="", help="backend model identifier")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--template", default="{label}",
                        help="label template, may use {kind} and {label}")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    job = ExportJob(
        entities_path=args.entities,
        relations_path=args.relations,
        output_path=args.out,
        stub=args.stub,
        dim=args.dim,
        endpoint=args.endpoint,
        model=args.model,
        batch_size=args.batch_size,
        template=args.template,
        token=os.environ.get("LLM_EMBED_TOKEN", ""),
    )
    try:
        summary = export_embeddings(job)
    except (ExportError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"records={summary['records']} dim={summary['dim']} out={args.out}")
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
