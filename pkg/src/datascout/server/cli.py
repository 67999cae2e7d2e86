"""datascout command line: harvest, analyze, report, index, query, evaluate.

Subcommands are thin wrappers over the library so that CLI output matches the
corresponding library calls exactly. Exit codes: 0 success, 1 user error,
2 internal error.

Model backends default to the deterministic offline stubs; set
DATASCOUT_CHAT_ENDPOINT / DATASCOUT_EMBED_ENDPOINT / DATASCOUT_CAPTION_ENDPOINT
to target hosted models instead.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .. import evalsuite, synthgen
from ..analyze import analyze_files, load_result, save_result
from ..harvester import (
    Harvester,
    HarvesterConfig,
    LEDGER_NAME,
    MANIFEST_NAME,
    load_manifest,
)
from ..ingest import FileEntry, load_tabular, serialize_to_csv
from ..layout import build_graph, fr_layout, layout_to_json
from ..modelgw import GatewayConfig, ModelGateway
from ..ragindex import VectorIndex, build_entry, embed_chunked, load_index, save_index
from ..reports import (
    ContentStore,
    build_file_report,
    load_file_report,
    load_record_report,
    record_report,
    save_file_report,
    save_record_report,
)

PORT_ENV = "DATASCOUT_PORT"
DEFAULT_PORT = 8080


class CliUserError(Exception):
    """Invalid input or missing file: the user can fix it (exit code 1)."""


def _gateway() -> ModelGateway:
    chat = os.environ.get("DATASCOUT_CHAT_ENDPOINT", "")
    embed = os.environ.get("DATASCOUT_EMBED_ENDPOINT", "")
    caption = os.environ.get("DATASCOUT_CAPTION_ENDPOINT", "")
    if chat or embed or caption:
        return ModelGateway.from_endpoints(
            GatewayConfig(chat_endpoint=chat, embed_endpoint=embed, caption_endpoint=caption)
        )
    return ModelGateway.with_stubs()


def _existing_path(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliUserError(f"{what} not found: {p}")
    return p


def _write_json(payload, out: str | None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ---------------------------------------------------------------------------
# Pipeline stages
# ---------------------------------------------------------------------------


def cmd_harvest(args) -> int:
    workdir = Path(args.workdir)
    if args.allow_list:
        config = HarvesterConfig.with_allow_list_file(
            _existing_path(args.allow_list, "allow-list file"),
            base_url=args.base_url,
            workdir=workdir,
        )
    else:
        config = HarvesterConfig(base_url=args.base_url, workdir=workdir)
    harvester = Harvester(config)
    records = harvester.fetch_community_records(args.community, page_size=args.page_size)
    downloaded = 0
    for record in records:
        decision = harvester.check_license(record)
        if decision.allowed and not args.skip_downloads:
            harvester.download_record_files(record, workdir / "files")
            downloaded += 1
        if args.publications:
            harvester.resolve_publication(record)
    print(
        f"harvested {len(records)} records from {args.community}; "
        f"downloaded files for {downloaded}; manifest at {workdir / MANIFEST_NAME}; "
        f"ledger at {workdir / LEDGER_NAME}"
    )
    return 0


def cmd_analyze(args) -> int:
    workdir = _existing_path(args.records, "records directory")
    manifest = load_manifest(_existing_path(workdir / MANIFEST_NAME, "community manifest"))
    gateway = _gateway()
    files_root = workdir / "files"
    analyzed = 0
    notes = []
    for record in manifest:
        record_dir = files_root / record.record_id
        if not record_dir.is_dir():
            continue
        entries = [
            FileEntry.from_path(record.record_id, p)
            for p in sorted(record_dir.iterdir())
            if p.is_file()
        ]
        results, skipped = analyze_files(entries, gateway, seed=args.seed)
        for result in results:
            save_result(result, workdir / "results" / record.record_id)
        analyzed += len(results)
        notes.extend(
            {"record_id": record.record_id, "file_id": fid, "reason": reason}
            for fid, reason in skipped
        )
    (workdir / "analyze_notes.json").write_text(
        json.dumps(notes, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"analyzed {analyzed} files; {len(notes)} skipped")
    return 0


def cmd_report(args) -> int:
    workdir = _existing_path(args.records, "records directory")
    manifest = load_manifest(_existing_path(workdir / MANIFEST_NAME, "community manifest"))
    gateway = _gateway()
    store = ContentStore(workdir / "stats")
    built = 0
    for record in manifest:
        results_dir = workdir / "results" / record.record_id
        if not results_dir.is_dir():
            continue
        results = [load_result(p) for p in sorted(results_dir.glob("*.json"))]
        if not results:
            continue
        file_reports = [build_file_report(r, gateway, store) for r in results]
        for fr in file_reports:
            save_file_report(fr, workdir / "reports", record.record_id)
        save_record_report(
            record_report(file_reports, gateway, record_id=record.record_id),
            workdir / "reports",
        )
        built += 1
    print(f"built reports for {built} records under {workdir / 'reports'}")
    return 0


def cmd_index(args) -> int:
    reports_dir = _existing_path(args.reports, "reports directory")
    gateway = _gateway()
    user_descriptions = {}
    if args.manifest:
        for record in load_manifest(_existing_path(args.manifest, "manifest")):
            user_descriptions[record.record_id] = record.user_description
    entries = []
    for record_dir in sorted(p for p in reports_dir.iterdir() if p.is_dir()):
        record_json = record_dir / "record.json"
        if not record_json.exists():
            continue
        rr = load_record_report(record_json)
        entries.append(
            build_entry(
                rr.record_id,
                rr.unified_summary,
                user_descriptions.get(rr.record_id, ""),
                gateway,
                level="record",
            )
        )
        for file_json in sorted(record_dir.glob("*.json")):
            if file_json.name == "record.json":
                continue
            fr = load_file_report(file_json)
            if fr.description:
                entries.append(build_entry(fr.file_id, fr.description, "", gateway, level="file"))
    if not entries:
        raise CliUserError(f"no reports found under {reports_dir}")
    index = VectorIndex.build(entries)
    save_index(index, args.out)
    print(f"indexed {len(entries)} entries -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Query / graph
# ---------------------------------------------------------------------------


def cmd_query(args) -> int:
    index = load_index(_existing_path(args.index, "index file"))
    ranked = index.query(args.q, args.k, _gateway(), level="record")
    print(f"{'rank':<6}{'score':<10}record_id")
    for rank, (record_id, score) in enumerate(ranked, start=1):
        print(f"{rank:<6}{score:<10.4f}{record_id}")
    return 0


def _svg_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_svg(graph_json: dict, width: int = 800, height: int = 600) -> str:
    """Static SVG of a laid-out graph (positions already in [0,1]^2)."""
    pad = 20
    sx = lambda x: pad + x * (width - 2 * pad)  # noqa: E731
    sy = lambda y: pad + y * (height - 2 * pad)  # noqa: E731
    pos = {n["id"]: (sx(n["x"]), sy(n["y"])) for n in graph_json["nodes"]}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for e in graph_json["edges"]:
        (x1, y1), (x2, y2) = pos[e["a"]], pos[e["b"]]
        parts.append(
            f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
            f'stroke="#8888aa" stroke-width="{1 + 3 * e["w"]:.2f}" opacity="0.7"/>'
        )
    for n in graph_json["nodes"]:
        x, y = pos[n["id"]]
        fill = "#d64545" if n["kind"] == "query" else "#4569d6"
        radius = 10 if n["kind"] == "query" else 6
        parts.append(
            f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{radius}" fill="{fill}">'
            f"<title>{_svg_escape(n['id'])}</title></circle>"
        )
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_graph(args) -> int:
    index = load_index(_existing_path(args.index, "index file"))
    gateway = _gateway()
    query_vector = embed_chunked(args.q, gateway) if args.q else None
    graph = build_graph(index, query_vector=query_vector, query_top_k=args.k)
    graph_json = layout_to_json(graph, fr_layout(graph, seed=args.seed))
    Path(args.svg).parent.mkdir(parents=True, exist_ok=True)
    Path(args.svg).write_text(render_svg(graph_json), encoding="utf-8")
    if args.json_out:
        _write_json(graph_json, args.json_out)
    print(f"graph with {len(graph_json['nodes'])} nodes -> {args.svg}")
    return 0


# ---------------------------------------------------------------------------
# Evaluations
# ---------------------------------------------------------------------------


def cmd_eval_retrieval(args) -> int:
    index = load_index(_existing_path(args.index, "index file"))
    raw = json.loads(_existing_path(args.questions, "questions file").read_text(encoding="utf-8"))
    questions = [
        evalsuite.RetrievalQuestion(q["question_text"], q["source_record_id"]) for q in raw
    ]
    metrics = evalsuite.retrieval_experiment(questions, index, _gateway())
    payload = {
        "metrics": metrics.to_dict(),
        "entropy_curve": evalsuite.entropy_hit_curve(metrics),
    }
    _write_json(payload, args.out)
    return 0


def cmd_eval_redundancy(args) -> int:
    pairs = json.loads(_existing_path(args.pairs, "pairs file").read_text(encoding="utf-8"))
    result = evalsuite.redundancy_similarities([tuple(p) for p in pairs], _gateway())
    _write_json(
        {
            "values": result.values,
            "skipped": result.skipped,
            "histogram_counts": result.histogram_counts,
            "bin_edges": result.bin_edges,
        },
        args.out,
    )
    return 0


def cmd_eval_lengths(args) -> int:
    reports_dir = _existing_path(args.reports, "reports directory")
    generated = [
        load_record_report(p).unified_summary for p in sorted(reports_dir.glob("*/record.json"))
    ]
    originals = []
    if args.manifest:
        originals = [
            r.user_description
            for r in load_manifest(_existing_path(args.manifest, "manifest"))
            if r.user_description
        ]
    stats = evalsuite.description_length_stats(generated, originals)
    _write_json(stats.to_dict(), args.out)
    return 0


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    task_path = _existing_path(args.task, "task file")
    spec = json.loads(task_path.read_text(encoding="utf-8"))
    source = _existing_path(spec["source_csv"], "source csv")
    table = load_tabular(source)
    n = int(spec.get("n_samples", 100))
    seed = int(spec.get("seed", 42))
    mode = spec.get("mode", "kde")
    output = Path(spec["output_path"])
    if mode == "kde":
        synthetic = synthgen.kde_sampler(synthgen.column_samplers(table), n, seed=seed)
    elif mode == "examples":
        examples = synthgen.examples_only_sampler  # resamples the 5 example rows
        head = table.rows()[: synthgen.EXAMPLE_ROWS]
        from ..ingest import CanonicalTable, TableColumn

        example_table = CanonicalTable(
            columns=[
                TableColumn(c.name, c.kind, [row[i] for row in head])
                for i, c in enumerate(table.columns)
            ],
            row_count=len(head),
        )
        synthetic = examples(example_table, n, seed=seed)
    elif mode == "agent":
        task = synthgen.GenerationTask(
            subject=spec.get("subject", source.stem),
            examples=synthgen.render_example_rows(table),
            output_path=str(output),
            metadata_stats=spec.get("metadata_stats"),
            n_samples=n,
        )
        scratch = output.parent / "sandbox"
        synthgen.run_generation_agent(task, _gateway(), synthgen.SandboxExecutor(), scratch)
        print(f"agent wrote {output}")
        return 0
    else:
        raise CliUserError(f"unknown synth mode {mode!r}")
    output.parent.mkdir(parents=True, exist_ok=True)
    serialize_to_csv(synthetic, output)
    print(f"wrote {n} synthetic rows -> {output}")
    return 0


# ---------------------------------------------------------------------------
# Serving
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    import uvicorn

    from .app import create_app, load_state

    state = load_state(
        index_path=args.index,
        reports_dir=args.reports,
        manifest_path=args.manifest,
        gateway=_gateway(),
    )
    port = args.port or int(os.environ.get(PORT_ENV, DEFAULT_PORT))
    uvicorn.run(create_app(state), host=args.host, port=port)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datascout", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("harvest", help="list community records and download allowed files")
    p.add_argument("--community", required=True)
    p.add_argument("--workdir", default="datascout_workdir")
    p.add_argument("--base-url", default=HarvesterConfig.base_url)
    p.add_argument("--allow-list", help="license allow-list file, one id per line")
    p.add_argument("--page-size", type=int, default=25)
    p.add_argument("--skip-downloads", action="store_true")
    p.add_argument("--publications", action="store_true", help="also resolve linked publications")
    p.set_defaults(func=cmd_harvest)

    p = sub.add_parser("analyze", help="run modality analyzers over harvested files")
    p.add_argument("--records", required=True, help="harvest workdir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="generate file- and record-level reports")
    p.add_argument("--records", required=True, help="harvest workdir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("index", help="build the vector index from reports")
    p.add_argument("--reports", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="manifest supplying original user descriptions")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="query the index")
    p.add_argument("--index", required=True)
    p.add_argument("--q", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("graph", help="export the similarity graph as SVG")
    p.add_argument("--index", required=True)
    p.add_argument("--q", default="")
    p.add_argument("--svg", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json-out", help="also write the graph JSON")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("eval-retrieval", help="top-k accuracy and entropy over questions")
    p.add_argument("--index", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-redundancy", help="description-vs-paper similarity distribution")
    p.add_argument("--pairs", required=True, help="JSON list of [description, paper_text] pairs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_redundancy)

    p = sub.add_parser("eval-lengths", help="description length statistics")
    p.add_argument("--reports", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_lengths)

    p = sub.add_parser("synth", help="generate synthetic tabular data")
    p.add_argument("--task", required=True, help="JSON task description")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="serve the JSON API")
    p.add_argument("--index", required=True)
    p.add_argument("--reports")
    p.add_argument("--manifest")
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints usage itself; re-map its exit code 2 to "user error".
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except CliUserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
