from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from datascout.modelgw import GatewayConfig, ModelGateway

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def gateway() -> ModelGateway:
    return ModelGateway.with_stubs()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def iris_csv() -> Path:
    return FIXTURES / "iris_fixture.csv"


@pytest.fixture
def cars_csv() -> Path:
    return FIXTURES / "cars_fixture.csv"


class ScriptedChat:
    """Chat backend replaying canned replies in order (repeats the last)."""

    def __init__(self, replies: list[str]) -> None:
        self.replies = replies
        self.calls: list[str] = []

    def __call__(self, prompt: str, **_params) -> str:
        self.calls.append(prompt)
        i = min(len(self.calls) - 1, len(self.replies) - 1)
        return self.replies[i]


def scripted_gateway(replies: list[str], **config_kwargs) -> ModelGateway:
    from datascout.modelgw import StubCaptionBackend, StubEmbedBackend

    config = GatewayConfig(**config_kwargs)
    return ModelGateway(
        config=config,
        chat_backend=ScriptedChat(replies),
        embed_backend=StubEmbedBackend(dims=config.embed_dims),
        caption_backend=StubCaptionBackend(),
    )


# ---------------------------------------------------------------------------
# Local HTTP fixture server (for CLI harvest and end-to-end runs)
# ---------------------------------------------------------------------------


class FixtureHTTPServer:
    """Serves canned bytes keyed by full request path (including query)."""

    def __init__(self, routes: dict[str, bytes | tuple[int, bytes]]):
        self.routes = routes
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                entry = outer.routes.get(self.path)
                if entry is None:
                    self.send_response(404)
                    self.end_headers()
                    self.wfile.write(b"not found")
                    return
                status, body = entry if isinstance(entry, tuple) else (200, entry)
                self.send_response(status)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *_args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


def community_routes(base_path: str = "/api") -> dict[str, bytes]:
    """Three-record fixture community: two tabular/text records with open
    licenses across two pages plus one record with a disallowed license."""

    def file_blob(record_id, name, body):
        return {
            "key": name,
            "size": len(body),
            "checksum": "md5:" + hashlib.md5(body).hexdigest(),
            "links": {"self": f"__BASE__/files/{record_id}/{name}"},
        }

    iris_head = (FIXTURES / "iris_fixture.csv").read_bytes()
    notes = (
        b"Copper catalyst films degrade under pulsed electrolysis. "
        b"Current transients were recorded hourly. Gas products were traced."
    )
    cars_head = (FIXTURES / "cars_fixture.csv").read_bytes()

    page1 = {
        "hits": [
            {
                "id": "rec-flowers",
                "title": "Flower morphology table",
                "created": "2024-05-01T00:00:00Z",
                "doi": None,
                "metadata": {
                    "description": "Measurements of flower sepals and petals by species.",
                    "license": {"id": "cc-by-4.0"},
                },
                "files": [file_blob("rec-flowers", "iris.csv", iris_head)],
            },
            {
                "id": "rec-copper",
                "title": "Copper electrolysis notes",
                "created": "2024-05-02T00:00:00Z",
                "doi": None,
                "metadata": {
                    "description": "Notes on copper catalyst degradation currents.",
                    "license": {"id": "cc0-1.0"},
                },
                "files": [file_blob("rec-copper", "notes.txt", notes)],
            },
        ],
        "links": {"next": "__BASE__" + base_path + "/communities/fixture-comm/records?page=2&size=25"},
    }
    page2 = {
        "hits": [
            {
                "id": "rec-locked",
                "title": "Proprietary calibration data",
                "created": "2024-05-03T00:00:00Z",
                "doi": None,
                "metadata": {
                    "description": "Calibration data under a restrictive license.",
                    "license": {"id": "proprietary-x"},
                },
                "files": [file_blob("rec-locked", "secret.csv", b"a,b\n1,2\n")],
            },
            {
                "id": "rec-cars",
                "title": "Car dimensions and prices",
                "created": "2024-05-04T00:00:00Z",
                "doi": None,
                "metadata": {
                    "description": "Widths, lengths, years and prices of cars.",
                    "license": {"id": "cc-by-4.0"},
                },
                "files": [file_blob("rec-cars", "cars.csv", cars_head)],
            },
        ]
    }
    return {
        base_path + "/communities/fixture-comm/records?page=1&size=25": json.dumps(page1).encode(),
        base_path + "/communities/fixture-comm/records?page=2&size=25": json.dumps(page2).encode(),
        "/files/rec-flowers/iris.csv": iris_head,
        "/files/rec-copper/notes.txt": notes,
        "/files/rec-locked/secret.csv": b"a,b\n1,2\n",
        "/files/rec-cars/cars.csv": cars_head,
    }


@pytest.fixture
def fixture_community_server():
    routes = community_routes()
    with FixtureHTTPServer(routes) as server:
        # substitute the real base URL into the canned payloads
        server.routes = {
            path: (body.replace(b"__BASE__", server.base_url.encode())
                   if isinstance(body, bytes) else body)
            for path, body in routes.items()
        }
        yield server


# ---------------------------------------------------------------------------
# Mini pipeline workspace built through library calls
# ---------------------------------------------------------------------------


def build_mini_workspace(root: Path, gateway: ModelGateway) -> dict:
    """Three-record workspace: manifest, analyzer results, reports, index."""
    from datascout.analyze import analyze_file, save_result
    from datascout.harvester import FileRef, RecordMeta
    from datascout.ingest import FileEntry
    from datascout.ragindex import VectorIndex, build_entry, save_index
    from datascout.reports import (
        ContentStore,
        build_file_report,
        record_report,
        save_file_report,
        save_record_report,
    )

    root.mkdir(parents=True, exist_ok=True)
    files_root = root / "files"
    # shared boilerplate gives the records enough lexical overlap to form
    # record-record graph edges at the default 0.5 similarity threshold
    shared = "Catalysis experiment data from the shared laboratory archive. "
    texts = {
        "rec-copper": (
            "notes.txt",
            shared + "Copper catalyst films degrade under pulsed electrolysis. "
            "Current transients were recorded hourly. Gas products were traced.",
        ),
        "rec-diesel": (
            "memo.txt",
            shared + "Life cycle inventories cover diesel synthesis from hydrogen. "
            "Direct air capture supplies carbon. Emissions were compared per pathway.",
        ),
        "rec-xray": (
            "log.txt",
            shared + "X-ray diffraction patterns of strontium iron oxide were measured. "
            "Thermal cycling altered the lattice. Oxygen storage capacity fell.",
        ),
    }
    records = []
    for record_id, (name, body) in texts.items():
        rec_dir = files_root / record_id
        rec_dir.mkdir(parents=True, exist_ok=True)
        (rec_dir / name).write_text(body)
        records.append(
            RecordMeta(
                record_id=record_id,
                title=record_id.replace("rec-", "").title() + " dataset",
                user_description=f"User notes about the {record_id} upload.",
                doi=None,
                license_id="cc-by-4.0",
                created_at="2024-05-01T00:00:00Z",
                files=[FileRef(name=name, size=len(body), url="http://x/" + name, checksum="")],
                community_id="mini",
            )
        )
    manifest = {
        "community_id": "mini",
        "record_count": len(records),
        "records": [r.to_dict() for r in sorted(records, key=lambda r: r.record_id)],
    }
    (root / "community_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    store = ContentStore(root / "stats")
    entries = []
    for record_id, (name, _body) in texts.items():
        entry = FileEntry.from_path(record_id, files_root / record_id / name)
        result = analyze_file(entry, gateway)
        save_result(result, root / "results" / record_id)
        fr = build_file_report(result, gateway, store)
        save_file_report(fr, root / "reports", record_id)
        rr = record_report([fr], gateway, record_id=record_id, now="2026-01-01T00:00:00+00:00")
        save_record_report(rr, root / "reports")
        entries.append(build_entry(record_id, rr.unified_summary,
                                   f"User notes about the {record_id} upload.", gateway))
        entries.append(build_entry(fr.file_id, fr.description, "", gateway, level="file"))
    index = VectorIndex.build(entries, built_at="2026-01-01T00:00:00+00:00")
    index_path = save_index(index, root / "index.dsix")
    return {
        "root": root,
        "index_path": index_path,
        "reports_dir": root / "reports",
        "manifest_path": root / "community_manifest.json",
        "record_ids": sorted(texts),
        "texts": texts,
    }


@pytest.fixture
def mini_workspace(tmp_path, gateway):
    return build_mini_workspace(tmp_path / "ws", gateway)
