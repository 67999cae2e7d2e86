"""End-to-end drive of the installed CLI and live HTTP service.

Starts a canned community server, runs the real `datascout` console script
through the whole pipeline, then queries a live `datascout serve` instance
over a socket. Exits non-zero on any failure. Used by manual verification;
the pytest suite covers the same paths in-process.
"""

from __future__ import annotations

import json
import subprocess
import sys
import time
import urllib.request
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))  # tests/ for conftest

from conftest import FixtureHTTPServer, community_routes  # noqa: E402


def run(*argv):
    proc = subprocess.run(["datascout", *argv], capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemExit(f"command failed: datascout {' '.join(argv)}\n{proc.stderr}")
    return proc.stdout


def get_json(url, payload=None):
    if payload is not None:
        req = urllib.request.Request(
            url, data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json"},
        )
    else:
        req = url
    with urllib.request.urlopen(req, timeout=10) as resp:
        return json.loads(resp.read().decode())


def main() -> int:
    workdir = Path("e2e_workdir").absolute()
    routes = community_routes()
    with FixtureHTTPServer(routes) as server:
        server.routes = {
            p: (b.replace(b"__BASE__", server.base_url.encode()) if isinstance(b, bytes) else b)
            for p, b in routes.items()
        }
        base = server.base_url + "/api"
        run("harvest", "--community", "fixture-comm", "--workdir", str(workdir),
            "--base-url", base)
        assert not (workdir / "files" / "rec-locked").exists(), "governance leak"
        run("analyze", "--records", str(workdir))
        run("report", "--records", str(workdir))
        run("index", "--reports", str(workdir / "reports"),
            "--out", str(workdir / "index.dsix"),
            "--manifest", str(workdir / "community_manifest.json"))

        out = run("query", "--index", str(workdir / "index.dsix"),
                  "--q", "copper catalyst degradation currents", "--k", "3")
        assert "rec-copper" in out.splitlines()[1], out

        run("graph", "--index", str(workdir / "index.dsix"), "--q", "catalyst",
            "--svg", str(workdir / "graph.svg"))
        assert (workdir / "graph.svg").read_text().startswith("<svg")

        task = {
            "subject": "flowers",
            "source_csv": str(workdir / "files" / "rec-flowers" / "iris.csv"),
            "output_path": str(workdir / "synthetic.csv"),
            "n_samples": 50,
            "mode": "kde",
        }
        (workdir / "task.json").write_text(json.dumps(task))
        run("synth", "--task", str(workdir / "task.json"))
        assert (workdir / "synthetic.csv").exists()

        port = 8765
        serve = subprocess.Popen(
            ["datascout", "serve", "--index", str(workdir / "index.dsix"),
             "--reports", str(workdir / "reports"),
             "--manifest", str(workdir / "community_manifest.json"),
             "--port", str(port)],
            stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
        )
        try:
            api = f"http://127.0.0.1:{port}"
            for _ in range(50):
                try:
                    health = get_json(api + "/health")
                    break
                except Exception:
                    time.sleep(0.2)
            else:
                raise SystemExit("server never came up")
            assert health["status"] == "ok", health

            records = get_json(api + "/records")
            assert {r["record_id"] for r in records} == {"rec-flowers", "rec-copper", "rec-cars"}

            result = get_json(api + "/query",
                              {"q": "copper catalyst degradation currents", "k": 3})
            assert result["results"][0]["record_id"] == "rec-copper", result["results"]
            assert any(n["kind"] == "query" for n in result["graph"]["nodes"])

            report = get_json(api + f"/records/rec-copper/report")
            assert report["record"]["record_id"] == "rec-copper"
            assert report["files"][0]["description"]
        finally:
            serve.terminate()
            serve.wait(timeout=10)
    print("E2E DRIVE: PASS (harvest -> analyze -> report -> index -> query/graph/synth -> live serve)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
