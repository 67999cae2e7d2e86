"""Community harvesting: record listing, governed downloads, publication lookup.

Every record passes a license governance check before any of its files may be
downloaded; decisions are appended to a JSON-lines ledger. Linked open-access
publications are resolved first through a lookup service and then, when that
yields nothing usable, by scanning the DOI landing page for publication meta
tags.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from html.parser import HTMLParser
from pathlib import Path
from typing import Optional, Sequence

import requests

from .ingest import FileEntry

logger = logging.getLogger(__name__)

REPO_TOKEN_ENV = "DATASCOUT_REPO_TOKEN"
MANIFEST_NAME = "community_manifest.json"
LEDGER_NAME = "governance.jsonl"

# Publication-link meta tags, scanned in this fixed priority order.
PUBLICATION_META_TAGS = ("citation_pdf_url", "citation_fulltext_html_url")

# Permissive open licenses accepted by default; override via config.
DEFAULT_ALLOW_LIST = frozenset({
    "cc0-1.0",
    "cc-by-1.0",
    "cc-by-2.0",
    "cc-by-3.0",
    "cc-by-4.0",
    "cc-by-sa-4.0",
    "mit",
    "apache-2.0",
    "bsd-2-clause",
    "bsd-3-clause",
})

DOWNLOAD_ATTEMPTS = 3
BACKOFF_START_S = 1.0


class HarvesterError(Exception):
    pass


class AuthError(HarvesterError):
    pass


class TransportError(HarvesterError):
    """Retryable transport failure (connection error or 5xx)."""


class MalformedResponseError(HarvesterError):
    """Non-retryable bad payload; the offending payload is saved to disk."""


class ChecksumMismatchError(HarvesterError):
    pass


class GovernanceViolation(HarvesterError):
    pass


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass
class FileRef:
    name: str
    size: int
    url: str
    checksum: str

    def to_dict(self) -> dict:
        return {"name": self.name, "size": self.size, "url": self.url, "checksum": self.checksum}


@dataclass
class RecordMeta:
    record_id: str
    title: str
    user_description: str
    doi: Optional[str]
    license_id: Optional[str]
    created_at: str
    files: list[FileRef]
    community_id: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "title": self.title,
            "user_description": self.user_description,
            "doi": self.doi,
            "license_id": self.license_id,
            "created_at": self.created_at,
            "files": [f.to_dict() for f in self.files],
            "community_id": self.community_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecordMeta":
        return cls(
            record_id=data["record_id"],
            title=data.get("title", ""),
            user_description=data.get("user_description", ""),
            doi=data.get("doi"),
            license_id=data.get("license_id"),
            created_at=data.get("created_at", ""),
            files=[FileRef(**f) for f in data.get("files", [])],
            community_id=data.get("community_id", ""),
        )


@dataclass
class GovernanceDecision:
    record_id: str
    allowed: bool
    reason: str


@dataclass
class PublicationRef:
    record_id: str
    source: str  # "open-access-lookup" | "html-meta" | "none"
    url: Optional[str] = None
    local_path: Optional[str] = None


@dataclass
class HarvesterConfig:
    base_url: str = "https://zenodo.org/api"
    oa_lookup_base: str = "https://api.unpaywall.org"
    doi_resolver_base: str = "https://doi.org"
    contact_email: str = "datascout@example.org"
    token: str = field(default_factory=lambda: os.environ.get(REPO_TOKEN_ENV, ""))
    allow_list: frozenset[str] = DEFAULT_ALLOW_LIST
    workdir: Path = Path("datascout_workdir")
    page_size: int = 25

    @classmethod
    def with_allow_list_file(cls, path: str | Path, **kwargs) -> "HarvesterConfig":
        """Allow-list from a text file, one license id per line, '#' comments."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        ids = {ln.strip().lower() for ln in lines if ln.strip() and not ln.startswith("#")}
        return cls(allow_list=frozenset(ids), **kwargs)


class RequestsTransport:
    """Thin requests wrapper so tests can substitute canned responses."""

    def __init__(self, timeout: float = 60.0) -> None:
        self._session = requests.Session()
        self.timeout = timeout

    def get(self, url: str, headers: Optional[dict] = None):
        try:
            return self._session.get(url, headers=headers or {}, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc


class _MetaTagCollector(HTMLParser):
    def __init__(self) -> None:
        super().__init__()
        self.meta: dict[str, str] = {}

    def handle_starttag(self, tag, attrs) -> None:
        if tag.lower() != "meta":
            return
        d = dict(attrs)
        name = (d.get("name") or "").lower()
        content = d.get("content")
        if name and content and name not in self.meta:
            self.meta[name] = content


def _verify_checksum(data: bytes, checksum: str) -> bool:
    """Check 'algo:hex' (or bare md5 hex) checksums; empty checksum passes."""
    if not checksum:
        return True
    algo, _, digest = checksum.partition(":")
    if not digest:
        algo, digest = "md5", algo
    algo = algo.lower()
    if algo not in hashlib.algorithms_available:
        logger.warning("unknown checksum algorithm %r, skipping verification", algo)
        return True
    return hashlib.new(algo, data).hexdigest() == digest.lower()


class Harvester:
    """Stateful harvesting client for one repository deployment.

    Thread-safety: manifest and ledger writes are serialized through locks;
    operations targeting distinct records may run concurrently.
    """

    def __init__(
        self,
        config: Optional[HarvesterConfig] = None,
        transport=None,
        sleep=time.sleep,
    ) -> None:
        self.config = config or HarvesterConfig()
        self.transport = transport or RequestsTransport()
        self._sleep = sleep
        self._decisions: dict[str, GovernanceDecision] = {}
        self._ledger_lock = threading.Lock()
        self._manifest_lock = threading.Lock()
        Path(self.config.workdir).mkdir(parents=True, exist_ok=True)

    # -- transport helpers ---------------------------------------------------

    def _headers(self) -> dict:
        return {"Authorization": f"Bearer {self.config.token}"} if self.config.token else {}

    def _get_with_retry(self, url: str):
        last: Exception | None = None
        for attempt in range(DOWNLOAD_ATTEMPTS):
            try:
                resp = self.transport.get(url, headers=self._headers())
            except TransportError as exc:
                last = exc
                if attempt + 1 < DOWNLOAD_ATTEMPTS:
                    self._sleep(BACKOFF_START_S * (2 ** attempt))
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"token rejected by {url} ({resp.status_code})")
            if resp.status_code >= 500:
                last = TransportError(f"{url} returned {resp.status_code}")
                if attempt + 1 < DOWNLOAD_ATTEMPTS:
                    self._sleep(BACKOFF_START_S * (2 ** attempt))
                continue
            return resp
        raise TransportError(f"{url}: retries exhausted ({last})")

    def _dump_malformed(self, payload: bytes, tag: str) -> Path:
        path = Path(self.config.workdir) / f"malformed_{tag}.json"
        path.write_bytes(payload)
        return path

    # -- record listing -------------------------------------------------------

    def _parse_hit(self, hit: dict, community_id: str) -> RecordMeta:
        record_id = str(hit.get("id", "")).strip()
        if not record_id:
            raise KeyError("record id missing")
        metadata = hit.get("metadata") or {}
        license_id = (metadata.get("license") or {}).get("id")
        files = []
        for f in hit.get("files") or []:
            name = f.get("key", "")
            url = (f.get("links") or {}).get("self", "")
            if not name or not url:
                raise KeyError(f"file entry of record {record_id} lacks name or URL")
            files.append(
                FileRef(
                    name=name,
                    size=int(f.get("size", 0) or 0),
                    url=url,
                    checksum=str(f.get("checksum", "") or ""),
                )
            )
        return RecordMeta(
            record_id=record_id,
            title=hit.get("title", "") or "",
            user_description=str(metadata.get("description", "") or ""),
            doi=hit.get("doi") or None,
            license_id=license_id,
            created_at=str(hit.get("created", "") or ""),
            files=files,
            community_id=community_id,
        )

    def fetch_community_records(
        self, community_id: str, page_size: Optional[int] = None
    ) -> list[RecordMeta]:
        """List all records of a community, following pagination links.

        Pages are merged, records deduplicated by id (first page wins), the
        result ordered by record_id, and the manifest persisted to the
        workdir. Re-running over an unchanged community yields a byte-identical
        manifest.
        """
        size = page_size or self.config.page_size
        if size < 1:
            raise ValueError("page_size must be positive")
        url = f"{self.config.base_url}/communities/{community_id}/records?page=1&size={size}"
        records: dict[str, RecordMeta] = {}
        page = 1
        while url:
            resp = self._get_with_retry(url)
            if resp.status_code != 200:
                path = self._dump_malformed(resp.content, f"{community_id}_p{page}")
                raise MalformedResponseError(
                    f"{url} returned {resp.status_code}; payload saved to {path}"
                )
            try:
                data = resp.json()
                hits = data["hits"]
                if isinstance(hits, dict):  # tolerate the nested hits.hits shape
                    hits = hits["hits"]
                parsed = [self._parse_hit(h, community_id) for h in hits]
            except (ValueError, KeyError, TypeError) as exc:
                path = self._dump_malformed(resp.content, f"{community_id}_p{page}")
                raise MalformedResponseError(
                    f"cannot parse page {page} of {community_id}: {exc}; payload saved to {path}"
                ) from exc
            for record in parsed:
                records.setdefault(record.record_id, record)
            url = (data.get("links") or {}).get("next")
            page += 1
        ordered = sorted(records.values(), key=lambda r: r.record_id)
        self._write_manifest(community_id, ordered)
        return ordered

    def _write_manifest(self, community_id: str, records: Sequence[RecordMeta]) -> Path:
        manifest = {
            "community_id": community_id,
            "record_count": len(records),
            "records": [r.to_dict() for r in records],
        }
        path = Path(self.config.workdir) / MANIFEST_NAME
        with self._manifest_lock:
            fd, tmp = tempfile.mkstemp(dir=self.config.workdir, prefix=".manifest-")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(manifest, fh, indent=2, sort_keys=True)
                    fh.write("\n")
                os.replace(tmp, path)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return path

    # -- governance -----------------------------------------------------------

    def check_license(
        self, record: RecordMeta, allow_list: Optional[Sequence[str]] = None
    ) -> GovernanceDecision:
        """License gate: allowed iff the record's license is in the allow-list.

        The decision (either way) is appended to the governance ledger.
        Absence of a license is a negative decision, not an error.
        """
        allowed_ids = {a.lower() for a in (allow_list if allow_list is not None else self.config.allow_list)}
        if not record.license_id:
            decision = GovernanceDecision(record.record_id, False, "missing license")
        elif record.license_id.lower() in allowed_ids:
            decision = GovernanceDecision(
                record.record_id, True, f"license {record.license_id} allowed"
            )
        else:
            decision = GovernanceDecision(
                record.record_id, False, f"license {record.license_id} not in allow-list"
            )
        self._decisions[record.record_id] = decision
        self._append_ledger(decision)
        return decision

    def _append_ledger(self, decision: GovernanceDecision) -> None:
        entry = {
            "record_id": decision.record_id,
            "allowed": decision.allowed,
            "reason": decision.reason,
            "at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        path = Path(self.config.workdir) / LEDGER_NAME
        with self._ledger_lock:
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")

    # -- downloads --------------------------------------------------------------

    def download_record_files(
        self, record: RecordMeta, dest_dir: str | Path, max_parallel: int = 4
    ) -> list[FileEntry]:
        """Download a record's files under dest_dir/record_id/.

        Requires a prior positive governance decision for the record. File
        checksums are verified when provided; a failed or corrupt download
        leaves no file behind.
        """
        decision = self._decisions.get(record.record_id)
        if decision is None or not decision.allowed:
            raise GovernanceViolation(
                f"record {record.record_id} has no positive governance decision"
            )
        record_dir = Path(dest_dir) / record.record_id
        record_dir.mkdir(parents=True, exist_ok=True)

        def fetch_one(ref: FileRef) -> FileEntry:
            target = record_dir / Path(ref.name).name
            last: Exception | None = None
            for attempt in range(DOWNLOAD_ATTEMPTS):
                try:
                    resp = self.transport.get(ref.url, headers=self._headers())
                except TransportError as exc:
                    last = exc
                    if attempt + 1 < DOWNLOAD_ATTEMPTS:
                        self._sleep(BACKOFF_START_S * (2 ** attempt))
                    continue
                if resp.status_code != 200:
                    last = TransportError(f"{ref.url} returned {resp.status_code}")
                    if attempt + 1 < DOWNLOAD_ATTEMPTS:
                        self._sleep(BACKOFF_START_S * (2 ** attempt))
                    continue
                if not _verify_checksum(resp.content, ref.checksum):
                    raise ChecksumMismatchError(
                        f"{record.record_id}/{ref.name}: checksum mismatch"
                    )
                fd, tmp = tempfile.mkstemp(dir=record_dir, prefix=".part-")
                try:
                    with os.fdopen(fd, "wb") as fh:
                        fh.write(resp.content)
                    os.replace(tmp, target)
                finally:
                    if os.path.exists(tmp):
                        os.unlink(tmp)
                return FileEntry.from_path(record.record_id, target)
            raise TransportError(f"{ref.url}: retries exhausted ({last})")

        with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
            return list(pool.map(fetch_one, record.files))

    # -- publication resolution ---------------------------------------------------

    def _download_to(self, url: str, target: Path) -> Optional[Path]:
        try:
            resp = self._get_with_retry(url)
        except TransportError:
            return None
        if resp.status_code != 200:
            return None
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(resp.content)
        return target

    def resolve_publication(
        self, record: RecordMeta, dest_dir: Optional[str | Path] = None
    ) -> PublicationRef:
        """Find and download the open-access publication linked to a record.

        Strategy 1: the open-access lookup service (JSON,
        best_oa_location.url_for_pdf). Strategy 2: fetch the DOI landing page
        and scan publication meta tags in priority order. Exhausting both is
        source="none", not an error.
        """
        if not record.doi:
            return PublicationRef(record.record_id, "none")
        pub_dir = Path(dest_dir) if dest_dir else Path(self.config.workdir) / "publications"

        lookup_url = (
            f"{self.config.oa_lookup_base}/v2/{record.doi}"
            f"?email={self.config.contact_email}"
        )
        pdf_url = None
        try:
            resp = self._get_with_retry(lookup_url)
            if resp.status_code == 200:
                body = resp.json()
                pdf_url = (body.get("best_oa_location") or {}).get("url_for_pdf")
        except (TransportError, ValueError):
            pdf_url = None
        if pdf_url:
            saved = self._download_to(pdf_url, pub_dir / f"{record.record_id}.pdf")
            if saved is not None:
                return PublicationRef(
                    record.record_id, "open-access-lookup", url=pdf_url,
                    local_path=str(saved),
                )

        landing_url = f"{self.config.doi_resolver_base}/{record.doi}"
        try:
            resp = self._get_with_retry(landing_url)
        except TransportError:
            return PublicationRef(record.record_id, "none")
        if resp.status_code != 200:
            return PublicationRef(record.record_id, "none")
        collector = _MetaTagCollector()
        try:
            collector.feed(resp.content.decode("utf-8", errors="replace"))
        except Exception:
            return PublicationRef(record.record_id, "none")
        for tag in PUBLICATION_META_TAGS:
            link = collector.meta.get(tag)
            if not link:
                continue
            suffix = ".pdf" if tag == "citation_pdf_url" else ".html"
            saved = self._download_to(link, pub_dir / f"{record.record_id}{suffix}")
            if saved is not None:
                return PublicationRef(
                    record.record_id, "html-meta", url=link, local_path=str(saved)
                )
        return PublicationRef(record.record_id, "none")


def load_manifest(path: str | Path) -> list[RecordMeta]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RecordMeta.from_dict(r) for r in data.get("records", [])]
