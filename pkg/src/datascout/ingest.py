"""File-format detection and loading into canonical in-memory tables.

Loaders are pure functions of their input file and safe to run per-file in
parallel. Unsupported formats are reported, never fatal: the calling pipeline
skips them with a note.
"""

from __future__ import annotations

import csv
import hashlib
import re
import unicodedata
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Optional

import requests


class IngestError(Exception):
    """Base class for ingest errors."""


class FileMissingError(IngestError):
    pass


class ParseError(IngestError):
    """Malformed tabular input; message carries the line/element location."""


class ExtractionFailure(IngestError):
    """Text extraction failed; the file should be skipped with a note."""


class DatasetNotFoundError(IngestError):
    pass


class UnsupportedPayloadError(IngestError):
    pass


class FileFormat(str, Enum):
    TABULAR_CSV = "tabular-csv"
    TABULAR_XML = "tabular-xml"
    TEXT_PLAIN = "text-plain"
    DOCUMENT_PDF = "document-pdf"
    IMAGE_JPG = "image-jpg"
    IMAGE_PNG = "image-png"
    IMAGE_TIFF = "image-tiff"
    UNSUPPORTED = "unsupported"


class FeatureKind(str, Enum):
    NUMERIC_CONTINUOUS = "numeric-continuous"
    NUMERIC_DISCRETE = "numeric-discrete"
    CATEGORICAL = "categorical"
    TEXT = "text"
    DATETIME = "datetime"
    IMAGE_REFERENCE = "image-reference"


_EXTENSION_FORMATS = {
    "csv": FileFormat.TABULAR_CSV,
    "xml": FileFormat.TABULAR_XML,
    "txt": FileFormat.TEXT_PLAIN,
    "pdf": FileFormat.DOCUMENT_PDF,
    "jpg": FileFormat.IMAGE_JPG,
    "jpeg": FileFormat.IMAGE_JPG,
    "png": FileFormat.IMAGE_PNG,
    "tif": FileFormat.IMAGE_TIFF,
    "tiff": FileFormat.IMAGE_TIFF,
}

TABULAR_FORMATS = (FileFormat.TABULAR_CSV, FileFormat.TABULAR_XML)
IMAGE_FORMATS = (FileFormat.IMAGE_JPG, FileFormat.IMAGE_PNG, FileFormat.IMAGE_TIFF)

# Missing-value spellings, compared case-insensitively.
NULL_TOKENS = frozenset({"", "na", "nan", "null"})

# Feature-kind thresholds; named so reports can cite the rule that fired.
DISCRETE_MAX_DISTINCT = 20
CATEGORICAL_MAX_DISTINCT_RATIO = 0.5
CATEGORICAL_MAX_DISTINCT = 1000
TEXT_MEAN_LENGTH = 50

# Ragged-row tolerance for CSV inputs.
RAGGED_ROW_LIMIT = 0.01

_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_IMAGE_REF_RE = re.compile(r".+\.(jpg|jpeg|png|tif|tiff)$", re.IGNORECASE)


def make_file_id(record_id: str, name: str) -> str:
    """Stable 16-hex identifier derived from (record_id, file name)."""
    return hashlib.sha256(f"{record_id}/{name}".encode("utf-8")).hexdigest()[:16]


@dataclass
class FileEntry:
    """One harvested file with its detected format."""

    file_id: str
    record_id: str
    name: str
    path: str
    format: FileFormat
    size_bytes: int

    @classmethod
    def from_path(cls, record_id: str, path: str | Path) -> "FileEntry":
        p = Path(path)
        return cls(
            file_id=make_file_id(record_id, p.name),
            record_id=record_id,
            name=p.name,
            path=str(p),
            format=detect_format(p),
            size_bytes=p.stat().st_size,
        )

    def to_dict(self) -> dict:
        return {
            "file_id": self.file_id,
            "record_id": self.record_id,
            "name": self.name,
            "path": self.path,
            "format": self.format.value,
            "size_bytes": self.size_bytes,
        }


@dataclass
class TableColumn:
    name: str
    kind: FeatureKind
    values: list


@dataclass
class CanonicalTable:
    """Typed columnar data; all columns hold exactly ``row_count`` values."""

    columns: list[TableColumn]
    row_count: int
    provenance: dict = field(default_factory=dict)

    def column(self, name: str) -> TableColumn:
        for col in self.columns:
            if col.name == name:
                return col
        raise KeyError(name)

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def numeric_columns(self) -> list[TableColumn]:
        numeric = (FeatureKind.NUMERIC_CONTINUOUS, FeatureKind.NUMERIC_DISCRETE)
        return [c for c in self.columns if c.kind in numeric]

    def rows(self) -> list[tuple]:
        return list(zip(*(c.values for c in self.columns))) if self.columns else []


@dataclass
class TextDocument:
    doc_id: str
    source_path: str
    body: str
    token_count: int


def detect_format(path: str | Path) -> FileFormat:
    """Map a file to a format by extension, case-insensitively."""
    p = Path(path)
    if not p.exists():
        raise FileMissingError(str(p))
    return _EXTENSION_FORMATS.get(p.suffix.lstrip(".").lower(), FileFormat.UNSUPPORTED)


def is_null(value) -> bool:
    if value is None:
        return True
    if isinstance(value, float) and value != value:  # NaN
        return True
    return isinstance(value, str) and value.strip().lower() in NULL_TOKENS


def _parses_as_date(value) -> bool:
    if isinstance(value, (datetime, date)):
        return True
    if not isinstance(value, str):
        return False
    try:
        datetime.fromisoformat(value.strip())
        return True
    except ValueError:
        return False


def _parse_number(value) -> Optional[float]:
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and _NUMBER_RE.match(value.strip()):
        return float(value.strip())
    return None


def detect_feature_kind(values) -> FeatureKind:
    """Classify a value sequence into a feature kind.

    Decision rules applied in order over the non-null values:

    1. all ISO-8601 dates                          -> datetime
    2. all numbers; integral with <= 20 distinct   -> numeric-discrete,
       otherwise                                   -> numeric-continuous
    3. distinct ratio <= 0.5 and <= 1000 distinct  -> categorical
    4. mean string length > 50                     -> text
    5. all image-file references                   -> image-reference
    otherwise                                      -> categorical

    Order-free by construction: every rule aggregates over the value set, so
    the result is invariant under permutation. An empty (or all-null) input
    ties off to categorical.
    """
    present = [v for v in values if not is_null(v)]
    if not present:
        return FeatureKind.CATEGORICAL

    if all(_parses_as_date(v) for v in present):
        return FeatureKind.DATETIME

    numbers = [_parse_number(v) for v in present]
    if all(n is not None for n in numbers):
        distinct = set(numbers)
        if all(n.is_integer() for n in numbers) and len(distinct) <= DISCRETE_MAX_DISTINCT:
            return FeatureKind.NUMERIC_DISCRETE
        return FeatureKind.NUMERIC_CONTINUOUS

    strings = [str(v) for v in present]
    distinct_count = len(set(strings))
    if (
        distinct_count / len(strings) <= CATEGORICAL_MAX_DISTINCT_RATIO
        and distinct_count <= CATEGORICAL_MAX_DISTINCT
    ):
        return FeatureKind.CATEGORICAL
    if sum(len(s) for s in strings) / len(strings) > TEXT_MEAN_LENGTH:
        return FeatureKind.TEXT
    if all(_IMAGE_REF_RE.match(s) for s in strings):
        return FeatureKind.IMAGE_REFERENCE
    return FeatureKind.CATEGORICAL


def _dedupe_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for name in names:
        if name not in seen:
            seen[name] = 1
            out.append(name)
            continue
        seen[name] += 1
        candidate = f"{name}_{seen[name]}"
        while candidate in seen:
            seen[name] += 1
            candidate = f"{name}_{seen[name]}"
        seen[candidate] = 1
        out.append(candidate)
    return out


def _typed_column(name: str, raw: list) -> TableColumn:
    cleaned = [None if is_null(v) else v for v in raw]
    kind = detect_feature_kind(cleaned)
    if kind in (FeatureKind.NUMERIC_CONTINUOUS, FeatureKind.NUMERIC_DISCRETE):
        values = [None if v is None else _parse_number(v) for v in cleaned]
    else:
        values = [None if v is None else str(v) for v in cleaned]
    return TableColumn(name=name, kind=kind, values=values)


def _load_csv(path: Path) -> CanonicalTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: empty file, no header row")
    header = _dedupe_names(rows[0])
    width = len(header)
    data = rows[1:]

    ragged = [i for i, row in enumerate(data, start=2) if len(row) != width]
    if data and len(ragged) / len(data) > RAGGED_ROW_LIMIT:
        raise ParseError(
            f"{path}: {len(ragged)} ragged rows (first at line {ragged[0]}), "
            f"beyond the {RAGGED_ROW_LIMIT:.0%} tolerance"
        )

    cells = [row[:width] + [None] * (width - len(row)) for row in data]
    columns = [
        _typed_column(name, [row[i] for row in cells]) for i, name in enumerate(header)
    ]
    return CanonicalTable(columns=columns, row_count=len(cells))


def _load_xml(path: Path) -> CanonicalTable:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc

    row_maps = []
    names: list[str] = []
    for elem in root:
        cells: dict[str, Optional[str]] = {}
        for attr, value in elem.attrib.items():
            cells[attr] = value
        for child in elem:
            cells[child.tag] = child.text
        for key in cells:
            if key not in names:
                names.append(key)
        row_maps.append(cells)

    columns = [
        _typed_column(name, [cells.get(name) for cells in row_maps]) for name in names
    ]
    return CanonicalTable(columns=columns, row_count=len(row_maps))


def load_tabular(path: str | Path, fmt: Optional[FileFormat] = None) -> CanonicalTable:
    """Load a CSV or XML file into a typed CanonicalTable.

    The CSV header row (or XML attribute/child-element names) becomes the
    column names; missing cells are nulls; each column is assigned a
    FeatureKind via :func:`detect_feature_kind`.
    """
    p = Path(path)
    fmt = fmt or detect_format(p)
    if fmt == FileFormat.TABULAR_CSV:
        return _load_csv(p)
    if fmt == FileFormat.TABULAR_XML:
        return _load_xml(p)
    raise ParseError(f"{p}: not a tabular format ({fmt.value})")


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_to_csv(table: CanonicalTable, path: str | Path) -> Path:
    """Write a CanonicalTable back out as RFC-4180 CSV.

    Floats use ``repr`` so reloading reproduces the exact same values;
    ``load_tabular(serialize_to_csv(t))`` is a fixed point for null-free
    tables.
    """
    p = Path(path)
    with open(p, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.column_names())
        for row in table.rows():
            writer.writerow([_format_cell(v) for v in row])
    return p


def _passthrough_extractor(path: Path) -> str:
    return path.read_text(encoding="utf-8", errors="replace")


def extract_document_text(path: str | Path, extractor=None) -> TextDocument:
    """Extract text from a document through a pluggable backend.

    The default extractor is a plain-text pass-through; PDF extraction is
    expected to be supplied by the caller. The body is normalized to Unicode
    NFC with collapsed whitespace.
    """
    from .textproc import count_tokens

    p = Path(path)
    if not p.exists():
        raise FileMissingError(str(p))
    extractor = extractor or _passthrough_extractor
    try:
        raw = extractor(p)
    except Exception as exc:
        raise ExtractionFailure(f"{p}: {exc}") from exc
    body = unicodedata.normalize("NFC", raw)
    body = re.sub(r"\s+", " ", body).strip()
    return TextDocument(
        doc_id=hashlib.sha256(body.encode("utf-8")).hexdigest()[:16],
        source_path=str(p),
        body=body,
        token_count=count_tokens(body),
    )


# ---------------------------------------------------------------------------
# Named-dataset loading (hub client + local registry)
# ---------------------------------------------------------------------------

_SPLIT_SLICE_RE = re.compile(r"\[\s*:\s*(\d+)\s*\]")


class DatasetRegistry:
    """Maps dataset names onto local tabular files, for offline use."""

    def __init__(self) -> None:
        self._paths: dict[str, Path] = {}

    def register(self, name: str, path: str | Path) -> None:
        self._paths[name] = Path(path)

    def resolve(self, name: str) -> Path:
        if name not in self._paths:
            raise DatasetNotFoundError(name)
        return self._paths[name]


class DatasetHubClient:
    """Minimal dataset-hub client: list files, then fetch them over HTTPS."""

    def __init__(self, base_url: str, token: str = "", timeout: float = 60.0) -> None:
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.token}"} if self.token else {}

    def fetch(self, name: str, revision: Optional[str], dest_dir: Path) -> tuple[Path, str]:
        url = f"{self.base_url}/api/datasets/{name}"
        if revision:
            url += f"?revision={revision}"
        resp = requests.get(url, headers=self._headers(), timeout=self.timeout)
        if resp.status_code == 404:
            raise DatasetNotFoundError(name)
        resp.raise_for_status()
        listing = resp.json()
        files = listing.get("files", [])
        tabular = [f for f in files if f.get("name", "").lower().endswith((".csv", ".xml"))]
        if not tabular:
            raise UnsupportedPayloadError(f"{name}: no tabular files in listing")
        chosen = tabular[0]
        dest_dir.mkdir(parents=True, exist_ok=True)
        local = dest_dir / Path(chosen["name"]).name
        blob = requests.get(chosen["url"], headers=self._headers(), timeout=self.timeout)
        blob.raise_for_status()
        local.write_bytes(blob.content)
        return local, str(listing.get("revision", revision or ""))


def _apply_split(table: CanonicalTable, split: str) -> CanonicalTable:
    m = _SPLIT_SLICE_RE.search(split)
    if not m:
        return table
    n = int(m.group(1))
    columns = [TableColumn(c.name, c.kind, c.values[:n]) for c in table.columns]
    return CanonicalTable(columns=columns, row_count=min(n, table.row_count),
                          provenance=dict(table.provenance))


def load_dataset_by_name(
    dataset_name: str,
    params: Optional[dict] = None,
    *,
    registry: Optional[DatasetRegistry] = None,
    client: Optional[DatasetHubClient] = None,
    cache_dir: str | Path = ".datascout_hub_cache",
) -> CanonicalTable:
    """Resolve a named dataset to a CanonicalTable.

    A local registry takes priority; otherwise the hub client downloads the
    first tabular file of the named dataset. Supported params: ``split``
    (bracket slice, e.g. ``"train[:10]"``) and ``revision``; unknown keys are
    ignored. Provenance (name, revision, source) is recorded on the table.
    """
    params = params or {}
    revision = params.get("revision")

    if registry is not None:
        try:
            path = registry.resolve(dataset_name)
            table = load_tabular(path)
            table.provenance = {"dataset_name": dataset_name, "revision": revision or "",
                                "source": "local-registry"}
            if "split" in params:
                table = _apply_split(table, str(params["split"]))
            return table
        except DatasetNotFoundError:
            if client is None:
                raise
    if client is None:
        raise DatasetNotFoundError(dataset_name)

    local, resolved_rev = client.fetch(dataset_name, revision, Path(cache_dir))
    table = load_tabular(local)
    table.provenance = {"dataset_name": dataset_name, "revision": resolved_rev,
                        "source": "hub"}
    if "split" in params:
        table = _apply_split(table, str(params["split"]))
    return table
