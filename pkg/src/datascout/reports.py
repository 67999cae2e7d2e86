"""Aggregation of analyzer outputs into curation reports.

Analyzer results are rendered to bounded strings, stored in a hash-indexed
content store, condensed map-reduce style into a data content summary, and
turned into a file-level report (description / domain / keywords). File
reports are then consolidated hierarchically into one record-level report.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .analyze import (
    AnalyzerResult,
    ImagePayload,
    TabularPayload,
    TextPayload,
)
from .modelgw import GatewayError, ModelGateway
from .textproc import count_tokens, tokenize

logger = logging.getLogger(__name__)

MAP_INPUT_TOKEN_CAP = 1500
MAX_KEYWORDS = 7

DESCRIPTION_PROMPT = (
    "You are a helpful data analyst. You have been given metadata about a "
    "dataset. Write a short description for the dataset. Consider the "
    "following additional information [SUPERVISOR-OUTPUT]. If possible from "
    "the labels, say what the data content is."
)
# The description prompt alone does not ask for structure; this suffix
# requests the sections the report schema needs. Parsing stays tolerant in
# case a backend ignores it.
STRUCTURE_SUFFIX = (
    "\n\nFormat the reply with sections titled 'Description:', 'Domain:' and "
    "'Keywords:' (3 to 7 comma-separated keywords)."
)

MAP_PROMPT = "Summarize this data analysis result.\nSUMMARIZE:\n{text}"
REDUCE_PROMPT = (
    "Combine the partial summaries below into a single data content summary "
    "covering feature names and descriptions, density estimates, publication "
    "key points and word distributions.\nCOMBINE:\n{parts}"
)
FILE_MAP_PROMPT = "Summarize this file description.\nSUMMARIZE:\n{text}"
FILE_REDUCE_PROMPT = (
    "Consolidate the file summaries below into one unified description of "
    "the whole record.\nCOMBINE:\n{parts}"
)

PARTIAL_FLAG = "partial-summary"


class ReportError(Exception):
    pass


class UnknownHashError(ReportError):
    pass


# ---------------------------------------------------------------------------
# Hash-indexed content store
# ---------------------------------------------------------------------------


class ContentStore:
    """Directory-backed store mapping SHA-256 content hashes to strings.

    ``store_result`` is idempotent; writes are atomic (temp file + rename) so
    concurrent writers of the same content cannot corrupt an entry.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def content_hash(result_string: str) -> str:
        return hashlib.sha256(result_string.encode("utf-8")).hexdigest()

    def store_result(self, result_string: str) -> str:
        digest = self.content_hash(result_string)
        target = self.root / digest
        if not target.exists():
            fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(result_string)
                os.replace(tmp, target)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return digest

    def get_result(self, digest: str) -> str:
        target = self.root / digest
        if not target.exists():
            raise UnknownHashError(digest)
        return target.read_text(encoding="utf-8")

    def hashes(self) -> list[str]:
        return sorted(p.name for p in self.root.iterdir() if not p.name.startswith("."))

    def __len__(self) -> int:
        return len(self.hashes())


# ---------------------------------------------------------------------------
# Rendering analyzer results to bounded strings
# ---------------------------------------------------------------------------


def _truncate_tokens(text: str, cap: int) -> str:
    tokens = tokenize(text)
    if len(tokens) <= cap:
        return text
    head = cap // 2
    tail = cap - head
    return " ".join(tokens[:head]) + " ... " + " ".join(tokens[-tail:])


def _top_correlations(corr, limit: int = 5) -> list[str]:
    pairs = []
    names = corr.feature_names
    values = np.asarray(corr.values)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            pairs.append((abs(float(values[i, j])), names[i], names[j], float(values[i, j])))
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    return [f"{a}-{b} {v:.3f}" for _, a, b, v in pairs[:limit]]


def render_result_text(result: AnalyzerResult, cap_tokens: int = MAP_INPUT_TOKEN_CAP) -> str:
    """Render one analyzer result to a bounded plain-text block.

    KDE profiles are condensed to min/max/mode/bandwidth, correlations to the
    top-5 absolute pairs, and word distributions to the top-20 tokens. Output
    beyond ``cap_tokens`` is truncated deterministically (head + tail halves).
    """
    payload = result.payload
    parts: list[str] = []
    if isinstance(payload, TabularPayload):
        parts.append(f"Features: {', '.join(payload.column_names)}.")
        kinds = ", ".join(
            f"{n} ({k})" for n, k in zip(payload.column_names, payload.column_kinds)
        )
        parts.append(f"Rows: {payload.row_count}. Column kinds: {kinds}.")
        for p in payload.kde_profiles:
            parts.append(
                f"KDE {p.feature_name}: min {p.sample_min:.4g}, max {p.sample_max:.4g}, "
                f"mode {p.mode():.4g}, bandwidth {p.bandwidth:.4g}."
            )
        if payload.correlations is not None:
            tops = _top_correlations(payload.correlations)
            if tops:
                parts.append(f"Top correlations: {'; '.join(tops)}.")
            if payload.correlations.undefined_pairs:
                flagged = ", ".join(f"{a}-{b}" for a, b in payload.correlations.undefined_pairs)
                parts.append(f"Undefined correlation pairs: {flagged}.")
        if payload.predictability:
            scores = "; ".join(
                f"{s.target_feature} {s.score:.3f} ({s.method})" for s in payload.predictability
            )
            parts.append(f"Feature predictability (stand-in method): {scores}.")
    elif isinstance(payload, TextPayload):
        if payload.summary_available and payload.summary:
            parts.append(f"Document summary: {payload.summary}")
        else:
            parts.append("Document summary unavailable.")
        top = ", ".join(f"{t} ({c})" for t, c in payload.word_distribution.vocabulary[:20])
        parts.append(f"Word distribution top tokens: {top}.")
    elif isinstance(payload, ImagePayload):
        parts.append(f"Image captions: {'; '.join(payload.captions)}.")
    return _truncate_tokens(" ".join(parts), cap_tokens)


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------


@dataclass
class FileReport:
    """Generated curation report for one file."""

    file_id: str
    description: str
    domain: str
    keywords: list[str]
    statistics_ref: list[str]
    model_config_snapshot: dict
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "file_id": self.file_id,
            "description": self.description,
            "domain": self.domain,
            "keywords": self.keywords,
            "statistics_ref": self.statistics_ref,
            "model_config_snapshot": self.model_config_snapshot,
            "flags": self.flags,
            "length_chars": len(self.description),
            "length_tokens": count_tokens(self.description),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FileReport":
        return cls(
            file_id=data["file_id"],
            description=data["description"],
            domain=data["domain"],
            keywords=list(data["keywords"]),
            statistics_ref=list(data["statistics_ref"]),
            model_config_snapshot=dict(data["model_config_snapshot"]),
            flags=list(data.get("flags", [])),
        )


@dataclass
class RecordReport:
    """Hierarchical record-level report aggregating the file reports."""

    record_id: str
    unified_summary: str
    file_reports: list[str]
    generated_at: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "unified_summary": self.unified_summary,
            "file_reports": self.file_reports,
            "generated_at": self.generated_at,
            "length_chars": len(self.unified_summary),
            "length_tokens": count_tokens(self.unified_summary),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecordReport":
        return cls(
            record_id=data["record_id"],
            unified_summary=data["unified_summary"],
            file_reports=list(data["file_reports"]),
            generated_at=data["generated_at"],
        )


def _model_config_snapshot(gateway: ModelGateway) -> dict:
    cfg = gateway.config
    return {
        "chat_endpoint": cfg.chat_endpoint,
        "embed_endpoint": cfg.embed_endpoint,
        "temperature": cfg.temperature,
        "max_new_tokens": cfg.max_new_tokens,
        "context_budget_tokens": cfg.context_budget_tokens,
        "embed_dims": cfg.embed_dims,
    }


# ---------------------------------------------------------------------------
# Map-reduce summarization and description generation
# ---------------------------------------------------------------------------


def data_content_summary(results: Sequence[AnalyzerResult], gateway: ModelGateway) -> str:
    """Map-reduce a set of analyzer results into one data content summary.

    Each result is rendered to a bounded string and summarized by one chat
    call; the partial summaries are then reduced by a final call. Gateway
    failures degrade to a flagged partial summary instead of aborting.
    """
    if not results:
        raise ValueError("data_content_summary requires at least one result")
    partial = False
    mapped: list[str] = []
    for result in results:
        rendered = render_result_text(result)
        try:
            mapped.append(gateway.chat(MAP_PROMPT.format(text=rendered)))
        except GatewayError as exc:
            logger.warning("map summary failed for %s: %s", result.file_id, exc)
            mapped.append("- [summary unavailable]")
            partial = True
    try:
        reduced = gateway.chat(REDUCE_PROMPT.format(parts="\n\n".join(mapped)))
    except GatewayError as exc:
        logger.warning("reduce summary failed: %s", exc)
        reduced = "\n\n".join(mapped)
        partial = True
    return f"[{PARTIAL_FLAG}] {reduced}" if partial else reduced


_SECTION_RE = re.compile(
    r"^\s*(description|domain|keywords)\s*:\s*", re.IGNORECASE | re.MULTILINE
)


def _parse_sections(reply: str) -> dict[str, str]:
    sections: dict[str, str] = {}
    matches = list(_SECTION_RE.finditer(reply))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(reply)
        sections[m.group(1).lower()] = reply[m.end():end].strip()
    return sections


def _parse_keywords(raw: str) -> list[str]:
    items = [k.strip(" -*\t") for k in re.split(r"[,;\n]", raw)]
    seen: list[str] = []
    for item in items:
        if item and item not in seen:
            seen.append(item)
    return seen[:MAX_KEYWORDS]


def overarching_description(
    summary: str,
    gateway: ModelGateway,
    *,
    file_id: str = "",
    statistics_refs: Sequence[str] = (),
) -> FileReport:
    """Ask for an overarching file description and parse it into a FileReport.

    The data content summary is substituted for the prompt's
    [SUPERVISOR-OUTPUT] placeholder. Parsing is tolerant: missing sections
    default to empty values with a flag recorded on the report.
    """
    if not summary:
        raise ValueError("summary must be non-empty")
    prompt = DESCRIPTION_PROMPT.replace("[SUPERVISOR-OUTPUT]", summary) + STRUCTURE_SUFFIX
    reply = gateway.chat(prompt)
    sections = _parse_sections(reply)
    flags = []
    description = sections.get("description", "")
    if not description:
        # No recognizable structure: treat the whole reply as the description.
        description = reply.strip()
        flags.append("unstructured-reply")
    domain = sections.get("domain", "")
    if "domain" not in sections:
        flags.append("missing-domain")
    keywords = _parse_keywords(sections.get("keywords", ""))
    if "keywords" not in sections:
        flags.append("missing-keywords")
    return FileReport(
        file_id=file_id,
        description=description,
        domain=domain,
        keywords=keywords,
        statistics_ref=list(statistics_refs),
        model_config_snapshot=_model_config_snapshot(gateway),
        flags=flags,
    )


def record_report(
    file_reports: Sequence[FileReport],
    gateway: ModelGateway,
    *,
    record_id: str = "",
    now: Optional[str] = None,
) -> RecordReport:
    """Consolidate file-level descriptions into a single unified summary.

    Multi-file records map each description to a short summary first;
    single-file records skip the map stage and reduce directly.
    """
    if not file_reports:
        raise ValueError("record_report requires at least one file report")
    if len(file_reports) == 1:
        blocks = [file_reports[0].description]
    else:
        blocks = [
            gateway.chat(FILE_MAP_PROMPT.format(text=fr.description)) for fr in file_reports
        ]
    unified = gateway.chat(FILE_REDUCE_PROMPT.format(parts="\n\n".join(blocks)))
    return RecordReport(
        record_id=record_id,
        unified_summary=unified,
        file_reports=[fr.file_id for fr in file_reports],
        generated_at=now or datetime.now(timezone.utc).isoformat(),
    )


def build_file_report(
    result: AnalyzerResult,
    gateway: ModelGateway,
    store: ContentStore,
) -> FileReport:
    """Full per-file flow: store the rendered result, summarize, describe."""
    rendered = render_result_text(result)
    digest = store.store_result(rendered)
    summary = data_content_summary([result], gateway)
    return overarching_description(
        summary, gateway, file_id=result.file_id, statistics_refs=[digest]
    )


# ---------------------------------------------------------------------------
# On-disk layout: reports/{record_id}/{file_id}.json + record.json
# ---------------------------------------------------------------------------


def save_file_report(report: FileReport, reports_dir: str | Path, record_id: str) -> Path:
    out = Path(reports_dir) / record_id
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report.file_id}.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def save_record_report(report: RecordReport, reports_dir: str | Path) -> Path:
    out = Path(reports_dir) / report.record_id
    out.mkdir(parents=True, exist_ok=True)
    path = out / "record.json"
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_file_report(path: str | Path) -> FileReport:
    return FileReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_record_report(path: str | Path) -> RecordReport:
    return RecordReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
