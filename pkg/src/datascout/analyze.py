"""Modality-specific file analyzers.

The table analyzer estimates per-feature densities (Gaussian KDE), feature
correlations, and feature predictability; the text analyzer produces word
distributions and bullet summaries; the image analyzer produces captions.
Every analyzer is deterministic given a seed and a stub gateway.

Feature predictability has no standard definition in this context; the
cross-validated OLS / nearest-centroid scheme here is a documented stand-in
and is flagged as such in generated reports.
"""

from __future__ import annotations

import logging
import re
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ingest import (
    CanonicalTable,
    ExtractionFailure,
    FeatureKind,
    FileEntry,
    FileFormat,
    IMAGE_FORMATS,
    TABULAR_FORMATS,
    TextDocument,
    extract_document_text,
    load_tabular,
)
from .modelgw import GatewayError, ModelGateway
from .stopwords import STOP_WORDS
from .textproc import count_tokens, tokenize

logger = logging.getLogger(__name__)

KDE_GRID_POINTS = 128
KDE_GRID_PAD_BANDWIDTHS = 3.0
CAPTION_UNAVAILABLE = "[caption unavailable]"
MAX_CAPTIONED_IMAGES = 32

SUMMARY_PROMPT = (
    "Summarize the following document as concise bullet-point notes, "
    "one bullet per key point.\nSUMMARIZE:\n{text}"
)
MERGE_SUMMARIES_PROMPT = (
    "Merge the following partial bullet summaries of one document into a "
    "single bullet-point summary.\nCOMBINE:\n{parts}"
)


class AnalyzeError(Exception):
    """Base class for analyzer errors."""


class InsufficientDataError(AnalyzeError):
    pass


class NoNumericColumnsError(AnalyzeError):
    pass


class TooFewRowsError(AnalyzeError):
    pass


class TargetMissingError(AnalyzeError):
    pass


class UnsupportedFormatError(AnalyzeError):
    pass


# ---------------------------------------------------------------------------
# Kernel density estimation
# ---------------------------------------------------------------------------


@dataclass
class KdeProfile:
    """Gaussian KDE of one numeric feature on a fixed evaluation grid.

    The grid spans [min - 3h, max + 3h] so the density integrates to ~1 over
    it; ``samples`` are retained so the profile doubles as a Gaussian-mixture
    generator (pick a sample, add bandwidth-scaled noise).
    """

    feature_name: str
    bandwidth: float
    sample_min: float
    sample_max: float
    evaluation_grid: np.ndarray
    densities: np.ndarray
    n: int
    samples: np.ndarray

    def density_at(self, x: float) -> float:
        """Exact KDE evaluation (not grid interpolation)."""
        return float(gaussian_kde_density(self.samples, self.bandwidth, np.array([x]))[0])

    def mode(self) -> float:
        return float(self.evaluation_grid[int(np.argmax(self.densities))])

    def grid_integral(self) -> float:
        return float(np.trapezoid(self.densities, self.evaluation_grid))


def silverman_bandwidth(values: np.ndarray) -> float:
    """Silverman's rule of thumb, h = 0.9 * min(sigma, IQR/1.34) * n^(-1/5).

    Falls back to 0.9 * sigma * n^(-1/5) when the IQR is zero and to 1.0 for
    a degenerate constant column (sigma = 0).
    """
    n = values.size
    sigma = float(np.std(values))
    if sigma == 0.0:
        return 1.0
    q75, q25 = np.percentile(values, [75, 25])
    iqr = float(q75 - q25)
    if iqr == 0.0:
        return 0.9 * sigma * n ** (-0.2)
    return 0.9 * min(sigma, iqr / 1.34) * n ** (-0.2)


def gaussian_kde_density(samples: np.ndarray, bandwidth: float, xs: np.ndarray) -> np.ndarray:
    """Gaussian-kernel density of ``samples`` evaluated at ``xs``."""
    samples = np.asarray(samples, dtype=float)
    xs = np.asarray(xs, dtype=float)
    z = (xs[:, None] - samples[None, :]) / bandwidth
    kernel = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return kernel.sum(axis=1) / (samples.size * bandwidth)


def kde_fit(values: Sequence, bandwidth: Optional[float] = None,
            feature_name: str = "") -> KdeProfile:
    """Fit a univariate Gaussian KDE over the finite values of a feature."""
    arr = np.asarray(
        [float(v) for v in values if v is not None and np.isfinite(float(v))], dtype=float
    )
    if arr.size < 2:
        raise InsufficientDataError(
            f"{feature_name or 'feature'}: need >= 2 finite values, got {arr.size}"
        )
    if bandwidth is not None and bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    h = bandwidth if bandwidth is not None else silverman_bandwidth(arr)
    lo = float(arr.min()) - KDE_GRID_PAD_BANDWIDTHS * h
    hi = float(arr.max()) + KDE_GRID_PAD_BANDWIDTHS * h
    grid = np.linspace(lo, hi, KDE_GRID_POINTS)
    return KdeProfile(
        feature_name=feature_name,
        bandwidth=float(h),
        sample_min=float(arr.min()),
        sample_max=float(arr.max()),
        evaluation_grid=grid,
        densities=gaussian_kde_density(arr, h, grid),
        n=int(arr.size),
        samples=arr,
    )


# ---------------------------------------------------------------------------
# Correlations and predictability
# ---------------------------------------------------------------------------


@dataclass
class CorrelationMatrix:
    """Pearson correlations over numeric columns; undefined pairs are zeroed."""

    feature_names: list[str]
    values: np.ndarray
    undefined_pairs: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class PredictabilityScore:
    target_feature: str
    score: float
    method: str  # "linear-r2" | "classification-uplift"


def _numeric_array(col) -> np.ndarray:
    return np.array([np.nan if v is None else float(v) for v in col.values], dtype=float)


def feature_correlations(table: CanonicalTable) -> CorrelationMatrix:
    """Pairwise-complete Pearson correlations over the table's numeric columns.

    Pairs with fewer than 3 complete rows or zero variance get entry 0 and are
    listed in ``undefined_pairs``. The matrix is symmetric with unit diagonal
    and entries clamped to [-1, 1].
    """
    numeric = table.numeric_columns()
    if len(numeric) < 2:
        raise NoNumericColumnsError("need >= 2 numeric columns")
    names = [c.name for c in numeric]
    arrays = [_numeric_array(c) for c in numeric]
    k = len(arrays)
    values = np.eye(k)
    undefined: list[tuple[str, str]] = []
    for i in range(k):
        for j in range(i + 1, k):
            mask = np.isfinite(arrays[i]) & np.isfinite(arrays[j])
            x, y = arrays[i][mask], arrays[j][mask]
            if x.size < 3 or np.std(x) == 0.0 or np.std(y) == 0.0:
                undefined.append((names[i], names[j]))
                continue
            r = float(np.corrcoef(x, y)[0, 1])
            values[i, j] = values[j, i] = min(1.0, max(-1.0, r))
    return CorrelationMatrix(feature_names=names, values=values, undefined_pairs=undefined)


def _cv_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return np.array_split(rng.permutation(n), k)


def _ols_predict(x_train, y_train, x_test) -> np.ndarray:
    a_train = np.hstack([x_train, np.ones((x_train.shape[0], 1))])
    a_test = np.hstack([x_test, np.ones((x_test.shape[0], 1))])
    beta, *_ = np.linalg.lstsq(a_train, y_train, rcond=None)
    return a_test @ beta


def feature_predictability(table: CanonicalTable, target: str, seed: int = 0) -> PredictabilityScore:
    """Score how well the other numeric columns predict the target column.

    Numeric targets: 5-fold cross-validated ordinary least squares, score is
    max(0, R^2) over pooled out-of-fold predictions. Non-numeric targets:
    5-fold accuracy of a one-nearest-centroid classifier, rescaled against the
    majority-class rate as max(0, (acc - base) / (1 - base)). Folds are drawn
    deterministically from the seed.
    """
    names = table.column_names()
    if target not in names:
        raise TargetMissingError(target)
    if len(table.columns) < 2 or table.row_count < 10:
        raise TooFewRowsError(
            f"need >= 2 columns and >= 10 rows, got {len(table.columns)}x{table.row_count}"
        )

    target_col = table.column(target)
    numeric_kinds = (FeatureKind.NUMERIC_CONTINUOUS, FeatureKind.NUMERIC_DISCRETE)
    feature_cols = [c for c in table.numeric_columns() if c.name != target]
    x_all = (
        np.column_stack([_numeric_array(c) for c in feature_cols])
        if feature_cols
        else np.zeros((table.row_count, 0))
    )

    if target_col.kind in numeric_kinds:
        y_all = _numeric_array(target_col)
        mask = np.isfinite(y_all)
        if x_all.shape[1]:
            mask &= np.isfinite(x_all).all(axis=1)
        x, y = x_all[mask], y_all[mask]
        if y.size < 10:
            raise TooFewRowsError(f"only {y.size} complete rows for target {target}")
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0.0 or x.shape[1] == 0:
            return PredictabilityScore(target, 0.0, "linear-r2")
        preds = np.empty_like(y)
        for fold in _cv_folds(y.size, 5, seed):
            train = np.setdiff1d(np.arange(y.size), fold)
            preds[fold] = _ols_predict(x[train], y[train], x[fold])
        r2 = 1.0 - float(np.sum((y - preds) ** 2)) / ss_tot
        return PredictabilityScore(target, max(0.0, r2), "linear-r2")

    labels_all = np.array([None if v is None else str(v) for v in target_col.values], dtype=object)
    mask = np.array([v is not None for v in labels_all])
    if x_all.shape[1]:
        mask &= np.isfinite(x_all).all(axis=1)
    x, labels = x_all[mask], labels_all[mask]
    if labels.size < 10:
        raise TooFewRowsError(f"only {labels.size} complete rows for target {target}")
    label_counts = Counter(labels)
    base = max(label_counts.values()) / labels.size
    if base >= 1.0 or x.shape[1] == 0:
        return PredictabilityScore(target, 0.0, "classification-uplift")
    correct = 0
    for fold in _cv_folds(labels.size, 5, seed):
        train = np.setdiff1d(np.arange(labels.size), fold)
        classes = sorted(set(labels[train]))
        centroids = np.vstack([x[train][labels[train] == c].mean(axis=0) for c in classes])
        dists = np.linalg.norm(x[fold][:, None, :] - centroids[None, :, :], axis=2)
        predicted = [classes[i] for i in np.argmin(dists, axis=1)]
        correct += sum(p == t for p, t in zip(predicted, labels[fold]))
    acc = correct / labels.size
    return PredictabilityScore(target, max(0.0, (acc - base) / (1.0 - base)), "classification-uplift")


# ---------------------------------------------------------------------------
# Text and image analyzers
# ---------------------------------------------------------------------------


@dataclass
class WordDistribution:
    """Token counts sorted by descending count, ties broken lexicographically."""

    vocabulary: list[tuple[str, int]]
    total_tokens: int
    top_k: int


_WORD_SPLIT_RE = re.compile(r"[^0-9a-z]+")


def word_distribution(doc: TextDocument, top_k: int = 200) -> WordDistribution:
    """Count topic-bearing words: lowercase, split on non-alphanumeric,
    drop tokens shorter than 3 characters and stop words."""
    tokens = [
        t
        for t in _WORD_SPLIT_RE.split(doc.body.lower())
        if len(t) >= 3 and t not in STOP_WORDS
    ]
    counts = Counter(tokens)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return WordDistribution(vocabulary=ordered, total_tokens=len(tokens), top_k=top_k)


def summarize_text(doc: TextDocument, gateway: ModelGateway) -> str:
    """Bullet-point summary; long documents are summarized map-reduce style.

    Documents beyond the gateway's context budget are split into token
    windows, each window summarized, and the partial summaries merged by a
    final call.
    """
    overhead = count_tokens(SUMMARY_PROMPT.format(text=""))
    window = max(gateway.config.context_budget_tokens - overhead - 8, 32)
    tokens = tokenize(doc.body)
    if len(tokens) <= window:
        windows = [doc.body]
    else:
        windows = [" ".join(tokens[i:i + window]) for i in range(0, len(tokens), window)]
    parts = [gateway.chat(SUMMARY_PROMPT.format(text=w)) for w in windows]
    if len(parts) == 1:
        return parts[0]
    return gateway.chat(MERGE_SUMMARIES_PROMPT.format(parts="\n\n".join(parts)))


def caption_images(
    image_paths: Sequence[str | Path],
    gateway: ModelGateway,
    *,
    max_images: int = MAX_CAPTIONED_IMAGES,
    seed: int = 7,
) -> list[str]:
    """One caption per image, order preserved.

    When more than ``max_images`` images are given, a uniform seeded subsample
    is captioned. Per-image failures yield a placeholder caption instead of
    aborting the batch.
    """
    paths = [Path(p) for p in image_paths]
    if len(paths) > max_images:
        rng = np.random.default_rng(seed)
        keep = sorted(rng.choice(len(paths), size=max_images, replace=False))
        paths = [paths[i] for i in keep]
    captions = []
    for path in paths:
        try:
            captions.append(gateway.caption(path.read_bytes()))
        except (OSError, GatewayError) as exc:
            logger.warning("caption failed for %s: %s", path, exc)
            captions.append(CAPTION_UNAVAILABLE)
    return captions


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


@dataclass
class TabularPayload:
    kde_profiles: list[KdeProfile]
    correlations: Optional[CorrelationMatrix]
    predictability: list[PredictabilityScore]
    column_names: list[str]
    column_kinds: list[str]
    row_count: int


@dataclass
class TextPayload:
    word_distribution: WordDistribution
    summary: str
    summary_available: bool


@dataclass
class ImagePayload:
    captions: list[str]


@dataclass
class AnalyzerResult:
    file_id: str
    modality: str  # "tabular" | "text" | "image"
    payload: TabularPayload | TextPayload | ImagePayload
    produced_at: str


def analyze_table(table: CanonicalTable, seed: int = 0) -> TabularPayload:
    profiles = []
    for col in table.numeric_columns():
        try:
            profiles.append(kde_fit(col.values, feature_name=col.name))
        except InsufficientDataError:
            logger.info("skipping KDE for %s: not enough finite values", col.name)
    try:
        correlations = feature_correlations(table)
    except NoNumericColumnsError:
        correlations = None
    predictability = []
    if len(table.columns) >= 2 and table.row_count >= 10:
        for col in table.columns:
            try:
                predictability.append(feature_predictability(table, col.name, seed=seed))
            except (TooFewRowsError, TargetMissingError):
                continue
    return TabularPayload(
        kde_profiles=profiles,
        correlations=correlations,
        predictability=predictability,
        column_names=table.column_names(),
        column_kinds=[c.kind.value for c in table.columns],
        row_count=table.row_count,
    )


def analyze_file(
    entry: FileEntry,
    gateway: ModelGateway,
    *,
    extractor=None,
    seed: int = 0,
) -> AnalyzerResult:
    """Dispatch a file to its modality analyzer and package the result."""
    produced_at = datetime.now(timezone.utc).isoformat()
    if entry.format in TABULAR_FORMATS:
        payload: TabularPayload | TextPayload | ImagePayload = analyze_table(
            load_tabular(entry.path, entry.format), seed=seed
        )
        modality = "tabular"
    elif entry.format in (FileFormat.TEXT_PLAIN, FileFormat.DOCUMENT_PDF):
        doc = extract_document_text(entry.path, extractor)
        try:
            summary = summarize_text(doc, gateway)
            available = True
        except GatewayError as exc:
            logger.warning("summary unavailable for %s: %s", entry.file_id, exc)
            summary, available = "", False
        payload = TextPayload(
            word_distribution=word_distribution(doc),
            summary=summary,
            summary_available=available,
        )
        modality = "text"
    elif entry.format in IMAGE_FORMATS:
        payload = ImagePayload(captions=caption_images([entry.path], gateway, seed=seed))
        modality = "image"
    else:
        raise UnsupportedFormatError(f"{entry.name}: {entry.format.value}")
    return AnalyzerResult(
        file_id=entry.file_id, modality=modality, payload=payload, produced_at=produced_at
    )


def analyze_files(
    entries: Sequence[FileEntry],
    gateway: ModelGateway,
    *,
    extractor=None,
    seed: int = 0,
    max_workers: int = 4,
) -> tuple[list[AnalyzerResult], list[tuple[str, str]]]:
    """Analyze files in a worker pool; unsupported or broken files are skipped.

    Returns (results, skipped) where skipped holds (file_id, reason) notes.
    Result order matches the input entry order.
    """
    results: dict[str, AnalyzerResult] = {}
    skipped: list[tuple[str, str]] = []

    def run(entry: FileEntry):
        return analyze_file(entry, gateway, extractor=extractor, seed=seed)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(run, e): e for e in entries}
        for future, entry in futures.items():
            try:
                results[entry.file_id] = future.result()
            except (UnsupportedFormatError, ExtractionFailure) as exc:
                skipped.append((entry.file_id, str(exc)))
    ordered = [results[e.file_id] for e in entries if e.file_id in results]
    return ordered, skipped


# ---------------------------------------------------------------------------
# Serialization: JSON document + binary sidecar for grids and matrices
# ---------------------------------------------------------------------------

SCHEMA_VERSION = 1
_SIDECAR_MAGIC = b"DSSC"


def _write_sidecar(path: Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_SIDECAR_MAGIC)
        fh.write(struct.pack("<II", SCHEMA_VERSION, len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def _read_sidecar(path: Path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != _SIDECAR_MAGIC:
            raise AnalyzeError(f"{path}: bad sidecar magic")
        _version, count = struct.unpack("<II", fh.read(8))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            arrays[name] = data.reshape(shape)
    return arrays


def result_to_document(result: AnalyzerResult) -> tuple[dict, dict[str, np.ndarray]]:
    """Split an AnalyzerResult into a JSON-safe dict and its sidecar arrays."""
    arrays: dict[str, np.ndarray] = {}
    doc: dict = {
        "schema_version": SCHEMA_VERSION,
        "file_id": result.file_id,
        "modality": result.modality,
        "produced_at": result.produced_at,
    }
    payload = result.payload
    if isinstance(payload, TabularPayload):
        profiles = []
        for p in payload.kde_profiles:
            key = f"kde/{p.feature_name}"
            arrays[f"{key}/grid"] = p.evaluation_grid
            arrays[f"{key}/densities"] = p.densities
            arrays[f"{key}/samples"] = p.samples
            profiles.append({
                "feature_name": p.feature_name,
                "bandwidth": p.bandwidth,
                "sample_min": p.sample_min,
                "sample_max": p.sample_max,
                "n": p.n,
                "sidecar": key,
            })
        corr = None
        if payload.correlations is not None:
            arrays["correlations/values"] = payload.correlations.values
            corr = {
                "feature_names": payload.correlations.feature_names,
                "undefined_pairs": [list(p) for p in payload.correlations.undefined_pairs],
                "sidecar": "correlations/values",
            }
        doc["payload"] = {
            "kind": "tabular",
            "kde_profiles": profiles,
            "correlations": corr,
            "predictability": [
                {"target_feature": s.target_feature, "score": s.score, "method": s.method}
                for s in payload.predictability
            ],
            "column_names": payload.column_names,
            "column_kinds": payload.column_kinds,
            "row_count": payload.row_count,
        }
    elif isinstance(payload, TextPayload):
        doc["payload"] = {
            "kind": "text",
            "word_distribution": {
                "vocabulary": [[t, c] for t, c in payload.word_distribution.vocabulary],
                "total_tokens": payload.word_distribution.total_tokens,
                "top_k": payload.word_distribution.top_k,
            },
            "summary": payload.summary,
            "summary_available": payload.summary_available,
        }
    else:
        doc["payload"] = {"kind": "image", "captions": list(payload.captions)}
    return doc, arrays


def document_to_result(doc: dict, arrays: dict[str, np.ndarray]) -> AnalyzerResult:
    payload_doc = doc["payload"]
    kind = payload_doc["kind"]
    if kind == "tabular":
        profiles = []
        for p in payload_doc["kde_profiles"]:
            key = p["sidecar"]
            profiles.append(KdeProfile(
                feature_name=p["feature_name"],
                bandwidth=p["bandwidth"],
                sample_min=p["sample_min"],
                sample_max=p["sample_max"],
                evaluation_grid=arrays[f"{key}/grid"],
                densities=arrays[f"{key}/densities"],
                n=p["n"],
                samples=arrays[f"{key}/samples"],
            ))
        corr_doc = payload_doc["correlations"]
        correlations = None
        if corr_doc is not None:
            correlations = CorrelationMatrix(
                feature_names=corr_doc["feature_names"],
                values=arrays[corr_doc["sidecar"]],
                undefined_pairs=[tuple(p) for p in corr_doc["undefined_pairs"]],
            )
        payload: TabularPayload | TextPayload | ImagePayload = TabularPayload(
            kde_profiles=profiles,
            correlations=correlations,
            predictability=[
                PredictabilityScore(s["target_feature"], s["score"], s["method"])
                for s in payload_doc["predictability"]
            ],
            column_names=payload_doc["column_names"],
            column_kinds=payload_doc["column_kinds"],
            row_count=payload_doc["row_count"],
        )
    elif kind == "text":
        wd = payload_doc["word_distribution"]
        payload = TextPayload(
            word_distribution=WordDistribution(
                vocabulary=[(t, c) for t, c in wd["vocabulary"]],
                total_tokens=wd["total_tokens"],
                top_k=wd["top_k"],
            ),
            summary=payload_doc["summary"],
            summary_available=payload_doc["summary_available"],
        )
    else:
        payload = ImagePayload(captions=list(payload_doc["captions"]))
    return AnalyzerResult(
        file_id=doc["file_id"],
        modality=doc["modality"],
        payload=payload,
        produced_at=doc["produced_at"],
    )


def save_result(result: AnalyzerResult, out_dir: str | Path) -> Path:
    """Persist one result as {file_id}.json plus a {file_id}.bin sidecar."""
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc, arrays = result_to_document(result)
    json_path = out / f"{result.file_id}.json"
    _write_sidecar(out / f"{result.file_id}.bin", arrays)
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return json_path


def load_result(json_path: str | Path) -> AnalyzerResult:
    import json

    json_path = Path(json_path)
    doc = json.loads(json_path.read_text(encoding="utf-8"))
    arrays = _read_sidecar(json_path.with_suffix(".bin"))
    return document_to_result(doc, arrays)
