"""Synthetic tabular data generation.

Two routes produce synthetic rows scored by histogram overlap:

- a code-generation agent: chat for a script, execute it in a confined
  subprocess, re-prompt with the error on failure, up to a bounded number of
  attempts;
- a deterministic sampler that draws numeric columns from the Gaussian-mixture
  form of their KDE profiles and the remaining columns from empirical
  frequencies, with no model in the loop.

A uniform resampler over the prompt's example rows is included as the
examples-only baseline the stats-informed routes are compared against.
"""

from __future__ import annotations

import logging
import os
import re
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .analyze import KdeProfile, kde_fit, InsufficientDataError
from .ingest import (
    CanonicalTable,
    FeatureKind,
    IngestError,
    TableColumn,
    detect_feature_kind,
    load_tabular,
)
from .modelgw import ModelGateway

logger = logging.getLogger(__name__)

EXAMPLE_ROWS = 5
SANDBOX_TIME_LIMIT_S = 60.0

GENERATION_PROMPT = (
    "You are an agent designed to write and execute python code to generate "
    "synthetic data from a query.\n"
    "You have access to a python REPL, which you can use to execute python code.\n"
    "If you get an error, debug your code and try again until there are no errors.\n"
    "Generate {n} synthetic data samples about the {subject} dataset.\n"
    "Examples here {examples}.\n"
    "Now, generate python code that creates a pandas dataframe where each "
    "column is sampled {sampling_clause}\n"
    "Save the pandas dataframe in a csv file {output_file}.\n"
)
STATS_CLAUSE = "according to their statistical information contained in {metadata_stats}."
EXAMPLES_ONLY_CLAUSE = "as in the examples above."

RETRY_SUFFIX = (
    "\n\nThe previous attempt failed. Fix the code and try again. Error:\n{error}\n"
)


class SynthError(Exception):
    pass


class NoCodeBlockError(SynthError):
    pass


class RetriesExhaustedError(SynthError):
    def __init__(self, message: str, last_result: Optional["SandboxResult"]) -> None:
        super().__init__(message)
        self.last_result = last_result


class MissingProfileError(SynthError):
    pass


@dataclass
class GenerationTask:
    """One synthetic-data request: subject, 5 example rows, optional stats."""

    subject: str
    examples: list[str]
    output_path: str
    metadata_stats: Optional[str] = None
    n_samples: int = 100
    max_retries: int = 3

    def __post_init__(self) -> None:
        if len(self.examples) != EXAMPLE_ROWS:
            raise ValueError(f"exactly {EXAMPLE_ROWS} example rows required, got {len(self.examples)}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def render_example_rows(table: CanonicalTable, n: int = EXAMPLE_ROWS) -> list[str]:
    """First ``n`` table rows rendered as 'col=value' text lines."""
    rows = table.rows()[:n]
    names = table.column_names()
    return [
        ", ".join(f"{name}={'' if v is None else v}" for name, v in zip(names, row))
        for row in rows
    ]


def build_generation_prompt(task: GenerationTask) -> str:
    """Render the generation prompt for one task.

    With metadata statistics, the sampling clause asks for columns sampled
    according to that statistical information; without them the clause becomes
    "as in the examples above." and nothing else varies between the two
    conditions.
    """
    if task.metadata_stats is not None:
        clause = STATS_CLAUSE.format(metadata_stats=task.metadata_stats)
    else:
        clause = EXAMPLES_ONLY_CLAUSE
    return GENERATION_PROMPT.format(
        n=task.n_samples,
        subject=task.subject,
        examples="\n" + "\n".join(task.examples) + "\n",
        sampling_clause=clause,
        output_file=task.output_path,
    )


# ---------------------------------------------------------------------------
# Sandboxed script execution
# ---------------------------------------------------------------------------


@dataclass
class SandboxResult:
    exit_status: int
    stdout: str
    stderr: str
    produced_file: Optional[str]
    wall_time: float


def _posix_limits(cpu_seconds: int):
    def apply() -> None:
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
        except Exception:
            pass

    return apply


class SandboxExecutor:
    """Runs generated scripts as ``[runtime, script_path]`` subprocesses.

    The working directory is confined to a scratch directory, the environment
    is stripped to PATH plus a SCRATCH variable, and wall-clock/CPU time are
    limited. Network isolation is the host environment's responsibility; the
    executor does not grant the script any credentials or extra environment.
    """

    def __init__(
        self,
        runtime: str = sys.executable,
        time_limit_s: float = SANDBOX_TIME_LIMIT_S,
        script_name: str = "generation_script.py",
    ) -> None:
        self.runtime = runtime
        self.time_limit_s = time_limit_s
        self.script_name = script_name

    def run(
        self,
        script: str,
        scratch_dir: str | Path,
        expected_output: Optional[str | Path] = None,
    ) -> SandboxResult:
        scratch = Path(scratch_dir)
        scratch.mkdir(parents=True, exist_ok=True)
        script_path = scratch / self.script_name
        script_path.write_text(script, encoding="utf-8")
        env = {"PATH": os.environ.get("PATH", ""), "SCRATCH": str(scratch)}
        start = time.monotonic()
        try:
            proc = subprocess.run(
                [self.runtime, str(script_path)],
                cwd=scratch,
                env=env,
                capture_output=True,
                text=True,
                timeout=self.time_limit_s,
                preexec_fn=_posix_limits(int(self.time_limit_s) + 1) if os.name == "posix" else None,
            )
            exit_status, stdout, stderr = proc.returncode, proc.stdout, proc.stderr
        except subprocess.TimeoutExpired as exc:
            wall = time.monotonic() - start
            return SandboxResult(
                exit_status=-1,
                stdout=exc.stdout or "",
                stderr=f"wall-clock limit of {self.time_limit_s}s exceeded",
                produced_file=None,
                wall_time=wall,
            )
        wall = time.monotonic() - start
        produced = None
        if exit_status == 0 and expected_output is not None and Path(expected_output).exists():
            produced = str(expected_output)
        return SandboxResult(
            exit_status=exit_status,
            stdout=stdout,
            stderr=stderr,
            produced_file=produced,
            wall_time=wall,
        )


_CODE_BLOCK_RE = re.compile(r"```[a-zA-Z0-9_+-]*\r?\n(.*?)```", re.DOTALL)


def extract_code_block(reply: str) -> str:
    """First fenced code block of a chat reply."""
    m = _CODE_BLOCK_RE.search(reply)
    if not m:
        raise NoCodeBlockError("reply contains no fenced code block")
    return m.group(1)


def run_generation_agent(
    task: GenerationTask,
    gateway: ModelGateway,
    sandbox: SandboxExecutor,
    scratch_dir: str | Path,
    attempt_log: Optional[list[SandboxResult]] = None,
) -> Path:
    """Generation loop: chat, extract code, execute, re-prompt on failure.

    Success requires the produced file to exist and parse as a table with
    exactly ``task.n_samples`` rows. Each attempt's sandbox result is appended
    to ``attempt_log`` when given. Raises RetriesExhaustedError (carrying the
    last sandbox result) after ``task.max_retries`` failed attempts.
    """
    prompt = build_generation_prompt(task)
    last_result: Optional[SandboxResult] = None
    for attempt in range(1, task.max_retries + 1):
        reply = gateway.chat(prompt)
        code = extract_code_block(reply)
        result = sandbox.run(code, scratch_dir, expected_output=task.output_path)
        if attempt_log is not None:
            attempt_log.append(result)
        last_result = result
        error_text = ""
        if result.produced_file:
            try:
                table = load_tabular(result.produced_file)
                if table.row_count == task.n_samples:
                    logger.info("generation succeeded on attempt %d", attempt)
                    return Path(result.produced_file)
                error_text = (
                    f"output file has {table.row_count} rows, expected {task.n_samples}"
                )
            except IngestError as exc:
                error_text = f"output file does not parse: {exc}"
        else:
            error_text = result.stderr.strip() or result.stdout.strip() or (
                f"script exited with status {result.exit_status} and produced no output file"
            )
        logger.warning("generation attempt %d failed: %s", attempt, error_text)
        prompt = build_generation_prompt(task) + RETRY_SUFFIX.format(error=error_text)
    raise RetriesExhaustedError(
        f"no valid output after {task.max_retries} attempts", last_result
    )


# ---------------------------------------------------------------------------
# Deterministic samplers
# ---------------------------------------------------------------------------


@dataclass
class CategoricalFrequency:
    """Empirical value frequencies of one non-continuous column."""

    feature_name: str
    values: list
    counts: list[int]

    @classmethod
    def from_column(cls, column: TableColumn) -> "CategoricalFrequency":
        present = [v for v in column.values if v is not None]
        counter: dict = {}
        for v in present:
            counter[v] = counter.get(v, 0) + 1
        ordered = sorted(counter.items(), key=lambda kv: str(kv[0]))
        return cls(
            feature_name=column.name,
            values=[v for v, _ in ordered],
            counts=[c for _, c in ordered],
        )


ColumnSampler = Union[KdeProfile, CategoricalFrequency]


def column_samplers(table: CanonicalTable) -> list[ColumnSampler]:
    """One sampler per column: KDE for continuous features, frequencies else.

    Discrete numeric columns use frequencies too, so sampled values stay in
    the observed value set and the output column keeps its feature kind.
    """
    samplers: list[ColumnSampler] = []
    for col in table.columns:
        if col.kind == FeatureKind.NUMERIC_CONTINUOUS:
            try:
                samplers.append(kde_fit(col.values, feature_name=col.name))
                continue
            except InsufficientDataError:
                pass
        samplers.append(CategoricalFrequency.from_column(col))
    return samplers


def kde_sampler(
    samplers: Sequence[Optional[ColumnSampler]],
    n: int,
    seed: int = 42,
) -> CanonicalTable:
    """Draw ``n`` rows from per-column samplers, deterministically under seed.

    KDE columns use the Gaussian-mixture form of the estimate: pick a training
    point uniformly and add Gaussian noise scaled by the profile's bandwidth.
    Frequency columns draw from the empirical distribution.
    """
    columns = []
    rng = np.random.default_rng(seed)
    for sampler in samplers:
        if sampler is None:
            raise MissingProfileError("every target column needs a profile or frequency table")
        if isinstance(sampler, KdeProfile):
            picks = rng.integers(0, sampler.samples.size, size=n)
            noise = rng.normal(0.0, sampler.bandwidth, size=n)
            values = [float(v) for v in sampler.samples[picks] + noise]
            name = sampler.feature_name
        else:
            if not sampler.values:
                raise MissingProfileError(f"{sampler.feature_name}: empty frequency table")
            probs = np.asarray(sampler.counts, dtype=float)
            probs /= probs.sum()
            picks = rng.choice(len(sampler.values), size=n, p=probs)
            values = [sampler.values[i] for i in picks]
            name = sampler.feature_name
        columns.append(TableColumn(name=name, kind=detect_feature_kind(values), values=values))
    return CanonicalTable(columns=columns, row_count=n)


def examples_only_sampler(
    example_table: CanonicalTable,
    n: int,
    seed: int = 42,
) -> CanonicalTable:
    """Baseline: resample each column uniformly from the example rows only."""
    columns = []
    rng = np.random.default_rng(seed)
    for col in example_table.columns:
        present = [v for v in col.values if v is not None]
        if not present:
            raise MissingProfileError(f"{col.name}: no example values")
        picks = rng.integers(0, len(present), size=n)
        values = [present[i] for i in picks]
        columns.append(TableColumn(name=col.name, kind=detect_feature_kind(values), values=values))
    return CanonicalTable(columns=columns, row_count=n)
