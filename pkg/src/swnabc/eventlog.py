"""Event logs and the stochastic language they induce."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

Trace = tuple[str, ...]


class LogError(ValueError):
    pass


@dataclass(frozen=True)
class LogLanguage:
    """Unique traces of a log, ordered by convex index, with the detector constants.

    ``unique_traces[i]`` is the trace whose convex index is ``i``; the ordering
    follows increasing word-mapping value.
    """

    alphabet: tuple[str, ...]
    unique_traces: tuple[Trace, ...]
    frequencies: tuple[int, ...]
    probabilities: np.ndarray
    letter_map: Mapping[str, int]
    letter_maxima: Mapping[str, int]
    max_len: int
    remap: Mapping[int, int]

    @property
    def n(self) -> int:
        return len(self.alphabet)

    @property
    def support_size(self) -> int:
        return len(self.unique_traces)

    def index_of(self, trace: Sequence[str]) -> int | None:
        from .detector import convex_remap, word_map

        try:
            return convex_remap(self, word_map(trace, self.letter_map, self.n))
        except KeyError:
            return None

    def as_dict(self) -> dict[Trace, float]:
        return dict(zip(self.unique_traces, self.probabilities.tolist()))


def language_from_counts(counts: Mapping[Sequence[str], int] | Iterable[tuple[Sequence[str], int]]) -> LogLanguage:
    """Build a :class:`LogLanguage` from ``trace -> frequency`` pairs."""
    from .detector import word_map

    items = counts.items() if isinstance(counts, Mapping) else counts
    merged: Counter[Trace] = Counter()
    for trace, f in items:
        trace = tuple(trace)
        if not trace:
            raise LogError("empty trace")
        if int(f) != f or f <= 0:
            raise LogError(f"trace count must be a positive integer, got {f!r}")
        merged[trace] += int(f)
    if not merged:
        raise LogError("empty log")

    alphabet = tuple(sorted({a for t in merged for a in t}))
    letter_map = {a: i + 1 for i, a in enumerate(alphabet)}
    n = len(alphabet)
    ordered = sorted(merged, key=lambda t: word_map(t, letter_map, n))
    remap = {word_map(t, letter_map, n): i for i, t in enumerate(ordered)}
    freqs = tuple(merged[t] for t in ordered)
    total = sum(freqs)
    maxima = {a: max(t.count(a) for t in ordered) for a in alphabet}
    return LogLanguage(
        alphabet=alphabet,
        unique_traces=tuple(ordered),
        frequencies=freqs,
        probabilities=np.array(freqs, dtype=np.float64) / total,
        letter_map=letter_map,
        letter_maxima=maxima,
        max_len=max(len(t) for t in ordered),
        remap=remap,
    )


def _rows_to_traces(text: str) -> list[Trace]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise LogError("empty log") from None
    header = [h.strip().lower() for h in header]
    try:
        ci, ai = header.index("case"), header.index("activity")
    except ValueError:
        raise LogError("CSV header must contain 'case' and 'activity'") from None
    cases: dict[str, list[str]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) <= max(ci, ai):
            raise LogError(f"line {lineno}: expected at least {max(ci, ai) + 1} fields")
        act = row[ai].strip()
        if not act:
            raise LogError(f"line {lineno}: empty activity")
        cases.setdefault(row[ci], []).append(act)
    return [tuple(v) for v in cases.values()]


def parse_log(text: str, fmt: str = "auto") -> LogLanguage:
    """Parse a CSV (``case,activity``) or JSON-lines (``{"trace": [...], "count": k}``) log."""
    if fmt == "auto":
        fmt = "jsonl" if text.lstrip().startswith("{") else "csv"
    if fmt == "csv":
        return language_from_counts(Counter(_rows_to_traces(text)).items())
    if fmt != "jsonl":
        raise LogError(f"unknown log format {fmt!r}")
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            pairs.append((tuple(str(a) for a in rec["trace"]), rec.get("count", 1)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LogError(f"line {lineno}: {exc}") from None
    return language_from_counts(pairs)


def load_log(path: str | Path) -> LogLanguage:
    path = Path(path)
    fmt = "jsonl" if path.suffix in (".jsonl", ".ndjson") else "auto"
    return parse_log(path.read_text(encoding="utf-8"), fmt)


def log_stats(lang: LogLanguage) -> tuple[int, dict[str, int], int, int]:
    """(alphabet size, per-letter maximum count, longest trace length, support size)."""
    return lang.n, dict(lang.letter_maxima), lang.max_len, lang.support_size


# -- language dump format ---------------------------------------------------


def dump_language(traces: Sequence[Sequence[str]], probs: Sequence[float], meta: Mapping | None = None) -> str:
    entries = [{"trace": list(t), "p": float(p)} for t, p in zip(traces, probs)]
    if meta is None:
        return json.dumps(entries, indent=1)
    return json.dumps({"language": entries, "meta": dict(meta)}, indent=1)


def load_language(text: str) -> tuple[list[Trace], np.ndarray, dict]:
    """Read a language dump; accepts a bare array or ``{"language": [...], "meta": {...}}``."""
    data = json.loads(text)
    meta = {}
    if isinstance(data, dict):
        meta = data.get("meta", {})
        data = data["language"]
    traces = [tuple(e["trace"]) for e in data]
    probs = np.array([float(e["p"]) for e in data], dtype=np.float64)
    return traces, probs, meta
