"""Precision, recall and F1@n of extracted labels against the ground truth."""
from __future__ import annotations

import csv
import enum
import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .backends import AuthError, Backend, BackendError, ConfigError
from .model import ExtractionKind, GroundTruthEntry, normalize_label
from .parsing import EmptyParse, parse_ranked_list
from .prompts import UnsupportedKind, render_cloze, render_slot_prompt

REPORT_HEADER = ("backend", "kind", "entry", "n", "precision", "recall", "f1", "incident")


class Truncation(enum.Enum):
    SYMMETRIC = "symmetric"
    PREDICTION_ONLY = "prediction-only"


class InvalidN(ValueError):
    pass


class NoEntries(ValueError):
    pass


@dataclass(frozen=True)
class AtNMetrics:
    n: int
    precision: float
    recall: float
    f1: float


def harmonic_mean(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _distinct_prefix(labels: Iterable[str], n: int | None) -> list[str]:
    out: list[str] = []
    for label in labels:
        if n is not None and len(out) >= n:
            break
        if label not in out:
            out.append(label)
    return out


def metrics_at_n(
    predicted: Sequence[str],
    truth: Sequence[str],
    n: int,
    truncation: Truncation = Truncation.SYMMETRIC,
) -> AtNMetrics:
    """Precision/recall/F1 of the first ``n`` distinct predictions.

    With symmetric truncation the ground truth is cut to its first ``n``
    distinct labels too; ``prediction-only`` keeps the full truth list.
    """
    if isinstance(n, bool) or n < 1:
        raise InvalidN(f"n must be >= 1, got {n}")
    top_pred = _distinct_prefix(predicted, n)
    top_truth = _distinct_prefix(truth, n if truncation is Truncation.SYMMETRIC else None)
    hits = len(set(top_pred) & set(top_truth))
    precision = hits / len(top_pred) if top_pred else 0.0
    recall = hits / len(top_truth) if top_truth else 0.0
    return AtNMetrics(n, precision, recall, harmonic_mean(precision, recall))


@dataclass(frozen=True)
class DistractorPool:
    by_kind: Mapping[ExtractionKind, tuple[str, ...]]

    @classmethod
    def load(cls, path: str | Path | None = None) -> DistractorPool:
        if path is None:
            text = resources.files(__package__).joinpath("data", "distractors.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        data = json.loads(text)
        by_kind = {}
        for kind in ExtractionKind:
            labels = data.get(kind.value, [])
            by_kind[kind] = tuple(dict.fromkeys(normalize_label(x) for x in labels if normalize_label(x)))
        return cls(by_kind)


@dataclass(frozen=True)
class EvalSettings:
    n_max: int = 5
    truncation: Truncation = Truncation.SYMMETRIC
    seed: int = 0
    n_distractors: int = 5
    distractors: DistractorPool = field(default_factory=DistractorPool.load)

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise InvalidN(f"n_max must be >= 1, got {self.n_max}")


def build_candidates(entry: GroundTruthEntry, kind: ExtractionKind, settings: EvalSettings) -> list[str]:
    """Truth labels mixed with sampled distractors, shuffled with an entry-specific seed."""
    truth = entry.truth_labels(kind)
    pool = [d for d in settings.distractors.by_kind.get(kind, ()) if d not in truth]
    rng = random.Random(f"{settings.seed}|{kind.value}|{entry.action}|{entry.object}")
    candidates = list(truth) + rng.sample(pool, min(settings.n_distractors, len(pool)))
    rng.shuffle(candidates)
    return candidates


@dataclass(frozen=True)
class EntryResult:
    index: int
    metrics: tuple[AtNMetrics, ...]
    incident: str = ""
    predicted: tuple[str, ...] = ()


def _predict(entry: GroundTruthEntry, kind: ExtractionKind, backend: Backend, candidates: list[str]) -> tuple[str, ...]:
    if backend.cfg.uses_fill_mask:
        sentence = render_cloze(kind, entry.action, entry.object)
        tokens = backend.fill_mask(sentence).tokens
        return parse_ranked_list("\n".join(tokens), candidates).labels
    tool = entry.tools[0] if kind is ExtractionKind.SPATIAL else None
    prompt = render_slot_prompt(kind, entry.action, entry.object, candidates, tool)
    result = backend.complete(backend.request(prompt.text))
    return parse_ranked_list(result.raw, candidates).labels


def evaluate_entry(
    entry: GroundTruthEntry,
    kind: ExtractionKind,
    backend: Backend,
    settings: EvalSettings,
    index: int = 0,
) -> EntryResult:
    """Prompt, parse and score one entry.

    Model-side failures become an incident with all-zero metrics; only
    configuration and authentication problems propagate.
    """
    truth = entry.truth_labels(kind)
    candidates = build_candidates(entry, kind, settings)
    incident = ""
    predicted: tuple[str, ...] = ()
    try:
        predicted = _predict(entry, kind, backend, candidates)
    except (ConfigError, AuthError):
        raise
    except EmptyParse:
        incident = "EmptyParse"
    except UnsupportedKind:
        incident = "UnsupportedKind"
    except BackendError as exc:
        incident = type(exc).__name__
    metrics = tuple(metrics_at_n(predicted, truth, n, settings.truncation) for n in range(1, settings.n_max + 1))
    return EntryResult(index, metrics, incident, predicted)


@dataclass(frozen=True)
class MetricsReport:
    backend: str
    kind: ExtractionKind
    rows: tuple[EntryResult, ...]
    aggregate: tuple[AtNMetrics, ...]

    @property
    def n_max(self) -> int:
        return len(self.aggregate)

    @property
    def row_count(self) -> int:
        return len(self.rows) * self.n_max + self.n_max

    @property
    def incidents(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for row in self.rows:
            if row.incident:
                counts[row.incident] = counts.get(row.incident, 0) + 1
        return counts


def aggregate(rows: Sequence[EntryResult], n_max: int) -> tuple[AtNMetrics, ...]:
    """Unweighted mean over entries at each n (the mean F1 is not recomputed from mean P/R)."""
    out = []
    for i in range(n_max):
        at_n = [row.metrics[i] for row in rows]
        out.append(
            AtNMetrics(
                i + 1,
                math.fsum(m.precision for m in at_n) / len(at_n),
                math.fsum(m.recall for m in at_n) / len(at_n),
                math.fsum(m.f1 for m in at_n) / len(at_n),
            )
        )
    return tuple(out)


def evaluate_dataset(
    entries: Sequence[GroundTruthEntry],
    kinds: Sequence[ExtractionKind],
    backends: Mapping[str, Backend],
    settings: EvalSettings,
) -> dict[tuple[str, ExtractionKind], MetricsReport]:
    if not entries:
        raise NoEntries("no ground-truth entries to evaluate")
    reports = {}
    for name, backend in backends.items():
        with ThreadPoolExecutor(max_workers=backend.cfg.max_concurrency) as pool:
            for kind in kinds:
                futures = [
                    pool.submit(evaluate_entry, entry, kind, backend, settings, i) for i, entry in enumerate(entries)
                ]
                rows = sorted((f.result() for f in futures), key=lambda r: r.index)
                reports[(name, kind)] = MetricsReport(name, kind, tuple(rows), aggregate(rows, settings.n_max))
    return reports


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_report(report: MetricsReport, path: str | Path) -> None:
    """CSV with per-entry rows sorted by (entry, n) followed by the MEAN rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        kind = report.kind.value
        for row in sorted(report.rows, key=lambda r: r.index):
            for m in row.metrics:
                writer.writerow(
                    (report.backend, kind, row.index, m.n, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), row.incident)
                )
        for m in report.aggregate:
            writer.writerow((report.backend, kind, "MEAN", m.n, _fmt(m.precision), _fmt(m.recall), _fmt(m.f1), ""))


def write_f1_curve(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(("n", "mean_f1"))
        for m in report.aggregate:
            writer.writerow((m.n, _fmt(m.f1)))


def read_report(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
