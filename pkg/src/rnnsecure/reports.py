"""CSV and plain-text renderings of search, cross-validation and benchmark results.

CSV files are comma separated without quoting, LF line endings, floats in
shortest round-trip form. Text tables are column aligned and show three
decimals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .evaluation import MetricsReport
from .model import TrainHistory
from .search import SearchResult

TABLE3_HEADER = ("RNN network topology", "Task Name", "Accuracy")
TABLE4_HEADER = ("Algorithm", "Task Name", "Accuracy", "Precision", "Recall", "F-score")
SEARCH_HEADER = ("stage", "candidate", "trial", "cv_accuracy", "n_params", "diverged")


@dataclass(frozen=True)
class BenchmarkRow:
    algorithm: str
    task: str
    accuracy: float
    precision: float
    recall: float
    f_score: float

    @classmethod
    def from_metrics(cls, algorithm: str, task: str, m: MetricsReport) -> "BenchmarkRow":
        return cls(algorithm, task, m.accuracy, m.precision, m.recall, m.f_score)

    def values(self) -> tuple[float, float, float, float]:
        return (self.accuracy, self.precision, self.recall, self.f_score)


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(c) if not isinstance(c, float) else repr(c) for c in row) for row in rows]
    return "\n".join(lines) + "\n"


def aligned(header, rows) -> str:
    """Columns padded to their widest cell and separated by `` | ``."""
    cells = [list(header)] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines) + "\n"


def write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")


# ------------------------------------------------------------------- table 3


def depth_label(depth: int) -> str:
    return f"RNN {depth} layer"


def table3_row(depth: int, task: str, accuracy: float) -> str:
    return f"{depth_label(depth)} | {task} | {accuracy:.3f}"


def candidate_label(stage: str, value) -> str:
    if stage == "depth":
        return depth_label(int(value))
    if stage == "units":
        return f"RNN 1 layer, {int(value)} units"
    return f"RNN lr {value:g}"


def table3_text(result: SearchResult, task: str) -> str:
    """One row per candidate with its mean accuracy over trials, plus the selection."""
    means = result.mean_accuracy()
    values = {r.candidate_index: r.candidate for r in result.rows}
    rows = [(candidate_label(result.stage, values[ci]), task, f"{means[ci]:.3f}") for ci in sorted(means)]
    text = aligned(TABLE3_HEADER, rows)
    return text + f"selected: {candidate_label(result.stage, result.selected)}\n"


def search_csv(result: SearchResult) -> str:
    rows = [
        (r.stage, r.candidate, r.trial, r.cv_accuracy, r.n_params, int(r.diverged)) for r in result.rows
    ]
    return _csv(SEARCH_HEADER, rows)


# ------------------------------------------------------------------- table 4


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    return _csv(TABLE4_HEADER, [(r.algorithm, r.task, *r.values()) for r in rows])


def read_benchmark_csv(path) -> list[BenchmarkRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TABLE4_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [BenchmarkRow(a, t, *map(float, rest)) for a, t, *rest in reader]


def benchmark_text(rows: list[BenchmarkRow]) -> str:
    return aligned(TABLE4_HEADER, [(r.algorithm, r.task, *(f"{v:.3f}" for v in r.values())) for r in rows])


# --------------------------------------------------------------- crossval


CROSSVAL_HEADER = ("fold", "accuracy", "precision", "recall", "f_score")


def crossval_csv(reports: list[MetricsReport], mean_accuracy: float) -> str:
    rows = [(i, *m.row()) for i, m in enumerate(reports)]
    rows.append(("mean", mean_accuracy, "", "", ""))
    return _csv(CROSSVAL_HEADER, rows)


def crossval_text(reports: list[MetricsReport], mean_accuracy: float) -> str:
    rows = [(i, *(f"{v:.3f}" for v in m.row())) for i, m in enumerate(reports)]
    rows.append(("mean", f"{mean_accuracy:.3f}", "", "", ""))
    return aligned(CROSSVAL_HEADER, rows)


def history_csv(history: TrainHistory) -> str:
    """Per-epoch loss and accuracy. Wall-clock times are left out to keep reruns byte-identical."""
    return _csv(("epoch", "loss", "accuracy"), [(i, e.loss, e.accuracy) for i, e in enumerate(history.epochs)])


def parse_csv(text: str) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text)))
