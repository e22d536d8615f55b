"""APCER / BPCER / ACER with attacks (fakes) as the positive class."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

FAKE_LABELS = {"fake", "attack", "spoof", "1"}
REAL_LABELS = {"real", "bonafide", "bona_fide", "live", "0"}


class EmptyClassError(ZeroDivisionError):
    """APCER or BPCER is undefined because one class has no samples."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int  # fake predicted fake
    fn: int  # fake predicted real
    fp: int  # real predicted fake
    tn: int  # real predicted real

    @property
    def n_fake(self) -> int:
        return self.tp + self.fn

    @property
    def n_real(self) -> int:
        return self.fp + self.tn


@dataclass(frozen=True)
class MetricsReport:
    apcer: float
    bpcer: float
    acer: float
    threshold: float | None
    counts: ConfusionCounts | None = None

    def row(self, digits: int = 4) -> dict[str, str]:
        return {
            "threshold": "" if self.threshold is None else repr(self.threshold),
            "apcer": f"{self.apcer:.{digits}f}",
            "bpcer": f"{self.bpcer:.{digits}f}",
            "acer": f"{self.acer:.{digits}f}",
            "tp": "" if self.counts is None else str(self.counts.tp),
            "fn": "" if self.counts is None else str(self.counts.fn),
            "fp": "" if self.counts is None else str(self.counts.fp),
            "tn": "" if self.counts is None else str(self.counts.tn),
        }


def _is_fake(label) -> bool:
    if isinstance(label, str):
        key = label.strip().lower()
        if key in FAKE_LABELS:
            return True
        if key in REAL_LABELS:
            return False
        raise ValueError(f"unknown label {label!r}")
    return int(label) == 1


def confusion(scores: Mapping[str, float], labels: Mapping[str, object], threshold: float) -> ConfusionCounts:
    """Count outcomes; ``score >= threshold`` predicts fake."""
    missing = sorted(set(labels) - set(scores))
    extra = sorted(set(scores) - set(labels))
    if missing or extra:
        raise KeyError(f"score/label ids differ: missing scores for {missing}, no labels for {extra}")
    tp = fn = fp = tn = 0
    for sid, s in scores.items():
        pred_fake = s >= threshold
        if _is_fake(labels[sid]):
            tp += pred_fake
            fn += not pred_fake
        else:
            fp += pred_fake
            tn += not pred_fake
    return ConfusionCounts(int(tp), int(fn), int(fp), int(tn))


def rates_report(apcer: float, bpcer: float, threshold: float | None = None,
                 counts: ConfusionCounts | None = None) -> MetricsReport:
    return MetricsReport(apcer, bpcer, (apcer + bpcer) / 2.0, threshold, counts)


def acer_report(counts: ConfusionCounts, threshold: float | None = None) -> MetricsReport:
    """Percentages: APCER = FN/(TP+FN), BPCER = FP/(FP+TN), ACER their mean."""
    if counts.n_fake == 0:
        raise EmptyClassError("APCER undefined: no attack samples")
    if counts.n_real == 0:
        raise EmptyClassError("BPCER undefined: no bona fide samples")
    apcer = 100.0 * counts.fn / counts.n_fake
    bpcer = 100.0 * counts.fp / counts.n_real
    return rates_report(apcer, bpcer, threshold, counts)


def evaluate_scores(scores: Mapping[str, float], labels: Mapping[str, object], threshold: float = 0.5) -> MetricsReport:
    return acer_report(confusion(scores, labels, threshold), threshold)


def threshold_sweep(scores: Mapping[str, float], labels: Mapping[str, object],
                    grid: Sequence[float]) -> list[MetricsReport]:
    if len(grid) == 0:
        raise ValueError("threshold grid is empty")
    if list(grid) != sorted(grid):
        raise ValueError("threshold grid must be sorted ascending")
    return [evaluate_scores(scores, labels, t) for t in grid]


# -- files -----------------------------------------------------------------
def read_scores(path: str | Path) -> dict[str, float]:
    """``id,score`` CSV; a header row is skipped if its score column is not numeric."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not row[0].strip():
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected id,score")
            try:
                s = float(row[1])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}:{lineno}: score {row[1]!r} is not a number") from None
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"{path}:{lineno}: score {s} outside [0, 1]")
            out[row[0].strip()] = s
    return out


def read_labels(path: str | Path) -> dict[str, str]:
    """Labels from a manifest (``id<TAB>path<TAB>label<TAB>identity``) or an ``id,label`` CSV."""
    text = Path(path).read_text(encoding="utf-8")
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t") if "\t" in line else next(csv.reader([line]))
        if len(parts) == 4:
            sid, lab = parts[0], parts[2]
        elif len(parts) == 2:
            sid, lab = parts
        else:
            raise ValueError(f"{path}:{lineno}: cannot parse label row")
        lab = lab.strip()
        if lineno == 1 and lab.lower() == "label":
            continue
        _is_fake(lab)
        out[sid.strip()] = lab
    return out


def write_scores(path: str | Path, scores: Mapping[str, float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"])
        for sid, s in scores.items():
            w.writerow([sid, repr(float(s))])


COLUMNS = ("threshold", "apcer", "bpcer", "acer", "tp", "fn", "fp", "tn")


def format_table(reports: Sequence[MetricsReport], digits: int = 4) -> str:
    rows = [r.row(digits) for r in reports]
    head = {"threshold": "Threshold", "apcer": "APCER(%)", "bpcer": "BPCER(%)", "acer": "ACER(%)",
            "tp": "TP", "fn": "FN", "fp": "FP", "tn": "TN"}
    widths = {c: max(len(head[c]), *(len(r[c]) for r in rows)) for c in COLUMNS}
    lines = ["  ".join(head[c].rjust(widths[c]) for c in COLUMNS)]
    lines += ["  ".join(r[c].rjust(widths[c]) for c in COLUMNS) for r in rows]
    return "\n".join(lines)


def format_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        row = r.row(digits=10)
        row.update(apcer=repr(r.apcer), bpcer=repr(r.bpcer), acer=repr(r.acer))
        w.writerow(row)
    return buf.getvalue()
