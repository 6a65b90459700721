"""Result selector combining baseline and context-model probabilities, plus metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class MatchPrediction:
    pair_id: int
    y_hat: float  # baseline probability
    y_bar: float  # context-model probability
    combined: float
    label_out: int


def _check_prob(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")


def result_select(y_hat: float, y_bar: float, pair_id: int = 0, use_result_selector: bool = True,
                  confidence_gate: float | None = None) -> MatchPrediction:
    """Label 1 iff ``y_hat + y_bar - 1 >= 0.5``.

    ``use_result_selector=False`` thresholds ``y_bar`` alone. ``confidence_gate``
    (off by default) hands the decision to the baseline whenever
    ``|y_hat - 0.5| >= confidence_gate``.
    """
    _check_prob("y_hat", y_hat)
    _check_prob("y_bar", y_bar)
    combined = y_hat + y_bar - 1
    if confidence_gate is not None and abs(y_hat - 0.5) >= confidence_gate:
        label = int(y_hat >= 0.5)
    elif use_result_selector:
        label = int(combined >= 0.5)
    else:
        label = int(y_bar >= 0.5)
    return MatchPrediction(pair_id, y_hat, y_bar, combined, label)


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0


def confusion(predicted: Iterable[int], gold: Iterable[int]) -> EvalReport:
    tp = fp = tn = fn = 0
    for p, g in zip(predicted, gold, strict=True):
        if g not in (0, 1):
            raise ValueError(f"gold label must be 0 or 1, got {g!r}")
        if p == 1:
            tp, fp = (tp + 1, fp) if g == 1 else (tp, fp + 1)
        else:
            tn, fn = (tn + 1, fn) if g == 0 else (tn, fn + 1)
    return EvalReport(tp, fp, tn, fn)


def evaluate(predictions: Sequence[MatchPrediction], gold: Mapping[int, int]) -> EvalReport:
    """Confusion counts of ``label_out`` against gold labels keyed by pair id."""
    pred_ids = {p.pair_id for p in predictions}
    missing_gold = sorted(pred_ids - set(gold))
    missing_pred = sorted(set(gold) - pred_ids)
    if missing_gold or missing_pred or len(pred_ids) != len(predictions):
        raise ValueError(f"cannot align predictions with gold: no prediction for ids {missing_pred}, "
                         f"no gold label for ids {missing_gold}")
    ordered = sorted(predictions, key=lambda p: p.pair_id)
    return confusion([p.label_out for p in ordered], [gold[p.pair_id] for p in ordered])


# ---------------------------------------------------------------- files

def write_prediction_log(path, predictions: Sequence[MatchPrediction]) -> None:
    """``pair_id  y_hat_baseline  y_bar_context  label`` TSV with exact float reprs."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("pair_id\ty_hat_baseline\ty_bar_context\tlabel\n")
        for p in sorted(predictions, key=lambda p: p.pair_id):
            fh.write(f"{p.pair_id}\t{p.y_hat!r}\t{p.y_bar!r}\t{p.label_out}\n")


def read_prediction_log(path) -> list[tuple[int, float, float, int]]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            if line.strip():
                pid, yh, yb, lab = line.rstrip("\n").split("\t")
                rows.append((int(pid), float(yh), float(yb), int(lab)))
    return rows


REPORT_FIELDS = ("name", "accuracy", "f1", "tp", "fp", "tn", "fn")


def write_report(path, reports: Mapping[str, EvalReport], dataset: str = "") -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# dataset\t{dataset}\n")
        fh.write("\t".join(REPORT_FIELDS) + "\n")
        for name, r in reports.items():
            fh.write(f"{name}\t{r.accuracy!r}\t{r.f1!r}\t{r.tp}\t{r.fp}\t{r.tn}\t{r.fn}\n")


def read_report(path) -> tuple[str, dict[str, EvalReport]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    dataset = lines[0].split("\t", 1)[1] if lines and lines[0].startswith("# dataset") else ""
    out = {}
    for line in lines[2:]:
        if line.strip():
            f = line.split("\t")
            out[f[0]] = EvalReport(int(f[3]), int(f[4]), int(f[5]), int(f[6]))
    return dataset, out


def summary_block(reports: Mapping[str, EvalReport]) -> str:
    lines = ["model        ACC      F1     TP    FP    TN    FN"]
    for name, r in reports.items():
        lines.append(f"{name:<10} {100 * r.accuracy:6.2f}  {100 * r.f1:6.2f}  "
                     f"{r.tp:5d} {r.fp:5d} {r.tn:5d} {r.fn:5d}")
    return "\n".join(lines)
