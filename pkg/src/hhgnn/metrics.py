"""Per-label binary MCC / F1 with macro averages per category and overall.

Missing truth entries (-1) are skipped. Zero denominators yield 0 for both
metrics, which pulls macro averages down on labels never predicted.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import MISSING, POS
from .errors import LengthMismatch


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(y_true, y_pred) -> ConfusionCounts:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"y_true {y_true.shape} vs y_pred {y_pred.shape}")
    seen = y_true != MISSING
    t = y_true[seen] == POS
    p = y_pred[seen].astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(t & p)),
        tn=int(np.sum(~t & ~p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
    )


def mcc(c: ConfusionCounts) -> float:
    # Python ints do not overflow; the product is only converted to float at the end
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def f1(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 0.0 if denom == 0 else 2 * c.tp / denom


@dataclass
class MetricsReport:
    per_label: dict[str, dict[str, float]]
    per_category: dict[str, dict[str, float]]
    overall: dict[str, float]
    excluded: list[str] = field(default_factory=list)

    def headline(self) -> dict[str, float]:
        """The six summary cells: (MCC, MacF1) x (PP, ACT, Overall)."""
        return {
            "pp_mcc": self.per_category["pp"]["mcc"],
            "pp_macf1": self.per_category["pp"]["f1"],
            "act_mcc": self.per_category["act"]["mcc"],
            "act_macf1": self.per_category["act"]["f1"],
            "overall_mcc": self.overall["mcc"],
            "overall_macf1": self.overall["f1"],
        }

    def to_dict(self) -> dict:
        return {
            "per_label": self.per_label,
            "per_category": self.per_category,
            "overall": self.overall,
            "excluded": self.excluded,
            "headline": self.headline(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"{'label':<24}{'MCC':>8}{'MacF1':>8}"]
        for name, m in self.per_label.items():
            lines.append(f"{name:<24}{m['mcc']:>8.3f}{m['f1']:>8.3f}")
        lines.append("-" * 40)
        for cat, title in (("pp", "Phone Placement"), ("act", "Activity")):
            m = self.per_category[cat]
            lines.append(f"{title:<24}{m['mcc']:>8.3f}{m['f1']:>8.3f}")
        lines.append(f"{'Overall':<24}{self.overall['mcc']:>8.3f}{self.overall['f1']:>8.3f}")
        if self.excluded:
            lines.append("excluded (no positives or negatives in train): " + ", ".join(self.excluded))
        return "\n".join(lines) + "\n"


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def aggregate(
    per_label: dict[str, ConfusionCounts],
    pp_names: Sequence[str],
    act_names: Sequence[str],
    active: Optional[dict[str, bool]] = None,
) -> MetricsReport:
    """Unweighted means per category and overall, skipping inactive labels."""
    scores = {n: {"mcc": mcc(c), "f1": f1(c)} for n, c in per_label.items()}
    active = active or {}
    excluded = [n for n in list(pp_names) + list(act_names) if not active.get(n, True)]
    use_pp = [n for n in pp_names if n not in excluded]
    use_act = [n for n in act_names if n not in excluded]
    cat = {
        key: {m: _mean([scores[n][m] for n in names]) for m in ("mcc", "f1")}
        for key, names in (("pp", use_pp), ("act", use_act))
    }
    overall = {m: _mean([scores[n][m] for n in use_pp + use_act]) for m in ("mcc", "f1")}
    return MetricsReport(scores, cat, overall, excluded)


def evaluate(
    targets: np.ndarray,
    predictions: np.ndarray,
    pp_names: Sequence[str],
    act_names: Sequence[str],
    active: Optional[np.ndarray] = None,
) -> MetricsReport:
    """Report for (n, |PP| + |ACT|) tri-state targets and binary predictions."""
    names = list(pp_names) + list(act_names)
    if targets.shape != predictions.shape or targets.shape[1] != len(names):
        raise LengthMismatch("targets, predictions and label names disagree in shape")
    per_label = {n: confusion(targets[:, j], predictions[:, j]) for j, n in enumerate(names)}
    flags = None if active is None else {n: bool(a) for n, a in zip(names, active)}
    return aggregate(per_label, pp_names, act_names, flags)
