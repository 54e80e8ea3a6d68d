"""Recall-at-k evaluation in four detection settings.

All settings require the predicted label triple to equal the ground
truth's.  They differ in the box requirement: phrase detection thresholds
the union boxes, relationship detection thresholds subject and object
boxes separately, and triple / predicate detection ignore boxes (predicate
detection differs only in its inputs: rankings produced from ground-truth
boxes restricted pairs).  Overlap is IoU with a 0.5 threshold.

Matching is greedy in rank order: every prediction consumes at most one
ground truth, every ground truth is matched at most once.  On instances
where each prediction can match at most one ground truth this equals the
optimal bipartite matching.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from relrank.boxes import Box, iou, union_box
from relrank.errors import InputValidationError
from relrank.kg import GroundTruthTuple, TripleCountTable, Vocabulary, zero_shot_filter
from relrank.ranking import RankedRecord

IOU_THRESHOLD = 0.5

DEFAULT_KS = (50, 100)


class EvalSetting(str, Enum):
    PHRASE = "phrase"
    RELATIONSHIP = "relationship"
    PREDICATE = "predicate"
    TRIPLE = "triple"


ALL_SETTINGS = tuple(EvalSetting)


def matches(setting: EvalSetting, pred: RankedRecord, gt: GroundTruthTuple, vocab: Vocabulary) -> bool:
    """Does one prediction count as retrieving one ground-truth tuple?"""
    if (
        pred.subject != vocab.entities[gt.subject_id]
        or pred.predicate != vocab.relations[gt.predicate_id]
        or pred.object != vocab.entities[gt.object_id]
    ):
        return False
    if setting in (EvalSetting.TRIPLE, EvalSetting.PREDICATE):
        return True
    ps = Box.from_list(pred.subject_box)
    po = Box.from_list(pred.object_box)
    if setting is EvalSetting.RELATIONSHIP:
        return (
            iou(ps, gt.subject_box) >= IOU_THRESHOLD
            and iou(po, gt.object_box) >= IOU_THRESHOLD
        )
    return iou(union_box(ps, po), union_box(gt.subject_box, gt.object_box)) >= IOU_THRESHOLD


def _by_image(records: list[RankedRecord]) -> dict[str, list[RankedRecord]]:
    grouped: dict[str, list[RankedRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.image_id, []).append(rec)
    for recs in grouped.values():
        recs.sort(key=lambda r: r.rank)
    return grouped


def matched_at_k(
    ranked: list[RankedRecord],
    gts: list[GroundTruthTuple],
    vocab: Vocabulary,
    setting: EvalSetting,
    k: int,
) -> int:
    """Greedy match count over all images at list depth k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    grouped = _by_image(ranked)
    gts_by_image: dict[str, list[GroundTruthTuple]] = {}
    for gt in gts:
        gts_by_image.setdefault(gt.image_id, []).append(gt)
    total_matched = 0
    for image_id, image_gts in gts_by_image.items():
        taken = [False] * len(image_gts)
        for pred in grouped.get(image_id, [])[:k]:
            for i, gt in enumerate(image_gts):
                if not taken[i] and matches(setting, pred, gt, vocab):
                    taken[i] = True
                    total_matched += 1
                    break
        # images with predictions but no ground truth contribute nothing
    return total_matched


def recall_at_k(
    ranked: list[RankedRecord],
    gts: list[GroundTruthTuple],
    vocab: Vocabulary,
    setting: EvalSetting,
    k: int,
) -> float | None:
    """Pooled recall matched/total; None when there is no ground truth."""
    if not gts:
        return None
    return matched_at_k(ranked, gts, vocab, setting, k) / len(gts)


@dataclass
class EvalReport:
    """Recalls per setting and k, with the matched/total counts behind them.

    ``recalls[setting][k]`` is None when the (possibly zero-shot-filtered)
    ground truth is empty; that is distinct from a recall of 0.
    """

    recalls: dict[str, dict[int, float | None]] = field(default_factory=dict)
    matched: dict[str, dict[int, int]] = field(default_factory=dict)
    total_ground_truth: int = 0
    zero_shot: bool = False
    ks: tuple[int, ...] = DEFAULT_KS

    def to_json_dict(self) -> dict:
        return {
            "zero_shot": self.zero_shot,
            "total_ground_truth": self.total_ground_truth,
            "ks": list(self.ks),
            "recalls": {
                setting: {str(k): v for k, v in per_k.items()}
                for setting, per_k in self.recalls.items()
            },
            "matched": {
                setting: {str(k): v for k, v in per_k.items()}
                for setting, per_k in self.matched.items()
            },
        }

    def format_table(self) -> str:
        """Aligned text table, recalls in percent, one row per setting."""
        ks = sorted(self.ks, reverse=True)
        header = ["setting"] + [f"R@{k}" for k in ks]
        rows = [header]
        for setting, per_k in self.recalls.items():
            row = [setting]
            for k in ks:
                v = per_k.get(k)
                row.append("--" if v is None else f"{100 * v:.2f}")
            rows.append(row)
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = []
        for r in rows:
            lines.append(
                "  ".join(
                    cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                    for c, cell in enumerate(r)
                )
            )
        suffix = " (zero-shot)" if self.zero_shot else ""
        lines.append(f"ground truth: {self.total_ground_truth} tuples{suffix}")
        return "\n".join(lines)


def evaluate(
    ranked: list[RankedRecord],
    gts: list[GroundTruthTuple],
    vocab: Vocabulary,
    settings: tuple[EvalSetting, ...] = ALL_SETTINGS,
    ks: tuple[int, ...] = DEFAULT_KS,
    zero_shot: bool = False,
    train_counts: TripleCountTable | None = None,
) -> EvalReport:
    """Recall-at-k for the requested settings.

    With ``zero_shot`` the ground truth is first restricted to tuples whose
    label triple has zero training count, which needs ``train_counts``.
    """
    if zero_shot:
        if train_counts is None:
            raise InputValidationError("zero-shot evaluation needs training counts")
        gts = zero_shot_filter(gts, train_counts)
    report = EvalReport(zero_shot=zero_shot, total_ground_truth=len(gts), ks=tuple(ks))
    for setting in settings:
        per_k_recall: dict[int, float | None] = {}
        per_k_matched: dict[int, int] = {}
        for k in ks:
            if not gts:
                per_k_recall[k] = None
                per_k_matched[k] = 0
            else:
                m = matched_at_k(ranked, gts, vocab, setting, k)
                per_k_matched[k] = m
                per_k_recall[k] = m / len(gts)
        report.recalls[setting.value] = per_k_recall
        report.matched[setting.value] = per_k_matched
    return report


def write_report(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
