"""Per-image candidate regions and visual scores.

Detection files stand in for the RCNN + classifier stack: each image
carries candidate boxes with per-entity scores and, for every ordered pair
of distinct regions, per-predicate scores for the pair's union box.
Scores are unnormalized nonnegative reals and are never renormalized here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from relrank.boxes import Box, union_box
from relrank.errors import InputValidationError
from relrank.kg import GroundTruthTuple, Vocabulary

# Floor for absent or zero scores: keeps every log finite so the ranking
# order is total.  Applied on load and by the synthesizer.
SCORE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Region:
    box: Box
    entity_scores: np.ndarray  # shape (|entities|,), nonnegative

    def validate(self, n_entities: int) -> None:
        s = self.entity_scores
        if s.shape != (n_entities,):
            raise InputValidationError(
                f"entity_scores has shape {s.shape}, expected ({n_entities},)"
            )
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InputValidationError("entity_scores must be finite and >= 0")
        if not np.any(s > 0):
            raise InputValidationError("entity_scores must have a positive entry")


@dataclass(frozen=True, eq=False)
class PairScores:
    subject_region_index: int
    object_region_index: int
    predicate_scores: np.ndarray  # shape (|relations|,), nonnegative

    def validate(self, n_regions: int, n_relations: int, allow_self_pairs: bool) -> None:
        si, oi = self.subject_region_index, self.object_region_index
        if not (0 <= si < n_regions and 0 <= oi < n_regions):
            raise InputValidationError(f"pair ({si}, {oi}) references a missing region")
        if si == oi and not allow_self_pairs:
            raise InputValidationError(f"pair ({si}, {oi}) pairs a region with itself")
        s = self.predicate_scores
        if s.shape != (n_relations,):
            raise InputValidationError(
                f"predicate_scores has shape {s.shape}, expected ({n_relations},)"
            )
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InputValidationError("predicate_scores must be finite and >= 0")
        if not np.any(s > 0):
            raise InputValidationError("predicate_scores must have a positive entry")


@dataclass(frozen=True, eq=False)
class DetectionSet:
    """One image's regions plus scores for every ordered pair of regions."""

    image_id: str
    regions: tuple[Region, ...]
    pairs: tuple[PairScores, ...]
    allow_self_pairs: bool = False

    def validate(self, vocab: Vocabulary) -> None:
        n = len(self.regions)
        n_ent, n_rel = len(vocab.entities), len(vocab.relations)
        for region in self.regions:
            region.validate(n_ent)
        seen: set[tuple[int, int]] = set()
        for pair in self.pairs:
            pair.validate(n, n_rel, self.allow_self_pairs)
            key = (pair.subject_region_index, pair.object_region_index)
            if key in seen:
                raise InputValidationError(
                    f"image {self.image_id!r}: duplicate pair {key}"
                )
            seen.add(key)
        expected = n * n if self.allow_self_pairs else n * (n - 1)
        if len(self.pairs) != expected:
            missing = [
                (s, o)
                for s in range(n)
                for o in range(n)
                if (s != o or self.allow_self_pairs) and (s, o) not in seen
            ]
            raise InputValidationError(
                f"image {self.image_id!r}: expected {expected} ordered pairs for "
                f"{n} regions, got {len(self.pairs)}; missing {missing[:5]}"
            )

    def pair_union_box(self, pair: PairScores) -> Box:
        return union_box(
            self.regions[pair.subject_region_index].box,
            self.regions[pair.object_region_index].box,
        )


def _scores_from_labels(
    raw: dict, labels: tuple[str, ...], resolve, context: str
) -> np.ndarray:
    scores = np.full(len(labels), SCORE_FLOOR)
    for label, value in raw.items():
        idx = resolve(label)
        if not isinstance(value, (int, float)) or not np.isfinite(value) or value < 0:
            raise InputValidationError(f"{context}: score for {label!r} must be a nonnegative real")
        scores[idx] = max(float(value), SCORE_FLOOR)
    return scores


def load_detections(
    path, vocab: Vocabulary, allow_self_pairs: bool = False
) -> list[DetectionSet]:
    """Parse a detection JSONL file and validate every DetectionSet.

    Labels absent from a score dict get the 1e-12 floor; explicit zeros are
    lifted to the same floor.
    """
    out: list[DetectionSet] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                out.append(_parse_detection(rec, vocab, allow_self_pairs))
            except InputValidationError as exc:
                raise InputValidationError(f"{path}:{lineno}: {exc}") from exc
    return out


def _parse_detection(rec: dict, vocab: Vocabulary, allow_self_pairs: bool) -> DetectionSet:
    if not isinstance(rec, dict) or "image_id" not in rec:
        raise InputValidationError("record must be an object with an image_id")
    image_id = rec["image_id"]
    regions = []
    for i, r in enumerate(rec.get("regions", [])):
        ctx = f"image {image_id!r} region {i}"
        try:
            box = Box.from_list(r["box"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputValidationError(f"{ctx}: bad box: {exc}") from exc
        scores = _scores_from_labels(
            r.get("entity_scores", {}), vocab.entities, vocab.entity_id, ctx
        )
        regions.append(Region(box=box, entity_scores=scores))
    pairs = []
    for i, p in enumerate(rec.get("pairs", [])):
        ctx = f"image {image_id!r} pair {i}"
        if "s" not in p or "o" not in p:
            raise InputValidationError(f"{ctx}: missing s/o region indices")
        scores = _scores_from_labels(
            p.get("predicate_scores", {}), vocab.relations, vocab.relation_id, ctx
        )
        pairs.append(
            PairScores(
                subject_region_index=int(p["s"]),
                object_region_index=int(p["o"]),
                predicate_scores=scores,
            )
        )
    det = DetectionSet(
        image_id=image_id,
        regions=tuple(regions),
        pairs=tuple(pairs),
        allow_self_pairs=allow_self_pairs,
    )
    det.validate(vocab)
    return det


def save_detections(path, detections: list[DetectionSet], vocab: Vocabulary) -> None:
    """Write detection JSONL; scores round-trip bit-exactly through load."""
    with open(path, "w") as fh:
        for det in detections:
            rec = {
                "image_id": det.image_id,
                "regions": [
                    {
                        "box": r.box.as_list(),
                        "entity_scores": {
                            label: float(r.entity_scores[i])
                            for i, label in enumerate(vocab.entities)
                        },
                    }
                    for r in det.regions
                ],
                "pairs": [
                    {
                        "s": p.subject_region_index,
                        "o": p.object_region_index,
                        "predicate_scores": {
                            label: float(p.predicate_scores[i])
                            for i, label in enumerate(vocab.relations)
                        },
                    }
                    for p in det.pairs
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def synthesize_detections(
    tuples: list[GroundTruthTuple],
    vocab: Vocabulary,
    noise: float,
    seed: int = 0,
    predicate_noise: float | None = None,
    allow_self_pairs: bool = False,
) -> list[DetectionSet]:
    """Build detections from ground truth: one region per distinct box.

    True entity labels score 1; every other label draws noise * U(0, 1).
    Pairs whose (subject box, object box) match a ground-truth tuple score
    1 on the true predicate; all other predicate scores draw from the same
    noise distribution, with ``predicate_noise`` (default: ``noise``)
    controlling the predicate side separately.  A predicate_noise above 1
    deliberately lets wrong predicates outscore the true one, which makes
    the visual signal ambiguous while the box layout stays clean.  All
    scores are floored at 1e-12.  Images appear in first-seen tuple order.
    """
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if predicate_noise is None:
        predicate_noise = noise
    if predicate_noise < 0:
        raise ValueError("predicate_noise must be >= 0")
    n_ent, n_rel = len(vocab.entities), len(vocab.relations)
    rng = np.random.default_rng(seed)

    by_image: dict[str, list[GroundTruthTuple]] = {}
    for t in tuples:
        by_image.setdefault(t.image_id, []).append(t)

    out: list[DetectionSet] = []
    for image_id, group in by_image.items():
        boxes: list[Box] = []
        index: dict[tuple, int] = {}
        for t in group:
            for box in (t.subject_box, t.object_box):
                key = (box.x1, box.y1, box.x2, box.y2)
                if key not in index:
                    index[key] = len(boxes)
                    boxes.append(box)
        true_labels: dict[int, set[int]] = {i: set() for i in range(len(boxes))}
        true_predicates: dict[tuple[int, int], set[int]] = {}
        for t in group:
            si = index[(t.subject_box.x1, t.subject_box.y1, t.subject_box.x2, t.subject_box.y2)]
            oi = index[(t.object_box.x1, t.object_box.y1, t.object_box.x2, t.object_box.y2)]
            true_labels[si].add(t.subject_id)
            true_labels[oi].add(t.object_id)
            true_predicates.setdefault((si, oi), set()).add(t.predicate_id)

        regions = []
        for i, box in enumerate(boxes):
            scores = np.maximum(noise * rng.uniform(size=n_ent), SCORE_FLOOR)
            for label in sorted(true_labels[i]):
                scores[label] = 1.0
            regions.append(Region(box=box, entity_scores=scores))
        pairs = []
        n = len(boxes)
        for si in range(n):
            for oi in range(n):
                if si == oi and not allow_self_pairs:
                    continue
                scores = np.maximum(predicate_noise * rng.uniform(size=n_rel), SCORE_FLOOR)
                for label in sorted(true_predicates.get((si, oi), ())):
                    scores[label] = 1.0
                pairs.append(
                    PairScores(
                        subject_region_index=si,
                        object_region_index=oi,
                        predicate_scores=scores,
                    )
                )
        det = DetectionSet(
            image_id=image_id,
            regions=tuple(regions),
            pairs=tuple(pairs),
            allow_self_pairs=allow_self_pairs,
        )
        det.validate(vocab)
        out.append(det)
    return out
