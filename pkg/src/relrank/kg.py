"""Vocabularies, ground-truth annotations, triple counts, and splits.

Triple counts are the absolute frequencies of (subject, predicate, object)
label triples aggregated over all annotated images; slot marginals are the
Laplace-smoothed relative frequencies used as denominators by the joint
ranking score.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from relrank.boxes import Box
from relrank.errors import InputValidationError

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class Vocabulary:
    """Entity and relation label lists; a label's id is its list position."""

    entities: tuple[str, ...]
    relations: tuple[str, ...]
    _entity_ids: dict[str, int] = field(init=False, repr=False, compare=False)
    _relation_ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ent_ids = {label: i for i, label in enumerate(self.entities)}
        rel_ids = {label: i for i, label in enumerate(self.relations)}
        if len(ent_ids) != len(self.entities):
            raise InputValidationError("duplicate entity labels in vocabulary")
        if len(rel_ids) != len(self.relations):
            raise InputValidationError("duplicate relation labels in vocabulary")
        object.__setattr__(self, "_entity_ids", ent_ids)
        object.__setattr__(self, "_relation_ids", rel_ids)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, label: str) -> int:
        try:
            return self._entity_ids[label]
        except KeyError:
            raise InputValidationError(f"unknown entity label {label!r}") from None

    def relation_id(self, label: str) -> int:
        try:
            return self._relation_ids[label]
        except KeyError:
            raise InputValidationError(f"unknown relation label {label!r}") from None


@dataclass(frozen=True)
class GroundTruthTuple:
    """One annotated relationship instance in one image."""

    image_id: str
    subject_id: int
    predicate_id: int
    object_id: int
    subject_box: Box
    object_box: Box

    @property
    def triple(self) -> Triple:
        return (self.subject_id, self.predicate_id, self.object_id)


@dataclass(frozen=True)
class TripleCountTable:
    """Sparse nonzero triple counts plus smoothed slot marginals.

    ``counts`` maps (s, p, o) to its absolute frequency (>= 1; zeros are
    implicit).  Marginals are add-``smoothing`` relative frequencies over
    each slot's full vocabulary, so they are strictly positive and each sums
    to 1.
    """

    counts: Mapping[Triple, int]
    n_entities: int
    n_relations: int
    total_samples: int
    smoothing: float
    subject_marginal: np.ndarray
    predicate_marginal: np.ndarray
    object_marginal: np.ndarray

    @classmethod
    def build(
        cls,
        counts: Mapping[Triple, int],
        n_entities: int,
        n_relations: int,
        smoothing: float = 1.0,
    ) -> "TripleCountTable":
        if smoothing <= 0:
            raise InputValidationError(f"smoothing must be positive, got {smoothing}")
        subj = np.zeros(n_entities, dtype=np.float64)
        pred = np.zeros(n_relations, dtype=np.float64)
        obj = np.zeros(n_entities, dtype=np.float64)
        total = 0
        for (s, p, o), y in counts.items():
            if y < 1:
                raise InputValidationError(
                    f"stored count for {(s, p, o)} must be >= 1, got {y}"
                )
            if not (0 <= s < n_entities and 0 <= o < n_entities and 0 <= p < n_relations):
                raise InputValidationError(f"triple {(s, p, o)} out of vocabulary range")
            subj[s] += y
            pred[p] += y
            obj[o] += y
            total += int(y)
        return cls(
            counts=dict(counts),
            n_entities=n_entities,
            n_relations=n_relations,
            total_samples=total,
            smoothing=smoothing,
            subject_marginal=(subj + smoothing) / (total + smoothing * n_entities),
            predicate_marginal=(pred + smoothing) / (total + smoothing * n_relations),
            object_marginal=(obj + smoothing) / (total + smoothing * n_entities),
        )

    def count(self, s: int, p: int, o: int) -> int:
        return self.counts.get((s, p, o), 0)

    def nonzero_triples(self) -> list[tuple[Triple, int]]:
        """Stored (triple, count) pairs in lexicographic triple order."""
        return sorted(self.counts.items())

    @property
    def n_nonzero(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class SplitSpec:
    """A train count table plus the held-out nonzero triples."""

    train_counts: TripleCountTable
    heldout_triples: tuple[tuple[int, int, int, int], ...]  # (s, p, o, y)
    seed: int


def aggregate_counts(
    tuples: Sequence[GroundTruthTuple],
    vocab: Vocabulary,
    smoothing: float = 1.0,
) -> TripleCountTable:
    """Count label triples over all annotation rows.

    Every row increments its triple's count, including identical duplicates
    within one image.  An out-of-range id raises, naming the offending
    tuple index.
    """
    counter: Counter[Triple] = Counter()
    for idx, gt in enumerate(tuples):
        ok = (
            0 <= gt.subject_id < vocab.n_entities
            and 0 <= gt.object_id < vocab.n_entities
            and 0 <= gt.predicate_id < vocab.n_relations
        )
        if not ok:
            raise InputValidationError(
                f"tuple {idx} has an id outside the vocabulary: {gt.triple}"
            )
        counter[gt.triple] += 1
    return TripleCountTable.build(
        counter, vocab.n_entities, vocab.n_relations, smoothing=smoothing
    )


def make_split(table: TripleCountTable, fraction: float = 0.05, seed: int = 0) -> SplitSpec:
    """Hold out ``fraction`` of the nonzero triples for validation.

    The held-out count is round(fraction * nonzero), at least 1 (Python
    rounding, ties to even).  Selection shuffles the sorted nonzero-triple
    list with a seeded generator, so the split does not depend on map
    iteration order.  Held-out triples are removed from the train table's
    support and its marginals are recomputed.
    """
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    nonzero = table.nonzero_triples()
    if not nonzero:
        raise ValueError("cannot split an empty count table")
    n_held = max(1, round(fraction * len(nonzero)))
    order = np.random.default_rng(seed).permutation(len(nonzero))
    held_idx = set(order[:n_held].tolist())
    heldout = tuple(
        (s, p, o, y) for i, ((s, p, o), y) in enumerate(nonzero) if i in held_idx
    )
    train = {t: y for i, (t, y) in enumerate(nonzero) if i not in held_idx}
    train_counts = TripleCountTable.build(
        train, table.n_entities, table.n_relations, smoothing=table.smoothing
    )
    return SplitSpec(train_counts=train_counts, heldout_triples=heldout, seed=seed)


def zero_shot_filter(
    test: Sequence[GroundTruthTuple], train: TripleCountTable
) -> list[GroundTruthTuple]:
    """Test tuples whose label triple never occurs in the train counts."""
    return [gt for gt in test if train.count(*gt.triple) == 0]


# ---------------------------------------------------------------------------
# File formats


def load_vocabulary(entities_path: str | Path, relations_path: str | Path) -> Vocabulary:
    """Read entity and relation label files (one label per line)."""
    return Vocabulary(
        entities=_read_labels(entities_path),
        relations=_read_labels(relations_path),
    )


def _read_labels(path: str | Path) -> tuple[str, ...]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputValidationError(f"cannot read vocabulary file {path}: {exc}") from exc
    labels = tuple(line.strip() for line in text.splitlines() if line.strip())
    if not labels:
        raise InputValidationError(f"vocabulary file {path} is empty")
    return labels


def save_labels(path: str | Path, labels: Iterable[str]) -> None:
    Path(path).write_text("".join(f"{label}\n" for label in labels))


def load_annotations(path: str | Path, vocab: Vocabulary) -> list[GroundTruthTuple]:
    """Read ground-truth tuples from a JSON-lines annotation file.

    Each line holds one object with ``image_id``, ``subject``, ``predicate``,
    ``object`` labels and pixel ``subject_box`` / ``object_box`` corner
    coordinates.
    """
    tuples = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputValidationError(f"cannot read annotation file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            tuples.append(
                GroundTruthTuple(
                    image_id=str(rec["image_id"]),
                    subject_id=vocab.entity_id(rec["subject"]),
                    predicate_id=vocab.relation_id(rec["predicate"]),
                    object_id=vocab.entity_id(rec["object"]),
                    subject_box=Box.from_list(rec["subject_box"]),
                    object_box=Box.from_list(rec["object_box"]),
                )
            )
        except KeyError as exc:
            raise InputValidationError(f"{path}:{lineno}: missing field {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise InputValidationError(f"{path}:{lineno}: {exc}") from exc
        except InputValidationError as exc:
            raise InputValidationError(f"{path}:{lineno}: {exc}") from exc
    return tuples


def save_annotations(
    path: str | Path, tuples: Sequence[GroundTruthTuple], vocab: Vocabulary
) -> None:
    with open(path, "w") as fh:
        for gt in tuples:
            rec = {
                "image_id": gt.image_id,
                "subject": vocab.entities[gt.subject_id],
                "predicate": vocab.relations[gt.predicate_id],
                "object": vocab.entities[gt.object_id],
                "subject_box": gt.subject_box.as_list(),
                "object_box": gt.object_box.as_list(),
            }
            fh.write(json.dumps(rec) + "\n")
