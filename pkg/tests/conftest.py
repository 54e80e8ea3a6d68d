import numpy as np
import pytest

from relrank.boxes import Box
from relrank.kg import GroundTruthTuple, Vocabulary
from relrank.ranking import RankedRecord


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    return Vocabulary(
        entities=("person", "dog", "horse"),
        relations=("rides", "next_to"),
    )


def make_box(x1=0.0, y1=0.0, x2=10.0, y2=10.0) -> Box:
    return Box(float(x1), float(y1), float(x2), float(y2))


def make_tuple(image_id="img0", s=0, p=0, o=1, sbox=None, obox=None) -> GroundTruthTuple:
    return GroundTruthTuple(
        image_id=image_id,
        subject_id=s,
        predicate_id=p,
        object_id=o,
        subject_box=sbox or make_box(0, 0, 10, 10),
        object_box=obox or make_box(20, 20, 30, 30),
    )


def ranked_records(dets_and_preds, vocab) -> list[RankedRecord]:
    """Flatten rank_image output into the records the evaluator consumes."""
    out = []
    for det, preds in dets_and_preds:
        for rank, pr in enumerate(preds, start=1):
            out.append(
                RankedRecord(
                    image_id=det.image_id,
                    rank=rank,
                    log_score=pr.log_score,
                    subject=vocab.entities[pr.s],
                    predicate=vocab.relations[pr.p],
                    object=vocab.entities[pr.o],
                    subject_box=det.regions[pr.subject_region_index].box.as_list(),
                    object_box=det.regions[pr.object_region_index].box.as_list(),
                )
            )
    return out


def random_box(rng: np.random.Generator, span=100) -> Box:
    x1 = int(rng.integers(0, span))
    y1 = int(rng.integers(0, span))
    return Box(
        float(x1),
        float(y1),
        float(x1 + int(rng.integers(1, span))),
        float(y1 + int(rng.integers(1, span))),
    )
