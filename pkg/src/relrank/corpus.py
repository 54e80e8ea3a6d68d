"""Synthetic corpus generation from a planted semantic model.

A ground-truth DistMult model with unit-Gaussian parameters defines a log
rate per (s, p, o) cell; a constant bias shifts the rates so the expected
total count matches the requested sample budget.  Counts are Poisson
samples, expanded into per-image ground-truth tuples with random boxes.
The resulting count distribution is heavily skewed, which is what gives a
semantic prior something to exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relrank.boxes import Box
from relrank.kg import GroundTruthTuple, Vocabulary
from relrank.models import ModelKind, SemanticModel, dense_score_table

DEFAULT_IMAGE_WIDTH = 640
DEFAULT_IMAGE_HEIGHT = 480

# VRD-like density: about 7.5 annotated tuples per image.
SAMPLES_PER_IMAGE = 7.5


@dataclass(frozen=True)
class SyntheticCorpus:
    vocabulary: Vocabulary
    train_tuples: tuple[GroundTruthTuple, ...]
    test_tuples: tuple[GroundTruthTuple, ...]
    planted_model: SemanticModel
    bias: float
    counts: dict[tuple[int, int, int], int]


def plant_model(
    n_entities: int, n_relations: int, rank: int = 4, seed: int = 0
) -> SemanticModel:
    """DistMult with unit-Gaussian parameters (wider than the training init,
    so planted scores are skewed enough to matter)."""
    rng = np.random.default_rng(seed)
    model = SemanticModel(
        kind=ModelKind.DISTMULT,
        rank=rank,
        n_entities=n_entities,
        n_relations=n_relations,
        seed=seed,
        entity_real=rng.standard_normal((n_entities, rank)),
        relation_real=rng.standard_normal((n_relations, rank)),
    )
    model.validate()
    return model


def sample_counts(
    model: SemanticModel, target_samples: int, seed: int = 0
) -> tuple[dict[tuple[int, int, int], int], float]:
    """Poisson-sample a count table whose expected total is target_samples.

    Returns (counts over nonzero cells, bias) where rate(s,p,o) =
    exp(theta(s,p,o) + bias).  The bias is the constant log-shift that makes
    the rates sum to target_samples; it changes no ordering among cells.
    """
    if target_samples < 1:
        raise ValueError("target_samples must be >= 1")
    theta = dense_score_table(model)
    flat = theta.reshape(-1)
    peak = flat.max()
    bias = float(np.log(target_samples) - (peak + np.log(np.exp(flat - peak).sum())))
    rng = np.random.default_rng(seed)
    y = rng.poisson(np.exp(flat + bias))
    counts: dict[tuple[int, int, int], int] = {}
    n_e, n_r = model.n_entities, model.n_relations
    for idx in np.nonzero(y)[0]:
        s, rem = divmod(int(idx), n_r * n_e)
        p, o = divmod(rem, n_e)
        counts[(s, p, o)] = int(y[idx])
    return counts, bias


def _default_labels(n_entities: int, n_relations: int) -> Vocabulary:
    return Vocabulary(
        entities=tuple(f"e{i:03d}" for i in range(n_entities)),
        relations=tuple(f"r{i:03d}" for i in range(n_relations)),
    )


def _random_box(rng: np.random.Generator, width: int, height: int) -> Box:
    x1 = int(rng.integers(0, width - 4))
    y1 = int(rng.integers(0, height - 4))
    w = int(rng.integers(4, width - x1 + 1))
    h = int(rng.integers(4, height - y1 + 1))
    return Box(float(x1), float(y1), float(x1 + w), float(y1 + h))


def generate_corpus(
    n_entities: int,
    n_relations: int,
    n_images: int,
    rank: int = 4,
    samples: int | None = None,
    test_fraction: float = 0.2,
    seed: int = 0,
    image_width: int = DEFAULT_IMAGE_WIDTH,
    image_height: int = DEFAULT_IMAGE_HEIGHT,
) -> SyntheticCorpus:
    """Planted-model corpus: Poisson counts expanded into boxed tuples.

    Each sampled instance lands in a uniformly random image; images are
    split into train and test as whole units so test images contribute no
    training statistics.  All randomness flows from ``seed``.
    """
    if min(n_entities, n_relations, n_images) < 1:
        raise ValueError("sizes must be >= 1")
    if not 0 <= test_fraction < 1:
        raise ValueError("test_fraction must lie in [0, 1)")
    if samples is None:
        samples = round(SAMPLES_PER_IMAGE * n_images)
    model = plant_model(n_entities, n_relations, rank=rank, seed=seed)
    counts, bias = sample_counts(model, samples, seed=seed + 1)
    vocab = _default_labels(n_entities, n_relations)

    rng = np.random.default_rng(seed + 2)
    n_test = int(round(test_fraction * n_images))
    test_images = set(rng.permutation(n_images)[:n_test].tolist())

    train: list[GroundTruthTuple] = []
    test: list[GroundTruthTuple] = []
    for (s, p, o) in sorted(counts):
        for _ in range(counts[(s, p, o)]):
            image = int(rng.integers(0, n_images))
            tup = GroundTruthTuple(
                image_id=f"img{image:05d}",
                subject_id=s,
                predicate_id=p,
                object_id=o,
                subject_box=_random_box(rng, image_width, image_height),
                object_box=_random_box(rng, image_width, image_height),
            )
            (test if image in test_images else train).append(tup)
    key = lambda t: (t.image_id, t.subject_id, t.predicate_id, t.object_id)
    return SyntheticCorpus(
        vocabulary=vocab,
        train_tuples=tuple(sorted(train, key=key)),
        test_tuples=tuple(sorted(test, key=key)),
        planted_model=model,
        bias=bias,
        counts=counts,
    )
