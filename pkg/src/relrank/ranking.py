"""Joint ranking of (i_s, i_o, s, p, o) candidates per image.

The ranking score fuses three parts in log space: the semantic prior
log eta(theta) (a Boltzmann prior with inverse temperature beta, beta = 1
meaning log eta = theta for a model-backed prior), the visual detection
log-scores, and the subtracted log marginals from the training counts:

    log_score = beta * log eta(s,p,o)
                + log CNN_e(s|i_s) + log CNN_r(p|i_p) + log CNN_e(o|i_o)
                - log m(s) - log m(p) - log m(o)

Everything stays in log space; the product form of the same score
overflows with many small factors.

Bitwise reproducibility note: additions and subtractions are exact IEEE
operations, but np.log may round differently between scalar and SIMD code
paths.  Every log here is therefore taken once over a full array (score
vectors, marginal vectors, the dense prior table) and indexed afterwards,
so the scalar scorer and the batched ranker see identical values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from relrank.detection import DetectionSet, PairScores
from relrank.errors import FusionError, InputValidationError
from relrank.kg import TripleCountTable, Vocabulary
from relrank.models import SemanticModel, batch_scores, dense_score_table

DEFAULT_PRUNE = 10

# A dense prior table has |E|^2 * |R| cells; above this it is not cached
# and model-backed priors fall back to per-candidate scoring.
MAX_CACHE_CELLS = 20_000_000


@dataclass(frozen=True)
class RankedPrediction:
    subject_region_index: int
    object_region_index: int
    s: int
    p: int
    o: int
    log_score: float


@dataclass
class SemanticPrior:
    """Boltzmann prior over triples, backed by a model or raw counts.

    A model-backed prior uses log eta = theta; a count-backed prior uses
    log eta = log(y + count_offset), the no-generalization baseline (every
    unseen triple sits at the constant log(count_offset) floor).
    """

    source: SemanticModel | TripleCountTable
    beta: float = 1.0
    count_offset: float = 1.0
    max_cache_cells: int = MAX_CACHE_CELLS
    _table: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.source, TripleCountTable) and self.count_offset <= 0:
            raise ValueError("count_offset must be > 0 for a count-backed prior")

    @property
    def n_entities(self) -> int:
        return self.source.n_entities

    @property
    def n_relations(self) -> int:
        return self.source.n_relations

    def log_eta_table(self) -> np.ndarray | None:
        """Dense beta * log eta over all (s, p, o); None if too large."""
        if self._table is not None:
            return self._table
        cells = self.n_entities * self.n_relations * self.n_entities
        if cells > self.max_cache_cells:
            return None
        if isinstance(self.source, TripleCountTable):
            dense = np.full(
                (self.n_entities, self.n_relations, self.n_entities), float(self.count_offset)
            )
            for (s, p, o), y in self.source.nonzero_triples():
                dense[s, p, o] += y
            table = self.beta * np.log(dense)
        else:
            table = self.beta * dense_score_table(self.source)
        self._table = table
        return table

    def log_eta(self, s: np.ndarray, p: np.ndarray, o: np.ndarray) -> np.ndarray:
        table = self.log_eta_table()
        if table is not None:
            return table[s, p, o]
        if isinstance(self.source, TripleCountTable):
            y = np.array(
                [self.source.count(int(a), int(b), int(c)) for a, b, c in zip(s, p, o)],
                dtype=np.float64,
            )
            return self.beta * np.log(y + self.count_offset)
        return self.beta * batch_scores(self.source, s, p, o)


def _check_factor(value: float, name: str) -> None:
    if not np.isfinite(value):
        raise FusionError(f"non-finite factor: {name} = {value}")


def log_joint_score(
    prior: SemanticPrior,
    marginals: TripleCountTable,
    det: DetectionSet,
    pair: PairScores,
    s: int,
    p: int,
    o: int,
) -> float:
    """Joint log score of one candidate six-tuple."""
    ids = np.asarray([s]), np.asarray([p]), np.asarray([o])
    theta = float(prior.log_eta(*ids)[0])
    with np.errstate(divide="ignore"):
        ls = float(np.log(det.regions[pair.subject_region_index].entity_scores)[s])
        lp = float(np.log(pair.predicate_scores)[p])
        lo = float(np.log(det.regions[pair.object_region_index].entity_scores)[o])
        lms = float(np.log(marginals.subject_marginal)[s])
        lmp = float(np.log(marginals.predicate_marginal)[p])
        lmo = float(np.log(marginals.object_marginal)[o])
    _check_factor(theta, "semantic prior")
    _check_factor(ls, "subject entity score")
    _check_factor(lp, "predicate score")
    _check_factor(lo, "object entity score")
    _check_factor(lms, "subject marginal")
    _check_factor(lmp, "predicate marginal")
    _check_factor(lmo, "object marginal")
    return theta + ls + lp + lo - lms - lmp - lmo


def visual_only_score(det: DetectionSet, pair: PairScores, s: int, p: int, o: int) -> float:
    """Detection-only log score: no prior, no marginal denominators."""
    with np.errstate(divide="ignore"):
        ls = float(np.log(det.regions[pair.subject_region_index].entity_scores)[s])
        lp = float(np.log(pair.predicate_scores)[p])
        lo = float(np.log(det.regions[pair.object_region_index].entity_scores)[o])
    _check_factor(ls, "subject entity score")
    _check_factor(lp, "predicate score")
    _check_factor(lo, "object entity score")
    return ls + lp + lo


def _top_labels(scores: np.ndarray, m: int | None) -> np.ndarray:
    if m is None or m <= 0 or m >= scores.size:
        return np.arange(scores.size)
    order = np.argsort(-scores, kind="stable")[:m]
    return np.sort(order)


def rank_image(
    prior: SemanticPrior | None,
    marginals: TripleCountTable | None,
    det: DetectionSet,
    k: int,
    prune: int | None = DEFAULT_PRUNE,
    visual_only: bool = False,
) -> list[RankedPrediction]:
    """Top-k candidates of one image by descending log score.

    Ties break by ascending (subject_region_index, object_region_index,
    s, p, o).  With ``prune`` set, only the top-``prune`` entity labels per
    region and predicates per pair are scored (an approximation; disable
    with None to match the exhaustive ranking exactly).  ``visual_only``
    drops the prior and marginal terms, ranking on detection scores alone.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not visual_only:
        if prior is None or marginals is None:
            raise ValueError("joint ranking needs a prior and marginals")
        table = prior.log_eta_table()
        with np.errstate(divide="ignore"):
            lms = np.log(marginals.subject_marginal)
            lmp = np.log(marginals.predicate_marginal)
            lmo = np.log(marginals.object_marginal)
        if not (
            np.all(np.isfinite(lms)) and np.all(np.isfinite(lmp)) and np.all(np.isfinite(lmo))
        ):
            raise FusionError("non-finite factor: log marginals")
    if not det.pairs:
        return []

    with np.errstate(divide="ignore"):
        region_logs = [np.log(r.entity_scores) for r in det.regions]
        pair_logs = [np.log(p.predicate_scores) for p in det.pairs]
    region_picks = [_top_labels(r.entity_scores, prune) for r in det.regions]
    si_parts: list[np.ndarray] = []
    oi_parts: list[np.ndarray] = []
    s_parts: list[np.ndarray] = []
    p_parts: list[np.ndarray] = []
    o_parts: list[np.ndarray] = []
    score_parts: list[np.ndarray] = []
    for pair_idx, pair in enumerate(det.pairs):
        si, oi = pair.subject_region_index, pair.object_region_index
        sub = region_picks[si]
        pred = _top_labels(pair.predicate_scores, prune)
        obj = region_picks[oi]
        ls = region_logs[si][sub][:, None, None]
        lp = pair_logs[pair_idx][pred][None, :, None]
        lo = region_logs[oi][obj][None, None, :]
        if visual_only:
            block = (ls + lp) + lo
        else:
            if table is not None:
                theta = table[np.ix_(sub, pred, obj)]
            else:
                grid = np.meshgrid(sub, pred, obj, indexing="ij")
                theta = prior.log_eta(
                    grid[0].ravel(), grid[1].ravel(), grid[2].ravel()
                ).reshape(len(sub), len(pred), len(obj))
            block = (
                (((((theta + ls) + lp) + lo) - lms[sub][:, None, None])
                 - lmp[pred][None, :, None])
                - lmo[obj][None, None, :]
            )
        if not np.all(np.isfinite(block)):
            raise FusionError(f"non-finite score in image {det.image_id!r} pair ({si}, {oi})")
        grid_s, grid_p, grid_o = np.meshgrid(sub, pred, obj, indexing="ij")
        n = block.size
        si_parts.append(np.full(n, si, dtype=np.int64))
        oi_parts.append(np.full(n, oi, dtype=np.int64))
        s_parts.append(grid_s.ravel())
        p_parts.append(grid_p.ravel())
        o_parts.append(grid_o.ravel())
        score_parts.append(block.ravel())

    scores = np.concatenate(score_parts)
    si_all = np.concatenate(si_parts)
    oi_all = np.concatenate(oi_parts)
    s_all = np.concatenate(s_parts)
    p_all = np.concatenate(p_parts)
    o_all = np.concatenate(o_parts)

    if k < scores.size:
        cutoff = np.partition(scores, scores.size - k)[scores.size - k]
        keep = scores >= cutoff
        scores, si_all, oi_all = scores[keep], si_all[keep], oi_all[keep]
        s_all, p_all, o_all = s_all[keep], p_all[keep], o_all[keep]
    order = np.lexsort((o_all, p_all, s_all, oi_all, si_all, -scores))[:k]
    return [
        RankedPrediction(
            subject_region_index=int(si_all[i]),
            object_region_index=int(oi_all[i]),
            s=int(s_all[i]),
            p=int(p_all[i]),
            o=int(o_all[i]),
            log_score=float(scores[i]),
        )
        for i in order
    ]


@dataclass(frozen=True)
class RankedRecord:
    """One line of a ranked-output file, label-level with boxes."""

    image_id: str
    rank: int
    log_score: float
    subject: str
    predicate: str
    object: str
    subject_box: list[float]
    object_box: list[float]


def write_ranked(path, per_image: list[tuple[DetectionSet, list[RankedPrediction]]], vocab: Vocabulary) -> None:
    """Ranked JSONL, rank numbered from 1 within each image."""
    with open(path, "w") as fh:
        for det, preds in per_image:
            for rank, pred in enumerate(preds, start=1):
                rec = {
                    "image_id": det.image_id,
                    "rank": rank,
                    "log_score": pred.log_score,
                    "subject": vocab.entities[pred.s],
                    "predicate": vocab.relations[pred.p],
                    "object": vocab.entities[pred.o],
                    "subject_box": det.regions[pred.subject_region_index].box.as_list(),
                    "object_box": det.regions[pred.object_region_index].box.as_list(),
                }
                fh.write(json.dumps(rec) + "\n")


def load_ranked(path) -> list[RankedRecord]:
    out: list[RankedRecord] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(
                    RankedRecord(
                        image_id=rec["image_id"],
                        rank=int(rec["rank"]),
                        log_score=float(rec["log_score"]),
                        subject=rec["subject"],
                        predicate=rec["predicate"],
                        object=rec["object"],
                        subject_box=[float(v) for v in rec["subject_box"]],
                        object_box=[float(v) for v in rec["object_box"]],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputValidationError(f"{path}:{lineno}: bad ranked record: {exc}") from exc
    return out
