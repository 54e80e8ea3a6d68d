"""Poisson negative log-likelihood training.

The count y of a triple is modeled as Poisson with rate eta = exp(theta),
so the per-triple cost (dropping the parameter-free log y! term) is
``exp(theta) - y * theta`` and its derivative in theta is ``exp(theta) - y``.
Each epoch visits every nonzero triple plus a sampled set of zero-count
cells, and parameters are updated with Adam per mini-batch.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from relrank.errors import RelrankError, ScoreOverflowError, TrainingDivergedError
from relrank.kg import SplitSpec
from relrank.models import (
    ModelKind,
    SemanticModel,
    accumulate_gradients,
    batch_scores,
    init_model,
    zero_gradients,
)

logger = logging.getLogger(__name__)

# exp() guards: training clips theta inside eta (the clipped rate already
# dwarfs any real count); standalone cost evaluation hard-errors instead.
THETA_CLIP = 30.0
THETA_MAX = 700.0

# Above this many cells the zero-cell complement is not enumerated and
# negatives are drawn by rejection instead.
_COMPLEMENT_ENUM_LIMIT = 20_000_000


def poisson_cost(theta: float, y: float) -> float:
    """Per-triple Poisson cost exp(theta) - y * theta.

    ``theta`` is the log rate, ``y`` the observed count (>= 0).
    """
    if y < 0:
        raise ValueError(f"count must be >= 0, got {y}")
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta}")
    if theta > THETA_MAX:
        raise ScoreOverflowError(f"theta={theta} exceeds overflow guard {THETA_MAX}")
    return math.exp(theta) - y * theta


def poisson_cost_grad(theta: float, y: float) -> float:
    """Derivative of :func:`poisson_cost` in theta: exp(theta) - y."""
    if y < 0:
        raise ValueError(f"count must be >= 0, got {y}")
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta}")
    if theta > THETA_MAX:
        raise ScoreOverflowError(f"theta={theta} exceeds overflow guard {THETA_MAX}")
    return math.exp(theta) - y


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 256
    negative_ratio: float = 10.0
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class TrainReport:
    """Per-epoch training trace; list lengths equal the epochs run."""

    train_cost: list[float] = field(default_factory=list)
    heldout_nll: list[float | None] = field(default_factory=list)
    best_epoch: int = 0
    epoch_seconds: list[float] = field(default_factory=list)
    clipped_scores: int = 0

    def to_json_dict(self) -> dict:
        return asdict(self)


class _NegativeSampler:
    """Uniform zero-count cells from |E| x |R| x |E| minus the nonzero support.

    Small tensors enumerate the complement and sample without replacement
    (so a high ratio degrades gracefully into the full zero-cell sum);
    large tensors fall back to rejection sampling with replacement.
    """

    def __init__(self, n_entities: int, n_relations: int, support_flat: np.ndarray):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.total_cells = n_entities * n_relations * n_entities
        self.support = np.sort(support_flat)
        if self.total_cells <= _COMPLEMENT_ENUM_LIMIT:
            self.complement: np.ndarray | None = np.setdiff1d(
                np.arange(self.total_cells, dtype=np.int64), self.support
            )
        else:
            self.complement = None

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.complement is not None:
            n = min(n, self.complement.size)
            if n == 0:
                return np.empty(0, dtype=np.int64)
            return rng.choice(self.complement, size=n, replace=False)
        picks = np.empty(0, dtype=np.int64)
        while picks.size < n:
            cand = rng.integers(0, self.total_cells, size=2 * (n - picks.size))
            hit = np.searchsorted(self.support, cand)
            in_support = (hit < self.support.size) & (self.support[np.minimum(hit, self.support.size - 1)] == cand)
            picks = np.concatenate([picks, cand[~in_support]])
        return picks[:n]


def _unflatten(flat: np.ndarray, n_entities: int, n_relations: int):
    per_s = n_relations * n_entities
    s = flat // per_s
    rem = flat % per_s
    return s, rem // n_entities, rem % n_entities


class _Adam:
    def __init__(self, blocks: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in blocks.items()}
        self.v = {k: np.zeros_like(v) for k, v in blocks.items()}
        self.t = 0

    def step(self, blocks: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1**self.t
        bc2 = 1.0 - cfg.adam_beta2**self.t
        for name, param in blocks.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= cfg.adam_beta1
            m += (1.0 - cfg.adam_beta1) * g
            v *= cfg.adam_beta2
            v += (1.0 - cfg.adam_beta2) * (g * g)
            param -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


def _guarded_nll_terms(theta: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    clipped = int(np.count_nonzero(theta > THETA_CLIP))
    theta_c = np.minimum(theta, THETA_CLIP)
    return np.exp(theta_c) - y * theta_c, clipped


def heldout_nll(model: SemanticModel, heldout: Sequence[tuple[int, int, int, int]]) -> float | None:
    """Mean guarded Poisson cost over held-out (s, p, o, y) triples."""
    if not heldout:
        return None
    arr = np.asarray(heldout, dtype=np.int64)
    theta = batch_scores(model, arr[:, 0], arr[:, 1], arr[:, 2])
    terms, _ = _guarded_nll_terms(theta, arr[:, 3].astype(np.float64))
    return float(terms.mean())


def train(
    model: SemanticModel, split: SplitSpec, config: TrainConfig
) -> tuple[SemanticModel, TrainReport]:
    """Fit the model to the split's train counts; return the best-epoch state.

    Each epoch visits all nonzero triples plus ``negative_ratio`` times as
    many sampled zero cells, in a seeded shuffled order, applying one Adam
    update per mini-batch.  The returned model carries the parameters of
    the epoch with the lowest held-out mean NLL (the final epoch when the
    split has no held-out triples).  The input model is not mutated.
    """
    table = split.train_counts
    if model.n_entities != table.n_entities or model.n_relations != table.n_relations:
        raise ValueError(
            f"model vocabulary ({model.n_entities}, {model.n_relations}) does not "
            f"match split ({table.n_entities}, {table.n_relations})"
        )
    work = model.copy()
    blocks = work.param_blocks()
    nonzero = table.nonzero_triples()
    pos = np.asarray([(s, p, o) for (s, p, o), _ in nonzero], dtype=np.int64).reshape(-1, 3)
    pos_y = np.asarray([y for _, y in nonzero], dtype=np.float64)
    n_e, n_r = table.n_entities, table.n_relations
    support_flat = (pos[:, 0] * n_r + pos[:, 1]) * n_e + pos[:, 2] if len(pos) else np.empty(0, dtype=np.int64)
    sampler = _NegativeSampler(n_e, n_r, support_flat)
    n_neg = round(config.negative_ratio * len(pos))

    rng = np.random.default_rng(config.seed)
    adam = _Adam(blocks, config)
    report = TrainReport()
    best_nll = math.inf
    best_blocks = {k: v.copy() for k, v in blocks.items()}
    best_epoch = 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        neg_flat = sampler.draw(n_neg, rng) if n_neg else np.empty(0, dtype=np.int64)
        ns, np_, no = _unflatten(neg_flat, n_e, n_r)
        s_all = np.concatenate([pos[:, 0], ns])
        p_all = np.concatenate([pos[:, 1], np_])
        o_all = np.concatenate([pos[:, 2], no])
        y_all = np.concatenate([pos_y, np.zeros(neg_flat.size)])
        perm = rng.permutation(s_all.size)
        cost_sum = 0.0
        for batch_idx, start in enumerate(range(0, perm.size, config.batch_size)):
            sel = perm[start : start + config.batch_size]
            s, p, o, y = s_all[sel], p_all[sel], o_all[sel], y_all[sel]
            theta = batch_scores(work, s, p, o, validate=False)
            terms, clipped = _guarded_nll_terms(theta, y)
            report.clipped_scores += clipped
            batch_cost = float(terms.sum())
            if not math.isfinite(batch_cost):
                raise TrainingDivergedError(epoch, batch_idx)
            cost_sum += batch_cost
            coef = np.exp(np.minimum(theta, THETA_CLIP)) - y
            grads = zero_gradients(work)
            accumulate_gradients(work, s, p, o, coef, grads, validate=False)
            if config.weight_decay > 0:
                for name, param in blocks.items():
                    grads[name] += config.weight_decay * param
            adam.step(blocks, grads)
        report.train_cost.append(cost_sum / max(1, perm.size))
        nll = heldout_nll(work, split.heldout_triples)
        report.heldout_nll.append(nll)
        report.epoch_seconds.append(time.perf_counter() - started)
        if nll is None or nll < best_nll:
            best_nll = nll if nll is not None else math.inf
            best_blocks = {k: v.copy() for k, v in blocks.items()}
            best_epoch = epoch
        logger.debug(
            "epoch %d: train cost %.6f, heldout nll %s", epoch, report.train_cost[-1], nll
        )

    report.best_epoch = best_epoch
    if report.clipped_scores:
        logger.warning(
            "clipped %d scores above %.1f during training", report.clipped_scores, THETA_CLIP
        )
    for name, block in best_blocks.items():
        setattr(work, name, block)
    return work, report


def select_rank(
    kind: ModelKind | str,
    split: SplitSpec,
    ranks: Sequence[int],
    config: TrainConfig,
    hidden_dim: int | None = None,
) -> tuple[int, list[float]]:
    """Train one model per candidate rank; pick the lowest held-out NLL.

    Ties go to the smaller rank.  ``hidden_dim`` (multiway only) defaults
    to each candidate rank.  Returns (best_rank, per-rank NLL) with the NLL
    list aligned to ``ranks``.
    """
    if not ranks:
        raise ValueError("ranks must be nonempty")
    if not split.heldout_triples:
        raise ValueError("rank selection needs a split with held-out triples")
    table = split.train_counts
    nlls: list[float] = []
    for rank in ranks:
        try:
            model = init_model(
                kind,
                table.n_entities,
                table.n_relations,
                rank=rank,
                hidden_dim=hidden_dim,
                seed=config.seed,
            )
            _, report = train(model, split, config)
        except Exception as exc:
            raise RelrankError(f"training failed for rank {rank}: {exc}") from exc
        nlls.append(report.heldout_nll[report.best_epoch])
    best_rank = min(zip(nlls, ranks))[1]
    return best_rank, nlls
