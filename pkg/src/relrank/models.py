"""Latent-variable triple score models.

Four parameterizations share one scoring/gradient contract:

* ``distmult`` — tri-linear dot product of subject, relation, and object
  vectors.
* ``complex`` — tri-linear product over complex-valued embeddings, taking
  the real part (object conjugated); stored as separate real/imaginary
  matrices.
* ``multiway`` — a one-hidden-layer network over the concatenated
  embeddings: ``w_out . tanh(W [a(s); r(p); a(o)])`` with a linear readout.
* ``rescal`` — bilinear form ``a(s)^T R(p) a(o)`` with one d x d matrix
  per relation.

Scores are computed by the active kernel backend (compiled if built,
numpy otherwise); see :mod:`relrank._kernels`.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Iterator

import numpy as np

from relrank import _kernels
from relrank.errors import InputValidationError

# Checkpoint block order; also the canonical field order of the model.
PARAM_FIELDS = (
    "entity_real",
    "entity_imag",
    "relation_real",
    "relation_imag",
    "relation_matrices",
    "nn_weight",
    "nn_out",
)

CHECKPOINT_FORMAT = "relrank-checkpoint"
CHECKPOINT_VERSION = 1


class ModelKind(str, Enum):
    DISTMULT = "distmult"
    COMPLEX = "complex"
    MULTIWAY = "multiway"
    RESCAL = "rescal"


@dataclass
class SemanticModel:
    """Parameters of one score model.

    Exactly the blocks required by ``kind`` are arrays; the rest are None.
    ``hidden_dim`` is set only for the multiway network.
    """

    kind: ModelKind
    rank: int
    n_entities: int
    n_relations: int
    seed: int
    hidden_dim: int | None = None
    entity_real: np.ndarray | None = None
    entity_imag: np.ndarray | None = None
    relation_real: np.ndarray | None = None
    relation_imag: np.ndarray | None = None
    relation_matrices: np.ndarray | None = None
    nn_weight: np.ndarray | None = None
    nn_out: np.ndarray | None = None

    def param_blocks(self) -> dict[str, np.ndarray]:
        """Present parameter blocks, in canonical field order."""
        return {
            name: getattr(self, name)
            for name in PARAM_FIELDS
            if getattr(self, name) is not None
        }

    def copy(self) -> "SemanticModel":
        kwargs = {}
        for f in fields(self):
            value = getattr(self, f.name)
            kwargs[f.name] = value.copy() if isinstance(value, np.ndarray) else value
        return SemanticModel(**kwargs)

    def validate(self) -> None:
        expected = _expected_shapes(
            self.kind, self.n_entities, self.n_relations, self.rank, self.hidden_dim
        )
        for name in PARAM_FIELDS:
            block = getattr(self, name)
            if name in expected:
                if block is None:
                    raise ValueError(f"{self.kind.value} model is missing block {name}")
                if block.shape != expected[name]:
                    raise ValueError(
                        f"block {name} has shape {block.shape}, expected {expected[name]}"
                    )
                if not np.all(np.isfinite(block)):
                    raise ValueError(f"block {name} contains non-finite values")
            elif block is not None:
                raise ValueError(f"{self.kind.value} model must not carry block {name}")


def _expected_shapes(kind, n_entities, n_relations, rank, hidden_dim):
    shapes: dict[str, tuple[int, ...]] = {"entity_real": (n_entities, rank)}
    if kind == ModelKind.DISTMULT:
        shapes["relation_real"] = (n_relations, rank)
    elif kind == ModelKind.COMPLEX:
        shapes["entity_imag"] = (n_entities, rank)
        shapes["relation_real"] = (n_relations, rank)
        shapes["relation_imag"] = (n_relations, rank)
    elif kind == ModelKind.MULTIWAY:
        if hidden_dim is None:
            raise ValueError("multiway model requires hidden_dim")
        shapes["relation_real"] = (n_relations, rank)
        shapes["nn_weight"] = (hidden_dim, 3 * rank)
        shapes["nn_out"] = (hidden_dim,)
    elif kind == ModelKind.RESCAL:
        shapes["relation_matrices"] = (n_relations, rank, rank)
    else:  # pragma: no cover - closed enum
        raise ValueError(f"unknown model kind {kind!r}")
    return shapes


def init_model(
    kind: ModelKind | str,
    n_entities: int,
    n_relations: int,
    rank: int,
    hidden_dim: int | None = None,
    seed: int = 0,
) -> SemanticModel:
    """Create a model with Gaussian(0, 0.1/sqrt(rank)) parameters.

    ``hidden_dim`` applies to the multiway network only and defaults to
    ``rank``.  Deterministic given ``seed``.
    """
    kind = ModelKind(kind)
    if n_entities < 1 or n_relations < 1:
        raise ValueError(
            f"vocabulary sizes must be positive, got {n_entities} entities, "
            f"{n_relations} relations"
        )
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if kind == ModelKind.MULTIWAY:
        hidden_dim = rank if hidden_dim is None else hidden_dim
        if hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {hidden_dim}")
    else:
        hidden_dim = None

    shapes = _expected_shapes(kind, n_entities, n_relations, rank, hidden_dim)
    rng = np.random.default_rng(seed)
    std = 0.1 / np.sqrt(rank)
    model = SemanticModel(
        kind=kind,
        rank=rank,
        n_entities=n_entities,
        n_relations=n_relations,
        seed=seed,
        hidden_dim=hidden_dim,
    )
    for name in PARAM_FIELDS:
        if name in shapes:
            setattr(model, name, rng.normal(0.0, std, size=shapes[name]))
    model.validate()
    return model


def _check_ids(model: SemanticModel, s, p, o) -> None:
    s = np.asarray(s)
    p = np.asarray(p)
    o = np.asarray(o)
    if s.size and (s.min() < 0 or s.max() >= model.n_entities):
        raise ValueError(f"subject id out of range [0, {model.n_entities})")
    if o.size and (o.min() < 0 or o.max() >= model.n_entities):
        raise ValueError(f"object id out of range [0, {model.n_entities})")
    if p.size and (p.min() < 0 or p.max() >= model.n_relations):
        raise ValueError(f"predicate id out of range [0, {model.n_relations})")


def _id_array(ids) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(ids, dtype=np.int64).ravel())


def batch_scores(model: SemanticModel, s, p, o, validate: bool = True) -> np.ndarray:
    """Scores for aligned id arrays ``s``, ``p``, ``o``.

    Inputs of any common shape are accepted; the result carries that shape.
    """
    if validate:
        _check_ids(model, s, p, o)
    shape = np.asarray(s).shape
    s = _id_array(s)
    p = _id_array(p)
    o = _id_array(o)
    if not (s.shape == p.shape == o.shape):
        raise ValueError("s, p, o must have the same shape")
    k = _kernels.impl
    if model.kind == ModelKind.DISTMULT:
        flat = k.scores_distmult(model.entity_real, model.relation_real, s, p, o)
    elif model.kind == ModelKind.COMPLEX:
        flat = k.scores_complex(
            model.entity_real, model.entity_imag,
            model.relation_real, model.relation_imag, s, p, o,
        )
    elif model.kind == ModelKind.MULTIWAY:
        flat = k.scores_multiway(
            model.entity_real, model.relation_real,
            model.nn_weight, model.nn_out, s, p, o,
        )
    else:
        flat = k.scores_rescal(model.entity_real, model.relation_matrices, s, p, o)
    return np.asarray(flat).reshape(shape)


def score(model: SemanticModel, s: int, p: int, o: int) -> float:
    """Score theta(s, p, o) of a single triple."""
    return float(batch_scores(model, [s], [p], [o])[0])


def zero_gradients(model: SemanticModel) -> dict[str, np.ndarray]:
    """Zero-filled gradient arrays matching the model's parameter blocks."""
    return {name: np.zeros_like(block) for name, block in model.param_blocks().items()}


def accumulate_gradients(
    model: SemanticModel,
    s,
    p,
    o,
    coef,
    grads: dict[str, np.ndarray],
    validate: bool = True,
) -> None:
    """Add ``coef[i] * d theta_i / d param`` into ``grads`` for each triple."""
    if validate:
        _check_ids(model, s, p, o)
    s = _id_array(s)
    p = _id_array(p)
    o = _id_array(o)
    coef = np.ascontiguousarray(np.asarray(coef, dtype=np.float64).ravel())
    k = _kernels.impl
    if model.kind == ModelKind.DISTMULT:
        k.grads_distmult(
            model.entity_real, model.relation_real, s, p, o, coef,
            grads["entity_real"], grads["relation_real"],
        )
    elif model.kind == ModelKind.COMPLEX:
        k.grads_complex(
            model.entity_real, model.entity_imag,
            model.relation_real, model.relation_imag, s, p, o, coef,
            grads["entity_real"], grads["entity_imag"],
            grads["relation_real"], grads["relation_imag"],
        )
    elif model.kind == ModelKind.MULTIWAY:
        k.grads_multiway(
            model.entity_real, model.relation_real,
            model.nn_weight, model.nn_out, s, p, o, coef,
            grads["entity_real"], grads["relation_real"],
            grads["nn_weight"], grads["nn_out"],
        )
    else:
        k.grads_rescal(
            model.entity_real, model.relation_matrices, s, p, o, coef,
            grads["entity_real"], grads["relation_matrices"],
        )


def score_gradients(model: SemanticModel, s: int, p: int, o: int) -> dict[str, np.ndarray]:
    """Analytic partial derivatives of theta(s, p, o).

    Returns one dense array per parameter block; entries for parameters the
    triple does not touch are zero.
    """
    grads = zero_gradients(model)
    accumulate_gradients(model, [s], [p], [o], [1.0], grads)
    return grads


def score_all_triples(
    model: SemanticModel,
) -> Iterator[tuple[tuple[int, int, int], float]]:
    """Lazily score every (s, p, o) cell in lexicographic id order.

    Yields ``((s, p, o), theta)``; computation is chunked one subject at a
    time so the full score tensor is never materialized.
    """
    n_e, n_r = model.n_entities, model.n_relations
    p_row = np.repeat(np.arange(n_r, dtype=np.int64), n_e)
    o_row = np.tile(np.arange(n_e, dtype=np.int64), n_r)
    for s in range(n_e):
        s_row = np.full(n_r * n_e, s, dtype=np.int64)
        theta = batch_scores(model, s_row, p_row, o_row, validate=False)
        idx = 0
        for p in range(n_r):
            for o in range(n_e):
                yield (s, p, o), float(theta[idx])
                idx += 1


def dense_score_table(model: SemanticModel) -> np.ndarray:
    """Full theta tensor of shape (n_entities, n_relations, n_entities)."""
    n_e, n_r = model.n_entities, model.n_relations
    table = np.empty((n_e, n_r, n_e), dtype=np.float64)
    p_row = np.repeat(np.arange(n_r, dtype=np.int64), n_e)
    o_row = np.tile(np.arange(n_e, dtype=np.int64), n_r)
    for s in range(n_e):
        s_row = np.full(n_r * n_e, s, dtype=np.int64)
        table[s] = batch_scores(model, s_row, p_row, o_row, validate=False).reshape(
            n_r, n_e
        )
    return table


def save_checkpoint(path: str | Path, model: SemanticModel) -> None:
    """Write the model as JSON with base64 little-endian float64 blocks."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind.value,
        "rank": model.rank,
        "hidden_dim": model.hidden_dim,
        "n_entities": model.n_entities,
        "n_relations": model.n_relations,
        "seed": model.seed,
    }
    params = {}
    for name, block in model.param_blocks().items():
        data = np.ascontiguousarray(block, dtype="<f8")
        params[name] = {
            "shape": list(block.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii"),
        }
    header["params"] = params
    Path(path).write_text(json.dumps(header, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> SemanticModel:
    """Load a model saved by :func:`save_checkpoint`."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputValidationError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InputValidationError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    try:
        model = SemanticModel(
            kind=ModelKind(payload["kind"]),
            rank=int(payload["rank"]),
            n_entities=int(payload["n_entities"]),
            n_relations=int(payload["n_relations"]),
            seed=int(payload["seed"]),
            hidden_dim=None if payload["hidden_dim"] is None else int(payload["hidden_dim"]),
        )
        for name, entry in payload["params"].items():
            if name not in PARAM_FIELDS:
                raise InputValidationError(f"unknown parameter block {name!r} in {path}")
            raw = base64.b64decode(entry["data"])
            block = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(entry["shape"])
            setattr(model, name, np.ascontiguousarray(block))
        model.validate()
    except InputValidationError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise InputValidationError(f"malformed checkpoint {path}: {exc}") from exc
    return model
