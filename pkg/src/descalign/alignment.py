"""Image-to-class nearest-neighbor alignment.

A query field is represented by its selected deep descriptors; each class
is represented by the pooled descriptors of all its support fields.  The
alignment score of a query against a class is the sum, over query
descriptors, of the best cosine similarity attainable in that class's
pool.  Scores feed a softmax to give class probabilities, and an episode
loss is the summed negative log-likelihood of the true classes.

Determinism contract: dot products accumulate over ascending channel
index, argmax ties resolve to the lowest pool index / class id, and the
outer sums run in ascending descriptor / query order.  Under that
ordering the result is bit-for-bit reproducible across backends and
thread counts, and equals a naive exhaustive double loop.

Zero-norm descriptors have no usable direction, so they are excluded from
both query representations and support pools at construction time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import backend
from .core import ActivationMask, DescriptorField, apply_selection_mask
from .errors import DomainError, EmptySelectionError, ShapeError
from .localization import Cam


def _descriptor_matrix(descriptors, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(descriptors, dtype=np.float64))
    if arr.ndim != 2:
        raise ShapeError(f"{what} needs an (n, d) descriptor array, got ndim={arr.ndim}")
    if arr.shape[0] == 0:
        raise EmptySelectionError(f"{what} has no descriptors")
    norms = np.sqrt(np.sum(arr * arr, axis=1))
    if np.any(norms == 0.0):
        raise DomainError(f"{what} contains a zero-norm descriptor")
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SupportPool:
    """All selected descriptors of one class's support fields."""

    class_id: int
    descriptors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "descriptors",
                           _descriptor_matrix(self.descriptors, "support pool"))

    @classmethod
    def from_representations(cls, class_id: int,
                             representations: Sequence["QueryRepresentation"]) -> "SupportPool":
        """Pool the descriptors of several fields, in the given order."""
        if len(representations) == 0:
            raise EmptySelectionError("support pool needs at least one representation")
        return cls(class_id, np.concatenate([r.descriptors for r in representations], axis=0))

    def __len__(self) -> int:
        return self.descriptors.shape[0]


@dataclass(frozen=True)
class QueryRepresentation:
    """Selected descriptors of one field plus their grid coordinates."""

    descriptors: np.ndarray
    coords: tuple[tuple[int, int], ...]

    def __post_init__(self):
        arr = _descriptor_matrix(self.descriptors, "query representation")
        coords = tuple((int(r), int(c)) for r, c in self.coords)
        if len(coords) != arr.shape[0]:
            raise ShapeError(
                f"{arr.shape[0]} descriptors but {len(coords)} coordinates")
        object.__setattr__(self, "descriptors", arr)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return self.descriptors.shape[0]


class AlignmentScore(NamedTuple):
    distance: float
    nn_indices: np.ndarray


@dataclass(frozen=True)
class AlignmentResult:
    """Scores of one query against every class pool."""

    class_ids: tuple[int, ...]
    distances: np.ndarray
    nn_indices: tuple[np.ndarray, ...]
    probabilities: np.ndarray


def _ordered_sum(values: np.ndarray) -> float:
    total = 0.0
    for v in values:
        total += v
    return float(total)


def alignment_distance(query: QueryRepresentation, pool: SupportPool) -> AlignmentScore:
    """Sum of best-in-pool cosine similarities over the query descriptors.

    Also returns, per query descriptor, the index of its nearest pool
    descriptor (lowest index on ties).
    """
    if query.descriptors.shape[1] != pool.descriptors.shape[1]:
        raise ShapeError(
            f"query dimension {query.descriptors.shape[1]} != pool dimension "
            f"{pool.descriptors.shape[1]}")
    sims, idx = backend.kernels().nn_best(query.descriptors, pool.descriptors)
    return AlignmentScore(distance=_ordered_sum(sims), nn_indices=idx)


def class_probabilities(distances) -> np.ndarray:
    """Softmax over alignment scores (higher score = more similar)."""
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] == 0:
        raise ShapeError("class_probabilities needs a non-empty vector")
    if not np.all(np.isfinite(d)):
        raise DomainError("alignment scores must be finite")
    e = np.exp(d - np.max(d))
    return e / np.sum(e)


def _check_pools(pools: Sequence[SupportPool]) -> None:
    if len(pools) == 0:
        raise DomainError("need at least one support pool")
    ids = [p.class_id for p in pools]
    if len(set(ids)) != len(ids):
        raise DomainError(f"duplicate class ids in support pools: {ids}")


def align_to_pools(query: QueryRepresentation,
                   pools: Sequence[SupportPool]) -> AlignmentResult:
    """Alignment scores, nearest-neighbor indices and probabilities per class."""
    _check_pools(pools)
    scores = [alignment_distance(query, p) for p in pools]
    distances = np.array([s.distance for s in scores])
    return AlignmentResult(
        class_ids=tuple(p.class_id for p in pools),
        distances=distances,
        nn_indices=tuple(s.nn_indices for s in scores),
        probabilities=class_probabilities(distances))


def classify(query: QueryRepresentation, pools: Sequence[SupportPool]) -> int:
    """Class id of the highest-scoring pool; ties go to the lowest class id."""
    _check_pools(pools)
    best_id = None
    best = -math.inf
    for pool in sorted(pools, key=lambda p: p.class_id):
        dist = alignment_distance(query, pool).distance
        if dist > best:
            best = dist
            best_id = pool.class_id
    return best_id


def _true_class_position(label: int, pools: Sequence[SupportPool]) -> int:
    for pos, pool in enumerate(pools):
        if pool.class_id == label:
            return pos
    raise DomainError(f"label {label} matches no support pool "
                      f"(classes: {[p.class_id for p in pools]})")


def episode_loss(queries: Sequence[QueryRepresentation], labels: Sequence[int],
                 pools: Sequence[SupportPool]) -> float:
    """Summed negative log-probability of the true class over all queries."""
    _check_pools(pools)
    if len(queries) != len(labels):
        raise ShapeError(f"{len(queries)} queries but {len(labels)} labels")
    if len(queries) == 0:
        raise DomainError("episode needs at least one query")
    total = 0.0
    for query, label in zip(queries, labels):
        pos = _true_class_position(label, pools)
        result = align_to_pools(query, pools)
        total += -math.log(result.probabilities[pos])
    return total


def loss_gradient_wrt_query(queries: Sequence[QueryRepresentation],
                            labels: Sequence[int],
                            pools: Sequence[SupportPool]) -> list[np.ndarray]:
    """Analytic gradient of :func:`episode_loss` in every query descriptor.

    Nearest-neighbor assignments are treated as locally constant (the loss
    is piecewise smooth in the descriptors), which composes the softmax
    cross-entropy gradient with the cosine gradient
    d cos(x, v)/dx = v / (|x||v|) - cos(x, v) * x / |x|^2.
    Returns one (n_i, d) array per query.
    """
    _check_pools(pools)
    if len(queries) != len(labels):
        raise ShapeError(f"{len(queries)} queries but {len(labels)} labels")
    grads = []
    for query, label in zip(queries, labels):
        pos = _true_class_position(label, pools)
        result = align_to_pools(query, pools)
        coeff = result.probabilities.copy()
        coeff[pos] -= 1.0  # d(-log p_true)/d score_k
        x = query.descriptors
        xnorm = np.sqrt(np.sum(x * x, axis=1))
        grad = np.zeros_like(x)
        for k, pool in enumerate(pools):
            nn = pool.descriptors[result.nn_indices[k]]
            nn_norm = np.sqrt(np.sum(nn * nn, axis=1))
            cos = np.sum(x * nn, axis=1) / (xnorm * nn_norm)
            grad += coeff[k] * (nn / (xnorm * nn_norm)[:, None]
                                - (cos / (xnorm * xnorm))[:, None] * x)
        grads.append(grad)
    return grads


def finite_difference_gradients(queries: Sequence[QueryRepresentation],
                                labels: Sequence[int],
                                pools: Sequence[SupportPool],
                                step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of :func:`episode_loss`, for self-checks."""
    grads = []
    for qi, query in enumerate(queries):
        base = query.descriptors
        grad = np.zeros_like(base)
        for i in range(base.shape[0]):
            for c in range(base.shape[1]):
                for sign in (1.0, -1.0):
                    bumped = base.copy()
                    bumped[i, c] += sign * step
                    replaced = list(queries)
                    replaced[qi] = QueryRepresentation(bumped, query.coords)
                    grad[i, c] += sign * episode_loss(replaced, labels, pools)
                grad[i, c] /= 2.0 * step
        grads.append(grad)
    return grads


def nn_margin(query: QueryRepresentation, pools: Sequence[SupportPool]) -> float:
    """Smallest gap between a descriptor's best and second-best pool cosine.

    Gradient checks exclude instances where this margin is tiny, since a
    finite-difference step there can flip a nearest-neighbor assignment.
    Pools with a single descriptor contribute an infinite margin.
    """
    margin = math.inf
    for pool in pools:
        if len(pool) < 2:
            continue
        q = query.descriptors
        p = pool.descriptors
        sims = (q @ p.T) / (np.linalg.norm(q, axis=1)[:, None]
                            * np.linalg.norm(p, axis=1)[None, :])
        top2 = np.sort(sims, axis=1)[:, -2:]
        margin = min(margin, float(np.min(top2[:, 1] - top2[:, 0])))
    return margin


def select_and_build(field: DescriptorField, fused_cam: Cam,
                     select_threshold: float = 0.5) -> QueryRepresentation:
    """Keep the descriptors under high activation-map cells.

    The map must already be on the [0, 1] scale and match the field grid
    (use nearest_resize first if it does not).  Cells with value >=
    select_threshold form a binary selection mask; descriptors that
    survive masking with a nonzero norm are collected in raster order.
    """
    if (fused_cam.h, fused_cam.w) != (field.h, field.w):
        raise ShapeError(
            f"activation map is {fused_cam.h}x{fused_cam.w}, field grid is "
            f"{field.h}x{field.w}; resize it first")
    if not 0.0 < select_threshold <= 1.0:
        raise DomainError(f"selection threshold must lie in (0, 1], got {select_threshold}")
    if np.min(fused_cam.values) < 0.0 or np.max(fused_cam.values) > 1.0:
        raise DomainError("selection expects an activation map on the [0, 1] scale")
    mask = ActivationMask((fused_cam.values >= select_threshold).astype(np.float64))
    masked = apply_selection_mask(field, mask)
    return representation_from_field(masked)


def representation_from_field(field: DescriptorField) -> QueryRepresentation:
    """All nonzero-norm descriptors of a field, raster order, with coordinates."""
    flat = field.descriptors()
    norms = np.sqrt(np.sum(flat * flat, axis=1))
    keep = np.nonzero(norms > 0.0)[0]
    if keep.size == 0:
        raise EmptySelectionError("selection left no usable descriptors")
    coords = tuple((int(i // field.w), int(i % field.w)) for i in keep)
    return QueryRepresentation(flat[keep], coords)
