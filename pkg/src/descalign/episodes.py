"""Episode construction and evaluation.

An episode is one C-way K-shot task: C classes sampled without
replacement, and per class K support records plus a fixed number of query
records, also without replacement, so no record appears on both sides.
Evaluation runs many episodes, classifies every query by its best
alignment score, and reports the mean episode accuracy with a 95%
confidence halfwidth of 1.96 * s / sqrt(n) (sample standard deviation).

Reproducibility: episode i draws from a fresh generator seeded with
SeedSequence((root_seed, i)), so results are identical whether episodes
run sequentially or fanned out across worker threads (``DA_THREADS``
overrides the worker count, default: available parallelism).  Reports are
assembled in episode-index order regardless of completion order.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import backend
from .alignment import (QueryRepresentation, SupportPool, _ordered_sum,
                        representation_from_field, select_and_build)
from .core import DescriptorField, nearest_resize
from .daf import read_feature_file, write_feature_file
from .errors import CapacityError, DomainError, ShapeError
from .localization import LocalizerWeights, localize_field, random_localizer_weights
from .manifest import DatasetManifest, ManifestRecord, write_manifest

_LOCALIZER_SEED_SALT = 0xDA5EED


@dataclass(frozen=True)
class EpisodeSpec:
    """Episode composition: ways, shots, queries per class, root seed."""

    ways: int
    shots: int
    n_query: int
    seed: int = 0

    def __post_init__(self):
        if self.ways < 2:
            raise DomainError(f"ways must be >= 2, got {self.ways}")
        if self.shots < 1:
            raise DomainError(f"shots must be >= 1, got {self.shots}")
        if self.n_query < 1:
            raise DomainError(f"n_query must be >= 1, got {self.n_query}")


@dataclass(frozen=True)
class Episode:
    """Sampled record indices for one task; labels are class positions."""

    class_names: tuple[str, ...]
    support_ids: tuple[tuple[int, ...], ...]
    query_ids: tuple[int, ...]
    query_labels: tuple[int, ...]


@dataclass(frozen=True)
class EvalReport:
    n_episodes: int
    accuracies: tuple[float, ...]
    mean_accuracy: float
    ci95_halfwidth: float
    wsol: dict | None = None
    wall_seconds: float = 0.0


class ConfidenceInterval(NamedTuple):
    mean: float
    halfwidth: float


def confidence_interval(accuracies: Sequence[float]) -> ConfidenceInterval:
    """Mean and 1.96 * s / sqrt(n) halfwidth (s: n-1 denominator)."""
    n = len(accuracies)
    if n < 2:
        raise DomainError(f"confidence interval needs >= 2 values, got {n}")
    arr = np.asarray(accuracies, dtype=np.float64)
    mean = float(np.mean(arr))
    if np.min(arr) == np.max(arr):  # constant list: exactly zero spread
        return ConfidenceInterval(mean=mean, halfwidth=0.0)
    s = float(np.std(arr, ddof=1))
    return ConfidenceInterval(mean=mean, halfwidth=float(1.96 * s / np.sqrt(n)))


def sample_episode(manifest: DatasetManifest, spec: EpisodeSpec,
                   rng: np.random.Generator) -> Episode:
    """Draw one episode; deterministic for a given generator state."""
    if spec.ways > len(manifest.classes):
        raise CapacityError(
            f"manifest has {len(manifest.classes)} classes, episode needs {spec.ways}")
    class_pos = rng.choice(len(manifest.classes), size=spec.ways, replace=False)
    class_names = tuple(manifest.classes[int(p)] for p in class_pos)
    need = spec.shots + spec.n_query
    support_ids: list[tuple[int, ...]] = []
    query_ids: list[int] = []
    query_labels: list[int] = []
    for label, name in enumerate(class_names):
        ids = manifest.class_record_indices(name)
        if len(ids) < need:
            raise CapacityError(
                f"class {name!r} has {len(ids)} records, episode needs {need}")
        picked = rng.choice(len(ids), size=need, replace=False)
        chosen = [ids[int(p)] for p in picked]
        support_ids.append(tuple(chosen[:spec.shots]))
        query_ids.extend(chosen[spec.shots:])
        query_labels.extend([label] * spec.n_query)
    return Episode(class_names=class_names, support_ids=tuple(support_ids),
                   query_ids=tuple(query_ids), query_labels=tuple(query_labels))


@dataclass(frozen=True)
class PipelineConfig:
    """How each record becomes a descriptor representation.

    With selection on, every field runs through the localization path and
    only descriptors under its fused activation map (predicted class,
    cells >= select_threshold) survive; otherwise all nonzero descriptors
    are used.  ``localizer`` weights default to a seeded random bundle
    derived from the evaluation seed.
    """

    use_selection: bool = True
    select_threshold: float = 0.5
    erase_threshold: float = 0.5
    localizer: LocalizerWeights | None = None
    localizer_classes: int = 5


ClassifyFn = Callable[[Episode, int], int]


def worker_count() -> int:
    """Worker threads for episode fan-out (``DA_THREADS`` override)."""
    raw = os.environ.get("DA_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"DA_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise DomainError(f"DA_THREADS must be >= 1, got {n}")
    return n


def episode_rng(root_seed: int, episode_index: int) -> np.random.Generator:
    """Per-episode generator; the (root, index) scheme keeps parallel runs
    identical to sequential ones."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((root_seed, episode_index))))


def _load_fields(manifest: DatasetManifest,
                 fields: dict[str, DescriptorField] | None) -> list[DescriptorField]:
    if fields is not None:
        missing = [r.feature_path for r in manifest.records if r.feature_path not in fields]
        if missing:
            raise DomainError(f"in-memory field store is missing {missing[0]!r}")
        return [fields[r.feature_path] for r in manifest.records]
    return [read_feature_file(manifest.resolve(r.feature_path))
            for r in manifest.records]


def build_representation(field: DescriptorField, config: PipelineConfig,
                         localizer: LocalizerWeights | None) -> QueryRepresentation:
    """Selected (or full) descriptor representation of one field."""
    if not config.use_selection:
        return representation_from_field(field)
    result = localize_field(field, localizer, config.erase_threshold)
    fused = result.fused_cam(result.predicted_class)
    fused = nearest_resize(fused, field.h, field.w)
    return select_and_build(field, fused, config.select_threshold)


def _resolve_localizer(config: PipelineConfig, root_seed: int,
                       loaded: Sequence[DescriptorField]) -> LocalizerWeights | None:
    if not config.use_selection:
        return None
    if config.localizer is not None:
        return config.localizer
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((root_seed, _LOCALIZER_SEED_SALT))))
    return random_localizer_weights(loaded[0].d, config.localizer_classes, rng)


def _episode_predictions(episode: Episode, reps: Sequence[QueryRepresentation]) -> list[int]:
    """Batched alignment classification of every query in an episode.

    Equivalent to calling alignment.classify per query: all query
    descriptors hit each class pool in one kernel call, and per-query
    scores are summed in ascending descriptor order.
    """
    pools = [SupportPool.from_representations(label, [reps[rid] for rid in ids])
             for label, ids in enumerate(episode.support_ids)]
    q_reps = [reps[rid] for rid in episode.query_ids]
    bounds = np.cumsum([0] + [len(r) for r in q_reps])
    stacked = np.concatenate([r.descriptors for r in q_reps], axis=0)
    kern = backend.kernels()
    scores = np.empty((len(q_reps), len(pools)))
    for c, pool in enumerate(pools):
        sims, _ = kern.nn_best(stacked, pool.descriptors)
        for qi in range(len(q_reps)):
            scores[qi, c] = _ordered_sum(sims[bounds[qi]:bounds[qi + 1]])
    return [int(p) for p in np.argmax(scores, axis=1)]  # ties: lowest label


def evaluate(manifest: DatasetManifest, spec: EpisodeSpec, n_episodes: int,
             config: PipelineConfig = PipelineConfig(),
             fields: dict[str, DescriptorField] | None = None,
             classify_fn: ClassifyFn | None = None) -> EvalReport:
    """Run n_episodes episodes and report accuracy statistics.

    ``fields`` supplies in-memory feature tensors keyed by feature path
    (required for manifests without a root directory).  ``classify_fn``
    replaces the alignment classifier, mainly for harness tests.
    """
    if n_episodes < 1:
        raise DomainError(f"n_episodes must be >= 1, got {n_episodes}")
    started = time.perf_counter()
    loaded = _load_fields(manifest, fields)
    if len({f.d for f in loaded}) > 1:
        raise ShapeError("manifest mixes fields with different channel counts")

    reps: list[QueryRepresentation] | None = None
    if classify_fn is None:
        localizer = _resolve_localizer(config, spec.seed, loaded)
        reps = []
        for i, field in enumerate(loaded):
            try:
                reps.append(build_representation(field, config, localizer))
            except (DomainError, ShapeError) as exc:
                rec = manifest.records[i]
                raise exc.__class__(
                    f"record {i} ({rec.feature_path}): {exc}") from exc

    def run_episode(index: int) -> float:
        try:
            episode = sample_episode(manifest, spec, episode_rng(spec.seed, index))
            if classify_fn is not None:
                preds = [classify_fn(episode, qi) for qi in range(len(episode.query_ids))]
            else:
                preds = _episode_predictions(episode, reps)
            correct = sum(p == t for p, t in zip(preds, episode.query_labels))
            return correct / len(episode.query_labels)
        except (DomainError, ShapeError) as exc:
            raise exc.__class__(f"episode {index}: {exc}") from exc

    workers = worker_count()
    if workers == 1 or n_episodes == 1:
        accuracies = [run_episode(i) for i in range(n_episodes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accuracies = list(pool.map(run_episode, range(n_episodes)))

    mean = float(np.mean(accuracies))
    halfwidth = confidence_interval(accuracies).halfwidth if n_episodes >= 2 else 0.0
    return EvalReport(n_episodes=n_episodes, accuracies=tuple(accuracies),
                      mean_accuracy=mean, ci95_halfwidth=halfwidth,
                      wall_seconds=time.perf_counter() - started)


def format_report(report: EvalReport, meta: dict | None = None) -> str:
    """Deterministic key:value text plus a per-episode table.

    Wall-clock time is intentionally not part of this text; the CLI prints
    it to stderr so that fixed-seed reports are byte-identical across runs
    and thread counts.
    """
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"{key}: {value}")
    lines.append(f"n_episodes: {report.n_episodes}")
    lines.append(f"mean_accuracy: {report.mean_accuracy:.6f}")
    lines.append(f"ci95_halfwidth: {report.ci95_halfwidth:.6f}")
    if report.wsol is not None:
        for key in ("top1_loc", "top1_clas", "gt_known_loc"):
            lines.append(f"{key}: {report.wsol[key]:.6f}")
    lines.append("# episode\taccuracy")
    for i, acc in enumerate(report.accuracies):
        lines.append(f"{i}\t{acc:.6f}")
    return "\n".join(lines) + "\n"


def synthetic_dataset(n_classes: int, records_per_class: int, d: int, h: int,
                      w: int, class_separation: float,
                      rng: np.random.Generator
                      ) -> tuple[DatasetManifest, dict[str, DescriptorField]]:
    """Generate a labeled synthetic dataset of descriptor fields.

    Class k's descriptors are its mean direction plus unit-variance
    isotropic noise; means sit on scaled basis vectors so that every pair
    of class means is exactly ``class_separation`` (noise sigmas) apart.
    With separation 0 all classes are identically distributed.
    """
    if n_classes < 2:
        raise DomainError(f"need at least 2 classes, got {n_classes}")
    if records_per_class < 1:
        raise DomainError("records_per_class must be >= 1")
    if class_separation < 0:
        raise DomainError("class separation must be >= 0")
    if class_separation > 0 and d < n_classes:
        raise DomainError(
            f"equidistant class means need d >= n_classes ({d} < {n_classes})")
    means = np.zeros((n_classes, d))
    scale = class_separation / np.sqrt(2.0)
    for k in range(n_classes):
        if class_separation > 0:
            means[k, k] = scale
    records = []
    fields: dict[str, DescriptorField] = {}
    classes = tuple(f"class_{k:02d}" for k in range(n_classes))
    for k, name in enumerate(classes):
        for j in range(records_per_class):
            values = means[k][:, None, None] + rng.standard_normal((d, h, w))
            path = f"{name}/{name}_{j:03d}.daf"
            fields[path] = DescriptorField(values)
            records.append(ManifestRecord(class_name=name, feature_path=path))
    manifest = DatasetManifest(classes=classes, records=tuple(records),
                               split="synthetic")
    return manifest, fields


def write_synthetic(manifest: DatasetManifest, fields: dict[str, DescriptorField],
                    out_dir) -> Path:
    """Materialize a synthetic dataset on disk; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        target = out / rec.feature_path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_feature_file(target, fields[rec.feature_path])
    on_disk = DatasetManifest(classes=manifest.classes, records=manifest.records,
                              split=manifest.split, root=out)
    manifest_path = out / "manifest.txt"
    write_manifest(manifest_path, on_disk)
    return manifest_path
