"""Weakly-supervised localization path.

A channel-statistics attention module turns a descriptor field into a
spatial importance mask; thresholding its complement gives an erased mask
that hides the most important region.  A small convolutional classifier
produces per-class activation maps directly (its last layer is 1x1, so
class maps are linear in the penultimate features and logits are their
spatial means).  Running the classifier on both the importance-weighted
and the erased features and fusing the two normalized maps by pointwise
max yields an activation map that covers more of the object than either
branch alone; a thresholded connected component of that map becomes the
predicted bounding box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (ActivationMask, ConvWeights, DescriptorField, _frozen,
                   conv2d_forward, spatial_multiply)
from .errors import DomainError, ShapeError

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class Cam:
    """A per-class activation map over an (h, w) grid; finite, unbounded."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.values, what="Cam")
        if arr.ndim != 2:
            raise ShapeError(f"Cam needs an (h, w) array, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise DomainError(f"Cam dimensions must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DomainError("Cam values must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with half-open extents [x_min, x_max) x [y_min, y_max)."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DomainError(
                f"box [{self.x_min},{self.x_max})x[{self.y_min},{self.y_max}) has no area")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class ChannelAttentionWeights:
    """Weights of the importance-mask module.

    ``reduce`` is a 1x1 conv over the raw field (in=d, out=r); ``merge`` is
    a 1x1 conv applied to the concatenation [channel-avg, channel-max,
    reduced maps], so merge.in_channels must equal reduce.out_channels + 2
    and merge.out_channels must be 1.
    """

    reduce: ConvWeights
    merge: ConvWeights

    def __post_init__(self):
        if self.reduce.kernel_size != 1 or self.merge.kernel_size != 1:
            raise DomainError("attention convs must be 1x1")
        if self.merge.in_channels != self.reduce.out_channels + 2:
            raise ShapeError(
                f"merge consumes {self.merge.in_channels} channels, expected "
                f"{self.reduce.out_channels + 2} (avg + max + reduced)")
        if self.merge.out_channels != 1:
            raise ShapeError("merge must produce a single channel")


@dataclass(frozen=True)
class ClassifierWeights:
    """Three 3x3 conv blocks (ReLU after each) and a 1x1 class head."""

    blocks: tuple[ConvWeights, ConvWeights, ConvWeights]
    head: ConvWeights

    def __post_init__(self):
        if len(self.blocks) != 3:
            raise ShapeError(f"classifier needs exactly 3 blocks, got {len(self.blocks)}")
        object.__setattr__(self, "blocks", tuple(self.blocks))
        chain = list(self.blocks) + [self.head]
        for prev, nxt in zip(chain, chain[1:]):
            if nxt.in_channels != prev.out_channels:
                raise ShapeError(
                    f"block chain broken: {prev.out_channels} -> {nxt.in_channels}")
        for blk in self.blocks:
            if blk.kernel_size != 3:
                raise DomainError("classifier blocks must be 3x3")
        if self.head.kernel_size != 1:
            raise DomainError("classifier head must be 1x1")

    @property
    def num_classes(self) -> int:
        return self.head.out_channels


@dataclass(frozen=True)
class ClassifierOutput:
    """Per-class activation maps (C, h, w) and their spatial-mean logits (C,)."""

    class_maps: np.ndarray
    logits: np.ndarray

    def cam(self, class_index: int) -> Cam:
        return Cam(self.class_maps[class_index])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # numerically stable in both tails
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def channel_attention_mask(field: DescriptorField,
                           weights: ChannelAttentionWeights) -> ActivationMask:
    """Importance mask: sigmoid(merge([channel-avg, channel-max, reduce(field)])).

    Output values are strictly inside (0, 1); where the sigmoid saturates
    at float resolution it is nudged to the nearest representable interior
    value.
    """
    if weights.reduce.in_channels != field.d:
        raise ShapeError(
            f"attention expects {weights.reduce.in_channels} channels, field has {field.d}")
    avg = np.mean(field.values, axis=0)
    mx = np.max(field.values, axis=0)
    reduced = conv2d_forward(field, weights.reduce, padding=0).values
    stacked = DescriptorField(np.concatenate([avg[None], mx[None], reduced], axis=0))
    logits = conv2d_forward(stacked, weights.merge, padding=0).values[0]
    return ActivationMask(np.clip(_sigmoid(logits), _SIG_LO, _SIG_HI))


def erased_mask(important: ActivationMask, theta_e: float) -> ActivationMask:
    """Binary mask of the non-important region: 1 where important < theta_e."""
    if not 0.0 < theta_e < 1.0:
        raise DomainError(f"erase threshold must lie in (0, 1), got {theta_e}")
    return ActivationMask((important.values < theta_e).astype(np.float64))


def important_mask(important: ActivationMask, theta_e: float) -> ActivationMask:
    """Binary complement of :func:`erased_mask`: 1 where important >= theta_e."""
    if not 0.0 < theta_e < 1.0:
        raise DomainError(f"erase threshold must lie in (0, 1), got {theta_e}")
    return ActivationMask((important.values >= theta_e).astype(np.float64))


def classifier_forward(field: DescriptorField,
                       weights: ClassifierWeights) -> ClassifierOutput:
    """Class activation maps and logits for one field.

    The three 3x3 blocks run with padding 1 and ReLU, preserving the grid;
    the 1x1 head makes each class map a per-cell linear combination of the
    block output, and each logit is the spatial mean of its class map.
    """
    x = field
    for blk in weights.blocks:
        x = DescriptorField(np.maximum(conv2d_forward(x, blk, padding=1).values, 0.0))
    maps = conv2d_forward(x, weights.head, padding=0).values
    logits = maps.mean(axis=(1, 2))
    return ClassifierOutput(class_maps=maps, logits=logits)


def normalize_cam(cam: Cam) -> Cam:
    """Min-max normalize to [0, 1]; a constant map normalizes to all zeros."""
    lo = float(np.min(cam.values))
    hi = float(np.max(cam.values))
    if hi == lo:
        return Cam(np.zeros_like(cam.values))
    return Cam((cam.values - lo) / (hi - lo))


def fuse_cams(cam_imp: Cam, cam_erased: Cam) -> Cam:
    """Pointwise max of two activation maps already on the [0, 1] scale."""
    if cam_imp.values.shape != cam_erased.values.shape:
        raise ShapeError(
            f"cannot fuse {cam_imp.values.shape} with {cam_erased.values.shape}")
    for c in (cam_imp, cam_erased):
        if np.min(c.values) < 0.0 or np.max(c.values) > 1.0:
            raise DomainError("fuse_cams expects maps normalized to [0, 1]")
    return Cam(np.maximum(cam_imp.values, cam_erased.values))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - math.log(np.sum(np.exp(shifted)))


def complementary_classification_loss(logits_imp, logits_erased, label: int) -> float:
    """Sum of the two branches' cross-entropies against the same label."""
    li = np.asarray(logits_imp, dtype=np.float64)
    le = np.asarray(logits_erased, dtype=np.float64)
    if li.shape != le.shape or li.ndim != 1:
        raise ShapeError(f"logit vectors must match, got {li.shape} and {le.shape}")
    if not 0 <= label < li.shape[0]:
        raise DomainError(f"label {label} out of range for {li.shape[0]} classes")
    return float(-_log_softmax(li)[label] - _log_softmax(le)[label])


def _connected_components(fg: np.ndarray) -> np.ndarray:
    """Label 4-connected foreground components in raster discovery order."""
    h, w = fg.shape
    labels = np.zeros((h, w), dtype=np.int64)
    current = 0
    for si in range(h):
        for sj in range(w):
            if fg[si, sj] and labels[si, sj] == 0:
                current += 1
                stack = [(si, sj)]
                labels[si, sj] = current
                while stack:
                    i, j = stack.pop()
                    for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                        if 0 <= ni < h and 0 <= nj < w and fg[ni, nj] and labels[ni, nj] == 0:
                            labels[ni, nj] = current
                            stack.append((ni, nj))
    return labels


def cam_to_bbox(cam: Cam, box_threshold: float) -> BBox:
    """Tight box around the largest 4-connected blob above the threshold.

    The foreground is cam >= box_threshold * max(cam).  Equal-area blobs
    tie-break toward the one discovered first in raster order (smallest
    top-left cell).  An all-zero map has no foreground and is rejected.
    """
    if not 0.0 < box_threshold < 1.0:
        raise DomainError(f"box threshold must lie in (0, 1), got {box_threshold}")
    peak = float(np.max(cam.values))
    if peak <= 0.0:
        raise DomainError("cannot extract a box from an all-zero activation map")
    fg = cam.values >= box_threshold * peak
    labels = _connected_components(fg)
    n = int(labels.max())
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    best = int(np.argmax(areas[1:])) + 1  # first max = earliest raster discovery
    rows, cols = np.nonzero(labels == best)
    return BBox(x_min=int(cols.min()), y_min=int(rows.min()),
                x_max=int(cols.max()) + 1, y_max=int(rows.max()) + 1)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two positive-area boxes, in [0, 1]."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0, iw) * max(0, ih)
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class LocalizerWeights:
    """Attention module plus classifier: everything the localization path needs."""

    attention: ChannelAttentionWeights
    classifier: ClassifierWeights

    def __post_init__(self):
        if self.attention.reduce.in_channels != self.classifier.blocks[0].in_channels:
            raise ShapeError("attention and classifier expect different channel counts")

    @property
    def in_channels(self) -> int:
        return self.attention.reduce.in_channels

    @property
    def num_classes(self) -> int:
        return self.classifier.num_classes


def random_localizer_weights(d: int, num_classes: int, rng: np.random.Generator,
                             reduce_channels: int | None = None) -> LocalizerWeights:
    """Seeded He-initialized weights sized for d-channel fields."""
    if num_classes < 2:
        raise DomainError("classifier needs at least 2 classes")
    r = reduce_channels if reduce_channels is not None else max(1, d // 4)

    def conv(cout, cin, k):
        scale = math.sqrt(2.0 / (cin * k * k))
        return ConvWeights(rng.standard_normal((cout, cin, k, k)) * scale,
                           np.zeros(cout))

    attention = ChannelAttentionWeights(reduce=conv(r, d, 1), merge=conv(1, 2 + r, 1))
    classifier = ClassifierWeights(
        blocks=(conv(d, d, 3), conv(d, d, 3), conv(d, d, 3)),
        head=conv(num_classes, d, 1))
    return LocalizerWeights(attention=attention, classifier=classifier)


def save_localizer_weights(path, weights: LocalizerWeights) -> None:
    """Write a weights bundle as an .npz archive."""
    arrays = {}
    for name, cw in _named_convs(weights):
        arrays[f"{name}.weights"] = cw.weights
        arrays[f"{name}.bias"] = cw.bias
    np.savez(path, **arrays)


def load_localizer_weights(path) -> LocalizerWeights:
    """Load a bundle written by :func:`save_localizer_weights`."""
    with np.load(path) as data:
        def conv(name):
            try:
                return ConvWeights(data[f"{name}.weights"], data[f"{name}.bias"])
            except KeyError as exc:
                raise DomainError(f"weights file is missing array {exc.args[0]!r}") from None
        return LocalizerWeights(
            attention=ChannelAttentionWeights(reduce=conv("attention.reduce"),
                                              merge=conv("attention.merge")),
            classifier=ClassifierWeights(
                blocks=(conv("classifier.block0"), conv("classifier.block1"),
                        conv("classifier.block2")),
                head=conv("classifier.head")))


def _named_convs(weights: LocalizerWeights):
    yield "attention.reduce", weights.attention.reduce
    yield "attention.merge", weights.attention.merge
    for i, blk in enumerate(weights.classifier.blocks):
        yield f"classifier.block{i}", blk
    yield "classifier.head", weights.classifier.head


@dataclass(frozen=True)
class LocalizationResult:
    """Both branch outputs for one field."""

    importance: ActivationMask
    output_important: ClassifierOutput
    output_erased: ClassifierOutput

    @property
    def combined_logits(self) -> np.ndarray:
        return self.output_important.logits + self.output_erased.logits

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.combined_logits))

    def fused_cam(self, class_index: int) -> Cam:
        """Fusion of the two branches' normalized maps for one class."""
        return fuse_cams(normalize_cam(self.output_important.cam(class_index)),
                         normalize_cam(self.output_erased.cam(class_index)))


def localize_field(field: DescriptorField, weights: LocalizerWeights,
                   erase_threshold: float = 0.5) -> LocalizationResult:
    """Run the two complementary branches on one field.

    The important branch classifies the field scaled by the continuous
    importance mask; the erased branch classifies the field with the
    important region (mask >= threshold) zeroed out, forcing it to find
    evidence elsewhere.
    """
    mask = channel_attention_mask(field, weights.attention)
    feat_imp = spatial_multiply(field, mask)
    feat_erased = spatial_multiply(field, erased_mask(mask, erase_threshold))
    return LocalizationResult(
        importance=mask,
        output_important=classifier_forward(feat_imp, weights.classifier),
        output_erased=classifier_forward(feat_erased, weights.classifier))


@dataclass(frozen=True)
class WsolRecord:
    """One localization outcome: predicted vs ground-truth box and class."""

    predicted_box: BBox
    true_box: BBox
    predicted_class: object
    true_class: object


def wsol_metrics(records: Sequence[WsolRecord]) -> dict[str, float]:
    """Localization metrics over a record set.

    gt_known_loc counts IoU >= 0.5 (the boundary value counts as correct),
    top1_clas counts class matches, and top1_loc counts records where both
    hold, so top1_loc <= min(top1_clas, gt_known_loc).
    """
    if len(records) == 0:
        raise DomainError("wsol_metrics needs at least one record")
    n = len(records)
    loc = 0
    clas = 0
    both = 0
    for r in records:
        loc_ok = iou(r.predicted_box, r.true_box) >= 0.5
        clas_ok = r.predicted_class == r.true_class
        loc += loc_ok
        clas += clas_ok
        both += loc_ok and clas_ok
    return {"top1_loc": both / n, "top1_clas": clas / n, "gt_known_loc": loc / n}
