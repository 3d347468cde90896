"""Localization path: attention mask, class maps, fusion, boxes, metrics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from descalign import (ActivationMask, BBox, Cam, ChannelAttentionWeights,
                       ClassifierWeights, ConvWeights, DescriptorField,
                       DomainError, ShapeError, WsolRecord, cam_to_bbox,
                       channel_attention_mask, classifier_forward,
                       complementary_classification_loss, erased_mask,
                       fuse_cams, important_mask, iou, load_localizer_weights,
                       localize_field, normalize_cam, random_localizer_weights,
                       save_localizer_weights, wsol_metrics)


def conv1x1(weights_2d, bias=None):
    """(out, in) matrix as 1x1 conv weights."""
    w = np.asarray(weights_2d, dtype=float)[:, :, None, None]
    return ConvWeights(w, np.zeros(w.shape[0]) if bias is None else bias)


def identity_blocks(d):
    """Three 3x3 blocks that pass non-negative fields through unchanged."""
    w = np.zeros((d, d, 3, 3))
    for c in range(d):
        w[c, c, 1, 1] = 1.0
    blk = ConvWeights(w, np.zeros(d))
    return (blk, blk, blk)


def attention_oracle(values, reduce_w, reduce_b, merge_w, merge_b):
    """Straight-line reimplementation: avg/max stats, 1x1 convs, sigmoid."""
    d, h, w = values.shape
    avg = values.mean(axis=0)
    mx = values.max(axis=0)
    r = reduce_w.shape[0]
    reduced = np.einsum("oc,chw->ohw", reduce_w, values) + reduce_b[:, None, None]
    stack = np.concatenate([avg[None], mx[None], reduced], axis=0)
    logit = np.einsum("oc,chw->ohw", merge_w, stack)[0] + merge_b[0]
    return 1.0 / (1.0 + np.exp(-logit))


class TestChannelAttention:
    def test_zero_weights_give_half(self, rng):
        field = DescriptorField(rng.standard_normal((4, 3, 3)))
        w = ChannelAttentionWeights(reduce=conv1x1(np.zeros((2, 4))),
                                    merge=conv1x1(np.zeros((1, 4))))
        mask = channel_attention_mask(field, w)
        assert np.all(mask.values == 0.5)

    def test_constant_field_gives_constant_mask(self, rng):
        field = DescriptorField(np.tile(rng.standard_normal((4, 1, 1)), (1, 3, 5)))
        w = ChannelAttentionWeights(reduce=conv1x1(rng.standard_normal((2, 4))),
                                    merge=conv1x1(rng.standard_normal((1, 4))))
        mask = channel_attention_mask(field, w)
        assert np.ptp(mask.values) == 0.0

    def test_matches_straight_line_oracle(self, rng):
        values = rng.standard_normal((4, 3, 3))
        reduce_w = rng.standard_normal((2, 4))
        reduce_b = rng.standard_normal(2)
        merge_w = rng.standard_normal((1, 4))
        merge_b = rng.standard_normal(1)
        w = ChannelAttentionWeights(reduce=conv1x1(reduce_w, reduce_b),
                                    merge=conv1x1(merge_w, merge_b))
        mask = channel_attention_mask(DescriptorField(values), w)
        expected = attention_oracle(values, reduce_w, reduce_b, merge_w, merge_b)
        np.testing.assert_allclose(mask.values, expected, atol=1e-12)

    def test_output_strictly_inside_unit_interval(self, rng):
        for seed in range(10):
            g = np.random.default_rng(seed)
            field = DescriptorField(g.standard_normal((4, 4, 4)) * 20)
            w = ChannelAttentionWeights(reduce=conv1x1(g.standard_normal((2, 4)) * 5),
                                        merge=conv1x1(g.standard_normal((1, 4)) * 5))
            mask = channel_attention_mask(field, w)
            assert np.all(mask.values > 0.0)
            assert np.all(mask.values < 1.0)

    def test_channel_mismatch(self, rng):
        field = DescriptorField(rng.standard_normal((3, 2, 2)))
        w = ChannelAttentionWeights(reduce=conv1x1(np.zeros((2, 4))),
                                    merge=conv1x1(np.zeros((1, 4))))
        with pytest.raises(ShapeError):
            channel_attention_mask(field, w)

    def test_merge_channel_invariant_enforced(self):
        with pytest.raises(ShapeError):
            ChannelAttentionWeights(reduce=conv1x1(np.zeros((2, 4))),
                                    merge=conv1x1(np.zeros((1, 3))))


class TestErasedAndImportantMasks:
    def test_all_above_threshold(self):
        m = ActivationMask(np.full((2, 2), 0.9))
        assert np.all(erased_mask(m, 0.5).values == 0.0)

    def test_all_below_threshold(self):
        m = ActivationMask(np.full((2, 2), 0.1))
        assert np.all(erased_mask(m, 0.5).values == 1.0)

    def test_pointwise_threshold(self):
        m = ActivationMask(np.array([[0.2, 0.8]]))
        assert erased_mask(m, 0.5).values.tolist() == [[1.0, 0.0]]

    def test_threshold_domain(self):
        m = ActivationMask(np.ones((1, 1)))
        for bad in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(DomainError):
                erased_mask(m, bad)

    @given(arrays(np.float64, (3, 4),
                  elements=st.floats(min_value=0, max_value=1)),
           st.floats(min_value=0.01, max_value=0.99))
    @settings(max_examples=50)
    def test_partition_is_exact(self, values, theta):
        m = ActivationMask(values)
        total = erased_mask(m, theta).values + important_mask(m, theta).values
        assert np.all(total == 1.0)


class TestClassifierForward:
    def test_zero_head_gives_bias(self, rng):
        field = DescriptorField(np.abs(rng.standard_normal((3, 4, 4))))
        bias = np.array([0.3, -1.2])
        weights = ClassifierWeights(blocks=identity_blocks(3),
                                    head=conv1x1(np.zeros((2, 3)), bias))
        out = classifier_forward(field, weights)
        for c, b in enumerate(bias):
            assert np.all(out.class_maps[c] == b)
            assert out.logits[c] == pytest.approx(b)

    def test_single_channel_unit_head_copies_features(self, rng):
        field = DescriptorField(np.abs(rng.standard_normal((1, 3, 3))))
        weights = ClassifierWeights(blocks=identity_blocks(1),
                                    head=conv1x1(np.ones((3, 1))))
        out = classifier_forward(field, weights)
        for c in range(3):
            np.testing.assert_allclose(out.class_maps[c], field.values[0], atol=0)

    def test_head_matches_double_loop(self, rng):
        # class map c = sum_k S_k * W[k, c] + bias_c, S being the block output
        field = DescriptorField(np.abs(rng.standard_normal((2, 3, 3))))
        head_w = rng.standard_normal((2, 2))
        head_b = rng.standard_normal(2)
        weights = ClassifierWeights(blocks=identity_blocks(2),
                                    head=conv1x1(head_w, head_b))
        out = classifier_forward(field, weights)
        s = field.values  # identity blocks on a non-negative field
        for c in range(2):
            expected = np.zeros((3, 3))
            for k in range(2):
                expected += s[k] * head_w[c, k]
            np.testing.assert_allclose(out.class_maps[c], expected + head_b[c],
                                       atol=1e-12)

    def test_full_forward_matches_naive_oracle(self, rng):
        for seed in range(5):
            g = np.random.default_rng(seed)
            field = g.standard_normal((3, 4, 4))
            blocks = [(g.standard_normal((3, 3, 3, 3)) * 0.5, g.standard_normal(3))
                      for _ in range(3)]
            head_w = g.standard_normal((4, 3))
            head_b = g.standard_normal(4)
            weights = ClassifierWeights(
                blocks=tuple(ConvWeights(w, b) for w, b in blocks),
                head=conv1x1(head_w, head_b))
            out = classifier_forward(DescriptorField(field), weights)

            x = field
            for w, b in blocks:
                x = np.maximum(_naive_conv(x, w, b, pad=1), 0.0)
            expected = np.einsum("ck,khw->chw", head_w, x) + head_b[:, None, None]
            np.testing.assert_allclose(out.class_maps, expected, atol=1e-12)
            np.testing.assert_allclose(out.logits, expected.mean(axis=(1, 2)),
                                       atol=1e-12)

    def test_logits_are_spatial_means(self, rng):
        field = DescriptorField(rng.standard_normal((2, 4, 5)))
        weights = random_localizer_weights(2, 3, rng).classifier
        out = classifier_forward(field, weights)
        np.testing.assert_allclose(out.logits, out.class_maps.mean(axis=(1, 2)),
                                   atol=1e-12)

    def test_linear_in_features(self, rng):
        field_values = np.abs(rng.standard_normal((2, 3, 3)))
        weights = ClassifierWeights(blocks=identity_blocks(2),
                                    head=conv1x1(rng.standard_normal((3, 2))))
        lam = 2.75
        base = classifier_forward(DescriptorField(field_values), weights)
        scaled = classifier_forward(DescriptorField(lam * field_values), weights)
        np.testing.assert_allclose(scaled.class_maps, lam * base.class_maps,
                                   atol=1e-12)


def _naive_conv(x, w, b, pad):
    cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((cout, h + 2 * pad - kh + 1, wid + 2 * pad - kw + 1))
    for co in range(cout):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[co, i, j] = np.sum(w[co] * xp[:, i:i + kh, j:j + kw]) + b[co]
    return out


class TestCamFusion:
    def test_idempotent(self, rng):
        cam = Cam(rng.uniform(0, 1, (3, 3)))
        np.testing.assert_array_equal(fuse_cams(cam, cam).values, cam.values)

    def test_zero_map_is_identity(self, rng):
        cam = Cam(rng.uniform(0, 1, (3, 3)))
        fused = fuse_cams(cam, Cam(np.zeros((3, 3))))
        np.testing.assert_array_equal(fused.values, cam.values)

    def test_pointwise_max(self):
        fused = fuse_cams(Cam(np.array([[0.2, 0.9]])), Cam(np.array([[0.5, 0.1]])))
        assert fused.values.tolist() == [[0.5, 0.9]]

    def test_commutative_and_dominates(self, rng):
        a = Cam(rng.uniform(0, 1, (4, 4)))
        b = Cam(rng.uniform(0, 1, (4, 4)))
        ab = fuse_cams(a, b).values
        np.testing.assert_array_equal(ab, fuse_cams(b, a).values)
        assert np.all(ab >= a.values)
        assert np.all(ab >= b.values)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fuse_cams(Cam(np.zeros((2, 2))), Cam(np.zeros((2, 3))))

    def test_requires_unit_scale(self):
        with pytest.raises(DomainError):
            fuse_cams(Cam(np.array([[2.0]])), Cam(np.array([[0.5]])))

    def test_normalize_cam(self):
        cam = Cam(np.array([[1.0, 3.0], [5.0, 1.0]]))
        norm = normalize_cam(cam)
        assert norm.values.min() == 0.0
        assert norm.values.max() == 1.0
        np.testing.assert_allclose(norm.values, np.array([[0, 0.5], [1, 0]]))

    def test_normalize_constant_cam_is_zero(self):
        assert np.all(normalize_cam(Cam(np.full((2, 2), 3.3))).values == 0.0)


class TestComplementaryLoss:
    def test_uniform_logits(self):
        logits = np.zeros(5)
        loss = complementary_classification_loss(logits, logits, 0)
        assert loss == pytest.approx(2 * math.log(5), abs=1e-12)

    def test_confident_branch_closed_form(self):
        first_term = math.log1p(math.exp(-20.0))
        loss = complementary_classification_loss([10.0, -10.0], [10.0, -10.0], 0)
        assert loss == pytest.approx(2 * first_term, rel=1e-9)
        assert first_term == pytest.approx(2.061e-9, rel=1e-3)

    def test_non_negative(self, rng):
        for _ in range(20):
            li = rng.standard_normal(4)
            le = rng.standard_normal(4)
            assert complementary_classification_loss(li, le, int(rng.integers(4))) >= 0.0

    def test_label_out_of_range(self):
        with pytest.raises(DomainError):
            complementary_classification_loss([0.0, 0.0], [0.0, 0.0], 2)

    def test_shift_invariance(self, rng):
        li = rng.standard_normal(5)
        le = rng.standard_normal(5)
        base = complementary_classification_loss(li, le, 3)
        shifted = complementary_classification_loss(li + 11.25, le - 3.5, 3)
        assert shifted == pytest.approx(base, abs=1e-12)


class TestCamToBbox:
    def test_point_mass(self):
        values = np.zeros((5, 6))
        values[2, 3] = 1.0
        box = cam_to_bbox(Cam(values), 0.2)
        assert (box.x_min, box.x_max, box.y_min, box.y_max) == (3, 4, 2, 3)

    def test_constant_map_full_box(self):
        box = cam_to_bbox(Cam(np.ones((3, 4))), 0.5)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0, 0, 4, 3)

    def test_largest_component_wins(self):
        values = np.zeros((5, 8))
        values[0:2, 0:3] = 1.0      # area 6 blob
        values[3:4, 5:8] = 1.0      # area 3 blob
        box = cam_to_bbox(Cam(values), 0.5)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0, 0, 3, 2)

    def test_equal_area_tie_breaks_to_raster_first(self):
        values = np.zeros((3, 5))
        values[2, 0:2] = 1.0
        values[0, 3:5] = 1.0  # first in raster order
        box = cam_to_bbox(Cam(values), 0.5)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (3, 0, 5, 1)

    def test_zero_map_rejected(self):
        with pytest.raises(DomainError):
            cam_to_bbox(Cam(np.zeros((3, 3))), 0.2)

    def test_threshold_domain(self):
        with pytest.raises(DomainError):
            cam_to_bbox(Cam(np.ones((2, 2))), 1.0)

    def test_diagonal_cells_are_separate_components(self):
        # 4-connectivity: diagonal neighbors do not merge
        values = np.zeros((4, 4))
        values[0, 0] = 1.0
        values[1, 1] = 1.0
        values[1, 2] = 1.0
        box = cam_to_bbox(Cam(values), 0.5)
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (1, 1, 3, 2)


class TestIou:
    def test_identical(self):
        b = BBox(0, 0, 2, 2)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 2, 2), BBox(5, 5, 7, 7)) == 0.0

    def test_hand_computed_overlap(self):
        a = BBox(0, 0, 2, 2)
        b = BBox(1, 0, 3, 2)
        assert iou(a, b) == pytest.approx(2 / 6)

    @given(st.tuples(st.integers(0, 5), st.integers(0, 5)),
           st.tuples(st.integers(1, 5), st.integers(1, 5)),
           st.tuples(st.integers(0, 5), st.integers(0, 5)),
           st.tuples(st.integers(1, 5), st.integers(1, 5)))
    @settings(max_examples=60)
    def test_symmetric_and_identity_iff_equal(self, o1, s1, o2, s2):
        a = BBox(o1[0], o1[1], o1[0] + s1[0], o1[1] + s1[1])
        b = BBox(o2[0], o2[1], o2[0] + s2[0], o2[1] + s2[1])
        assert iou(a, b) == iou(b, a)
        if a == b:
            assert iou(a, b) == 1.0
        else:
            assert iou(a, b) < 1.0

    def test_degenerate_box_rejected(self):
        with pytest.raises(DomainError):
            BBox(2, 0, 2, 3)


class TestWsolMetrics:
    def test_all_perfect(self):
        b = BBox(0, 0, 3, 3)
        recs = [WsolRecord(b, b, "a", "a")] * 4
        assert wsol_metrics(recs) == {"top1_loc": 1.0, "top1_clas": 1.0,
                                      "gt_known_loc": 1.0}

    def test_conjunction_by_hand(self):
        good_loc = WsolRecord(BBox(0, 0, 3, 2), BBox(0, 0, 3, 3), "a", "b")  # iou 2/3
        good_cls = WsolRecord(BBox(0, 0, 2, 1), BBox(0, 0, 2, 3), "a", "a")  # iou 1/3
        m = wsol_metrics([good_loc, good_cls])
        assert m == {"top1_loc": 0.0, "top1_clas": 0.5, "gt_known_loc": 0.5}

    def test_iou_exactly_half_counts_correct(self):
        # 2x2 prediction against a 2x1 truth inside it: inter 2, union 4
        rec = WsolRecord(BBox(0, 0, 2, 2), BBox(0, 0, 2, 1), "a", "a")
        m = wsol_metrics([rec])
        assert iou(rec.predicted_box, rec.true_box) == 0.5
        assert m["gt_known_loc"] == 1.0
        assert m["top1_loc"] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            wsol_metrics([])

    def test_conjunction_bound_on_random_records(self, rng):
        recs = []
        for _ in range(50):
            x0, y0 = rng.integers(0, 4, 2)
            recs.append(WsolRecord(
                BBox(int(x0), int(y0), int(x0) + int(rng.integers(1, 4)),
                     int(y0) + int(rng.integers(1, 4))),
                BBox(1, 1, 4, 4),
                int(rng.integers(2)), int(rng.integers(2))))
        m = wsol_metrics(recs)
        assert m["top1_loc"] <= min(m["top1_clas"], m["gt_known_loc"])


class TestLocalizerWeightsIO:
    def test_round_trip(self, rng, tmp_path):
        weights = random_localizer_weights(6, 4, rng)
        path = tmp_path / "w.npz"
        save_localizer_weights(path, weights)
        loaded = load_localizer_weights(path)
        np.testing.assert_array_equal(loaded.attention.reduce.weights,
                                      weights.attention.reduce.weights)
        np.testing.assert_array_equal(loaded.classifier.head.bias,
                                      weights.classifier.head.bias)
        assert loaded.num_classes == 4
        assert loaded.in_channels == 6

    def test_localize_field_runs_both_branches(self, rng):
        field = DescriptorField(rng.standard_normal((6, 5, 5)))
        weights = random_localizer_weights(6, 4, rng)
        result = localize_field(field, weights, erase_threshold=0.5)
        assert result.output_important.logits.shape == (4,)
        assert result.output_erased.logits.shape == (4,)
        fused = result.fused_cam(result.predicted_class)
        assert fused.values.min() >= 0.0
        assert fused.values.max() <= 1.0
