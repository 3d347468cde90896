"""Episode sampling, evaluation harness, confidence intervals, synthetic data."""

import numpy as np
import pytest

from descalign import (CapacityError, DatasetManifest, DescriptorField,
                       DomainError, EpisodeSpec, ManifestRecord, PipelineConfig,
                       confidence_interval, evaluate, format_report,
                       load_manifest, sample_episode, synthetic_dataset,
                       write_synthetic)
from descalign.alignment import classify
from descalign.episodes import episode_rng, worker_count


def tiny_manifest(n_classes=6, per_class=20):
    classes = tuple(f"c{k}" for k in range(n_classes))
    records = tuple(ManifestRecord(c, f"{c}/{j}.daf")
                    for c in classes for j in range(per_class))
    return DatasetManifest(classes=classes, records=records)


def tiny_fields(manifest, rng, d=2, h=1, w=1):
    return {r.feature_path: DescriptorField(rng.standard_normal((d, h, w)))
            for r in manifest.records}


class TestEpisodeSpec:
    def test_validation(self):
        with pytest.raises(DomainError):
            EpisodeSpec(ways=1, shots=1, n_query=1)
        with pytest.raises(DomainError):
            EpisodeSpec(ways=2, shots=0, n_query=1)
        with pytest.raises(DomainError):
            EpisodeSpec(ways=2, shots=1, n_query=0)


class TestSampleEpisode:
    def test_one_shot_protocol_counts(self):
        manifest = tiny_manifest()
        spec = EpisodeSpec(ways=5, shots=1, n_query=15, seed=3)
        ep = sample_episode(manifest, spec, episode_rng(3, 0))
        assert sum(len(s) for s in ep.support_ids) == 5
        assert len(ep.query_ids) == 75

    def test_five_shot_protocol_counts(self):
        manifest = tiny_manifest()
        spec = EpisodeSpec(ways=5, shots=5, n_query=10, seed=3)
        ep = sample_episode(manifest, spec, episode_rng(3, 0))
        assert sum(len(s) for s in ep.support_ids) == 25
        assert len(ep.query_ids) == 50

    def test_same_seed_identical_record_ids(self):
        manifest = tiny_manifest()
        spec = EpisodeSpec(ways=4, shots=2, n_query=3, seed=11)
        a = sample_episode(manifest, spec, episode_rng(11, 5))
        b = sample_episode(manifest, spec, episode_rng(11, 5))
        assert a == b
        c = sample_episode(manifest, spec, episode_rng(11, 6))
        assert c != a

    def test_support_and_query_disjoint(self):
        manifest = tiny_manifest()
        spec = EpisodeSpec(ways=5, shots=3, n_query=5, seed=0)
        for i in range(10):
            ep = sample_episode(manifest, spec, episode_rng(0, i))
            support = {rid for ids in ep.support_ids for rid in ids}
            assert support.isdisjoint(ep.query_ids)
            assert len(set(ep.query_ids)) == len(ep.query_ids)

    def test_labels_match_classes(self):
        manifest = tiny_manifest()
        spec = EpisodeSpec(ways=3, shots=1, n_query=2, seed=0)
        ep = sample_episode(manifest, spec, episode_rng(0, 0))
        for qid, label in zip(ep.query_ids, ep.query_labels):
            assert manifest.records[qid].class_name == ep.class_names[label]

    def test_too_many_ways(self):
        manifest = tiny_manifest(n_classes=4)
        spec = EpisodeSpec(ways=5, shots=1, n_query=1, seed=0)
        with pytest.raises(CapacityError, match="4 classes"):
            sample_episode(manifest, spec, episode_rng(0, 0))

    def test_insufficient_records_names_class(self):
        manifest = tiny_manifest(n_classes=3, per_class=4)
        spec = EpisodeSpec(ways=3, shots=2, n_query=5, seed=0)
        with pytest.raises(CapacityError, match="'c"):
            sample_episode(manifest, spec, episode_rng(0, 0))


class TestConfidenceInterval:
    def test_constant_list(self):
        ci = confidence_interval([0.4, 0.4, 0.4])
        assert ci.mean == pytest.approx(0.4)
        assert ci.halfwidth == 0.0

    def test_zero_one(self):
        ci = confidence_interval([0.0, 1.0])
        assert ci.mean == 0.5
        assert ci.halfwidth == pytest.approx(0.98, abs=1e-10)

    def test_hand_computed(self):
        ci = confidence_interval([0.5, 0.5, 0.5, 0.7])
        assert ci.mean == pytest.approx(0.55, abs=1e-12)
        assert ci.halfwidth == pytest.approx(0.098, abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(DomainError):
            confidence_interval([1.0])


class TestEvaluateHarness:
    def test_oracle_pipeline_is_perfect(self, rng):
        manifest = tiny_manifest()
        fields = tiny_fields(manifest, rng)
        spec = EpisodeSpec(ways=5, shots=1, n_query=4, seed=2)
        report = evaluate(manifest, spec, 10, fields=fields,
                          classify_fn=lambda ep, qi: ep.query_labels[qi])
        assert report.mean_accuracy == 1.0
        assert report.ci95_halfwidth == 0.0
        assert report.n_episodes == 10
        assert len(report.accuracies) == 10

    def test_always_wrong_pipeline(self, rng):
        manifest = tiny_manifest()
        fields = tiny_fields(manifest, rng)
        spec = EpisodeSpec(ways=5, shots=1, n_query=4, seed=2)
        report = evaluate(manifest, spec, 5, fields=fields,
                          classify_fn=lambda ep, qi: (ep.query_labels[qi] + 1) % 5)
        assert report.mean_accuracy == 0.0

    def test_label_randomizing_pipeline_near_chance(self, rng):
        manifest = tiny_manifest()
        fields = tiny_fields(manifest, rng)
        spec = EpisodeSpec(ways=5, shots=1, n_query=15, seed=2)

        def scrambled(ep, qi):
            return (ep.query_ids[qi] * 2654435761 + qi * 97) % 5

        report = evaluate(manifest, spec, 600, fields=fields, classify_fn=scrambled)
        assert abs(report.mean_accuracy - 0.2) < 0.05

    def test_deterministic_across_runs_and_threads(self, rng, monkeypatch):
        manifest, fields = synthetic_dataset(4, 8, 4, 3, 3, 2.0,
                                             np.random.default_rng(0))
        spec = EpisodeSpec(ways=3, shots=1, n_query=4, seed=9)
        monkeypatch.setenv("DA_THREADS", "1")
        first = evaluate(manifest, spec, 12, fields=fields)
        monkeypatch.setenv("DA_THREADS", "4")
        second = evaluate(manifest, spec, 12, fields=fields)
        assert first.accuracies == second.accuracies
        assert first.mean_accuracy == second.mean_accuracy
        assert format_report(first) == format_report(second)

    def test_batched_predictions_match_per_query_classify(self):
        manifest, fields = synthetic_dataset(3, 6, 4, 2, 2, 1.0,
                                             np.random.default_rng(5))
        spec = EpisodeSpec(ways=3, shots=2, n_query=2, seed=4)
        config = PipelineConfig(use_selection=False)
        report = evaluate(manifest, spec, 3, config, fields=fields)

        # replay the same episodes through the one-query-at-a-time API
        from descalign.alignment import SupportPool, representation_from_field
        from descalign.episodes import sample_episode as sample
        for i in range(3):
            ep = sample(manifest, spec, episode_rng(4, i))
            reps = {rid: representation_from_field(fields[manifest.records[rid].feature_path])
                    for ids in ep.support_ids for rid in ids}
            reps.update({rid: representation_from_field(
                fields[manifest.records[rid].feature_path]) for rid in ep.query_ids})
            pools = [SupportPool.from_representations(label, [reps[r] for r in ids])
                     for label, ids in enumerate(ep.support_ids)]
            correct = sum(classify(reps[rid], pools) == label
                          for rid, label in zip(ep.query_ids, ep.query_labels))
            assert report.accuracies[i] == correct / len(ep.query_ids)

    def test_capacity_error_carries_episode_index(self, rng):
        manifest = tiny_manifest(n_classes=3, per_class=3)
        fields = tiny_fields(manifest, rng)
        spec = EpisodeSpec(ways=3, shots=2, n_query=2, seed=0)
        with pytest.raises(CapacityError, match="episode 0"):
            evaluate(manifest, spec, 2, fields=fields,
                     classify_fn=lambda ep, qi: 0)

    def test_needs_positive_episodes(self, rng):
        manifest = tiny_manifest()
        with pytest.raises(DomainError):
            evaluate(manifest, EpisodeSpec(2, 1, 1, 0), 0,
                     fields=tiny_fields(manifest, rng))

    def test_worker_count_env(self, monkeypatch):
        monkeypatch.setenv("DA_THREADS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("DA_THREADS", "zero")
        with pytest.raises(DomainError):
            worker_count()
        monkeypatch.setenv("DA_THREADS", "0")
        with pytest.raises(DomainError):
            worker_count()
        monkeypatch.delenv("DA_THREADS")
        assert worker_count() >= 1


class TestFormatReport:
    def test_frozen_example(self):
        from descalign.episodes import EvalReport
        report = EvalReport(n_episodes=2, accuracies=(1.0, 0.5),
                            mean_accuracy=0.75, ci95_halfwidth=0.49,
                            wall_seconds=1.23)
        text = format_report(report, {"command": "eval", "seed": 7})
        assert text == ("command: eval\n"
                        "seed: 7\n"
                        "n_episodes: 2\n"
                        "mean_accuracy: 0.750000\n"
                        "ci95_halfwidth: 0.490000\n"
                        "# episode\taccuracy\n"
                        "0\t1.000000\n"
                        "1\t0.500000\n")
        assert "wall" not in text


class TestSyntheticDataset:
    def test_shapes_and_counts(self):
        manifest, fields = synthetic_dataset(3, 4, 5, 2, 3, 1.0,
                                             np.random.default_rng(0))
        assert len(manifest.classes) == 3
        assert len(manifest.records) == 12
        assert all(fields[r.feature_path].values.shape == (5, 2, 3)
                   for r in manifest.records)

    def test_class_means_are_equidistant(self):
        manifest, fields = synthetic_dataset(3, 200, 6, 3, 3, 4.0,
                                             np.random.default_rng(12))
        means = []
        for name in manifest.classes:
            descs = np.concatenate(
                [fields[manifest.records[i].feature_path].descriptors()
                 for i in manifest.class_record_indices(name)])
            means.append(descs.mean(axis=0))
        for i in range(3):
            for j in range(i + 1, 3):
                gap = np.linalg.norm(means[i] - means[j])
                assert gap == pytest.approx(4.0, abs=0.1)

    def test_zero_separation_identical_distribution(self):
        manifest, fields = synthetic_dataset(4, 50, 3, 2, 2, 0.0,
                                             np.random.default_rng(3))
        all_values = np.concatenate([fields[r.feature_path].values.ravel()
                                     for r in manifest.records])
        assert abs(all_values.mean()) < 0.05
        assert abs(all_values.std() - 1.0) < 0.05

    def test_seed_reproducibility_and_disk_round_trip(self, tmp_path):
        a_man, a_fields = synthetic_dataset(2, 3, 4, 2, 2, 1.5,
                                            np.random.default_rng(8))
        b_man, b_fields = synthetic_dataset(2, 3, 4, 2, 2, 1.5,
                                            np.random.default_rng(8))
        assert a_man.records == b_man.records
        for rec in a_man.records:
            assert np.array_equal(a_fields[rec.feature_path].values,
                                  b_fields[rec.feature_path].values)
        path_a = write_synthetic(a_man, a_fields, tmp_path / "a")
        path_b = write_synthetic(b_man, b_fields, tmp_path / "b")
        assert path_a.read_text() == path_b.read_text()
        for rec in a_man.records:
            assert ((tmp_path / "a" / rec.feature_path).read_bytes()
                    == (tmp_path / "b" / rec.feature_path).read_bytes())
        loaded = load_manifest(path_a)
        assert loaded.classes == a_man.classes

    def test_separation_needs_dimension(self):
        with pytest.raises(DomainError, match="d >= n_classes"):
            synthetic_dataset(5, 2, 3, 2, 2, 1.0, np.random.default_rng(0))
        # zero separation has no such constraint
        synthetic_dataset(5, 2, 3, 2, 2, 0.0, np.random.default_rng(0))
