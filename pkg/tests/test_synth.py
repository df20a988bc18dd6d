"""Synthetic benchmark generator: determinism, structure, and hardness."""

import numpy as np
import pytest

from flowmoe import nn
from flowmoe.synth import SynthConfig, generate_flood, generate_synthetic

SMALL = SynthConfig(
    windows_train=2,
    windows_test=3,
    flows_per_window=400,
    feature_dim=3,
    benign_clients=40,
    malicious_clients=38,
    servers=4,
    victims=3,
    seed=11,
)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_synthetic(SMALL)


def tables_equal(a, b):
    return (
        a.src == b.src
        and a.dst == b.dst
        and np.array_equal(a.timestamps, b.timestamps)
        and np.array_equal(a.features, b.features)
        and np.array_equal(a.labels, b.labels)
    )


class TestDeterminism:
    def test_same_config_same_dataset(self, small_dataset):
        again = generate_synthetic(SMALL)
        for w1, w2 in zip(
            small_dataset.train_windows + small_dataset.test_windows,
            again.train_windows + again.test_windows,
        ):
            assert tables_equal(w1, w2)

    def test_seed_changes_features(self, small_dataset):
        from dataclasses import replace

        other = generate_synthetic(replace(SMALL, seed=12))
        assert not np.array_equal(
            other.test_windows[0].features, small_dataset.test_windows[0].features
        )


class TestStructure:
    def test_window_counts(self, small_dataset):
        assert len(small_dataset.train_windows) == 2
        assert len(small_dataset.test_windows) == 3

    def test_test_windows_exactly_sized_and_balanced(self, small_dataset):
        for w in small_dataset.test_windows:
            assert len(w) == SMALL.flows_per_window
            assert int(w.labels.sum()) == SMALL.flows_per_window // 2

    def test_train_windows_balanced_before_jitter(self, small_dataset):
        # generation-time edge dropping may trim a few rows but keeps both
        # classes near half
        for w in small_dataset.train_windows:
            assert 0 < len(w) <= SMALL.flows_per_window
            frac = w.labels.mean()
            assert 0.4 < frac < 0.6

    def test_labels_follow_source_role(self, small_dataset):
        for w in small_dataset.train_windows + small_dataset.test_windows:
            from_mal = np.array([s.startswith("10.1.") for s in w.src])
            assert np.array_equal(from_mal.astype(np.int64), w.labels)

    def test_malicious_flows_hit_victims_only(self, small_dataset):
        for w in small_dataset.test_windows:
            for dst, label in zip(w.dst, w.labels):
                if label == 1:
                    assert dst.startswith("10.3.")
                else:
                    assert dst.startswith(("10.2.", "10.3."))

    def test_some_benign_traffic_crosses_to_victims(self, small_dataset):
        w = small_dataset.test_windows[0]
        benign_dst = [d for d, y in zip(w.dst, w.labels) if y == 0]
        crossed = sum(d.startswith("10.3.") for d in benign_dst) / len(benign_dst)
        assert 0.02 < crossed < 0.25

    def test_host_pools_disjoint_across_windows(self, small_dataset):
        w0, w1 = small_dataset.test_windows[:2]
        assert not (set(w0.src) & set(w1.src))

    def test_timestamps_ordered_within_and_across_windows(self, small_dataset):
        windows = small_dataset.train_windows + small_dataset.test_windows
        last_end = -np.inf
        for i, w in enumerate(windows):
            assert np.all(np.diff(w.timestamps) >= 0)
            lo, hi = w.timestamps[0], w.timestamps[-1]
            assert lo >= i * SMALL.window_seconds
            assert hi < (i + 1) * SMALL.window_seconds
            assert lo > last_end
            last_end = hi

    def test_manifest_counts_and_columns(self, small_dataset):
        m = small_dataset.manifest
        assert m["n_train_flows"] == sum(len(w) for w in small_dataset.train_windows)
        assert m["n_test_flows"] == 3 * SMALL.flows_per_window
        assert m["feature_cols"] == ["f0", "f1", "f2"]
        assert m["config"]["victims"] == 3
        assert small_dataset.n_flows == m["n_train_flows"] + m["n_test_flows"]

    def test_degenerate_configs_rejected(self):
        from dataclasses import replace

        with pytest.raises(ValueError):
            generate_synthetic(replace(SMALL, flows_per_window=1))
        with pytest.raises(ValueError):
            generate_synthetic(replace(SMALL, malicious_clients=0))


class TestHardness:
    def test_single_flow_features_are_weak_evidence(self, small_dataset):
        """Per-edge noise drowns the class shift, so a classifier looking at
        one flow's features alone stays near chance; the signal only emerges
        after per-node averaging."""
        train_x = np.vstack([w.features for w in small_dataset.train_windows])
        train_y = np.concatenate([w.labels for w in small_dataset.train_windows])
        test_x = np.vstack([w.features for w in small_dataset.test_windows])
        test_y = np.concatenate([w.labels for w in small_dataset.test_windows])
        mean = train_x.mean(axis=0)
        std = train_x.std(axis=0)
        model = nn.mlp_init([SMALL.feature_dim, 2], seed=0)
        settings = nn.TrainConfig(learning_rate=1e-2, epochs=60, seed=0)
        opt = nn.Optimizer(settings)
        zx = (train_x - mean) / std
        for _ in range(settings.epochs):
            grads, _ = nn.mlp_backward(model, zx, train_y)
            opt.step(model, grads)
        probs = nn.mlp_forward(model, (test_x - mean) / std)
        acc = (np.argmax(probs, axis=1) == test_y).mean()
        assert acc < 0.66

    def test_victim_indegree_exceeds_server_indegree(self, small_dataset):
        w = small_dataset.test_windows[0]
        dsts, counts = np.unique(np.array(w.dst), return_counts=True)
        victim = counts[[d.startswith("10.3.") for d in dsts]].mean()
        server = counts[[d.startswith("10.2.") for d in dsts]].mean()
        assert victim > 1.2 * server


class TestFlood:
    def test_shape_and_determinism(self):
        a = generate_flood(1000, feature_dim=5, seed=3)
        b = generate_flood(1000, feature_dim=5, seed=3)
        assert len(a) == 1000
        assert a.features.shape == (1000, 5)
        assert tables_equal(a, b)
        assert not tables_equal(a, generate_flood(1000, feature_dim=5, seed=4))

    def test_timestamps_increase(self):
        t = generate_flood(500).timestamps
        assert np.all(np.diff(t) > 0)

    def test_host_pool_scales(self):
        small = generate_flood(1000)
        large = generate_flood(20_000)
        assert len(set(large.src)) > len(set(small.src))
