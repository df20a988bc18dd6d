"""Synthetic NetFlow-style traffic with a planted graph-level signal.

Each time window gets a fresh population of hosts, so nothing can be
memorized per address:

  * benign clients open 1 + Poisson(benign_rate) flows, mostly to a
    small pool of servers,
  * compromised clients open 1 + Poisson(malicious_rate) flows, all to
    a handful of victim hosts; the out-degree distributions of the two
    client classes match, so the degree signature of an attack is the
    absolute in-degree level of its destination (victims run hotter
    than servers), not any per-client fanout,
  * a cross_fraction of benign flows also lands on victims, so the
    destination alone does not give the label away.

Flow features are a per-host offset (shifted by ``shift`` for
compromised hosts) plus per-flow noise of scale ``edge_std``.  With the
defaults the per-flow signal is weak (a flat classifier on single flows
stays near chance) while aggregation over a host's flows or its degree
separates the classes cleanly.  Windows are balanced to an exact 50/50
label split by trimming and padding flows.

Training windows can be lightly perturbed and thinned at generation
time (the train_aug_* knobs); test windows are always emitted clean so
drift can be applied later under controlled parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ingest import FlowTable


@dataclass(frozen=True)
class SynthConfig:
    windows_train: int = 8
    windows_test: int = 16
    flows_per_window: int = 1500
    feature_dim: int = 4
    benign_clients: int = 260
    malicious_clients: int = 250
    servers: int = 8
    victims: int = 6
    benign_rate: float = 2.0
    malicious_rate: float = 2.0
    cross_fraction: float = 0.10
    shift: float = 0.2
    host_std: float = 0.15
    edge_std: float = 1.0
    train_aug_alpha: float = 0.05
    train_aug_beta: float = 0.15
    train_aug_gamma: float = 0.95
    window_seconds: float = 60.0
    seed: int = 7


@dataclass
class SynthDataset:
    train_windows: list
    test_windows: list
    manifest: dict

    @property
    def n_flows(self) -> int:
        return sum(len(w) for w in self.train_windows + self.test_windows)


def _host_names(window: int, role: str, count: int) -> list:
    # role encoded in the second octet keeps pools disjoint within a window
    octet = {"benign": 0, "mal": 1, "server": 2, "victim": 3}[role]
    return [f"10.{octet}.{window % 256}.{i}" for i in range(count)]


def _balance(rng: np.random.Generator, src, dst, feats, labels, target: int):
    """Trim each class to target rows, padding by resampling if short."""
    out_idx = []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        if len(idx) == 0:
            raise ValueError(f"window produced no class-{cls} flows")
        if len(idx) > target:
            idx = rng.choice(idx, size=target, replace=False)
        elif len(idx) < target:
            extra = rng.choice(idx, size=target - len(idx), replace=True)
            idx = np.concatenate([idx, extra])
        out_idx.append(np.sort(idx))
    keep = np.concatenate(out_idx)
    rng.shuffle(keep)
    return [src[i] for i in keep], [dst[i] for i in keep], feats[keep], labels[keep]


def _one_window(config: SynthConfig, rng: np.random.Generator, window: int):
    """Raw (unbalanced) flows for one window, vectorized per host group."""
    d = config.feature_dim
    benign = _host_names(window, "benign", config.benign_clients)
    mal = _host_names(window, "mal", config.malicious_clients)
    servers = _host_names(window, "server", config.servers)
    victims = _host_names(window, "victim", config.victims)

    # per-host feature offsets; compromised hosts sit shift away in every dim
    off_b = rng.normal(0.0, config.host_std, size=(len(benign), d))
    off_m = rng.normal(config.shift, config.host_std, size=(len(mal), d))

    deg_b = 1 + rng.poisson(config.benign_rate, size=len(benign))
    deg_m = 1 + rng.poisson(config.malicious_rate, size=len(mal))

    src_idx_b = np.repeat(np.arange(len(benign)), deg_b)
    src_idx_m = np.repeat(np.arange(len(mal)), deg_m)

    dst_b = rng.integers(0, config.servers, size=len(src_idx_b))
    cross = rng.random(len(src_idx_b)) < config.cross_fraction
    dst_b_names = [
        victims[rng.integers(0, config.victims)] if c else servers[j]
        for j, c in zip(dst_b, cross)
    ]
    dst_m_names = [victims[j] for j in rng.integers(0, config.victims, size=len(src_idx_m))]

    feats_b = off_b[src_idx_b] + rng.normal(0.0, config.edge_std, size=(len(src_idx_b), d))
    feats_m = off_m[src_idx_m] + rng.normal(0.0, config.edge_std, size=(len(src_idx_m), d))

    src = [benign[i] for i in src_idx_b] + [mal[i] for i in src_idx_m]
    dst = dst_b_names + dst_m_names
    feats = np.vstack([feats_b, feats_m])
    labels = np.concatenate(
        [np.zeros(len(src_idx_b), dtype=np.int64), np.ones(len(src_idx_m), dtype=np.int64)]
    )
    return src, dst, feats, labels


def _train_augment(config: SynthConfig, rng: np.random.Generator, src, dst, feats, labels):
    """Mild generation-time jitter for training windows only.

    Mirrors the statistics-perturbation/edge-drop recipe (a is the keep
    bound read literally) but runs on raw generator units before any
    normalization, so it is part of data synthesis, not of training.
    """
    a = rng.uniform(config.train_aug_gamma, 1.0)
    keep = rng.random(len(labels)) <= a
    if not keep.all():
        idx = np.flatnonzero(keep)
        src = [src[i] for i in idx]
        dst = [dst[i] for i in idx]
        feats, labels = feats[idx], labels[idx]
    bias = rng.uniform(-config.train_aug_alpha, config.train_aug_alpha)
    sigma = rng.uniform(0.0, config.train_aug_beta)
    feats = feats + rng.normal(0.0, sigma, size=feats.shape) + bias
    return src, dst, feats, labels


def _window_table(config: SynthConfig, rng, window: int, is_train: bool) -> FlowTable:
    src, dst, feats, labels = _one_window(config, rng, window)
    target = config.flows_per_window // 2
    src, dst, feats, labels = _balance(rng, src, dst, np.asarray(feats), labels, target)
    if is_train and (
        config.train_aug_alpha > 0
        or config.train_aug_beta > 0
        or config.train_aug_gamma < 1
    ):
        src, dst, feats, labels = _train_augment(config, rng, src, dst, feats, labels)
    n = len(labels)
    start = window * config.window_seconds
    times = start + np.arange(n) * (config.window_seconds / max(n, 1))
    return FlowTable(
        src=list(src),
        dst=list(dst),
        timestamps=np.asarray(times, dtype=np.float64),
        features=np.ascontiguousarray(feats, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
    )


def generate_synthetic(config: SynthConfig) -> SynthDataset:
    """Deterministic dataset for the given config; windows are time-ordered
    with training windows strictly before test windows."""
    if config.flows_per_window < 2:
        raise ValueError("flows_per_window must be at least 2")
    if min(config.benign_clients, config.malicious_clients) < 1:
        raise ValueError("need at least one client per class")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5E17]))
    train = [
        _window_table(config, rng, w, is_train=True) for w in range(config.windows_train)
    ]
    test = [
        _window_table(config, rng, config.windows_train + w, is_train=False)
        for w in range(config.windows_test)
    ]
    manifest = {
        "generator": "flowmoe.synth",
        "config": asdict(config),
        "n_train_flows": int(sum(len(w) for w in train)),
        "n_test_flows": int(sum(len(w) for w in test)),
        "feature_cols": [f"f{i}" for i in range(config.feature_dim)],
    }
    return SynthDataset(train_windows=train, test_windows=test, manifest=manifest)


def generate_flood(n_flows: int, feature_dim: int = 4, seed: int = 0) -> FlowTable:
    """Large flat table for throughput work: random host pairs, unit-normal
    features, balanced random labels.  Host pool scales with n so degree
    distributions stay realistic."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF100D]))
    n_hosts = max(16, n_flows // 50)
    hosts = [f"172.16.{i >> 8 & 255}.{i & 255}" for i in range(n_hosts)]
    u = rng.integers(0, n_hosts, size=n_flows)
    v = rng.integers(0, n_hosts, size=n_flows)
    return FlowTable(
        src=[hosts[i] for i in u],
        dst=[hosts[i] for i in v],
        timestamps=np.arange(n_flows, dtype=np.float64) * 1e-3,
        features=rng.normal(0.0, 1.0, size=(n_flows, feature_dim)),
        labels=rng.integers(0, 2, size=n_flows).astype(np.int64),
    )
