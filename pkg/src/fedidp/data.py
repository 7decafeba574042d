"""Synthetic classification data, client partitioning, and privacy groups.

Class clusters sit on a centered regular simplex so every pair of class
means is exactly `class_separation` apart, with unit-covariance Gaussian
noise around each mean. Partitioners are measure-preserving (no sample lost
or duplicated) and deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class LabeledData:
    """Feature matrix (n, dim) with integer labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels must have equal length")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClientShard:
    """One client's local examples plus its privacy-group assignment."""

    client_id: int
    features: np.ndarray
    labels: np.ndarray
    group_index: int = 0
    sampling_rate: float = 0.0

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class FederatedDataset:
    shards: list[ClientShard]
    test: LabeledData
    num_classes: int

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def dim(self) -> int:
        return self.shards[0].features.shape[1]


def _class_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    if dim < num_classes:
        raise ValueError(
            f"dim must be >= num_classes for the simplex layout, got {dim} < {num_classes}"
        )
    # Scaled standard-basis corners, centered: all pairwise distances equal.
    means = np.zeros((num_classes, dim))
    scale = separation / np.sqrt(2.0) if num_classes > 1 else 0.0
    for k in range(num_classes):
        means[k, k] = scale
    return means - means.mean(axis=0, keepdims=True)


def make_synthetic(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    class_separation: float,
    seed,
) -> LabeledData:
    """Balanced Gaussian class clusters; identical seeds give identical data."""
    if num_classes < 1 or dim < 1 or samples_per_class < 1:
        raise ValueError("counts must be positive")
    if class_separation < 0:
        raise ValueError("class separation must be >= 0")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim, class_separation)
    features = rng.standard_normal((num_classes * samples_per_class, dim))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features += means[labels]
    order = rng.permutation(len(labels))
    return LabeledData(features[order], labels[order])


def _shards_from_index_lists(
    data: LabeledData, index_lists: list[np.ndarray]
) -> list[ClientShard]:
    return [
        ClientShard(
            client_id=cid,
            features=data.features[idx],
            labels=data.labels[idx],
        )
        for cid, idx in enumerate(index_lists)
    ]


def _repair_empty(index_lists: list[np.ndarray]) -> list[np.ndarray]:
    # Every client must be able to produce an update: empty shards steal one
    # sample from the currently largest shard.
    sizes = [len(ix) for ix in index_lists]
    for cid, size in enumerate(sizes):
        if size > 0:
            continue
        donor = int(np.argmax(sizes))
        index_lists[cid] = index_lists[donor][-1:]
        index_lists[donor] = index_lists[donor][:-1]
        sizes[cid] = 1
        sizes[donor] -= 1
    return index_lists


def partition_iid(
    data: LabeledData, num_clients: int, seed, test: LabeledData, num_classes: int
) -> FederatedDataset:
    """Uniform random disjoint split; shard sizes differ by at most one."""
    if num_clients < 1 or num_clients > len(data):
        raise ValueError("num_clients must be in [1, len(data)]")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    index_lists = list(np.array_split(order, num_clients))
    return FederatedDataset(
        shards=_shards_from_index_lists(data, index_lists),
        test=test,
        num_classes=num_classes,
    )


def partition_label_skew(
    data: LabeledData,
    num_clients: int,
    alpha: float,
    seed,
    test: LabeledData,
    num_classes: int,
) -> FederatedDataset:
    """Dirichlet(alpha) label skew: class mass per client follows the draw.

    Each client draws class proportions from a symmetric Dirichlet; each
    class's samples are then split across clients proportional to those
    weights (largest-remainder rounding keeps the split exact). Small alpha
    concentrates each client on few classes; large alpha converges to the
    i.i.d. split.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if num_clients < 1 or num_clients > len(data):
        raise ValueError("num_clients must be in [1, len(data)]")
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet([alpha] * num_classes, size=num_clients)

    per_client: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for cls in range(num_classes):
        cls_idx = np.flatnonzero(data.labels == cls)
        rng.shuffle(cls_idx)
        share = weights[:, cls]
        total = share.sum()
        if total == 0.0:
            share = np.full(num_clients, 1.0 / num_clients)
            total = 1.0
        counts = largest_remainder(share / total, len(cls_idx))
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for cid in range(num_clients):
            per_client[cid].append(cls_idx[offsets[cid] : offsets[cid + 1]])

    index_lists = [np.concatenate(chunks) for chunks in per_client]
    index_lists = _repair_empty(index_lists)
    return FederatedDataset(
        shards=_shards_from_index_lists(data, index_lists),
        test=test,
        num_classes=num_classes,
    )


def largest_remainder(fractions, total: int, min_one: bool = False) -> np.ndarray:
    """Integer apportionment of `total` by `fractions` (which sum to 1).

    Floors first, then hands out the remaining units by descending
    fractional remainder. With min_one, every strictly positive fraction
    gets at least one unit, taken from the largest share.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    raw = fractions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        # Stable order: ties go to the earlier entry.
        order = np.argsort(-(raw - counts), kind="stable")
        for j in order[:remainder]:
            counts[j] += 1
    if min_one:
        for j in range(len(counts)):
            if fractions[j] > 0 and counts[j] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[j] = 1
    return counts


def assign_privacy_groups(
    shards: list[ClientShard], fractions, seed
) -> list[ClientShard]:
    """Shuffles clients deterministically and splits them by the fractions.

    Group sizes are largest-remainder rounded, with every positive fraction
    guaranteed at least one client. Assignment never looks at shard
    contents, so privacy preference stays independent of the data.
    """
    fractions = np.asarray(fractions, dtype=np.float64)
    if abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions.sum()}")
    if (fractions < 0).any():
        raise ValueError("fractions must be non-negative")
    if len(fractions) > len(shards):
        raise ValueError("more privacy groups than clients")

    sizes = largest_remainder(fractions, len(shards), min_one=True)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(shards))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    for group, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        for pos in order[lo:hi]:
            shards[pos].group_index = group
    return shards


def save_dataset(dataset: FederatedDataset, path) -> None:
    """JSON-lines export: one header line, then one record per example."""
    with open(path, "w") as fh:
        header = {
            "num_classes": dataset.num_classes,
            "num_clients": dataset.num_clients,
            "dim": dataset.dim,
            "groups": [s.group_index for s in dataset.shards],
        }
        fh.write(json.dumps(header) + "\n")
        for shard in dataset.shards:
            for x, y in zip(shard.features, shard.labels):
                rec = {"client": shard.client_id, "x": x.tolist(), "y": int(y)}
                fh.write(json.dumps(rec) + "\n")
        for x, y in zip(dataset.test.features, dataset.test.labels):
            rec = {"client": None, "x": x.tolist(), "y": int(y)}
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> FederatedDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        per_client: dict[int, list] = {c: [] for c in range(header["num_clients"])}
        test_rows = []
        for line in fh:
            rec = json.loads(line)
            if rec["client"] is None:
                test_rows.append(rec)
            else:
                per_client[rec["client"]].append(rec)

    def to_arrays(rows):
        feats = np.array([r["x"] for r in rows], dtype=np.float64)
        labels = np.array([r["y"] for r in rows], dtype=np.int64)
        return feats, labels

    shards = []
    for cid in range(header["num_clients"]):
        feats, labels = to_arrays(per_client[cid])
        shards.append(
            ClientShard(
                client_id=cid,
                features=feats,
                labels=labels,
                group_index=header["groups"][cid],
            )
        )
    test_feats, test_labels = to_arrays(test_rows)
    return FederatedDataset(
        shards=shards,
        test=LabeledData(test_feats, test_labels),
        num_classes=header["num_classes"],
    )
