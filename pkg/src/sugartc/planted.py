"""Synthetic planted-cluster datasets for end-to-end checks.

Images and users are split across latent clusters; every image's true tags
are its cluster's tag set, its uploader is a user of the same cluster, and
its feature vector is the cluster mean plus isotropic noise.  The observed
triples are the truth with a fraction deleted and a fraction of spurious
(image, tag) pairs added.  All randomness flows through one seeded
generator, so byte-identical files come out of identical configs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, DatasetPaths, _assemble_dataset, write_dataset

logger = logging.getLogger(__name__)

GROUNDTRUTH_FILE = "groundtruth.tsv"


@dataclass(frozen=True)
class PlantedConfig:
    images: int = 200
    users: int = 40
    tags: int = 30
    clusters: int = 5
    tags_per_cluster: int = 10
    missing_rate: float = 0.3
    noise_rate: float = 0.1
    feature_dim: int = 16
    feature_noise: float = 0.25
    groups_per_cluster: int = 3
    seed: int = 0

    def __post_init__(self):
        counts = {
            "images": self.images,
            "users": self.users,
            "tags": self.tags,
            "clusters": self.clusters,
            "tags_per_cluster": self.tags_per_cluster,
            "feature_dim": self.feature_dim,
            "groups_per_cluster": self.groups_per_cluster,
        }
        for name, value in counts.items():
            if int(value) < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        for name, rate in (("missing_rate", self.missing_rate), ("noise_rate", self.noise_rate)):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rate}")
        if self.clusters > min(self.images, self.users):
            raise ValueError("more clusters than images or users")
        if self.tags_per_cluster > self.tags:
            raise ValueError("tags_per_cluster exceeds the tag vocabulary")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be nonnegative")


@dataclass
class PlantedDataset:
    dataset: Dataset
    truth_by_id: dict  # image id -> tuple of true tag ids (covers dropped images too)

    def truth_by_index(self) -> dict:
        """Ground truth keyed by vocabulary index, for images that survived."""
        vocab = self.dataset.vocabulary
        out = {}
        for image_id, tag_ids in self.truth_by_id.items():
            image = vocab.image_index.get(image_id)
            if image is None:
                continue
            out[image] = frozenset(
                vocab.tag_index[t] for t in tag_ids if t in vocab.tag_index
            )
        return out


def generate_planted(config: PlantedConfig) -> PlantedDataset:
    rng = np.random.default_rng(config.seed)
    image_ids = [f"img{i:04d}" for i in range(config.images)]
    user_ids = [f"user{k:03d}" for k in range(config.users)]
    tag_ids = [f"tag{j:03d}" for j in range(config.tags)]
    image_cluster = np.arange(config.images) % config.clusters
    user_cluster = np.arange(config.users) % config.clusters
    users_of = [np.flatnonzero(user_cluster == c) for c in range(config.clusters)]

    uploader = np.array([rng.choice(users_of[c]) for c in image_cluster])
    cluster_tags = [
        np.sort(rng.choice(config.tags, size=config.tags_per_cluster, replace=False))
        for _ in range(config.clusters)
    ]

    truth_pairs = []  # (image, tag) index pairs
    truth_sets = []
    for i in range(config.images):
        tags = cluster_tags[image_cluster[i]]
        truth_sets.append(frozenset(int(t) for t in tags))
        truth_pairs.extend((i, int(t)) for t in tags)

    keep = rng.random(len(truth_pairs)) >= config.missing_rate
    observed = {pair for pair, kept in zip(truth_pairs, keep) if kept}
    pool = [
        (i, t)
        for i in range(config.images)
        for t in range(config.tags)
        if t not in truth_sets[i]
    ]
    n_spurious = int(round(config.noise_rate * len(truth_pairs)))
    n_spurious = min(n_spurious, len(pool))
    if n_spurious:
        picks = rng.choice(len(pool), size=n_spurious, replace=False)
        observed.update(pool[p] for p in picks)

    triple_rows = [
        (image_ids[i], user_ids[uploader[i]], tag_ids[t]) for i, t in sorted(observed)
    ]

    means = rng.normal(0.0, 1.0, size=(config.clusters, config.feature_dim))
    noise = rng.normal(0.0, config.feature_noise, size=(config.images, config.feature_dim))
    feature_rows = [
        (image_ids[i], list(means[image_cluster[i]] + noise[i]))
        for i in range(config.images)
    ]

    group_ids = [
        [f"grp{c:02d}_{g}" for g in range(config.groups_per_cluster)]
        for c in range(config.clusters)
    ]
    group_rows = []
    for k in range(config.users):
        pool_g = group_ids[user_cluster[k]]
        size = 1 + int(rng.integers(0, len(pool_g)))
        chosen = rng.choice(len(pool_g), size=size, replace=False)
        group_rows.extend((user_ids[k], pool_g[g]) for g in sorted(chosen))

    order = rng.permutation(config.tags)
    taxonomy_rows = []
    for pos in range(1, config.tags):
        parent = order[int(rng.integers(0, pos))]
        taxonomy_rows.append((tag_ids[order[pos]], tag_ids[parent]))

    dataset = _assemble_dataset(triple_rows, feature_rows, group_rows, taxonomy_rows)
    missing_images = config.images - len(dataset.vocabulary.images)
    if missing_images:
        logger.warning(
            "%d planted image(s) lost every observed tag and fell out of the dataset",
            missing_images,
        )
    truth_by_id = {
        image_ids[i]: tuple(tag_ids[t] for t in sorted(truth_sets[i]))
        for i in range(config.images)
    }
    return PlantedDataset(dataset, truth_by_id)


def write_planted(planted: PlantedDataset, directory) -> DatasetPaths:
    """Write the four dataset files plus the ground-truth pairs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = DatasetPaths.in_dir(directory)
    write_dataset(planted.dataset, paths)
    with open(directory / GROUNDTRUTH_FILE, "w", encoding="utf-8") as handle:
        for image_id in sorted(planted.truth_by_id):
            for tag_id in sorted(planted.truth_by_id[image_id]):
                handle.write(f"{image_id}\t{tag_id}\n")
    return paths
