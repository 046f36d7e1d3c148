"""Dataset model and delimited-file ingestion.

The on-disk dataset is four tab-separated files: triples (image, user,
tag), per-image feature vectors, user group memberships, and a taxonomy
edge list.  Vocabularies index entities in order of first appearance in the
canonical (string-sorted) triple file.  A user id of ``-`` (or empty) marks
an unavailable uploader; such triples are unusable and images left without
any usable triple are dropped with a logged count.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensors import SparseTensor3

logger = logging.getLogger(__name__)

ROOT = -1  # synthetic taxonomy root, parent of every top-level tag
INVALID_USER_IDS = frozenset({"", "-"})

TRIPLES_FILE = "triples.tsv"
FEATURES_FILE = "features.tsv"
GROUPS_FILE = "groups.tsv"
TAXONOMY_FILE = "taxonomy.tsv"


class DataFormatError(ValueError):
    """Malformed or inconsistent dataset input."""


class TaxonomyCycleError(DataFormatError):
    """The taxonomy edge list contains a directed cycle."""


class MissingFeatureError(DataFormatError):
    """An image referenced by the pipeline has no feature vector."""


@dataclass(frozen=True)
class Vocabulary:
    """Entity ids with their dense indices, in first-appearance order."""

    images: tuple[str, ...]
    users: tuple[str, ...]
    tags: tuple[str, ...]
    image_index: dict = field(repr=False)
    user_index: dict = field(repr=False)
    tag_index: dict = field(repr=False)

    @classmethod
    def build(cls, images, users, tags) -> "Vocabulary":
        images, users, tags = tuple(images), tuple(users), tuple(tags)
        for name, ids in (("image", images), ("user", users), ("tag", tags)):
            if len(set(ids)) != len(ids):
                raise DataFormatError(f"duplicate {name} id in vocabulary")
        return cls(
            images,
            users,
            tags,
            {v: i for i, v in enumerate(images)},
            {v: i for i, v in enumerate(users)},
            {v: i for i, v in enumerate(tags)},
        )

    def sizes(self) -> tuple[int, int, int]:
        return len(self.tags), len(self.images), len(self.users)


@dataclass(frozen=True)
class Observations:
    """Deduplicated (image, tag, user) index triples plus the uploader map."""

    triples: tuple[tuple[int, int, int], ...]
    uploader: dict = field(repr=False)

    @classmethod
    def build(cls, triples, uploader, sizes) -> "Observations":
        n_tags, n_images, n_users = sizes
        unique = sorted(set(triples))
        for image, tag, user in unique:
            if not (0 <= image < n_images and 0 <= tag < n_tags and 0 <= user < n_users):
                raise DataFormatError(f"triple index out of range: {(image, tag, user)}")
            if uploader.get(image) != user:
                raise DataFormatError(
                    f"triple user {user} is not the uploader of image {image}"
                )
        return cls(tuple(unique), dict(uploader))


@dataclass
class FeatureStore:
    """Per-image visual feature vectors, all of one dimensionality."""

    dim: int
    vectors: dict  # image idx -> np.ndarray of shape (dim,)
    labels: dict = field(default_factory=dict, repr=False)

    def vector(self, image: int) -> np.ndarray:
        try:
            return self.vectors[image]
        except KeyError:
            name = self.labels.get(image, f"#{image}")
            raise MissingFeatureError(f"no feature vector for image {name}") from None

    def matrix(self, images) -> np.ndarray:
        if not len(images):
            return np.zeros((0, self.dim))
        return np.stack([self.vector(i) for i in images])


@dataclass
class GroupMembership:
    """User idx -> set of group ids; users never seen in groups.tsv are empty."""

    groups: dict

    def group_set(self, user: int) -> frozenset:
        return self.groups.get(user, frozenset())


@dataclass
class Taxonomy:
    """Tag DAG plus corpus statistics used for information content.

    ``counts`` holds the number of distinct images carrying each tag and
    ``pair_counts`` the number of images carrying both tags of a pair
    (canonical ``i < j`` keys).  Tags with no recorded parent hang off the
    synthetic :data:`ROOT`, whose occurrence probability is one.
    """

    size: int
    parents: dict  # child idx -> tuple of parent idxs
    counts: dict  # tag idx -> image count
    pair_counts: dict  # (i, j) with i < j -> image count
    universe: int  # number of images behind the counts
    _ancestor_cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, size, edges, counts, pair_counts, universe) -> "Taxonomy":
        parents: dict = {}
        for child, parent in sorted(set(edges)):
            if child == parent:
                raise TaxonomyCycleError(f"tag {child} is its own parent")
            parents.setdefault(child, []).append(parent)
        parents = {c: tuple(sorted(ps)) for c, ps in parents.items()}
        tax = cls(int(size), parents, dict(counts), dict(pair_counts), int(universe))
        cycle = tax._find_cycle()
        if cycle:
            raise TaxonomyCycleError("taxonomy contains a cycle: " + " -> ".join(map(str, cycle)))
        return tax

    def _find_cycle(self):
        state = {}
        for start in self.parents:
            if state.get(start):
                continue
            stack = [(start, iter(self.parents.get(start, ())))]
            state[start] = 1  # on stack
            path = [start]
            while stack:
                node, parents = stack[-1]
                advanced = False
                for nxt in parents:
                    mark = state.get(nxt, 0)
                    if mark == 1:
                        return path[path.index(nxt):] + [nxt]
                    if mark == 0:
                        state[nxt] = 1
                        stack.append((nxt, iter(self.parents.get(nxt, ()))))
                        path.append(nxt)
                        advanced = True
                        break
                if not advanced:
                    state[node] = 2
                    stack.pop()
                    path.pop()
        return None

    def count(self, tag: int) -> int:
        return int(self.counts.get(tag, 0))

    def pair_count(self, tag_a: int, tag_b: int) -> int:
        if tag_a == tag_b:
            return self.count(tag_a)
        key = (tag_a, tag_b) if tag_a < tag_b else (tag_b, tag_a)
        return int(self.pair_counts.get(key, 0))

    def probability(self, tag: int) -> float:
        """Occurrence probability clamped to (0, 1]; unseen tags carry none."""
        if tag == ROOT:
            return 1.0
        n = self.count(tag)
        if n <= 0 or self.universe <= 0:
            return 1.0  # zero information content
        return min(1.0, n / self.universe)

    def information(self, tag: int) -> float:
        return -math.log(self.probability(tag))

    def ancestors(self, tag: int) -> frozenset:
        """Ancestor-or-self set of a tag; the synthetic root is left implicit."""
        cached = self._ancestor_cache.get(tag)
        if cached is not None:
            return cached
        seen = {tag}
        frontier = [tag]
        while frontier:
            node = frontier.pop()
            for parent in self.parents.get(node, ()):
                if parent not in seen:
                    seen.add(parent)
                    frontier.append(parent)
        result = frozenset(seen)
        self._ancestor_cache[tag] = result
        return result


@dataclass
class Dataset:
    vocabulary: Vocabulary
    observations: Observations
    features: FeatureStore
    groups: GroupMembership
    taxonomy: Taxonomy
    dropped_images: int = 0


@dataclass(frozen=True)
class DatasetPaths:
    triples: Path
    features: Path
    groups: Path
    taxonomy: Path

    @classmethod
    def in_dir(cls, directory) -> "DatasetPaths":
        d = Path(directory)
        return cls(d / TRIPLES_FILE, d / FEATURES_FILE, d / GROUPS_FILE, d / TAXONOMY_FILE)

    def all(self):
        return (self.triples, self.features, self.groups, self.taxonomy)


def _read_rows(path: Path, n_fields: int):
    """Yield (line number, fields) from a TSV file, skipping blanks and '#'."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"missing input file: {path}")
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, "
                    f"got {len(fields)}"
                )
            yield lineno, fields


def _assemble_dataset(triple_rows, feature_rows, group_rows, taxonomy_rows) -> Dataset:
    """Build a :class:`Dataset` from string-level rows (shared with the generator)."""
    by_image: dict = {}
    for image_id, user_id, tag_id in triple_rows:
        entry = by_image.setdefault(image_id, {"users": set(), "rows": []})
        if user_id in INVALID_USER_IDS:
            entry["rows"].append((None, tag_id))
        else:
            entry["users"].add(user_id)
            entry["rows"].append((user_id, tag_id))

    dropped = 0
    kept_rows = []  # (image_id, tag_id, uploader_id)
    for image_id, entry in by_image.items():
        users = entry["users"]
        if len(users) > 1:
            raise DataFormatError(
                f"image {image_id} appears with {len(users)} distinct uploaders"
            )
        if not users:
            dropped += 1
            continue
        uploader_id = next(iter(users))
        for user_id, tag_id in entry["rows"]:
            if user_id is not None:
                kept_rows.append((image_id, tag_id, uploader_id))
    if dropped:
        logger.warning("dropped %d image(s) with an unavailable uploader", dropped)

    kept_rows.sort()
    images, users, tags = [], [], []
    image_seen, user_seen, tag_seen = {}, {}, {}
    for image_id, tag_id, uploader_id in kept_rows:
        if image_id not in image_seen:
            image_seen[image_id] = len(images)
            images.append(image_id)
        if uploader_id not in user_seen:
            user_seen[uploader_id] = len(users)
            users.append(uploader_id)
        if tag_id not in tag_seen:
            tag_seen[tag_id] = len(tags)
            tags.append(tag_id)
    vocab = Vocabulary.build(images, users, tags)

    uploader = {}
    triples = []
    for image_id, tag_id, uploader_id in kept_rows:
        image = vocab.image_index[image_id]
        user = vocab.user_index[uploader_id]
        uploader[image] = user
        triples.append((image, vocab.tag_index[tag_id], user))
    observations = Observations.build(triples, uploader, vocab.sizes())

    vectors: dict = {}
    labels: dict = {}
    dim = None
    for image_id, values in feature_rows:
        image = vocab.image_index.get(image_id)
        if image is None:
            continue
        if dim is None:
            dim = len(values)
        if len(values) != dim:
            raise DataFormatError(
                f"feature vector for image {image_id} has length {len(values)}, expected {dim}"
            )
        vec = np.asarray(values, dtype=np.float64)
        if not np.isfinite(vec).all():
            raise DataFormatError(f"non-finite feature value for image {image_id}")
        vectors[image] = vec
        labels[image] = image_id
    missing = [iid for iid in vocab.images if vocab.image_index[iid] not in vectors]
    if missing:
        raise MissingFeatureError(f"no feature vector for image {missing[0]}")
    features = FeatureStore(dim or 0, vectors, labels)

    groups: dict = {}
    for user_id, group_id in group_rows:
        user = vocab.user_index.get(user_id)
        if user is None:
            continue
        groups.setdefault(user, set()).add(group_id)
    membership = GroupMembership({u: frozenset(g) for u, g in groups.items()})

    edges = []
    for child_id, parent_id in taxonomy_rows:
        child = vocab.tag_index.get(child_id)
        parent = vocab.tag_index.get(parent_id)
        if child is None or parent is None:
            logger.debug("skipping taxonomy edge with unknown tag: %s -> %s", child_id, parent_id)
            continue
        edges.append((child, parent))
    taxonomy = build_taxonomy_counts(vocab, observations, edges)

    return Dataset(vocab, observations, features, membership, taxonomy, dropped)


def build_taxonomy_counts(vocab: Vocabulary, observations: Observations, edges) -> Taxonomy:
    """Derive image-level tag counts and co-occurrence counts from the triples."""
    image_tags: dict = {}
    for image, tag, _user in observations.triples:
        image_tags.setdefault(image, set()).add(tag)
    counts: dict = {}
    pair_counts: dict = {}
    for tags in image_tags.values():
        ordered = sorted(tags)
        for tag in ordered:
            counts[tag] = counts.get(tag, 0) + 1
        for a, b in itertools.combinations(ordered, 2):
            pair_counts[(a, b)] = pair_counts.get((a, b), 0) + 1
    return Taxonomy.build(len(vocab.tags), edges, counts, pair_counts, len(vocab.images))


def load_dataset(paths: DatasetPaths) -> Dataset:
    """Load and validate the four dataset files."""
    triple_rows = [tuple(fields) for _, fields in _read_rows(paths.triples, 3)]
    feature_rows = []
    for lineno, (image_id, blob) in _read_rows(paths.features, 2):
        try:
            values = [float(tok) for tok in blob.split(",")] if blob else []
        except ValueError as exc:
            raise DataFormatError(f"{paths.features}:{lineno}: bad float: {exc}") from None
        feature_rows.append((image_id, values))
    group_rows = [tuple(fields) for _, fields in _read_rows(paths.groups, 2)]
    taxonomy_rows = [tuple(fields) for _, fields in _read_rows(paths.taxonomy, 2)]
    return _assemble_dataset(triple_rows, feature_rows, group_rows, taxonomy_rows)


def write_dataset(dataset: Dataset, paths: DatasetPaths) -> None:
    """Write the dataset back out in canonical (string-sorted) form."""
    vocab = dataset.vocabulary
    for path in paths.all():
        Path(path).parent.mkdir(parents=True, exist_ok=True)

    lines = []
    for image, tag, user in dataset.observations.triples:
        lines.append((vocab.images[image], vocab.tags[tag], vocab.users[user]))
    lines.sort()
    with open(paths.triples, "w", encoding="utf-8") as handle:
        for image_id, tag_id, user_id in lines:
            handle.write(f"{image_id}\t{user_id}\t{tag_id}\n")

    with open(paths.features, "w", encoding="utf-8") as handle:
        for image_id in sorted(vocab.images):
            vec = dataset.features.vector(vocab.image_index[image_id])
            handle.write(image_id + "\t" + ",".join(repr(float(v)) for v in vec) + "\n")

    with open(paths.groups, "w", encoding="utf-8") as handle:
        rows = []
        for user_id in vocab.users:
            for group_id in dataset.groups.group_set(vocab.user_index[user_id]):
                rows.append((user_id, group_id))
        for user_id, group_id in sorted(rows):
            handle.write(f"{user_id}\t{group_id}\n")

    with open(paths.taxonomy, "w", encoding="utf-8") as handle:
        rows = []
        for child, parents in dataset.taxonomy.parents.items():
            for parent in parents:
                rows.append((vocab.tags[child], vocab.tags[parent]))
        for child_id, parent_id in sorted(rows):
            handle.write(f"{child_id}\t{parent_id}\n")


def build_observed_tensor(observations: Observations, vocabulary: Vocabulary) -> SparseTensor3:
    """Binary tag x image x user tensor over the full vocabulary."""
    entries = [(tag, image, user, 1.0) for image, tag, user in observations.triples]
    return SparseTensor3.from_entries(vocabulary.sizes(), entries)


def split_anchor_tensors(observed: SparseTensor3, anchors) -> tuple[SparseTensor3, np.ndarray]:
    """Split the observed tensor into its non-anchor and anchor parts.

    Returns the sparse non-anchor tensor (both the image and the user must be
    non-anchors) and the densified anchor tensor (both must be anchors).
    Mixed entries belong to neither and are dropped.
    """
    n_tags, n_images, n_users = observed.dims
    if not anchors.units:
        raise ValueError("anchor set is empty; nothing to complete")
    if max(anchors.anchor_images) >= n_images or max(anchors.anchor_users) >= n_users:
        raise ValueError("anchor index out of range for the observed tensor")
    image_pos = anchors.image_pos
    user_pos = anchors.user_pos
    non_images = anchors.non_anchor_images(n_images)
    non_users = anchors.non_anchor_users(n_users)
    non_image_pos = {idx: pos for pos, idx in enumerate(non_images)}
    non_user_pos = {idx: pos for pos, idx in enumerate(non_users)}

    baseline = np.zeros((n_tags, len(image_pos), len(user_pos)))
    entries = []
    for (tag, image, user), value in zip(observed.coords, observed.values):
        if image in image_pos and user in user_pos:
            baseline[tag, image_pos[image], user_pos[user]] = value
        elif image in non_image_pos and user in non_user_pos:
            entries.append((tag, non_image_pos[image], non_user_pos[user], value))
    sub = SparseTensor3.from_entries((n_tags, len(non_images), len(non_users)), entries)
    return sub, baseline
