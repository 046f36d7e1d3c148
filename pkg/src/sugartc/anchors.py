"""Anchor-unit selection via spectral co-clustering of the image-user matrix.

The observed tensor is collapsed along the tag axis into an image x user
count matrix.  Rows and columns are embedded jointly by the SVD of the
degree-normalized matrix (bipartite spectral graph partitioning) and then
k-means clustered, rows into image clusters and columns into user clusters,
in that shared space.  A co-cluster is any (image cluster, user cluster)
pair holding at least one observed unit; from each such pair the units
closest to its centroid are taken as anchors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.cluster import KMeans

from .tensors import SparseTensor3

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoClustering:
    row_labels: np.ndarray
    col_labels: np.ndarray
    row_embedding: np.ndarray
    col_embedding: np.ndarray
    n_row_clusters: int
    n_col_clusters: int


@dataclass(frozen=True)
class AnchorSet:
    """Selected (image, user) anchor units and their dense index maps.

    ``anchor_images`` / ``anchor_users`` deduplicate the unit members in
    first-appearance order; ``unit_positions`` holds each unit as positions
    into those two orderings.
    """

    units: tuple  # ((image idx, user idx), ...)
    anchor_images: tuple
    anchor_users: tuple
    image_pos: dict = field(repr=False)
    user_pos: dict = field(repr=False)
    unit_positions: tuple = field(repr=False)
    unit_coclusters: tuple = ()

    @classmethod
    def from_units(cls, units, coclusters=None) -> "AnchorSet":
        units = tuple((int(i), int(k)) for i, k in units)
        if not units:
            raise ValueError("anchor set needs at least one unit")
        if len(set(units)) != len(units):
            raise ValueError("duplicate anchor unit")
        images, users = [], []
        image_pos: dict = {}
        user_pos: dict = {}
        positions = []
        for image, user in units:
            if image not in image_pos:
                image_pos[image] = len(images)
                images.append(image)
            if user not in user_pos:
                user_pos[user] = len(users)
                users.append(user)
            positions.append((image_pos[image], user_pos[user]))
        coclusters = tuple(int(c) for c in coclusters) if coclusters is not None else ()
        if coclusters and len(coclusters) != len(units):
            raise ValueError("one co-cluster id per unit expected")
        return cls(
            units,
            tuple(images),
            tuple(users),
            image_pos,
            user_pos,
            tuple(positions),
            coclusters,
        )

    def non_anchor_images(self, total: int) -> tuple:
        return tuple(i for i in range(total) if i not in self.image_pos)

    def non_anchor_users(self, total: int) -> tuple:
        return tuple(k for k in range(total) if k not in self.user_pos)

    def paired_user_pos(self) -> dict:
        """Anchor-image position -> anchor-user position of its (first) unit."""
        paired: dict = {}
        for image_p, user_p in self.unit_positions:
            paired.setdefault(image_p, user_p)
        return paired


def image_user_matrix(observed: SparseTensor3) -> sp.csr_matrix:
    """Collapse the observed tensor along the tag axis into image x user counts."""
    if observed.nnz == 0:
        raise ValueError("cannot co-cluster an empty observation tensor")
    _, n_images, n_users = observed.dims
    matrix = sp.coo_matrix(
        (observed.values, (observed.coords[:, 1], observed.coords[:, 2])),
        shape=(n_images, n_users),
    ).tocsr()
    matrix.sum_duplicates()
    return matrix


def _kmeans_side(points, n_clusters, valid, seed, side):
    n = points.shape[0]
    if n_clusters >= n:  # saturated: every row/column is its own cluster
        return np.arange(n, dtype=np.int64)
    labels = np.zeros(n, dtype=np.int64)
    n_valid = int(valid.sum())
    if n_valid == 0:
        logger.warning("all %s rows are degenerate; a single cluster is emitted", side)
        return labels
    k = min(n_clusters, n_valid)
    km = KMeans(n_clusters=k, init="k-means++", n_init=10, max_iter=100, random_state=seed)
    labels[valid] = km.fit_predict(points[valid])
    if (~valid).any():
        logger.warning(
            "%d zero-mass %s row(s) assigned to their nearest nonempty cluster",
            int((~valid).sum()),
            side,
        )
        labels[~valid] = km.predict(points[~valid])
    _, dense = np.unique(labels, return_inverse=True)
    return dense.astype(np.int64)


def cocluster(matrix, n_image_clusters: int, n_user_clusters: int, seed: int) -> CoClustering:
    """Bipartite spectral co-clustering of a nonnegative image x user matrix."""
    dense = np.asarray(matrix.todense() if sp.issparse(matrix) else matrix, dtype=np.float64)
    rows, cols = dense.shape
    if not 1 <= n_image_clusters <= rows:
        raise ValueError(f"image cluster count must lie in [1, {rows}], got {n_image_clusters}")
    if not 1 <= n_user_clusters <= cols:
        raise ValueError(f"user cluster count must lie in [1, {cols}], got {n_user_clusters}")
    if (dense < 0).any():
        raise ValueError("co-clustering input must be nonnegative")

    row_mass = dense.sum(axis=1)
    col_mass = dense.sum(axis=0)
    row_scale = np.where(row_mass > 0, 1.0 / np.sqrt(np.where(row_mass > 0, row_mass, 1.0)), 0.0)
    col_scale = np.where(col_mass > 0, 1.0 / np.sqrt(np.where(col_mass > 0, col_mass, 1.0)), 0.0)
    normalized = dense * row_scale[:, None] * col_scale[None, :]

    depth = max(1, math.ceil(math.log2(max(n_image_clusters, n_user_clusters))))
    u, s, vt = np.linalg.svd(normalized, full_matrices=False)
    lo = 1 if len(s) > depth else 0  # drop the trivial leading pair when affordable
    take = slice(lo, min(lo + depth, len(s)))
    row_embedding = u[:, take] * row_scale[:, None]
    col_embedding = vt[take].T * col_scale[:, None]

    seeds = np.random.SeedSequence(seed).generate_state(2)
    row_labels = _kmeans_side(
        row_embedding, n_image_clusters, row_mass > 0, int(seeds[0]), "image"
    )
    col_labels = _kmeans_side(
        col_embedding, n_user_clusters, col_mass > 0, int(seeds[1]), "user"
    )
    return CoClustering(
        row_labels, col_labels, row_embedding, col_embedding, n_image_clusters, n_user_clusters
    )


def select_anchor_units(clustering: CoClustering, matrix, per_cocluster: int) -> AnchorSet:
    """Pick the units nearest each co-cluster centroid in the joint embedding.

    Ties on distance break toward the smaller image index, then user index.
    Co-clusters holding fewer than ``per_cocluster`` units contribute all of
    their units.
    """
    if per_cocluster < 1:
        raise ValueError(f"per-co-cluster anchor count must be >= 1, got {per_cocluster}")
    coo = (matrix.tocoo() if sp.issparse(matrix) else sp.coo_matrix(matrix)).copy()
    coo.sum_duplicates()
    pairs = sorted(
        (int(i), int(k)) for i, k, v in zip(coo.row, coo.col, coo.data) if v > 0
    )
    if not pairs:
        raise ValueError("no observed units to anchor")

    grouped: dict = {}
    for image, user in pairs:
        key = (int(clustering.row_labels[image]), int(clustering.col_labels[user]))
        grouped.setdefault(key, []).append((image, user))

    units = []
    coclusters = []
    for key in sorted(grouped):
        members = grouped[key]
        image_arr = np.array([m[0] for m in members])
        user_arr = np.array([m[1] for m in members])
        stacked = np.hstack(
            [clustering.row_embedding[image_arr], clustering.col_embedding[user_arr]]
        )
        centroid = stacked.mean(axis=0)
        dist_sq = ((stacked - centroid) ** 2).sum(axis=1)
        order = np.lexsort((user_arr, image_arr, dist_sq))[:per_cocluster]
        cocluster_id = key[0] * clustering.n_col_clusters + key[1]
        for idx in order:
            units.append((int(image_arr[idx]), int(user_arr[idx])))
            coclusters.append(cocluster_id)
    return AnchorSet.from_units(units, coclusters)


def random_anchor_units(matrix, count: int, seed: int) -> AnchorSet:
    """Debugging fallback: sample observed units uniformly without replacement."""
    if count < 1:
        raise ValueError(f"anchor count must be >= 1, got {count}")
    coo = (matrix.tocoo() if sp.issparse(matrix) else sp.coo_matrix(matrix)).copy()
    coo.sum_duplicates()
    pairs = sorted(
        (int(i), int(k)) for i, k, v in zip(coo.row, coo.col, coo.data) if v > 0
    )
    if not pairs:
        raise ValueError("no observed units to anchor")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pairs), size=min(count, len(pairs)), replace=False)
    chosen = sorted(pairs[p] for p in picks)
    return AnchorSet.from_units(chosen)
