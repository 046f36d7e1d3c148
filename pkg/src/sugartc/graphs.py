"""Adjacency matrices over the social anchor-unit graph.

Five matrices feed the completion solver: an RBF inter-adjacency from
non-anchor images to anchor images, a group-Jaccard inter-adjacency from
non-anchor users to anchor users, the intra-adjacencies induced by pushing
either inter-adjacency through its column-mass scaler, and a tag-tag
similarity mixing co-occurrence Jaccard with a taxonomy-based Lin term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .data import ROOT, FeatureStore, GroupMembership, Taxonomy

logger = logging.getLogger(__name__)

RBF_THRESHOLD = 1e-4


@dataclass(frozen=True)
class AdjacencySet:
    """The five matrices plus the column-mass scalers of the intra products."""

    image_inter: sp.csr_matrix  # non-anchor images x anchor images
    user_inter: sp.csr_matrix  # non-anchor users x anchor users
    image_intra: sp.csr_matrix  # non-anchor images x non-anchor images
    user_intra: sp.csr_matrix  # non-anchor users x non-anchor users
    tag_intra: sp.csr_matrix  # tags x tags
    image_scaler: np.ndarray  # per anchor image column mass
    user_scaler: np.ndarray


def image_inter_adjacency(
    features: FeatureStore,
    non_anchor_images,
    anchor_images,
    sigma: float,
    threshold: float = RBF_THRESHOLD,
    l2_normalize: bool = True,
) -> sp.csr_matrix:
    """RBF affinity exp(-||d_i - d_j||^2 / sigma^2); entries below ``threshold`` drop."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    left = features.matrix(list(non_anchor_images))
    right = features.matrix(list(anchor_images))
    if l2_normalize:
        left = _unit_rows(left)
        right = _unit_rows(right)
    if left.size == 0 or right.size == 0:
        return sp.csr_matrix((left.shape[0], right.shape[0]))
    affinity = np.exp(-cdist(left, right, "sqeuclidean") / sigma**2)
    affinity[affinity < threshold] = 0.0
    return sp.csr_matrix(affinity)


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    if matrix.size == 0:
        return matrix
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return matrix / np.where(norms > 0, norms, 1.0)


def user_inter_adjacency(groups: GroupMembership, non_anchor_users, anchor_users) -> sp.csr_matrix:
    """Jaccard overlap of shared group memberships; empty overlap stays absent."""
    anchor_sets = [groups.group_set(k) for k in anchor_users]
    rows, cols, vals = [], [], []
    for i, user in enumerate(non_anchor_users):
        mine = groups.group_set(user)
        if not mine:
            continue
        for j, theirs in enumerate(anchor_sets):
            shared = len(mine & theirs)
            if shared:
                rows.append(i)
                cols.append(j)
                vals.append(shared / (len(mine) + len(theirs) - shared))
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(list(non_anchor_users)), len(anchor_sets))
    )


def _intra_from_inter(inter: sp.csr_matrix, side: str) -> tuple[sp.csr_matrix, np.ndarray]:
    inter = inter.tocsr()
    col_mass = np.asarray(inter.sum(axis=0)).ravel()
    if inter.shape[0] == 0 or not (col_mass > 0).any():
        raise ValueError(f"every anchor {side} column has zero affinity; graph is disconnected")
    dead = col_mass == 0
    if dead.any():
        logger.warning(
            "excluding %d zero-mass anchor %s column(s) from the intra-adjacency product",
            int(dead.sum()),
            side,
        )
    keep = np.flatnonzero(~dead)
    sub = inter[:, keep]
    scaled = sub @ sp.diags(1.0 / col_mass[keep])
    intra = (scaled @ sub.T).tocsr()
    intra = ((intra + intra.T) * 0.5).tocsr()  # kill roundoff asymmetry
    return intra, col_mass


def image_intra_adjacency(image_inter: sp.csr_matrix) -> tuple[sp.csr_matrix, np.ndarray]:
    return _intra_from_inter(image_inter, "image")


def user_intra_adjacency(user_inter: sp.csr_matrix) -> tuple[sp.csr_matrix, np.ndarray]:
    return _intra_from_inter(user_inter, "user")


def least_common_subsumer(taxonomy: Taxonomy, tag_a: int, tag_b: int) -> int:
    """Most informative common ancestor-or-self; :data:`ROOT` when only it remains.

    Ties on information content break toward the smaller tag index.
    """
    common = taxonomy.ancestors(tag_a) & taxonomy.ancestors(tag_b)
    if not common:
        return ROOT
    return min(common, key=lambda tag: (-taxonomy.information(tag), tag))


def lin_similarity(taxonomy: Taxonomy, tag_a: int, tag_b: int) -> float:
    """Lin similarity 2*C(lcs) / (C(a) + C(b)) over corpus information content."""
    if taxonomy.count(tag_a) == 0 or taxonomy.count(tag_b) == 0:
        return 0.0
    denom = taxonomy.information(tag_a) + taxonomy.information(tag_b)
    if denom <= 0.0:
        return 0.0
    subsumer = least_common_subsumer(taxonomy, tag_a, tag_b)
    shared = 0.0 if subsumer == ROOT else taxonomy.information(subsumer)
    # raw corpus counts can make an ancestor rarer than its descendants,
    # so the ratio is capped to keep the similarity inside [0, 1]
    return min(1.0, 2.0 * shared / denom)


def tag_intra_adjacency(
    taxonomy: Taxonomy, weight_cooccurrence: float, weight_taxonomy: float
) -> sp.csr_matrix:
    """Tag similarity a1 * co-occurrence Jaccard + a2 * Lin, symmetric in [0, 1]."""
    a1, a2 = weight_cooccurrence, weight_taxonomy
    if a1 < 0 or a2 < 0 or abs(a1 + a2 - 1.0) > 1e-9:
        raise ValueError(f"similarity weights must be nonnegative and sum to 1, got {a1}, {a2}")
    n = taxonomy.size
    zero_count = [t for t in range(n) if taxonomy.count(t) == 0]
    if zero_count:
        logger.warning(
            "%d tag(s) have zero corpus count; their taxonomy similarity term is 0",
            len(zero_count),
        )
    sim = np.zeros((n, n))
    for i in range(n):
        count_i = taxonomy.count(i)
        for j in range(i, n):
            both = taxonomy.pair_count(i, j)
            union = count_i + taxonomy.count(j) - both
            jaccard = both / union if union > 0 else 0.0
            value = a1 * jaccard + a2 * lin_similarity(taxonomy, i, j)
            sim[i, j] = sim[j, i] = value
    return sp.csr_matrix(sim)


def build_adjacency(
    dataset,
    anchors,
    *,
    sigma: float,
    threshold: float = RBF_THRESHOLD,
    weight_cooccurrence: float = 0.9,
    weight_taxonomy: float = 0.1,
    l2_normalize: bool = True,
) -> AdjacencySet:
    """Assemble all five matrices for a dataset and a chosen anchor set."""
    n_tags, n_images, n_users = dataset.vocabulary.sizes()
    non_images = anchors.non_anchor_images(n_images)
    non_users = anchors.non_anchor_users(n_users)
    image_inter = image_inter_adjacency(
        dataset.features, non_images, anchors.anchor_images, sigma, threshold, l2_normalize
    )
    user_inter = user_inter_adjacency(dataset.groups, non_users, anchors.anchor_users)
    image_intra, image_scaler = image_intra_adjacency(image_inter)
    user_intra, user_scaler = user_intra_adjacency(user_inter)
    tag_intra = tag_intra_adjacency(dataset.taxonomy, weight_cooccurrence, weight_taxonomy)
    return AdjacencySet(
        image_inter, user_inter, image_intra, user_intra, tag_intra, image_scaler, user_scaler
    )


def write_sparse_text(path, matrix) -> None:
    """Text dump: a ``rows cols nnz`` header then one ``i j value`` line per entry."""
    coo = (matrix.tocoo() if sp.issparse(matrix) else sp.coo_matrix(matrix)).copy()
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for idx in order:
            handle.write(f"{coo.row[idx]} {coo.col[idx]} {repr(float(coo.data[idx]))}\n")


def read_sparse_text(path) -> sp.csr_matrix:
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected 'rows cols nnz' header")
        rows, cols, nnz = (int(tok) for tok in header)
        i, j, v = [], [], []
        for line in handle:
            if not line.strip():
                continue
            a, b, c = line.split()
            i.append(int(a))
            j.append(int(b))
            v.append(float(c))
    if len(v) != nnz:
        raise ValueError(f"{path}: header promises {nnz} entries, found {len(v)}")
    return sp.csr_matrix((v, (i, j)), shape=(rows, cols))
