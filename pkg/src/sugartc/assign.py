"""Anchor-aware tag assignment from the completed tensor.

Each non-anchor image is scored against the tag vocabulary by blending two
anchor views: the tag-image association columns of its closest anchor
images (by inter-adjacency affinity) and the tag-user association columns
of the anchor users paired with those anchor images, weighted by the
uploader's own affinity.  Anchor images skip the blend and read their tags
straight out of the completed tensor's tag-image associations.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import worker_count
from .tensors import accumulate_mode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignConfig:
    neighbors: int = 10  # anchor images blended per image
    gamma: float = 0.8  # weight of the image view against the uploader view
    top_k: int = 10

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class TagRanking:
    image: int
    entries: tuple  # ((tag idx, score), ...) score-descending

    @property
    def tags(self) -> tuple:
        return tuple(tag for tag, _ in self.entries)


@dataclass
class AssignmentResult:
    rankings: list
    scores: np.ndarray  # images x tags, full score matrix
    zero_score_images: int = 0
    uploaderless_images: int = 0


def association_matrices(anchor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tag-image and tag-user association matrices of the completed tensor."""
    return accumulate_mode(anchor, 3), accumulate_mode(anchor, 2)


def rank_tags(image: int, scores: np.ndarray, top_k: int) -> TagRanking:
    """Top-k strictly positive scores; ties break toward the smaller tag index."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    entries = []
    for tag in order[:top_k]:
        if scores[tag] <= 0:
            break
        entries.append((int(tag), float(scores[tag])))
    return TagRanking(int(image), tuple(entries))


def score_image(
    image_row: int,
    uploader_row,
    anchors,
    adjacency,
    tag_image: np.ndarray,
    tag_user: np.ndarray,
    config: AssignConfig,
) -> np.ndarray:
    """Blend anchor associations into a tag-score vector for one non-anchor image.

    ``image_row`` / ``uploader_row`` index the non-anchor orderings of the
    inter-adjacency matrices; ``uploader_row`` is None when the uploader has
    no such row (it is an anchor user or unknown), which drops the uploader
    view entirely.
    """
    affinities = np.asarray(adjacency.image_inter[image_row].todense()).ravel()
    chosen = np.argsort(-affinities, kind="stable")[: config.neighbors]
    image_view = tag_image[:, chosen] @ affinities[chosen]
    gamma = config.gamma if uploader_row is not None else 1.0
    scores = gamma * image_view
    if uploader_row is not None and gamma < 1.0:
        paired = anchors.paired_user_pos()
        user_cols = np.array([paired[p] for p in chosen], dtype=np.int64)
        user_aff = np.asarray(adjacency.user_inter[uploader_row].todense()).ravel()
        scores = scores + (1.0 - gamma) * (tag_user[:, user_cols] @ user_aff[user_cols])
    return scores / config.neighbors


def assign_all(dataset, anchors, adjacency, anchor_tensor, config: AssignConfig) -> AssignmentResult:
    """Score and rank every image in the vocabulary, in vocabulary order."""
    n_tags, n_images, n_users = dataset.vocabulary.sizes()
    tag_image, tag_user = association_matrices(anchor_tensor)
    non_images = anchors.non_anchor_images(n_images)
    non_users = anchors.non_anchor_users(n_users)
    image_row = {idx: row for row, idx in enumerate(non_images)}
    user_row = {idx: row for row, idx in enumerate(non_users)}

    scores = np.zeros((n_images, n_tags))
    uploaderless = 0
    for image in anchors.anchor_images:
        scores[image] = tag_image[:, anchors.image_pos[image]]

    def _score(image: int) -> np.ndarray:
        uploader = dataset.observations.uploader.get(image)
        return score_image(
            image_row[image],
            user_row.get(uploader),
            anchors,
            adjacency,
            tag_image,
            tag_user,
            config,
        )

    workers = worker_count()
    if workers > 1 and len(non_images) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_score, non_images))
    else:
        rows = [_score(image) for image in non_images]
    for image, row in zip(non_images, rows):
        scores[image] = row
        uploader = dataset.observations.uploader.get(image)
        if user_row.get(uploader) is None:  # anchor uploader or unknown: image view only
            uploaderless += 1
    if uploaderless:
        logger.info(
            "%d non-anchor image(s) lack an uploader affinity row; their uploader view was dropped",
            uploaderless,
        )

    rankings = [rank_tags(image, scores[image], config.top_k) for image in range(n_images)]
    zero_rows = int(sum(1 for r in rankings if not r.entries))
    if zero_rows:
        logger.warning("%d image(s) received no positive tag scores", zero_rows)
    return AssignmentResult(rankings, scores, zero_rows, uploaderless)


def write_retagged(path, rankings, vocabulary) -> None:
    """One line per image: ``image_id<TAB>tag:score,...`` with 6-significant scores."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for ranking in rankings:
            body = ",".join(
                f"{vocabulary.tags[tag]}:{score:.6g}" for tag, score in ranking.entries
            )
            handle.write(f"{vocabulary.images[ranking.image]}\t{body}\n")


def read_retagged(path) -> dict:
    """Parse a retagged file into image id -> [(tag id, score), ...].

    Tokens without an explicit score (plain tag lists, such as a ground-truth
    file) default to 1.0, and repeated lines for one image accumulate, so the
    simpler ``image<TAB>tag`` format is accepted too.
    """
    out: dict = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields")
            image_id, body = fields
            entries = out.setdefault(image_id, [])
            if body:
                for token in body.split(","):
                    tag_id, sep, score = token.rpartition(":")
                    if not sep:
                        entries.append((token, 1.0))
                        continue
                    if not tag_id:
                        raise ValueError(f"{path}:{lineno}: bad tag:score token {token!r}")
                    try:
                        entries.append((tag_id, float(score)))
                    except ValueError:
                        raise ValueError(
                            f"{path}:{lineno}: bad score in token {token!r}"
                        ) from None
    return out
