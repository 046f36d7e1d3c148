"""Per-concept F-scores and ranked-retrieval average precision.

Everything here works on string ids so that files written by the pipeline
(or by anything else) can be scored directly.  A concept's predictions are
the images whose assigned tag list contains it; retrieval ranks images by
their score for a query tag, descending, ties toward the earlier image.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_CUTOFFS = (10, 20, 50, 100)
R_MODES = ("topk", "corpus")


@dataclass(frozen=True)
class GroundTruth:
    concepts: tuple  # tag ids, sorted
    relevant: dict = field(repr=False)  # tag id -> frozenset of image ids

    @classmethod
    def from_pairs(cls, pairs) -> "GroundTruth":
        relevant: dict = {}
        for image_id, tag_id in pairs:
            relevant.setdefault(tag_id, set()).add(image_id)
        return cls(
            tuple(sorted(relevant)), {t: frozenset(v) for t, v in relevant.items()}
        )


def load_ground_truth(path) -> GroundTruth:
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected image<TAB>tag")
            pairs.append((fields[0], fields[1]))
    return GroundTruth.from_pairs(pairs)


def fscore(predictions, truth: GroundTruth, concept: str) -> tuple[float, float, float]:
    """Precision, recall and F-score of predicting ``concept``.

    ``predictions`` maps image id -> iterable of assigned tag ids; an image
    predicts the concept when the concept appears in its list.
    """
    relevant = truth.relevant.get(concept, frozenset())
    predicted = {image for image, tags in predictions.items() if concept in tags}
    hits = len(predicted & relevant)
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(relevant) if relevant else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def average_precision(ranked, relevant, cutoff: int, r_mode: str = "topk") -> float:
    """AP over the top ``cutoff`` of a ranked image list.

    The normalizer is the number of relevant images inside the cutoff
    (``topk``) or in the whole relevant set (``corpus``).
    """
    if r_mode not in R_MODES:
        raise ValueError(f"r_mode must be one of {R_MODES}, got {r_mode!r}")
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    head = list(ranked)[:cutoff]
    hits = 0
    summed = 0.0
    for rank, image in enumerate(head, start=1):
        if image in relevant:
            hits += 1
            summed += hits / rank
    normalizer = hits if r_mode == "topk" else len(relevant)
    return summed / normalizer if normalizer else 0.0


def rank_images(scores_column, image_ids) -> list:
    """Image ids sorted by score descending; ties keep the earlier image."""
    scores_column = np.asarray(scores_column, dtype=np.float64)
    order = np.argsort(-scores_column, kind="stable")
    return [image_ids[i] for i in order]


def retrieval_run(
    query: str,
    scores: np.ndarray,
    image_ids,
    tag_ids,
    truth: GroundTruth,
    cutoffs=DEFAULT_CUTOFFS,
    r_mode: str = "topk",
) -> dict:
    """AP of one query tag at every cutoff, from a full image x tag score matrix."""
    tag_ids = list(tag_ids)
    if query not in tag_ids:
        raise ValueError(f"unknown query tag {query!r}")
    ranked = rank_images(scores[:, tag_ids.index(query)], list(image_ids))
    relevant = truth.relevant.get(query, frozenset())
    return {int(c): average_precision(ranked, relevant, int(c), r_mode) for c in cutoffs}


@dataclass
class MetricsReport:
    per_concept: dict  # tag id -> {"precision": .., "recall": .., "fscore": ..}
    average_fscore: float
    retrieval: dict  # query tag -> {cutoff: ap}
    map_at: dict  # cutoff -> mean ap over queries

    def to_dict(self) -> dict:
        return {
            "average_fscore": self.average_fscore,
            "per_concept": self.per_concept,
            "retrieval": {
                q: {str(c): v for c, v in sorted(aps.items())}
                for q, aps in self.retrieval.items()
            },
            "map": {str(c): v for c, v in sorted(self.map_at.items())},
        }

    def write_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write("concept,precision,recall,fscore\n")
            for concept in sorted(self.per_concept):
                row = self.per_concept[concept]
                handle.write(
                    f"{concept},{row['precision']:.6g},{row['recall']:.6g},{row['fscore']:.6g}\n"
                )
            handle.write(f"average,,,{self.average_fscore:.6g}\n")


def build_report(
    predictions,
    truth: GroundTruth,
    scores=None,
    image_ids=None,
    tag_ids=None,
    queries=(),
    cutoffs=DEFAULT_CUTOFFS,
    r_mode: str = "topk",
) -> MetricsReport:
    """Score predictions against ground truth; retrieval runs when queries given."""
    if not predictions:
        logger.warning("empty prediction set; every metric is zero")
    if truth.concepts and predictions:
        truth_images = set().union(*truth.relevant.values())
        if not truth_images & set(predictions):
            raise ValueError("prediction and ground-truth files share no image ids")
    per_concept = {}
    for concept in truth.concepts:
        precision, recall, f1 = fscore(predictions, truth, concept)
        per_concept[concept] = {"precision": precision, "recall": recall, "fscore": f1}
    average = (
        float(np.mean([row["fscore"] for row in per_concept.values()])) if per_concept else 0.0
    )
    retrieval: dict = {}
    map_at: dict = {}
    if queries:
        if scores is None or image_ids is None or tag_ids is None:
            raise ValueError("retrieval queries need scores, image_ids and tag_ids")
        for query in queries:
            retrieval[query] = retrieval_run(
                query, scores, image_ids, tag_ids, truth, cutoffs, r_mode
            )
        for cutoff in cutoffs:
            map_at[int(cutoff)] = float(
                np.mean([retrieval[q][int(cutoff)] for q in queries])
            )
    return MetricsReport(per_concept, average, retrieval, map_at)


def predictions_from_rankings(rankings, vocabulary) -> dict:
    """Convert index-level rankings into the string-id mapping metrics expect."""
    return {
        vocabulary.images[r.image]: tuple(vocabulary.tags[t] for t in r.tags)
        for r in rankings
    }


def scores_from_predictions(predictions, image_ids, tag_ids) -> np.ndarray:
    """Dense score matrix from (truncated) per-image tag:score lists."""
    tag_pos = {t: i for i, t in enumerate(tag_ids)}
    scores = np.zeros((len(image_ids), len(tag_ids)))
    for row, image_id in enumerate(image_ids):
        for tag_id, value in predictions.get(image_id, ()):
            col = tag_pos.get(tag_id)
            if col is not None:
                scores[row, col] = value
    return scores


def observed_tag_rankings(dataset, top_k: int):
    """Baseline that keeps each image's observed tags (unit score, index order).

    Returns the same (predictions, scores, image_ids, tag_ids) surface as the
    pipeline so both sides can be scored identically.
    """
    vocab = dataset.vocabulary
    n_tags, n_images, _ = vocab.sizes()
    scores = np.zeros((n_images, n_tags))
    for image, tag, _user in dataset.observations.triples:
        scores[image, tag] = 1.0
    predictions = {}
    for image in range(n_images):
        tags = np.flatnonzero(scores[image] > 0)[:top_k]
        predictions[vocab.images[image]] = tuple(vocab.tags[t] for t in tags)
    return predictions, scores, list(vocab.images), list(vocab.tags)
