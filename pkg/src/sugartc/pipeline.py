"""End-to-end orchestration: anchors, graphs, completion, assignment.

A :class:`Pipeline` lazily computes each stage, memoizes it in memory and,
when given a cache directory, also on disk.  Disk entries are keyed by a
content hash of the dataset plus the configuration fields the stage actually
depends on, so editing an input or a relevant parameter invalidates exactly
the stages downstream of the change.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .anchors import (
    AnchorSet,
    cocluster,
    image_user_matrix,
    random_anchor_units,
    select_anchor_units,
)
from .assign import AssignmentResult, assign_all
from .completion import CompletionState, load_checkpoint, save_checkpoint, solve
from .config import ConfigError, PipelineConfig
from .data import Dataset, build_observed_tensor, split_anchor_tensors
from .evaluate import GroundTruth, MetricsReport, build_report, predictions_from_rankings
from .graphs import AdjacencySet, build_adjacency
from .tensors import SparseTensor3

logger = logging.getLogger(__name__)

STAGES = ("anchors", "graphs", "complete", "assign")
CACHE_DIR_NAME = ".cache"

_ADJACENCY_MATRICES = ("image_inter", "user_inter", "image_intra", "user_intra", "tag_intra")


def dataset_fingerprint(dataset: Dataset) -> str:
    """Stable digest of the dataset content (ids, triples, features, structure)."""
    vocab = dataset.vocabulary
    digest = hashlib.sha256()

    def feed(kind, rows):
        for row in sorted(rows):
            digest.update(kind.encode())
            digest.update("\t".join(row).encode())
            digest.update(b"\n")

    feed(
        "t",
        [
            (vocab.images[image], vocab.users[user], vocab.tags[tag])
            for image, tag, user in dataset.observations.triples
        ],
    )
    feed(
        "f",
        [
            (image_id, ",".join(repr(float(v)) for v in dataset.features.vector(idx)))
            for image_id, idx in vocab.image_index.items()
        ],
    )
    feed(
        "g",
        [
            (user_id, group_id)
            for user_id, idx in vocab.user_index.items()
            for group_id in dataset.groups.group_set(idx)
        ],
    )
    feed(
        "x",
        [
            (vocab.tags[child], vocab.tags[parent])
            for child, parents in dataset.taxonomy.parents.items()
            for parent in parents
        ],
    )
    return digest.hexdigest()


def _digest(*parts) -> str:
    digest = hashlib.sha256()
    for part in parts:
        digest.update(repr(part).encode())
        digest.update(b"\x00")
    return digest.hexdigest()[:16]


def write_anchor_units(path, anchors: AnchorSet, vocabulary) -> Path:
    """Anchor dump: one ``image_id<TAB>user_id<TAB>cocluster_id`` line per unit.

    Units picked without co-clustering (random mode) get cocluster id -1.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coclusters = anchors.unit_coclusters or (-1,) * len(anchors.units)
    with open(path, "w", encoding="utf-8") as handle:
        for (image, user), cluster in zip(anchors.units, coclusters):
            handle.write(f"{vocabulary.images[image]}\t{vocabulary.users[user]}\t{cluster}\n")
    return path


def _save_anchor_cache(path: Path, anchors: AnchorSet) -> None:
    payload = {
        "units": [[image, user] for image, user in anchors.units],
        "coclusters": list(anchors.unit_coclusters),
    }
    path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def _load_anchor_cache(path: Path) -> AnchorSet:
    payload = json.loads(path.read_text(encoding="utf-8"))
    return AnchorSet.from_units(
        [tuple(unit) for unit in payload["units"]], payload["coclusters"] or None
    )


def _save_adjacency_cache(path: Path, adjacency: AdjacencySet) -> None:
    arrays = {"image_scaler": adjacency.image_scaler, "user_scaler": adjacency.user_scaler}
    for name in _ADJACENCY_MATRICES:
        matrix = getattr(adjacency, name).tocsr()
        arrays[f"{name}_data"] = matrix.data
        arrays[f"{name}_indices"] = matrix.indices
        arrays[f"{name}_indptr"] = matrix.indptr
        arrays[f"{name}_shape"] = np.asarray(matrix.shape, dtype=np.int64)
    np.savez_compressed(path, **arrays)


def _load_adjacency_cache(path: Path) -> AdjacencySet:
    with np.load(path) as blob:
        parts = {}
        for name in _ADJACENCY_MATRICES:
            parts[name] = sp.csr_matrix(
                (blob[f"{name}_data"], blob[f"{name}_indices"], blob[f"{name}_indptr"]),
                shape=tuple(blob[f"{name}_shape"]),
            )
        return AdjacencySet(
            image_scaler=blob["image_scaler"],
            user_scaler=blob["user_scaler"],
            **parts,
        )


class Pipeline:
    """Lazily drives the stages over one dataset and configuration."""

    def __init__(self, dataset: Dataset, config: PipelineConfig, cache_dir=None):
        config.validate()
        self.dataset = dataset
        self.config = config
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.fingerprint = dataset_fingerprint(dataset)
        self._observed = None
        self._anchors = None
        self._adjacency = None
        self._split = None
        self._completion = None
        self._assignment = None

    # cache plumbing

    def _cache_path(self, stage: str, key: str, suffix: str):
        if self.cache_dir is None:
            return None
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        return self.cache_dir / f"{stage}-{key}{suffix}"

    def _anchor_key(self) -> str:
        c = self.config
        return _digest(
            "anchors", self.fingerprint, c.c_i, c.c_u, c.m_c, c.anchor_mode, c.seed
        )

    def _adjacency_key(self) -> str:
        c = self.config
        return _digest(
            "graphs",
            self._anchor_key(),
            c.sigma,
            c.inter_threshold,
            c.l2_normalize,
            c.a1,
            c.a2,
        )

    def _completion_key(self) -> str:
        c = self.config
        return _digest(
            "complete",
            self._adjacency_key(),
            c.alpha,
            c.beta,
            c.lambda1,
            c.lambda2,
            c.rel_tol,
            c.max_iters,
            c.init_noise_scale,
            c.seed,
        )

    # stages

    def observed(self) -> SparseTensor3:
        if self._observed is None:
            self._observed = build_observed_tensor(
                self.dataset.observations, self.dataset.vocabulary
            )
        return self._observed

    def anchors(self) -> AnchorSet:
        if self._anchors is not None:
            return self._anchors
        path = self._cache_path("anchors", self._anchor_key(), ".json")
        if path is not None and path.exists():
            self._anchors = _load_anchor_cache(path)
            logger.info("anchors: reused %s", path.name)
            return self._anchors
        started = time.perf_counter()
        matrix = image_user_matrix(self.observed())
        c = self.config
        if c.anchor_mode == "random":
            want = min(int(sp.coo_matrix(matrix).nnz), c.m_c * max(c.c_i, c.c_u))
            anchors = random_anchor_units(matrix, want, c.seed)
        else:
            clustering = cocluster(matrix, c.c_i, c.c_u, c.seed)
            anchors = select_anchor_units(clustering, matrix, c.m_c)
        n_tags, n_images, n_users = self.dataset.vocabulary.sizes()
        if not anchors.non_anchor_images(n_images) or not anchors.non_anchor_users(n_users):
            raise ConfigError(
                "anchor selection consumed every image or user; "
                "lower m_c or the cluster counts"
            )
        logger.info(
            "anchors: %d units (%d images, %d users) in %.2fs",
            len(anchors.units),
            len(anchors.anchor_images),
            len(anchors.anchor_users),
            time.perf_counter() - started,
        )
        if path is not None:
            _save_anchor_cache(path, anchors)
        self._anchors = anchors
        return anchors

    def adjacency(self) -> AdjacencySet:
        if self._adjacency is not None:
            return self._adjacency
        anchors = self.anchors()
        path = self._cache_path("graphs", self._adjacency_key(), ".npz")
        if path is not None and path.exists():
            self._adjacency = _load_adjacency_cache(path)
            logger.info("graphs: reused %s", path.name)
            return self._adjacency
        started = time.perf_counter()
        c = self.config
        adjacency = build_adjacency(
            self.dataset,
            anchors,
            sigma=c.sigma,
            threshold=c.inter_threshold,
            weight_cooccurrence=c.a1,
            weight_taxonomy=c.a2,
            l2_normalize=c.l2_normalize,
        )
        logger.info(
            "graphs: image %s, user %s, tag %s in %.2fs",
            adjacency.image_inter.shape,
            adjacency.user_inter.shape,
            adjacency.tag_intra.shape,
            time.perf_counter() - started,
        )
        if path is not None:
            _save_adjacency_cache(path, adjacency)
        self._adjacency = adjacency
        return adjacency

    def split(self) -> tuple[SparseTensor3, np.ndarray]:
        if self._split is None:
            self._split = split_anchor_tensors(self.observed(), self.anchors())
        return self._split

    def completion(self) -> CompletionState:
        if self._completion is not None:
            return self._completion
        adjacency = self.adjacency()
        path = self._cache_path("complete", self._completion_key(), ".sgtc")
        if path is not None and path.exists():
            self._completion = load_checkpoint(path)
            logger.info("complete: reused %s", path.name)
            return self._completion
        started = time.perf_counter()
        observed, baseline = self.split()
        state = solve(observed, baseline, adjacency, self.config.completion())
        logger.info(
            "complete: %d iteration(s), objective %.6g, converged=%s in %.2fs",
            state.iterations,
            state.trace[-1],
            state.converged,
            time.perf_counter() - started,
        )
        if path is not None:
            save_checkpoint(path, state)
        self._completion = state
        return state

    def assignment(self) -> AssignmentResult:
        if self._assignment is None:
            started = time.perf_counter()
            self._assignment = assign_all(
                self.dataset,
                self.anchors(),
                self.adjacency(),
                self.completion().tensor,
                self.config.assignment(),
            )
            logger.info(
                "assign: %d image(s) ranked in %.2fs",
                len(self._assignment.rankings),
                time.perf_counter() - started,
            )
        return self._assignment

    def run_stage(self, stage: str):
        """Compute up to and including ``stage``; returns that stage's product."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
        if stage == "anchors":
            return self.anchors()
        if stage == "graphs":
            return self.adjacency()
        if stage == "complete":
            return self.completion()
        return self.assignment()

    def report(
        self, truth: GroundTruth, queries=None, cutoffs=None, r_mode=None
    ) -> MetricsReport:
        """Score the assignment against ground truth (queries default from config)."""
        vocab = self.dataset.vocabulary
        result = self.assignment()
        predictions = predictions_from_rankings(result.rankings, vocab)
        queries = tuple(queries if queries is not None else self.config.queries)
        unknown = [q for q in queries if q not in vocab.tag_index]
        if unknown:
            raise ConfigError(f"query tag(s) not in the vocabulary: {unknown}")
        return build_report(
            predictions,
            truth,
            scores=result.scores,
            image_ids=list(vocab.images),
            tag_ids=list(vocab.tags),
            queries=queries,
            cutoffs=tuple(cutoffs if cutoffs is not None else self.config.cutoffs),
            r_mode=r_mode if r_mode is not None else self.config.ap_r_mode,
        )
