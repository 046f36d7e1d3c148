"""Acceptance gate: nine numbered end-to-end checks, one pass/fail line each.

Run ``pytest -s tests/test_acceptance.py`` to watch the lines print as the
checks execute; without ``-s`` they appear in the captured-output section.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import scipy.sparse as sp

from sugartc.cli import main
from sugartc.completion import (
    CompletionConfig,
    CompletionState,
    Operators,
    gradient,
    initial_tensor,
    multiplicative_step,
    objective,
    solve,
)
from sugartc.config import merge_config
from sugartc.data import ROOT, FeatureStore, GroupMembership, Taxonomy
from sugartc.evaluate import GroundTruth, build_report, observed_tag_rankings
from sugartc.graphs import (
    AdjacencySet,
    image_inter_adjacency,
    image_intra_adjacency,
    least_common_subsumer,
    lin_similarity,
    user_inter_adjacency,
    user_intra_adjacency,
)
from sugartc.pipeline import Pipeline
from sugartc.planted import PlantedConfig, generate_planted, write_planted
from sugartc.tensors import SparseTensor3, mode_product, mode_product_sparse

HARNESS_FLAGS = dict(sigma=0.4, c_i=20, c_u=12, m_c=8, s=5, gamma=0.8, k=10, seed=0)

_CACHE: dict = {}


@contextmanager
def criterion(number: int, name: str, limit_seconds: float):
    start = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - start
        if elapsed > limit_seconds:
            raise AssertionError(f"took {elapsed:.1f}s, budget {limit_seconds:.0f}s")
    except BaseException:
        print(f"[FAIL] criterion {number}: {name}", flush=True)
        raise
    print(f"[PASS] criterion {number}: {name} ({elapsed:.2f}s)", flush=True)


# ---------------------------------------------------------------- criterion 1


def mode_product_loops(dense, operator, mode):
    axis = mode - 1
    out_shape = list(dense.shape)
    out_shape[axis] = operator.shape[0]
    out = np.zeros(out_shape)
    for index in np.ndindex(*out_shape):
        total = 0.0
        for contracted in range(dense.shape[axis]):
            src = list(index)
            src[axis] = contracted
            total += operator[index[axis], contracted] * dense[tuple(src)]
        out[index] = total
    return out


def test_criterion_1_mode_product_oracle():
    rng = np.random.default_rng(11)
    with criterion(1, "mode products match the loop oracle", 10.0):
        for _ in range(100):
            dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
            dense = rng.random(dims)
            dense[dense < 0.4] = 0.0
            sparse = SparseTensor3.from_dense(dense)
            mode = int(rng.integers(1, 4))
            operator = rng.random((int(rng.integers(1, 9)), dims[mode - 1]))
            want = mode_product_loops(dense, operator, mode)
            scale = max(1.0, float(np.max(np.abs(want))))
            got_dense = mode_product(dense, operator, mode)
            assert np.max(np.abs(got_dense - want)) <= 1e-10 * scale
            got_sparse = mode_product_sparse(sparse, operator, mode)
            assert np.max(np.abs(got_sparse - want)) <= 1e-10 * scale


# ------------------------------------------------------------ shared problems


def random_problem(rng, n_tags, n_img, n_usr, m_img, m_usr, density=0.35):
    tag = rng.random((n_tags, n_tags))
    tag = (tag + tag.T) * 0.5
    image_inter = sp.csr_matrix(rng.uniform(0.1, 1.0, (n_img, m_img)))
    user_inter = sp.csr_matrix(rng.uniform(0.1, 1.0, (n_usr, m_usr)))
    image_intra, image_mass = image_intra_adjacency(image_inter)
    user_intra, user_mass = user_intra_adjacency(user_inter)
    adjacency = AdjacencySet(
        image_inter,
        user_inter,
        image_intra,
        user_intra,
        sp.csr_matrix(tag),
        image_mass,
        user_mass,
    )
    dense = (rng.random((n_tags, n_img, n_usr)) < density).astype(np.float64)
    observed = SparseTensor3.from_dense(dense)
    baseline = rng.uniform(0.0, 1.0, (n_tags, m_img, m_usr))
    return observed, baseline, adjacency


def silent_tags(adjacency):
    """Copy with a zero tag matrix, killing the reconstruction term."""
    return AdjacencySet(
        adjacency.image_inter,
        adjacency.user_inter,
        adjacency.image_intra,
        adjacency.user_intra,
        sp.csr_matrix(adjacency.tag_intra.shape),
        adjacency.image_scaler,
        adjacency.user_scaler,
    )


# ---------------------------------------------------------------- criterion 2


def finite_difference(anchor, observed, baseline, adjacency, config, h=1e-5):
    grad = np.zeros_like(anchor)
    for index in np.ndindex(anchor.shape):
        bumped = anchor.copy()
        bumped[index] += h
        high = objective(bumped, observed, baseline, adjacency, config)
        bumped[index] -= 2 * h
        low = objective(bumped, observed, baseline, adjacency, config)
        grad[index] = (high - low) / (2 * h)
    return grad


def test_criterion_2_gradient_finite_differences():
    rng = np.random.default_rng(22)
    with criterion(2, "gradient matches central finite differences", 60.0):
        for _ in range(10):
            n_tags = int(rng.integers(3, 6))
            m_img = int(rng.integers(4, 6))
            m_usr = int(rng.integers(2, 4))
            n_img = int(rng.integers(m_img + 1, 9))
            n_usr = int(rng.integers(m_usr + 1, 7))
            observed, baseline, adjacency = random_problem(
                rng, n_tags, n_img, n_usr, m_img, m_usr
            )
            anchor = rng.uniform(0.2, 1.0, baseline.shape)
            quiet = silent_tags(adjacency)
            cases = (
                (adjacency, CompletionConfig(alpha=0.0, beta=0.0, lambda1=0.0, lambda2=0.0)),
                (quiet, CompletionConfig(alpha=0.3, beta=0.0, lambda1=0.0, lambda2=0.0)),
                (quiet, CompletionConfig(alpha=0.0, beta=0.3, lambda1=0.0, lambda2=0.0)),
                (quiet, CompletionConfig(alpha=0.0, beta=0.0, lambda1=0.4, lambda2=0.0)),
                (quiet, CompletionConfig(alpha=0.0, beta=0.0, lambda1=0.0, lambda2=0.4)),
                (adjacency, CompletionConfig(alpha=0.05, beta=0.01, lambda1=0.2, lambda2=0.1)),
            )
            for matrices, config in cases:
                got = gradient(anchor, observed, baseline, matrices, config)
                want = finite_difference(anchor, observed, baseline, matrices, config)
                scale = np.maximum(np.abs(want), 1.0)
                assert np.max(np.abs(got - want) / scale) <= 1e-4


# ---------------------------------------------------------------- criterion 3


def test_criterion_3_nonnegative_monotone_updates():
    rng = np.random.default_rng(33)
    with criterion(3, "updates stay nonnegative and monotone", 60.0):
        config = CompletionConfig(
            alpha=0.01, beta=0.005, lambda1=0.1, lambda2=0.05, max_iters=100, rel_tol=1e-30
        )
        for _ in range(20):
            observed, baseline, adjacency = random_problem(
                rng,
                int(rng.integers(2, 5)),
                int(rng.integers(4, 9)),
                int(rng.integers(3, 7)),
                int(rng.integers(2, 4)),
                int(rng.integers(2, 4)),
            )
            state = solve(observed, baseline, adjacency, config)
            assert (state.tensor >= 0).all()
            trace = np.asarray(state.trace)
            assert len(trace) == state.iterations + 1
            drops = np.diff(trace)
            assert (drops <= 1e-9 * np.maximum(trace[:-1], 1.0)).all()

        # stepping through the public surface keeps nonnegativity every step
        observed, baseline, adjacency = random_problem(rng, 3, 6, 5, 3, 2)
        state = CompletionState(initial_tensor(baseline, config), [], 0, False)
        for _ in range(100):
            state = multiplicative_step(state, observed, baseline, adjacency, config)
            assert (state.tensor >= 0).all()
        steps = np.asarray(state.trace)
        assert (np.diff(steps) <= 1e-9 * np.maximum(steps[:-1], 1.0)).all()

        # an exact reconstruction is a fixed point: numerator equals denominator,
        # so the step leaves the tensor alone and the gradient balances to zero
        shape = (3, 4, 2)
        eye = AdjacencySet(
            sp.identity(shape[1], format="csr"),
            sp.identity(shape[2], format="csr"),
            sp.csr_matrix((shape[1], shape[1])),
            sp.csr_matrix((shape[2], shape[2])),
            sp.identity(shape[0], format="csr"),
            np.ones(shape[1]),
            np.ones(shape[2]),
        )
        fit_only = CompletionConfig(alpha=0.0, beta=0.0, lambda1=0.0, lambda2=0.0)
        dense = rng.uniform(0.5, 2.0, shape)
        fixed = CompletionState(dense.copy(), [], 0, False)
        stepped = multiplicative_step(
            fixed, SparseTensor3.from_dense(dense), dense, eye, fit_only
        )
        assert np.max(np.abs(stepped.tensor - dense)) <= 1e-12
        balance = gradient(dense, SparseTensor3.from_dense(dense), dense, eye, fit_only)
        assert np.max(np.abs(balance)) <= 1e-10 * dense.max()


# ---------------------------------------------------------------- criterion 4


def pair_sum_loops(anchor, inter, intra, mode):
    spread = mode_product(anchor, inter.toarray(), mode)
    weights = intra.toarray()
    total = 0.0
    for a in range(weights.shape[0]):
        for b in range(weights.shape[1]):
            slice_a = np.take(spread, a, axis=mode - 1)
            slice_b = np.take(spread, b, axis=mode - 1)
            total += weights[a, b] * ((slice_a - slice_b) ** 2).sum()
    return 0.5 * total


def test_criterion_4_pairwise_contraction_identity():
    rng = np.random.default_rng(44)
    with criterion(4, "pair penalties collapse to contractions", 30.0):
        for _ in range(10):
            n_img = int(rng.integers(3, 13))
            n_usr = int(rng.integers(3, 13))
            observed, baseline, adjacency = random_problem(rng, 3, n_img, n_usr, 3, 2)
            anchor = rng.uniform(0.0, 1.0, baseline.shape)
            ops = Operators.build(observed, adjacency)
            sides = (
                (ops.pair_image, ops.diag_image, 2, adjacency.image_inter, adjacency.image_intra),
                (ops.pair_user, ops.diag_user, 3, adjacency.user_inter, adjacency.user_intra),
            )
            for pair_op, diag_op, mode, inter, intra in sides:
                quad = float(np.vdot(mode_product(anchor, diag_op - pair_op, mode), anchor))
                want = pair_sum_loops(anchor, inter, intra, mode)
                assert abs(quad - want) <= 1e-10 * max(1.0, abs(want))


# ---------------------------------------------------------------- criterion 5


def brute_force_lcs(parents, counts, universe, tag_a, tag_b):
    def closure(tag):
        seen, frontier = {tag}, [tag]
        while frontier:
            node = frontier.pop()
            for parent in parents.get(node, ()):
                if parent not in seen:
                    seen.add(parent)
                    frontier.append(parent)
        return seen

    def information(tag):
        n = counts.get(tag, 0)
        return -math.log(min(1.0, n / universe)) if n > 0 else 0.0

    common = closure(tag_a) & closure(tag_b)
    if not common:
        return ROOT
    return min(common, key=lambda tag: (-information(tag), tag))


def test_criterion_5_adjacency_oracles():
    rng = np.random.default_rng(55)
    with criterion(5, "adjacency matrices match hand oracles", 10.0):
        # RBF affinity at squared distance sigma^2 is exactly exp(-1)
        features = FeatureStore(
            dim=2, vectors={0: np.array([0.0, 0.0]), 1: np.array([2.0, 0.0])}
        )
        inter = image_inter_adjacency(features, [0], [1], sigma=2.0, l2_normalize=False)
        assert inter[0, 0] == pytest.approx(math.exp(-1.0), abs=1e-12)

        # group Jaccard: overlap 2 of union 5
        groups = GroupMembership(
            {0: frozenset({"g1", "g2", "g3"}), 1: frozenset({"g2", "g3", "g4", "g5"})}
        )
        jaccard = user_inter_adjacency(groups, [0], [1])
        assert jaccard[0, 0] == pytest.approx(0.4, abs=1e-12)

        # rank-one inter column spreads its mass evenly across both rows
        rank_one = sp.csr_matrix(np.array([[1.0], [1.0]]))
        intra, mass = image_intra_adjacency(rank_one)
        assert mass[0] == pytest.approx(2.0)
        assert np.allclose(intra.toarray(), np.full((2, 2), 0.5), atol=1e-12)

        # random intra products against the dense normalized oracle
        for _ in range(10):
            dense = rng.random((int(rng.integers(2, 7)), int(rng.integers(1, 5))))
            dense[dense < 0.35] = 0.0
            dense[0, :] += 0.01  # keep every anchor column alive
            got, col_mass = image_intra_adjacency(sp.csr_matrix(dense))
            oracle = dense @ np.diag(1.0 / dense.sum(axis=0)) @ dense.T
            oracle = (oracle + oracle.T) * 0.5
            assert np.allclose(got.toarray(), oracle, atol=1e-12)
            assert np.allclose(col_mass, dense.sum(axis=0), atol=1e-12)

        # taxonomy: a tag with positive count is maximally similar to itself
        chain = Taxonomy.build(
            size=3,
            edges=[(1, 0), (2, 1)],
            counts={0: 8, 1: 4, 2: 2},
            pair_counts={(0, 1): 3, (0, 2): 1, (1, 2): 2},
            universe=16,
        )
        for tag in range(3):
            assert lin_similarity(chain, tag, tag) == pytest.approx(1.0, abs=1e-12)

        # least common subsumers on 50 random DAGs against transitive closure
        for _ in range(50):
            size = int(rng.integers(2, 11))
            edges = []
            for child in range(1, size):
                for parent in range(child):
                    if rng.random() < 0.4:
                        edges.append((child, parent))
            counts = {t: int(rng.integers(0, 11)) for t in range(size)}
            taxonomy = Taxonomy.build(size, edges, counts, {}, universe=50)
            parents: dict = {}
            for child, parent in edges:
                parents.setdefault(child, []).append(parent)
            for _ in range(6):
                a, b = int(rng.integers(size)), int(rng.integers(size))
                want = brute_force_lcs(parents, counts, 50, a, b)
                assert least_common_subsumer(taxonomy, a, b) == want


# ------------------------------------------------------- criteria 6 through 8


def harness_run():
    if "run" not in _CACHE:
        planted = generate_planted(PlantedConfig(seed=0))
        dataset = planted.dataset
        pairs = [
            (image_id, tag_id)
            for image_id, tags in planted.truth_by_id.items()
            if image_id in dataset.vocabulary.image_index
            for tag_id in tags
        ]
        truth = GroundTruth.from_pairs(pairs)
        queries = sorted(truth.concepts, key=lambda t: (-len(truth.relevant[t]), t))[:5]
        config = merge_config(flag_overrides=dict(HARNESS_FLAGS))
        pipe = Pipeline(dataset, config)
        report = pipe.report(truth, queries=queries, cutoffs=(50,))
        ot_pred, ot_scores, image_ids, tag_ids = observed_tag_rankings(dataset, config.k)
        baseline = build_report(
            ot_pred,
            truth,
            scores=ot_scores,
            image_ids=image_ids,
            tag_ids=tag_ids,
            queries=queries,
            cutoffs=(50,),
        )
        _CACHE["run"] = (planted, pipe, report, baseline)
    return _CACHE["run"]


def test_criterion_6_planted_fscore_margin():
    with criterion(6, "planted retagging beats the observed-tag baseline", 300.0):
        _, _, report, baseline = harness_run()
        margin = report.average_fscore - baseline.average_fscore
        assert report.average_fscore > baseline.average_fscore
        assert margin >= 0.05, (
            f"pipeline F {report.average_fscore:.4f} vs baseline "
            f"{baseline.average_fscore:.4f}, margin {margin:.4f}"
        )


def test_criterion_7_planted_retrieval_map():
    with criterion(7, "planted retrieval MAP matches or beats the baseline", 60.0):
        _, _, report, baseline = harness_run()
        assert set(report.retrieval) == set(baseline.retrieval)
        assert len(report.retrieval) == 5
        assert report.map_at[50] >= baseline.map_at[50], (
            f"pipeline MAP@50 {report.map_at[50]:.4f} vs baseline {baseline.map_at[50]:.4f}"
        )


def test_criterion_8_solver_convergence():
    with criterion(8, "solver converges within the iteration budget", 300.0):
        _, pipe, _, _ = harness_run()
        state = pipe.completion()
        assert state.converged
        assert state.iterations <= 2000
        trace = np.asarray(state.trace)
        assert (np.diff(trace) <= 1e-9 * np.maximum(trace[:-1], 1.0)).all()
        final_change = abs(trace[-1] - trace[-2])
        assert final_change <= 1e-5 * max(trace[-2], np.finfo(float).tiny)


# ---------------------------------------------------------------- criterion 9


def test_criterion_9_byte_identical_runs(tmp_path):
    with criterion(9, "repeated CLI runs are byte-identical", 300.0):
        data_dir = tmp_path / "data"
        planted = generate_planted(PlantedConfig(seed=0))
        write_planted(planted, data_dir)
        flags = []
        for name, value in HARNESS_FLAGS.items():
            flags += [f"--{name.replace('_', '-')}", str(value)]
        artifacts = {}
        for attempt in ("first", "second"):
            out_dir = tmp_path / attempt
            code = main(
                [
                    "run",
                    "--data",
                    str(data_dir),
                    "--out",
                    str(out_dir),
                    "--gt",
                    str(data_dir / "groundtruth.tsv"),
                    "--no-figures",
                    *flags,
                ]
            )
            assert code == 0
            artifacts[attempt] = (
                (out_dir / "retagged.tsv").read_bytes(),
                (out_dir / "metrics.json").read_bytes(),
            )
        assert artifacts["first"][0] == artifacts["second"][0]
        assert artifacts["first"][1] == artifacts["second"][1]
        metrics = json.loads(artifacts["first"][1])
        assert metrics["average_fscore"] > 0.0
