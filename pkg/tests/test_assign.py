"""Tag assignment tests: blend arithmetic, ranking rules and file round trips."""

import numpy as np
import pytest
import scipy.sparse as sp

from sugartc.anchors import AnchorSet, cocluster, image_user_matrix, select_anchor_units
from sugartc.assign import (
    AssignConfig,
    assign_all,
    association_matrices,
    rank_tags,
    read_retagged,
    score_image,
    write_retagged,
)
from sugartc.completion import CompletionConfig, solve
from sugartc.data import build_observed_tensor, split_anchor_tensors
from sugartc.graphs import AdjacencySet, build_adjacency
from sugartc.planted import PlantedConfig, generate_planted


def blend_fixture():
    """Two anchor units with hand-sized association and affinity numbers."""
    anchors = AnchorSet.from_units([(10, 20), (11, 21)])
    tag_image = np.array([[1.0, 0.0], [2.0, 3.0], [0.0, 1.0]])
    tag_user = np.array([[5.0, 0.0], [0.0, 7.0], [1.0, 1.0]])
    adjacency = AdjacencySet(
        sp.csr_matrix(np.array([[0.5, 0.2]])),
        sp.csr_matrix(np.array([[0.3, 0.9]])),
        sp.csr_matrix((1, 1)), sp.csr_matrix((1, 1)), sp.csr_matrix((3, 3)),
        np.ones(2), np.ones(2),
    )
    return anchors, tag_image, tag_user, adjacency


def test_blend_matches_hand_arithmetic():
    anchors, tag_image, tag_user, adjacency = blend_fixture()
    config = AssignConfig(neighbors=2, gamma=0.8)
    scores = score_image(0, 0, anchors, adjacency, tag_image, tag_user, config)
    image_view = tag_image[:, 0] * 0.5 + tag_image[:, 1] * 0.2
    user_view = tag_user[:, 0] * 0.3 + tag_user[:, 1] * 0.9
    want = (0.8 * image_view + 0.2 * user_view) / 2
    assert scores == pytest.approx(want, rel=1e-12)
    assert scores == pytest.approx([0.35, 1.27, 0.20], rel=1e-12)


def test_single_neighbor_full_gamma_reads_one_column():
    anchors, tag_image, tag_user, adjacency = blend_fixture()
    adjacency = AdjacencySet(
        sp.csr_matrix(np.array([[1.0, 0.2]])), adjacency.user_inter,
        adjacency.image_intra, adjacency.user_intra, adjacency.tag_intra,
        adjacency.image_scaler, adjacency.user_scaler,
    )
    config = AssignConfig(neighbors=1, gamma=1.0)
    scores = score_image(0, 0, anchors, adjacency, tag_image, tag_user, config)
    assert scores == pytest.approx(tag_image[:, 0], rel=1e-12)


def test_zero_gamma_uses_only_the_uploader_view():
    anchors, tag_image, tag_user, adjacency = blend_fixture()
    config = AssignConfig(neighbors=2, gamma=0.0)
    scores = score_image(0, 0, anchors, adjacency, tag_image, tag_user, config)
    user_view = tag_user[:, 0] * 0.3 + tag_user[:, 1] * 0.9
    assert scores == pytest.approx(user_view / 2, rel=1e-12)


def test_missing_uploader_row_forces_image_view():
    anchors, tag_image, tag_user, adjacency = blend_fixture()
    config = AssignConfig(neighbors=2, gamma=0.3)
    scores = score_image(0, None, anchors, adjacency, tag_image, tag_user, config)
    image_view = tag_image[:, 0] * 0.5 + tag_image[:, 1] * 0.2
    assert scores == pytest.approx(image_view / 2, rel=1e-12)


def test_shared_anchor_image_pairs_with_its_first_user():
    anchors = AnchorSet.from_units([(10, 20), (10, 21), (11, 21)])
    assert anchors.paired_user_pos() == {0: 0, 1: 1}
    tag_image = np.array([[1.0, 4.0]])
    tag_user = np.array([[2.0, 8.0]])
    adjacency = AdjacencySet(
        sp.csr_matrix(np.array([[0.9, 0.1]])),
        sp.csr_matrix(np.array([[1.0, 1.0]])),
        sp.csr_matrix((1, 1)), sp.csr_matrix((1, 1)), sp.csr_matrix((1, 1)),
        np.ones(2), np.ones(2),
    )
    config = AssignConfig(neighbors=2, gamma=0.5)
    scores = score_image(0, 0, anchors, adjacency, tag_image, tag_user, config)
    image_view = 1.0 * 0.9 + 4.0 * 0.1
    user_view = 2.0 * 1.0 + 8.0 * 1.0  # image 10 -> user 20, image 11 -> user 21
    assert scores == pytest.approx([(0.5 * image_view + 0.5 * user_view) / 2])


def test_association_matrices_match_loops():
    rng = np.random.default_rng(0)
    anchor = rng.random((4, 3, 5))
    tag_image, tag_user = association_matrices(anchor)
    for t in range(4):
        for i in range(3):
            assert tag_image[t, i] == pytest.approx(sum(anchor[t, i, k] for k in range(5)))
        for k in range(5):
            assert tag_user[t, k] == pytest.approx(sum(anchor[t, i, k] for i in range(3)))


def test_rank_tags_orders_and_truncates():
    ranking = rank_tags(7, [0.2, 0.9, 0.2, 0.0, -1.0], top_k=10)
    assert ranking.image == 7
    assert ranking.tags == (1, 0, 2)  # ties fall back to the smaller index
    assert ranking.entries[0] == (1, 0.9)
    short = rank_tags(7, [0.2, 0.9, 0.2, 0.0, -1.0], top_k=2)
    assert short.tags == (1, 0)
    assert rank_tags(0, [0.0, -0.5], top_k=3).entries == ()
    with pytest.raises(ValueError):
        rank_tags(0, [1.0], top_k=0)


def test_assign_config_validation():
    with pytest.raises(ValueError):
        AssignConfig(neighbors=0)
    with pytest.raises(ValueError):
        AssignConfig(gamma=1.5)
    with pytest.raises(ValueError):
        AssignConfig(top_k=0)


def mini_pipeline(seed=0, *, solve_iters=300):
    config = PlantedConfig(
        images=36, users=9, tags=12, clusters=3, tags_per_cluster=4,
        missing_rate=0.0, noise_rate=0.0, seed=seed,
    )
    planted = generate_planted(config)
    dataset = planted.dataset
    observed = build_observed_tensor(dataset.observations, dataset.vocabulary)
    matrix = image_user_matrix(observed)
    clustering = cocluster(matrix, 3, 3, seed=0)
    anchors = select_anchor_units(clustering, matrix, per_cocluster=2)
    adjacency = build_adjacency(dataset, anchors, sigma=0.6)
    non_anchor, baseline = split_anchor_tensors(observed, anchors)
    state = solve(
        non_anchor, baseline, adjacency,
        CompletionConfig(max_iters=solve_iters, rel_tol=1e-7),
    )
    return planted, dataset, anchors, adjacency, state


def test_assignment_covers_every_image_deterministically():
    _, dataset, anchors, adjacency, state = mini_pipeline()
    config = AssignConfig(neighbors=4, gamma=0.8, top_k=5)
    first = assign_all(dataset, anchors, adjacency, state.tensor, config)
    second = assign_all(dataset, anchors, adjacency, state.tensor, config)
    n_images = len(dataset.vocabulary.images)
    assert [r.image for r in first.rankings] == list(range(n_images))
    assert np.array_equal(first.scores, second.scores)
    assert [r.entries for r in first.rankings] == [r.entries for r in second.rankings]


def test_anchor_images_read_their_association_column():
    _, dataset, anchors, adjacency, state = mini_pipeline()
    result = assign_all(dataset, anchors, adjacency, state.tensor,
                        AssignConfig(neighbors=4, gamma=0.8, top_k=5))
    tag_image, _ = association_matrices(state.tensor)
    for image in anchors.anchor_images:
        assert result.scores[image] == pytest.approx(tag_image[:, anchors.image_pos[image]])


def test_scaling_the_tensor_scales_scores_not_order():
    _, dataset, anchors, adjacency, state = mini_pipeline()
    config = AssignConfig(neighbors=4, gamma=0.8, top_k=5)
    base = assign_all(dataset, anchors, adjacency, state.tensor, config)
    scaled = assign_all(dataset, anchors, adjacency, 3.0 * state.tensor, config)
    assert scaled.scores == pytest.approx(3.0 * base.scores, rel=1e-12)
    assert [r.tags for r in scaled.rankings] == [r.tags for r in base.rankings]


def test_raising_an_anchor_association_never_lowers_scores():
    _, dataset, anchors, adjacency, state = mini_pipeline()
    config = AssignConfig(neighbors=4, gamma=0.8, top_k=5)
    base = assign_all(dataset, anchors, adjacency, state.tensor, config)
    rng = np.random.default_rng(1)
    for _ in range(6):
        t = int(rng.integers(0, state.tensor.shape[0]))
        p = int(rng.integers(0, state.tensor.shape[1]))
        bumped_tensor = state.tensor.copy()
        bumped_tensor[t, p, :] += 0.5
        bumped = assign_all(dataset, anchors, adjacency, bumped_tensor, config)
        assert (bumped.scores[:, t] >= base.scores[:, t] - 1e-12).all()
        other = [tag for tag in range(state.tensor.shape[0]) if tag != t]
        assert bumped.scores[:, other] == pytest.approx(base.scores[:, other])


def test_anchor_uploaders_drop_the_user_view():
    _, dataset, anchors, adjacency, state = mini_pipeline()
    result = assign_all(dataset, anchors, adjacency, state.tensor,
                        AssignConfig(neighbors=4, gamma=0.8, top_k=5))
    n_images = len(dataset.vocabulary.images)
    non_images = anchors.non_anchor_images(n_images)
    expected = sum(
        1 for image in non_images
        if dataset.observations.uploader[image] in anchors.user_pos
    )
    assert expected > 0  # the planted layout shares uploaders across images
    assert result.uploaderless_images == expected


def test_zero_tensor_yields_empty_rankings(caplog):
    _, dataset, anchors, adjacency, state = mini_pipeline(solve_iters=1)
    with caplog.at_level("WARNING"):
        result = assign_all(dataset, anchors, adjacency, np.zeros_like(state.tensor),
                            AssignConfig(neighbors=4, gamma=0.8, top_k=5))
    assert result.zero_score_images == len(dataset.vocabulary.images)
    assert all(not r.entries for r in result.rankings)
    assert "no positive tag scores" in caplog.text


def test_noiseless_pipeline_recovers_planted_tags():
    planted, dataset, anchors, adjacency, state = mini_pipeline()
    result = assign_all(dataset, anchors, adjacency, state.tensor,
                        AssignConfig(neighbors=4, gamma=0.8, top_k=4))
    truth = planted.truth_by_index()
    recalls = []
    for ranking in result.rankings:
        want = truth[ranking.image]
        got = set(ranking.tags)
        recalls.append(len(got & want) / len(want))
    assert np.mean(recalls) > 0.95


def test_retagged_round_trip(tmp_path):
    _, dataset, anchors, adjacency, state = mini_pipeline()
    result = assign_all(dataset, anchors, adjacency, state.tensor,
                        AssignConfig(neighbors=4, gamma=0.8, top_k=5))
    path = tmp_path / "retagged.tsv"
    write_retagged(path, result.rankings, dataset.vocabulary)
    back = read_retagged(path)
    vocab = dataset.vocabulary
    assert set(back) == set(vocab.images)
    for ranking in result.rankings:
        got = back[vocab.images[ranking.image]]
        assert [tag for tag, _ in got] == [vocab.tags[t] for t in ranking.tags]
        for (_, score), (_, want) in zip(got, ranking.entries):
            assert score == pytest.approx(want, rel=1e-5)  # %.6g rounding


def test_read_retagged_accepts_plain_tag_lists(tmp_path):
    path = tmp_path / "gt.tsv"
    path.write_text("imgA\tred\nimgA\tblue\nimgB\tred:0.25\nimgC\t\n# note\n\n")
    back = read_retagged(path)
    assert back["imgA"] == [("red", 1.0), ("blue", 1.0)]
    assert back["imgB"] == [("red", 0.25)]
    assert back["imgC"] == []


def test_read_retagged_rejects_bad_tokens(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("imgA\tred:high\n")
    with pytest.raises(ValueError, match="bad.tsv:1"):
        read_retagged(path)
    path.write_text("imgA\tred\textra\n")
    with pytest.raises(ValueError, match="2 tab-separated"):
        read_retagged(path)
    path.write_text("imgA\t:0.5\n")
    with pytest.raises(ValueError, match="bad tag:score"):
        read_retagged(path)
