import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowaction.cluster import (
    PRESETS, ClusterModel, DistanceConfig, Hierarchy, View, agglomerate, assign, cross_distances,
    distance_matrix, elect_leader, fit_clusters, flow_distance, linkage_distance, linkage_tree,
)
from flowaction.dtw import dtw_cost
from flowaction.series import Interval, SeriesType

from oracles import naive_average_linkage


def random_distance_matrix(rng, n):
    a = rng.uniform(0, 100, size=(n, n))
    d = (a + a.T) / 2
    np.fill_diagonal(d, 0)
    return d


def test_presets_table_values():
    fb3 = PRESETS["facebook-conf3"]
    assert [(v.weight, v.series_type, (v.interval.x, v.interval.y)) for v in fb3.views] == [
        (0.20, SeriesType.INCOMING, (1, 3)), (0.20, SeriesType.OUTGOING, (1, 5)), (0.20, SeriesType.COMPLETE, (1, 7)),
        (0.80, SeriesType.INCOMING, (1, 6)), (0.80, SeriesType.OUTGOING, (1, 7)), (0.80, SeriesType.COMPLETE, (1, 12)),
    ]
    tw1 = PRESETS["twitter-conf1"]
    assert [(v.weight, (v.interval.x, v.interval.y)) for v in tw1.views] == [(0.95, (7, 10)), (0.05, (1, 10))]
    assert all(v.series_type is SeriesType.COMPLETE for v in tw1.views)
    assert len(PRESETS) == 9


def test_flow_distance_weighted_sum():
    cfg = DistanceConfig((View(0.25, SeriesType.INCOMING, Interval(1, 2)), View(0.75, SeriesType.COMPLETE, Interval(2, 4))))
    a = [100, -200, 300, -400, 500]
    b = [120, -180, -410]
    expected = 0.25 * dtw_cost([200, 400], [180, 410]) + 0.75 * dtw_cost([-200, 300, -400], [-180, -410])
    assert flow_distance(a, b, cfg) == pytest.approx(expected, abs=1e-12)


def test_slice_beyond_shorter_flow_uses_empty_convention():
    cfg = DistanceConfig((View(1.0, SeriesType.COMPLETE, Interval(3, 4)),))
    assert flow_distance([1, 2], [1, 2, 5, -6], cfg) == 11.0


def test_distance_matrix_matches_pairwise_loop():
    rng = np.random.default_rng(3)
    flows = [list(rng.integers(55, 1514, size=rng.integers(1, 15)) * rng.choice([-1, 1], size=1)) for _ in range(12)]
    flows = [[int(v) * (1 if i % 2 else -1) for i, v in enumerate(f)] for f in flows]
    cfg = PRESETS["gmail-conf1"]
    d = distance_matrix(flows, cfg)
    for i in range(len(flows)):
        assert d[i, i] == 0
        for j in range(len(flows)):
            assert d[i, j] == pytest.approx(flow_distance(flows[i], flows[j], cfg), abs=1e-9)
    cross = cross_distances(flows[:3], flows, cfg)
    np.testing.assert_allclose(cross, d[:3], atol=1e-9)


def test_linkage_matches_naive_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(2, 16))
        d = random_distance_matrix(rng, n)
        got = [(m.a, m.b, m.distance) for m in linkage_tree(d)]
        want = naive_average_linkage(d)
        assert [(a, b) for a, b, _ in got] == [(a, b) for a, b, _ in want]
        np.testing.assert_allclose([x for *_, x in got], [x for *_, x in want], atol=1e-9)


def test_linkage_agrees_with_scipy():
    hierarchy = pytest.importorskip("scipy.cluster.hierarchy")
    from scipy.spatial.distance import squareform

    rng = np.random.default_rng(4)
    d = random_distance_matrix(rng, 14)
    ours = sorted(m.distance for m in linkage_tree(d))
    theirs = sorted(hierarchy.linkage(squareform(d), method="average")[:, 2])
    np.testing.assert_allclose(ours, theirs, atol=1e-9)


def test_ties_merge_smallest_pair():
    d = np.ones((4, 4)) - np.eye(4)
    merges = linkage_tree(d)
    assert (merges[0].a, merges[0].b) == (0, 1)
    assert agglomerate(d, 3) == [[0, 1], [2], [3]]


def test_agglomerate_k_bounds():
    d = np.zeros((3, 3))
    assert agglomerate(d, 3) == [[0], [1], [2]]
    assert agglomerate(d, 1) == [[0, 1, 2]]
    for k in (0, 4):
        with pytest.raises(ValueError):
            agglomerate(d, k)


def test_linkage_distance_is_mean():
    d = np.array([[0, 1, 4], [1, 0, 2], [4, 2, 0]], dtype=float)
    assert linkage_distance([0], [1, 2], d) == 2.5


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_partition_properties(n, seed):
    rng = np.random.default_rng(seed)
    d = random_distance_matrix(rng, n)
    merges = linkage_tree(d)
    assert len(merges) == n - 1
    previous = None
    for k in range(n, 0, -1):
        clusters = agglomerate(d, k)
        assert len(clusters) == k
        assert sorted(i for c in clusters for i in c) == list(range(n))
        if previous is not None:
            # cutting one level higher only merges existing clusters
            assert all(any(set(c) <= set(p) for p in clusters) for c in previous)
        previous = clusters
    # average linkage is monotone: no inversions
    dists = [m.distance for m in merges]
    assert all(b >= a - 1e-9 for a, b in zip(dists, dists[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.integers(0, 10_000))
def test_leader_minimal_sum(n, seed):
    rng = np.random.default_rng(seed)
    d = random_distance_matrix(rng, n)
    members = sorted(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False).tolist())
    leader = elect_leader(members, d)
    sums = {m: sum(d[m][o] for o in members) for m in members}
    assert leader in members
    assert all(sums[leader] <= s + 1e-9 for s in sums.values())


def test_leader_tie_goes_to_smallest_index():
    d = np.ones((3, 3)) - np.eye(3)
    assert elect_leader([2, 1, 0], d) == 0


def _toy_flows():
    a = [[100, -1514, -1514, 200]] * 3
    b = [[-600, -600, 900]] * 3
    return [list(f) for f in a + b]


def test_fit_clusters_separates_shapes_and_assign_returns_leader_cluster():
    cfg = PRESETS["facebook-conf3"]
    flows = _toy_flows()
    model = fit_clusters(flows, cfg, 2)
    assert model.membership == [0, 0, 0, 1, 1, 1]
    assert model.leader_index == [0, 3]
    assert assign(flows[0], model) == 0
    assert assign([-600, -610, 890], model) == 1
    for i, f in enumerate(flows):
        # training flows land in their own cluster here because leaders are exact copies
        assert assign(f, model) == model.membership[i]


def test_assign_tie_goes_to_lowest_cluster():
    cfg = DistanceConfig((View(1.0, SeriesType.COMPLETE, Interval(1, 1)),))
    model = ClusterModel(cfg, 2, leaders=[[10], [30]], leader_index=[0, 1], membership=[0, 1])
    assert assign([20], model) == 0


def test_model_roundtrip(tmp_path):
    model = fit_clusters(_toy_flows(), PRESETS["twitter-conf2"], 2)
    path = tmp_path / "m.json"
    model.save(path)
    loaded = ClusterModel.load(path)
    assert loaded == model
    assert loaded.assign_many(_toy_flows()) == model.assign_many(_toy_flows())
    data = json.loads(path.read_text())
    assert data["format"] == "flowaction-cluster-model"
    data["version"] = 99
    with pytest.raises(ValueError):
        ClusterModel.from_dict(data)


def test_hierarchy_cut_matches_direct_fit():
    flows = _toy_flows() + [[300, 300, -50]]
    cfg = PRESETS["gmail-conf2"]
    h = Hierarchy(flows, cfg)
    for k in range(1, len(flows) + 1):
        assert h.model(k) == fit_clusters(flows, cfg, k)
    with pytest.raises(ValueError):
        Hierarchy([], cfg)
