import numpy as np
import pytest

from lcftraffic.network import (Link, NetworkError, RoadNetwork, build_link_graph,
                                extract_features, fit_minmax,
                                generate_grid_network, load_network,
                                minmax_normalize, save_network)


def two_link_chain():
    junctions = {0: (0.0, 0.0), 1: (100.0, 0.0), 2: (200.0, 0.0)}
    links = [
        Link(0, 0, 1, 100.0, 2, 0, 25.0),
        Link(1, 1, 2, 100.0, 2, 0, 25.0),
    ]
    return RoadNetwork(junctions, links)


def test_two_links_one_connectivity_pair(tmp_path):
    path = tmp_path / "net.txt"
    path.write_text(
        "JUNCTION 0 0 0\nJUNCTION 1 100 0\nJUNCTION 2 200 0\n"
        "LINK 0 0 1 100 2 0 25\nLINK 1 1 2 100 2 0 25\n"
    )
    net = load_network(path)
    assert net.connectivity == ((0, 1),)
    # inferred boundary flags: no upstream -> boundary-in, no downstream -> out
    assert net.link(0).is_boundary_in and not net.link(0).is_boundary_out
    assert net.link(1).is_boundary_out and not net.link(1).is_boundary_in


def test_load_rejects_dbl_equal_lanes(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("JUNCTION 0 0 0\nJUNCTION 1 1 0\nLINK 0 0 1 100 2 2 25\n")
    with pytest.raises(NetworkError):
        load_network(path)


def test_load_rejects_dangling_junction(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("JUNCTION 0 0 0\nLINK 0 0 9 100 2 0 25\n")
    with pytest.raises(NetworkError):
        load_network(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("JUNCTION 0 0 0\nLINK zero 0 1 100\n")
    with pytest.raises(NetworkError, match=":2"):
        load_network(path)


def test_grid_round_trip_is_byte_identical(tmp_path):
    net = generate_grid_network(5, 5, 100.0, 3)
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_network(net, p1)
    save_network(load_network(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_grid_2x2_all_links_boundary():
    net = generate_grid_network(2, 2, 100.0, 2)
    assert net.n_links == 8
    assert all(lk.is_boundary_in and lk.is_boundary_out for lk in net.links)


@pytest.mark.parametrize("rows,cols", [(2, 2), (3, 4), (5, 5), (4, 7)])
def test_grid_link_count_closed_form(rows, cols):
    net = generate_grid_network(rows, cols, 100.0, 2)
    assert net.n_links == 2 * (2 * rows * cols - rows - cols)
    assert len(net.junctions) == rows * cols


def test_grid_rejects_single_row():
    with pytest.raises(NetworkError):
        generate_grid_network(1, 5, 100.0, 2)


def test_link_graph_single_link():
    junctions = {0: (0.0, 0.0), 1: (1.0, 0.0)}
    net = RoadNetwork(junctions, [Link(0, 0, 1, 50.0, 1, 0, 25.0)])
    g = build_link_graph(net)
    assert g.adjacency.shape == (1, 1)
    assert g.adjacency[0, 0]


def test_link_graph_chain():
    net = two_link_chain()
    g = build_link_graph(net)
    expected = np.array([[True, True], [False, True]])
    assert np.array_equal(g.adjacency, expected)


def test_link_graph_matches_junction_scan_oracle():
    net = generate_grid_network(5, 5, 100.0, 3)
    g = build_link_graph(net)
    # oracle: pairwise scan over links sharing exactly one junction
    # head-to-tail (a reverse twin shares both, so it is no movement)
    n = net.n_links
    expect = np.zeros((n, n), dtype=bool)
    for i, a in enumerate(net.links):
        for j, b in enumerate(net.links):
            shared_one = a.to_junction == b.from_junction and not (
                b.to_junction == a.from_junction
                and b.from_junction == a.to_junction)
            if i == j or shared_one:
                expect[i, j] = True
    assert np.array_equal(g.adjacency, expect)


def test_connectivity_pairs_share_exactly_one_junction():
    net = generate_grid_network(4, 4, 100.0, 2)
    for a_id, b_id in net.connectivity:
        a, b = net.link(a_id), net.link(b_id)
        shared = {a.from_junction, a.to_junction} & \
            {b.from_junction, b.to_junction}
        assert len(shared) == 1


def test_double_edge_reversal_is_identity():
    net = generate_grid_network(4, 4, 100.0, 2)
    adj = build_link_graph(net).adjacency
    assert np.array_equal(adj.T.T, adj)


def test_extract_features_direct_mapping():
    # star: two links into 0->1 junction geometry built explicitly
    junctions = {i: (float(i), 0.0) for i in range(6)}
    links = [
        Link(0, 0, 2, 100.0, 3, 1, 25.0),                      # the probe link
        Link(1, 1, 0, 80.0, 2, 1, 25.0),                       # upstream, has DBL
        Link(2, 3, 0, 80.0, 2, 0, 25.0),                       # upstream
        Link(3, 2, 4, 80.0, 2, 0, 25.0),                       # downstream
        Link(4, 2, 5, 80.0, 2, 0, 25.0),                       # downstream
    ]
    # junction layout: link 0 runs 0 -> 2; feeders end at 0; receivers leave 2
    net = RoadNetwork(junctions, links)
    feats = extract_features(net, partition={0: 2, 1: 0, 2: 0, 3: 0, 4: 0})
    assert feats[0].tolist() == [100.0, 3, 1, 2, 2, 0, 0, 1, 0, 2]


def test_extract_features_isolated_link():
    junctions = {0: (0.0, 0.0), 1: (1.0, 0.0)}
    net = RoadNetwork(junctions, [Link(0, 0, 1, 50.0, 2, 1, 25.0)])
    feats = extract_features(net, None)
    assert feats[0].tolist() == [50.0, 2, 1, 0, 0, 0, 0, 0, 0, 0]


def test_extract_features_missing_label_names_link():
    net = two_link_chain()
    with pytest.raises(NetworkError, match="link 1"):
        extract_features(net, partition={0: 0})


def test_feature_counts_match_recount_oracle():
    net = generate_grid_network(5, 5, 100.0, 3)
    part = {lk.id: lk.id % 4 for lk in net.links}
    feats = extract_features(net, part)
    for zi, lk in enumerate(net.links):
        ups = [b for (b, c) in net.connectivity if c == lk.id]
        downs = [c for (b, c) in net.connectivity if b == lk.id]
        assert feats[zi, 3] == len(ups)
        assert feats[zi, 4] == len(downs)
        assert feats[zi, 5] == sum(net.link(u).is_boundary_in for u in ups)
        assert feats[zi, 6] == sum(net.link(d).is_boundary_out for d in downs)
        assert feats[zi, 9] == part[lk.id]


def test_feature_extraction_is_stable(tmp_path):
    net = generate_grid_network(4, 5, 120.0, 2)
    part = {lk.id: (lk.id * 7) % 4 for lk in net.links}
    f1 = extract_features(net, part)
    save_network(net, tmp_path / "n.txt")
    f2 = extract_features(load_network(tmp_path / "n.txt"), part)
    assert np.array_equal(f1, f2)


def test_minmax_endpoints():
    m = np.array([[2.0], [4.0], [6.0]])
    out, _ = minmax_normalize(m)
    assert out.ravel().tolist() == [0.0, 0.5, 1.0]


def test_minmax_constant_column_maps_to_zero():
    m = np.array([[5.0], [5.0]])
    out, _ = minmax_normalize(m)
    assert out.ravel().tolist() == [0.0, 0.0]


def test_minmax_round_trip_inversion():
    rng = np.random.default_rng(7)
    m = rng.uniform(-5, 9, size=(20, 10))
    out, stats = minmax_normalize(m)
    assert np.max(np.abs(stats.invert(out) - m)) < 1e-12


def test_minmax_training_columns_hit_exact_bounds():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(50, 6))
    out, _ = minmax_normalize(m)
    assert np.allclose(out.min(axis=0), 0.0)
    assert np.allclose(out.max(axis=0), 1.0)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_frozen_stats_apply_to_new_data():
    train = np.array([[0.0, 10.0], [10.0, 20.0]])
    stats = fit_minmax(train)
    applied = stats.apply(np.array([[5.0, 15.0]]))
    assert applied.tolist() == [[0.5, 0.5]]


def test_with_bus_lanes_respects_lane_invariant():
    net = generate_grid_network(3, 3, 100.0, 2)
    first = net.links[0].id
    mod = net.with_bus_lanes([first])
    assert mod.link(first).lanes_dbl == 1
    one_lane = RoadNetwork({0: (0, 0), 1: (1, 0)}, [Link(0, 0, 1, 50.0, 1, 0, 25.0)])
    with pytest.raises(NetworkError):
        one_lane.with_bus_lanes([0])
