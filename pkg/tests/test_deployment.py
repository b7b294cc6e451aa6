import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from micrlb.channel import coupling_constant
from micrlb.deployment import (
    ANCHOR_LINK,
    PEER_LINK,
    Deployment,
    DeploymentError,
    Edge,
    MeasurementGraph,
    RadioConfig,
    ScenarioConfig,
    anchor_positions,
    build_measurement_graph,
    format_deployment,
    generate_deployment,
    pairwise_distance,
    parse_deployment,
    read_deployment,
    write_deployment,
)


def test_pairwise_distance_examples():
    assert pairwise_distance((0, 0, 0), (3, 4, 0)) == 5.0
    assert pairwise_distance((1, 1, 1), (1, 1, 1)) == 0.0
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=3), rng.normal(size=3)
    direct = math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)
    assert pairwise_distance(a, b) == pytest.approx(direct, rel=1e-15)
    assert pairwise_distance(a, b) == pairwise_distance(b, a)


def test_generate_default_is_table_scenario():
    cfg = ScenarioConfig()
    dep = generate_deployment(cfg, 1)
    assert dep.n_things == 60 and dep.n_anchors == 3
    lo, hi = cfg.box
    np.testing.assert_allclose(lo, [-4, -4, 1799])
    np.testing.assert_allclose(hi, [4, 4, 1801])
    assert np.all(dep.things >= lo) and np.all(dep.things <= hi)


def test_generate_is_deterministic():
    cfg = ScenarioConfig()
    a = generate_deployment(cfg, 99)
    b = generate_deployment(cfg, 99)
    assert a == b
    np.testing.assert_array_equal(a.things, b.things)
    assert not generate_deployment(cfg, 100) == a
    assert format_deployment(a, build_measurement_graph(a, cfg)) == format_deployment(
        b, build_measurement_graph(b, cfg))


def test_uniform_mean_of_x_coordinates():
    cfg = ScenarioConfig(thing_count=100_000)
    dep = generate_deployment(cfg, 5)
    assert abs(dep.things[:, 0].mean()) < 0.05
    assert abs(dep.things[:, 2].mean() - 1800.0) < 0.05


def test_well_line_anchors_collinear_on_axis():
    cfg = ScenarioConfig(anchor_placement="well_line", anchor_count=3)
    a = anchor_positions(cfg)
    np.testing.assert_array_equal(a[:, :2], 0.0)
    np.testing.assert_allclose(a[:, 2], [1800, 1799, 1798])
    assert np.linalg.matrix_rank(a - a[0]) == 1


def test_well_spiral_anchors_are_nested_and_not_collinear():
    a3 = anchor_positions(ScenarioConfig(anchor_count=3))
    a2 = anchor_positions(ScenarioConfig(anchor_count=2))
    np.testing.assert_array_equal(a2, a3[:2])
    assert np.linalg.matrix_rank(a3 - a3[0]) == 2
    r = np.hypot(a3[:, 0], a3[:, 1])
    np.testing.assert_allclose(r, 0.5)


def test_explicit_anchors_verbatim():
    pts = ((1.0, 2.0, 3.0), (4.0, 5.0, 6.0))
    cfg = ScenarioConfig(anchor_placement="explicit", anchors=pts, anchor_count=7)
    assert cfg.anchor_count == 2
    np.testing.assert_array_equal(generate_deployment(cfg, 0).anchors, np.array(pts))


def test_separation_floor_enforced():
    with pytest.raises(DeploymentError):
        Deployment(anchors=[[0, 0, 0]], things=[[0, 0, 5e-4]])
    # a box far too small for the floor
    cfg = ScenarioConfig(width=1e-3, length=1e-3, thickness=1e-3, thing_count=50, anchor_placement="explicit",
                         anchors=((10.0, 0.0, 1800.0),))
    with pytest.raises(DeploymentError):
        generate_deployment(cfg, 0)


def test_deployment_arrays_are_private_copies():
    things = np.array([[1.0, 0, 0]])
    dep = Deployment(anchors=[[0, 0, 0]], things=things)
    things[0, 0] = 99.0
    assert dep.things[0, 0] == 1.0
    with pytest.raises(ValueError):
        dep.things[0, 0] = 5.0


@pytest.mark.parametrize("kwargs", [
    {"width": 0}, {"thickness": -1}, {"comm_range_peer": 0}, {"anchor_placement": "tripod"},
    {"link_mode": "mesh"}, {"thing_count": 0}, {"anchor_count": 0},
])
def test_scenario_config_validation(kwargs):
    with pytest.raises((ValueError, TypeError)):
        ScenarioConfig(**kwargs)


def _two_three():
    anchors = np.array([[0.0, 0, 0], [3.0, 0, 0], [0, 3.0, 0]])
    things = np.array([[1.0, 1.0, 1.0], [2.0, 1.5, -1.0]])
    return Deployment(anchors, things)


def test_graph_edge_counts():
    dep = _two_three()
    assert build_measurement_graph(dep, ScenarioConfig(link_mode="anchor_only")).n_edges == 6
    coop = build_measurement_graph(dep, ScenarioConfig(link_mode="cooperative"))
    assert coop.n_edges == 7
    assert sum(e.kind == PEER_LINK for e in coop.edges) == 1
    assert build_measurement_graph(dep, ScenarioConfig(comm_range_anchor=0.001)).n_edges == 0


def test_graph_edges_carry_k_and_sigma():
    dep = _two_three()
    radio = RadioConfig()
    g = build_measurement_graph(dep, ScenarioConfig(), radio)
    k = coupling_constant(radio.tx, radio.rx, radio.channel)
    assert all(e.k == k and e.sigma == pytest.approx(0.05e-12) for e in g.edges)
    assert all(e.kind == ANCHOR_LINK for e in g.edges)


def test_per_link_alpha_override():
    dep = _two_three()
    g = build_measurement_graph(dep, ScenarioConfig(), alphas={("t0", "a1"): 0.0})
    ks = {e.node_ids(): e.k for e in g.edges}
    assert ks[("t0", "a1")] == 0.0
    assert ks[("t0", "a0")] > 0


def test_empty_graph_is_legal():
    g = build_measurement_graph(_two_three(), ScenarioConfig(comm_range_anchor=1e-3))
    assert g.n_edges == 0
    assert g.isolated_things() == [0, 1]


def test_graph_rejects_duplicates_and_self_edges():
    anchors = np.zeros((1, 3))
    e = Edge(0, 0, ANCHOR_LINK, 1.0, 1.0)
    with pytest.raises(ValueError):
        MeasurementGraph(anchors, 1, (e, e))
    with pytest.raises(ValueError):
        MeasurementGraph(anchors, 2, (Edge(1, 1, PEER_LINK, 1.0, 1.0),))
    with pytest.raises(ValueError):
        MeasurementGraph(anchors, 2, (Edge(0, 1, PEER_LINK, 1.0, 1.0), Edge(1, 0, PEER_LINK, 1.0, 1.0)))


def test_text_format_round_trip(tmp_path):
    cfg = ScenarioConfig(thing_count=5, link_mode="cooperative")
    dep = generate_deployment(cfg, 3)
    g = build_measurement_graph(dep, cfg)
    path = tmp_path / "dep.txt"
    write_deployment(path, dep, g)
    text = path.read_text()
    assert text.startswith("# anchors 3\n# things 5\n")
    dep2, g2 = read_deployment(path)
    # 9 significant digits: half a unit in the last place
    np.testing.assert_allclose(dep2.things, dep.things, rtol=5e-9)
    assert [e.node_ids() for e in g2.edges] == [e.node_ids() for e in g.edges]
    assert [e.kind for e in g2.edges] == [e.kind for e in g.edges]
    # a second round trip is exact
    assert format_deployment(dep2, g2) == text


def test_text_format_nine_significant_digits():
    dep = Deployment([[0.123456789123, 0, 1800.0]], [[1.0, 2.0, 3.0]])
    line = format_deployment(dep).splitlines()[3]
    assert line == "a0 0.123456789 0 1800"


def test_parse_rejects_bad_rows():
    with pytest.raises(ValueError, match="line 3"):
        parse_deployment("# anchors 1\na0 0 0 0\nt0 1 2\n")
    with pytest.raises(ValueError):
        parse_deployment("# anchors 2\na0 0 0 0\nt0 1 1 1\n")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**63), n=st.integers(min_value=1, max_value=40),
       mode=st.sampled_from(["anchor_only", "cooperative"]))
def test_generation_properties(seed, n, mode):
    cfg = ScenarioConfig(thing_count=n, link_mode=mode, comm_range_peer=3.0)
    dep = generate_deployment(cfg, seed)
    lo, hi = cfg.box
    assert np.all(dep.things >= lo) and np.all(dep.things <= hi)
    g = build_measurement_graph(dep, cfg)
    pairs = [frozenset(e.node_ids()) for e in g.edges]
    assert len(pairs) == len(set(pairs))
    assert g == build_measurement_graph(generate_deployment(cfg, seed), cfg)
    # anchors sit on the configured well segment
    z = dep.anchors[:, 2]
    assert np.all(z <= cfg.depth) and np.all(z >= cfg.depth - (cfg.anchor_count - 1) * cfg.anchor_spacing)
